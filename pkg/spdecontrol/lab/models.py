from datetime import datetime

from sqlalchemy import (
    Boolean,
    Column,
    DateTime,
    Float,
    ForeignKey,
    Integer,
    String,
    Text,
    UniqueConstraint,
)
from sqlalchemy.orm import backref, relationship

from spdecontrol.database.db_connection import Base
from spdecontrol.numerics.statlab import PathRecord


class EnsembleRun(Base):
    """
    Model representing one statistical run, keyed by its configuration.

    Attributes:
        id (int): Unique identifier for the run.
        config_hash (str): SHA-256 of the canonical configuration (unique).
        base_seed (str): Base seed of the path streams, as text since it may exceed 2^63.
        n_paths (int): Requested ensemble size.
        R (float): Truncation radius used by every path.
        delta (float): Initial data scale used by every path.
        created_at (datetime): When the run was first stored.
    """

    __tablename__ = "ensemble_runs"
    id = Column(Integer, autoincrement=True, primary_key=True)
    config_hash = Column(String(64), unique=True, nullable=False)
    base_seed = Column(String(20), nullable=False)
    n_paths = Column(Integer, nullable=False)
    R = Column(Float, nullable=False)
    delta = Column(Float, nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)


class PathRecordRow(Base):
    """
    Model representing the stored outcome of one path.

    Attributes:
        id (int): Unique identifier for the row.
        run_id (int): Foreign key referring to the run.
        path_id (int): Path index within the run.
        y0_h1, x_norm_T, terminal_norm, cost (float): Path norms, NULL on failure.
        iterations (int): Picard iterations.
        truncation_active (bool): Whether the X_t norm exceeded R.
        contraction_max (float): Largest Picard contraction ratio.
        error (str): Failure description, NULL on success.
    """

    __tablename__ = "path_records"
    __table_args__ = (UniqueConstraint("run_id", "path_id", name="uq_run_path"),)

    id = Column(Integer, autoincrement=True, primary_key=True)
    run_id = Column(Integer, ForeignKey("ensemble_runs.id"), nullable=False)
    path_id = Column(Integer, nullable=False)
    y0_h1 = Column(Float)
    x_norm_T = Column(Float)
    terminal_norm = Column(Float)
    cost = Column(Float)
    iterations = Column(Integer)
    truncation_active = Column(Boolean)
    contraction_max = Column(Float)
    error = Column(Text)

    run = relationship("EnsembleRun", backref=backref("records", lazy=True))

    def to_record(self, seed: int) -> PathRecord:
        return PathRecord(
            path_id=self.path_id,
            seed=seed,
            y0_h1=self.y0_h1,
            x_norm_T=self.x_norm_T,
            terminal_norm=self.terminal_norm,
            cost=self.cost,
            iterations=self.iterations,
            truncation_active=self.truncation_active,
            contraction_max=self.contraction_max,
            error=self.error,
        )

    @classmethod
    def from_record(cls, run_id: int, record: PathRecord) -> "PathRecordRow":
        return cls(run_id=run_id, **record.model_dump(exclude={"seed"}))
