"""
Artifact output: every file of a command goes through one ArtifactWriter, which
formats numbers reproducibly, writes each artifact exactly once, and removes
everything it wrote when the command fails.
"""

import json
import logging
import math
import os
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from spdecontrol.exceptions import ConfigError, LabError
from spdecontrol.lab.schemas import Manifest

if TYPE_CHECKING:
    from spdecontrol.lab.services import ExperimentOutput

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def format_number(value: Any) -> str:
    """CSV cell: 17 significant digits for floats, '.' decimal point, empty for None."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return _jsonable(value.model_dump())
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps(document: Any) -> str:
    """Canonical JSON text: sorted keys, nonfinite numbers as null, trailing newline."""
    return json.dumps(_jsonable(document), sort_keys=True, indent=2, allow_nan=False) + "\n"


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(format_number(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def read_table(path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
    """
    Read a CSV artifact back as its header and a float array.

    Raises:
        ConfigError: If the file does not exist.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"artifact not found: {path}")
    with path.open(encoding="utf-8") as stream:
        header = stream.readline().rstrip("\n").split(",")
    data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
    return header, data


class ArtifactWriter:
    """
    Context manager owning the artifacts of one command run.

    Params:
        out_dir (Union[str, Path]): Output directory, created on entry.
        command (str): Subcommand name recorded in the manifest.
        config_hash (str): Configuration hash recorded in the manifest.
        seeds (Sequence[int]): Base seeds recorded in the manifest.
    """

    def __init__(self, out_dir: Union[str, Path], command: str, config_hash: str, seeds: Sequence[int]):
        self.out_dir = Path(out_dir)
        self.manifest = Manifest(command=command, config_hash=config_hash, seeds=list(seeds))
        self._written: List[Path] = []

    def __enter__(self) -> "ArtifactWriter":
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, traceback) -> bool:
        if exc_type is None:
            self._write(MANIFEST, dumps(self.manifest), record=False)
            return False
        for path in self._written:
            path.unlink(missing_ok=True)
        logger.info("removed %d partial artifacts after failure", len(self._written))
        return False

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _write(self, name: str, text: str, record: bool = True) -> Path:
        if record and name in self.manifest.artifacts:
            raise LabError(f"artifact {name} written twice")
        target = self.path(name)
        temporary = target.with_name(f".{name}.tmp")
        with temporary.open("w", encoding="utf-8", newline="\n") as stream:
            stream.write(text)
        os.replace(temporary, target)
        if record:
            self._written.append(target)
            self.manifest.artifacts.append(name)
        logger.debug("wrote %s", target)
        return target

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return self._write(name, render_csv(header, rows))

    def write_json(self, name: str, document: Any) -> Path:
        return self._write(name, dumps(document))

    def register(self, name: str) -> Path:
        """Reserve an artifact produced by another writer, such as a plot."""
        if name in self.manifest.artifacts:
            raise LabError(f"artifact {name} written twice")
        target = self.path(name)
        self._written.append(target)
        self.manifest.artifacts.append(name)
        return target

    def emit(self, output: "ExperimentOutput") -> None:
        """Write the tables, then the documents, of an experiment in their insertion order."""
        for name, (header, rows) in output.tables.items():
            self.write_csv(name, header, rows)
        for name, document in output.documents.items():
            self.write_json(name, document)
