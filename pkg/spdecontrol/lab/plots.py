import logging
from pathlib import Path
from typing import List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from spdecontrol.exceptions import DomainError

logger = logging.getLogger(__name__)

plt.rcParams.update({"font.size": 11, "svg.hashsalt": "spdecontrol", "svg.fonttype": "none"})


def _column(header: List[str], data: np.ndarray, name: str) -> np.ndarray:
    if name not in header:
        raise DomainError(f"column {name!r} missing, found {header}")
    return data[:, header.index(name)]


def _save(fig, target: Path) -> Path:
    fig.tight_layout()
    fig.savefig(target, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug("rendered %s", target)
    return target


def plot_trajectory_norms(header: List[str], data: np.ndarray, target: Path) -> Path:
    """L2 and H^1_0 norms of a trajectory against time, log scale."""
    t = _column(header, data, "t")
    fig, ax = plt.subplots(figsize=(8, 5))
    for name, label in (("l2", r"$\|y(t)\|_{L^2}$"), ("h1", r"$\|y(t)\|_{H^1_0}$")):
        values = _column(header, data, name)
        positive = values > 0
        ax.semilogy(t[positive], values[positive], label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("norm")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _save(fig, target)


def plot_cost_curve(
    header: List[str],
    data: np.ndarray,
    target: Path,
    fit: Optional[dict] = None,
) -> Path:
    """Median control cost against 1/T on a log scale, with the affine fit of log cost."""
    inverse = 1.0 / _column(header, data, "T")
    fig, ax = plt.subplots(figsize=(8, 5))
    median = _column(header, data, "cost_median")
    low = _column(header, data, "cost_q25")
    high = _column(header, data, "cost_q75")
    ax.errorbar(inverse, median, yerr=[median - low, high - median], fmt="o", capsize=4, label="median cost")
    if fit is not None:
        grid = np.linspace(inverse.min(), inverse.max(), 50)
        ax.plot(grid, np.exp(fit["c0"] + fit["c1"] * grid), "--", label=f"fit, $R^2$={fit['r2']:.3f}")
    ax.set_yscale("log")
    ax.set_xlabel("1 / T")
    ax.set_ylabel(r"$\|h\|^2_{L^2}$")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _save(fig, target)


def plot_weights(header: List[str], data: np.ndarray, target: Path) -> Path:
    """Logarithms of rho_0, rho and rho_hat over the division window."""
    t = _column(header, data, "t")
    fig, ax = plt.subplots(figsize=(8, 5))
    for name, label in (
        ("log_rho0", r"$\log\rho_0$"),
        ("log_rho", r"$\log\rho$"),
        ("log_rho_hat", r"$\log\hat\rho$"),
    ):
        ax.plot(t, _column(header, data, name), label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("log weight")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, target)
