"""Finite knot/weight discretisation of the one-step N(0, sigma^2) shock."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite_e import hermegauss


@dataclass(frozen=True)
class Quantizer:
    knots: np.ndarray
    weights: np.ndarray
    sigma: float

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float).ravel()
        weights = np.array(self.weights, dtype=float).ravel()
        if knots.shape != weights.shape or knots.size == 0:
            raise ValueError("knots and weights must be non-empty and of equal length")
        if np.any(weights <= 0):
            raise ValueError("quantizer weights must be strictly positive")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("quantizer knots must be strictly increasing")
        knots.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "weights", weights)

    @property
    def n_knots(self) -> int:
        return self.knots.size


def hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights of the n-point Gauss rule for N(0, 1)."""
    if n < 1:
        raise ValueError(f"n_knots must be >= 1, got {n}")
    nodes, weights = hermegauss(n)
    # the rule is symmetric; enforce it exactly so odd moments vanish
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    if n % 2:
        nodes[n // 2] = 0.0
    return nodes, weights / weights.sum()


def build_quantizer(sigma: float, n_knots: int = 50) -> Quantizer:
    """Gauss-Hermite discretisation of N(0, sigma^2).

    With ``sigma == 0`` the shock is degenerate and a single knot at 0 is
    returned regardless of ``n_knots``. Note a one-knot rule cannot match the
    variance of a non-degenerate shock.
    """
    if n_knots < 1:
        raise ValueError(f"n_knots must be >= 1, got {n_knots}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Quantizer(np.zeros(1), np.ones(1), 0.0)
    nodes, weights = hermite_rule(n_knots)
    return Quantizer(sigma * nodes, weights, float(sigma))


def quantized_expectation(q: Quantizer, f) -> float:
    """sum_j w_j f(e_j)."""
    values = np.array([f(e) for e in q.knots], dtype=float)
    return float(q.weights @ values)


def load_quantizer(path: str | Path, sigma: float = 1.0) -> Quantizer:
    """Read a two-column (knot, weight) grid tabulated for N(0, 1), scaled by ``sigma``.

    Tabulated optimal quantizers are printed to finite precision, so weights
    summing to 1 within 1e-6 are renormalised.
    """
    table = np.loadtxt(path, ndmin=2)
    if table.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (knot, weight), got {table.shape[1]}")
    knots, weights = table[:, 0], table[:, 1]
    total = weights.sum()
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"{path}: weights sum to {total!r}, not 1")
    return Quantizer(sigma * knots, weights / total, float(sigma))


def save_quantizer(q: Quantizer, path: str | Path) -> None:
    """Write the grid standardised to N(0, 1); inverse of :func:`load_quantizer`."""
    scale = q.sigma if q.sigma > 0 else 1.0
    np.savetxt(path, np.column_stack([q.knots / scale, q.weights]), fmt="%.17g")
