"""Transient-impact market model: parameters, state dynamics, costs and path simulation.

The deviation of the execution price from the mid-price is driven by one or
more exponentially decaying components,

    D^m_n = (1 - kappa_m) D^m_{n-1} + eta * u_n**alpha + eps_n,

and the total deviation is the convex mixture ``sum_m zeta_m D^m``. A single
kernel is the special case ``kappa_list=(kappa,)``, ``zeta_list=(1.0,)``.
Only buy programs are modelled, so trades are always in ``[0, x]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np


class AdmissibilityError(ValueError):
    """A trade left the admissible interval [0, remaining inventory]."""


@dataclass(frozen=True)
class ModelParams:
    kappa_list: tuple[float, ...]
    zeta_list: tuple[float, ...]
    eta: float
    alpha: float
    nu: float
    sigma: float
    n_steps: int
    x0: float
    d0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kappa_list", tuple(float(k) for k in self.kappa_list))
        object.__setattr__(self, "zeta_list", tuple(float(z) for z in self.zeta_list))
        errors = []
        if len(self.kappa_list) == 0 or len(self.kappa_list) != len(self.zeta_list):
            errors.append("kappa_list and zeta_list must be non-empty and of equal length")
        if any(not 0.0 < k <= 1.0 for k in self.kappa_list):
            errors.append(f"each kappa must lie in (0, 1], got {self.kappa_list}")
        if any(not 0.0 <= z <= 1.0 for z in self.zeta_list):
            errors.append(f"each zeta must lie in [0, 1], got {self.zeta_list}")
        if self.zeta_list and abs(math.fsum(self.zeta_list) - 1.0) > 1e-12:
            errors.append(f"zeta weights must sum to 1, got {math.fsum(self.zeta_list)!r}")
        if not self.eta > 0:
            errors.append(f"eta must be > 0, got {self.eta}")
        if not self.alpha > 0:
            errors.append(f"alpha must be > 0, got {self.alpha}")
        if not self.nu >= 0:
            errors.append(f"nu must be >= 0, got {self.nu}")
        if not self.sigma >= 0:
            errors.append(f"sigma must be >= 0, got {self.sigma}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            errors.append(f"n_steps must be an integer >= 1, got {self.n_steps}")
        if not self.x0 > 0:
            errors.append(f"x0 must be > 0, got {self.x0}")
        if errors:
            raise ValueError("; ".join(errors))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def single(cls, kappa: float, eta: float, alpha: float = 1.0, nu: float = 0.0,
               sigma: float = 0.0, n_steps: int = 10, x0: float = 1e5,
               d0: float = 0.0) -> "ModelParams":
        """Single exponential kernel with resilience ``kappa``."""
        return cls((kappa,), (1.0,), eta, alpha, nu, sigma, n_steps, x0, d0)

    @property
    def n_kernels(self) -> int:
        return len(self.kappa_list)

    @property
    def is_single(self) -> bool:
        return self.n_kernels == 1

    @property
    def kappa(self) -> float:
        if not self.is_single:
            raise ValueError("kappa is only defined for a single-kernel model")
        return self.kappa_list[0]

    @property
    def kappas(self) -> np.ndarray:
        return np.asarray(self.kappa_list)

    @property
    def zetas(self) -> np.ndarray:
        return np.asarray(self.zeta_list)

    def with_(self, **changes) -> "ModelParams":
        """Copy with some fields replaced; ``kappa=`` sets a single kernel."""
        if "kappa" in changes:
            changes["kappa_list"] = (changes.pop("kappa"),)
            changes.setdefault("zeta_list", (1.0,))
        return replace(self, **changes)

    def initial_state(self) -> "MarketState":
        return MarketState(self.x0, (self.d0,) * self.n_kernels, 0)


@dataclass(frozen=True)
class MarketState:
    """Remaining shares ``x``, deviation components and completed-trade count."""

    x: float
    d_components: tuple[float, ...]
    step: int = 0

    def deviation(self, p: ModelParams) -> float:
        return float(np.dot(p.zetas, self.d_components))


@dataclass(frozen=True)
class NoisePath:
    """Pre-generated shocks, one row per path and one column per period.

    Every policy evaluated on the same ``NoisePath`` sees the same shock at the
    same period index (common random numbers).
    """

    eps: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        eps = np.array(self.eps, dtype=float, ndmin=2)
        eps.setflags(write=False)
        object.__setattr__(self, "eps", eps)

    @classmethod
    def generate(cls, sigma: float, n_steps: int, m_paths: int, seed: int) -> "NoisePath":
        if sigma > 0:
            eps = np.random.default_rng(seed).normal(0.0, sigma, size=(m_paths, n_steps))
        else:
            eps = np.zeros((m_paths, n_steps))
        return cls(eps, seed)

    @property
    def m_paths(self) -> int:
        return self.eps.shape[0]

    @property
    def n_steps(self) -> int:
        return self.eps.shape[1]


def _check_trade(u: float, x: float) -> None:
    if not (0.0 <= u <= x):
        raise AdmissibilityError(f"trade {u!r} outside admissible interval [0, {x!r}]")


def mixed_decayed_deviation(p: ModelParams, d_components) -> np.ndarray | float:
    """``sum_m zeta_m (1 - kappa_m) D^m``; works on a trailing kernel axis."""
    d = np.asarray(d_components, dtype=float)
    return np.sum(p.zetas * (1.0 - p.kappas) * d, axis=-1)


def step_state(s: MarketState, u: float, eps: float, p: ModelParams) -> MarketState:
    if s.step >= p.n_steps:
        raise ValueError(f"state already at terminal step {s.step}")
    _check_trade(u, s.x)
    impact = p.eta * u ** p.alpha
    d_next = tuple((1.0 - k) * d + impact + eps for k, d in zip(p.kappa_list, s.d_components))
    return MarketState(s.x - u, d_next, s.step + 1)


def stage_cost(s: MarketState, u: float, p: ModelParams) -> float:
    _check_trade(u, s.x)
    d_eff = float(mixed_decayed_deviation(p, s.d_components))
    return d_eff * u + 0.5 * p.eta * u ** (p.alpha + 1.0) + p.nu * (s.x - u) ** 2


def terminal_value(s: MarketState, p: ModelParams) -> float:
    """Cost of the forced liquidation of everything left in the last period."""
    d_eff = float(mixed_decayed_deviation(p, s.d_components))
    return d_eff * s.x + 0.5 * p.eta * s.x ** (p.alpha + 1.0)


ScalarPolicy = Callable[[int, MarketState], float]
BatchPolicy = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def simulate_path(p: ModelParams, policy: ScalarPolicy, eps_row: Sequence[float]):
    """Run one path; ``policy(n, state)`` chooses trade ``u_n`` for n < N.

    The last trade is always the remaining inventory. Returns the trade
    vector and the realized total cost.
    """
    eps_row = np.asarray(eps_row, dtype=float)
    if eps_row.shape != (p.n_steps,):
        raise ValueError(f"noise row must have length {p.n_steps}, got {eps_row.shape}")
    s = p.initial_state()
    trades = np.empty(p.n_steps)
    cost = 0.0
    for n in range(1, p.n_steps + 1):
        u = s.x if n == p.n_steps else float(policy(n, s))
        cost += stage_cost(s, u, p)
        trades[n - 1] = u
        s = step_state(s, u, eps_row[n - 1], p)
    if not math.isfinite(cost):
        raise FloatingPointError(f"non-finite path cost {cost!r}")
    return trades, cost


@dataclass
class PathBatch:
    """Result of simulating many paths at once."""

    trades: np.ndarray          # (m_paths, N)
    costs: np.ndarray           # (m_paths,)
    x: np.ndarray               # (m_paths, N + 1) inventory before each trade, then 0
    d: np.ndarray               # (m_paths, N + 1, K) deviation components
    extras: dict = field(default_factory=dict)


def signed_power(u, alpha: float):
    """|u|**alpha * sign(u); equals u**alpha for buys."""
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.abs(u) ** alpha


def simulate_paths(p: ModelParams, policy: BatchPolicy, noise: NoisePath,
                   constrained: bool = True) -> PathBatch:
    """Vectorised counterpart of :func:`simulate_path` over every noise row.

    ``policy(n, x, d_components)`` receives arrays of shape ``(m,)`` and
    ``(m, K)`` and returns the trades ``u_n`` for all paths.

    With ``constrained=False`` trades may be negative or exceed the
    inventory (used for the unconstrained linear benchmark); impact is then
    the signed power ``|u|**alpha * sign(u)``.
    """
    if noise.n_steps != p.n_steps:
        raise ValueError(f"noise has {noise.n_steps} periods, model has {p.n_steps}")
    m, n_steps, k = noise.m_paths, p.n_steps, p.n_kernels
    decay = 1.0 - p.kappas
    weights = p.zetas * decay
    x = np.empty((m, n_steps + 1))
    d = np.empty((m, n_steps + 1, k))
    trades = np.empty((m, n_steps))
    costs = np.zeros(m)
    x[:, 0] = p.x0
    d[:, 0, :] = p.d0
    for n in range(1, n_steps + 1):
        xc, dc = x[:, n - 1], d[:, n - 1, :]
        if n == n_steps:
            u = xc.copy()
        else:
            u = np.asarray(policy(n, xc, dc), dtype=float).reshape(m)
            bad = ~((u >= 0.0) & (u <= xc)) if constrained else ~np.isfinite(u)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise AdmissibilityError(
                    f"step {n}: trade {u[i]!r} outside [0, {xc[i]!r}] on path {i}"
                    f" ({int(bad.sum())} violations)")
        push = signed_power(u, p.alpha)
        costs += (dc @ weights) * u + 0.5 * p.eta * push * u + p.nu * (xc - u) ** 2
        trades[:, n - 1] = u
        x[:, n] = xc - u
        d[:, n, :] = decay * dc + (p.eta * push + noise.eps[:, n - 1])[:, None]
    if not np.all(np.isfinite(costs)):
        raise FloatingPointError("non-finite path costs encountered")
    return PathBatch(trades, costs, x, d)


def deviation_from_kernel(p: ModelParams, trades, eps=None) -> np.ndarray:
    """Total deviation D_0..D_N from the propagator sum over past trades.

    D_n = G_{n,0} d0 + sum_{j<=n} G_{n,j} (eta u_j**alpha + eps_j) with
    G_{n,j} = sum_m zeta_m (1 - kappa_m)**(n - j).
    """
    trades = np.asarray(trades, dtype=float)
    n_steps = trades.shape[0]
    eps = np.zeros(n_steps) if eps is None else np.asarray(eps, dtype=float)
    lags = np.arange(n_steps + 1)
    kernel = (p.zetas[None, :] * (1.0 - p.kappas[None, :]) ** lags[:, None]).sum(axis=1)
    pushes = p.eta * trades ** p.alpha + eps
    out = np.empty(n_steps + 1)
    for n in range(n_steps + 1):
        j = np.arange(1, n + 1)
        out[n] = kernel[n] * p.d0 + np.sum(kernel[n - j] * pushes[j - 1])
    return out


def rescale_params(p: ModelParams, n_new: int) -> ModelParams:
    """Re-express the model on ``n_new`` periods over the same business horizon.

    Resilience and urgency scale like 1/N, the noise amplitude like N**-1/2,
    and the impact coefficient is left untouched.
    """
    if int(n_new) != n_new or n_new < 1:
        raise ValueError(f"n_new must be an integer >= 1, got {n_new}")
    ratio = n_new / p.n_steps
    kappas = tuple(k / ratio for k in p.kappa_list)
    bad = [k for k in kappas if not 0.0 < k <= 1.0]
    if bad:
        raise ValueError(f"rescaled kappa {bad} leaves (0, 1]")
    return replace(p, kappa_list=kappas, sigma=p.sigma / math.sqrt(ratio),
                   nu=p.nu / ratio, n_steps=int(n_new))
