"""Monte-Carlo comparison of execution policies on a shared noise database."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .closed_form import backward_coeffs, lf_policy, unconstrained_feedback, vwap_policy
from .market import BatchPolicy, ModelParams, NoisePath, simulate_paths

DEFAULT_PATHS = 10_000
_FMT = "%.10g"


def linear_feedback(p: ModelParams, kappa: float | None = None) -> BatchPolicy:
    """Buy-only linear feedback built as if impact were linear with one kernel.

    The policy observes the model's total deviation ``sum_m zeta_m D^m`` and
    applies the clamped closed-form feedback for resilience ``kappa``
    (default: the model's own, which requires a single kernel). Impact is
    treated as linear whatever the model's ``alpha``.
    """
    assumed = ModelParams.single(p.kappa if kappa is None else kappa, p.eta, 1.0, p.nu,
                                 p.sigma, p.n_steps, p.x0, p.d0)
    coeffs = backward_coeffs(assumed)
    zetas = p.zetas

    def run(n, x, dcomp):
        return lf_policy(coeffs, n, x, np.asarray(dcomp) @ zetas)

    return run


def unconstrained_linear(p: ModelParams) -> BatchPolicy:
    """Closed-form feedback without the buy-only clamp; simulate with ``constrained=False``."""
    coeffs = backward_coeffs(p)

    def run(n, x, dcomp):
        return unconstrained_feedback(coeffs, n, x, np.asarray(dcomp)[:, 0])

    return run


def vwap(p: ModelParams) -> BatchPolicy:
    def run(n, x, dcomp):
        return np.broadcast_to(vwap_policy(p, n, np.asarray(x)), np.shape(x)).copy()

    return run


@dataclass(frozen=True)
class PolicyStats:
    policy: str
    mean_cost: float
    se: float
    rel_diff_pct: float
    frac_better: float
    frac_worse: float
    frac_tie: float


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-path costs and trades of several policies driven by one noise database."""

    params: ModelParams
    baseline: str
    seed: int
    costs: Mapping[str, np.ndarray]
    trades: Mapping[str, np.ndarray]

    @property
    def m_paths(self) -> int:
        return next(iter(self.costs.values())).shape[0]

    @property
    def names(self) -> list[str]:
        return list(self.costs)

    def mean_cost(self, name: str) -> float:
        return float(np.mean(self.costs[name]))

    def se(self, name: str) -> float:
        c = self.costs[name]
        return float(np.std(c, ddof=1) / np.sqrt(c.size)) if c.size > 1 else 0.0

    def rel_diff(self, candidate: str, baseline: str | None = None) -> float:
        """(baseline - candidate) / baseline of mean costs, in percent; positive favours the candidate."""
        base = self.mean_cost(baseline or self.baseline)
        return (base - self.mean_cost(candidate)) / base * 100.0

    def path_rel_diff(self, candidate: str, baseline: str | None = None) -> np.ndarray:
        """Per-path relative difference in percent, same sign convention."""
        base = self.costs[baseline or self.baseline]
        return (base - self.costs[candidate]) / base * 100.0

    def outcome_fractions(self, candidate: str, baseline: str | None = None):
        """Fractions of paths on which the candidate is cheaper, dearer, or tied."""
        base = self.costs[baseline or self.baseline]
        cand = self.costs[candidate]
        tie = np.isclose(cand, base, rtol=1e-12, atol=0.0)
        better = (cand < base) & ~tie
        worse = (cand > base) & ~tie
        n = base.size
        return better.sum() / n, worse.sum() / n, tie.sum() / n

    def summary(self) -> list[PolicyStats]:
        rows = []
        for name in self.costs:
            better, worse, tie = self.outcome_fractions(name)
            rows.append(PolicyStats(name, self.mean_cost(name), self.se(name),
                                    self.rel_diff(name), float(better), float(worse), float(tie)))
        return rows

    def step_means(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        t = self.trades[name]
        se = t.std(axis=0, ddof=1) / np.sqrt(t.shape[0]) if t.shape[0] > 1 else np.zeros(t.shape[1])
        return t.mean(axis=0), se


def compare_policies(p: ModelParams, policies: Mapping[str, BatchPolicy] | Sequence,
                     m_paths: int = DEFAULT_PATHS, seed: int = 0, baseline: str | None = None,
                     unconstrained: Sequence[str] = ()) -> EvalReport:
    """Simulate every policy on the same shocks and collect per-path results.

    ``baseline`` defaults to the first policy. Names listed in
    ``unconstrained`` are allowed to sell or overshoot.
    """
    if m_paths < 1:
        raise ValueError(f"m_paths must be >= 1, got {m_paths}")
    items = list(policies.items()) if isinstance(policies, Mapping) else list(policies)
    if not items:
        raise ValueError("no policies to compare")
    names = [k for k, _ in items]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate policy names in {names}")
    baseline = names[0] if baseline is None else baseline
    if baseline not in names:
        raise ValueError(f"baseline {baseline!r} is not among {names}")
    noise = NoisePath.generate(p.sigma, p.n_steps, m_paths, seed)
    costs, trades = {}, {}
    for name, pol in items:
        batch = simulate_paths(p, pol, noise, constrained=name not in unconstrained)
        costs[name] = batch.costs
        trades[name] = batch.trades
    return EvalReport(p, baseline, seed, costs, trades)


@dataclass(frozen=True)
class StrategyProfile:
    """Per-step trade statistics across simulated paths (box-plot ready)."""

    steps: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    q25: np.ndarray
    q50: np.ndarray
    q75: np.ndarray
    whisker_lo: np.ndarray
    whisker_hi: np.ndarray


def profile_from_trades(trades) -> StrategyProfile:
    trades = np.atleast_2d(np.asarray(trades, dtype=float))
    m, n = trades.shape
    q25, q50, q75 = np.percentile(trades, [25, 50, 75], axis=0)
    iqr = q75 - q25
    lo_fence, hi_fence = q25 - 1.5 * iqr, q75 + 1.5 * iqr
    # Tukey whiskers: most extreme observations inside the fences
    whisker_lo = np.where(trades >= lo_fence, trades, np.inf).min(axis=0)
    whisker_hi = np.where(trades <= hi_fence, trades, -np.inf).max(axis=0)
    se = trades.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros(n)
    return StrategyProfile(np.arange(1, n + 1), trades.mean(axis=0), se, q25, q50, q75,
                           whisker_lo, whisker_hi)


def strategy_profile(p: ModelParams, policy: BatchPolicy, m_paths: int = DEFAULT_PATHS,
                     seed: int = 0, constrained: bool = True) -> StrategyProfile:
    noise = NoisePath.generate(p.sigma, p.n_steps, m_paths, seed)
    return profile_from_trades(simulate_paths(p, policy, noise, constrained).trades)


@dataclass(frozen=True)
class Surface:
    axes: tuple[str, str]
    grid0: np.ndarray
    grid1: np.ndarray
    trades: np.ndarray      # (len(grid0), len(grid1))
    outside: np.ndarray     # same shape, True where extrapolating


def sensitivity_surface(artifacts, n: int, x: float, d, grid0: Sequence[float],
                        grid1: Sequence[float], axes: tuple[str, str] = ("kappa", "eta"),
                        p: ModelParams | None = None) -> Surface:
    """Policy trade ``u_n`` at a fixed state over a grid of two parameter coordinates.

    Other parameter coordinates come from ``p`` (default: the solver template).
    Cells outside the training box are evaluated anyway and flagged.
    """
    space = artifacts.space
    for a in axes:
        if a not in space.names:
            raise ValueError(f"{a!r} is not a coordinate of this solver ({space.names})")
    p = space.template if p is None else p
    g0 = np.asarray(grid0, dtype=float)
    g1 = np.asarray(grid1, dtype=float)
    dcomp = np.broadcast_to(np.atleast_1d(np.asarray(d, dtype=float)), (p.n_kernels,))
    k = g0.size * g1.size
    y = space.inputs_for(p, np.full(k, float(x)), np.tile(dcomp, (k, 1)))
    a0, a1 = np.meshgrid(g0, g1, indexing="ij")
    y[:, space.domain.index(axes[0])] = a0.ravel()
    y[:, space.domain.index(axes[1])] = a1.ravel()
    trades = artifacts.fractions(n, y) * float(x)
    outside = space.domain.outside(y)
    return Surface(tuple(axes), g0, g1, trades.reshape(a0.shape), outside.reshape(a0.shape))


def write_csv(path, header, rows) -> Path:
    """Write rows with floats formatted to ten significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_FMT % v if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_profile_csv(profile: StrategyProfile, path) -> Path:
    rows = zip(profile.steps.tolist(), *(a.astype(float) for a in
               (profile.mean, profile.se, profile.q25, profile.q50, profile.q75)))
    return write_csv(path, ["step", "mean_trade", "se", "q25", "q50", "q75"], rows)


def write_comparison_csv(report: EvalReport, path) -> Path:
    rows = [(s.policy, s.mean_cost, s.se, s.rel_diff_pct, s.frac_better) for s in report.summary()]
    return write_csv(path, ["policy", "mean_cost", "se", "rel_diff_pct_vs_baseline",
                         "frac_paths_better"], rows)


def write_surface_csv(surface: Surface, path) -> Path:
    rows = []
    for i, v0 in enumerate(surface.grid0):
        for j, v1 in enumerate(surface.grid1):
            rows.append((float(v0), float(v1), float(surface.trades[i, j]),
                         int(surface.outside[i, j])))
    return write_csv(path, [surface.axes[0], surface.axes[1], "trade", "outside_domain"], rows)


def write_path_diffs_csv(report: EvalReport, candidate: str, path) -> Path:
    """Per-path relative cost difference of ``candidate`` against the baseline."""
    diffs = report.path_rel_diff(candidate)
    return write_csv(path, ["path", "rel_diff_pct"], ((i, float(v)) for i, v in enumerate(diffs)))
