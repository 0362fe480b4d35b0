"""Backward induction with network surrogates over a fused state/parameter space.

A design point ``y`` concatenates the stochastic state (inventory and one or
more deviation components) with whichever model parameters the solver is
parametric in. Parameters that are not coordinates are read from a fixed
template ``ModelParams``.

For each period n = N-1, ..., 1 the solver samples a design, minimises the
one-step Bellman objective pointwise over the trade, and fits a value network
to the minima and a policy network to the minimising inventory fractions.
The terminal value is always evaluated exactly.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .market import MarketState, ModelParams, signed_power
from .quantization import Quantizer, build_quantizer
from .surrogate import MlpSpec, ScalingSpec, Surrogate, TrainConfig, fit

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
PARAM_COORDS = ("kappa", "eta", "alpha", "nu", "zeta")
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

ValueFn = Callable[[np.ndarray], np.ndarray]


def _d_names(n_kernels: int) -> tuple[str, ...]:
    return ("d",) if n_kernels == 1 else tuple(f"d{m + 1}" for m in range(n_kernels))


@dataclass(frozen=True)
class TrainingDomain:
    """Hyper-rectangle of training inputs, one ``[lo, hi]`` interval per coordinate."""

    names: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    m_points: int
    fresh_per_step: bool = True

    def __post_init__(self):
        names = tuple(self.names)
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        errors = []
        if not (len(names) == len(lo) == len(hi)) or not names:
            errors.append("names, lo and hi must be non-empty and of equal length")
        if len(set(names)) != len(names):
            errors.append(f"duplicate coordinates in {names}")
        if int(self.m_points) != self.m_points or self.m_points < 1:
            errors.append(f"m_points must be an integer >= 1, got {self.m_points}")
        for name, a, b in zip(names, lo, hi):
            known = name in ("x", "d") or name in PARAM_COORDS or (
                name[0] == "d" and name[1:].isdigit() and int(name[1:]) >= 1)
            if not known:
                errors.append(f"unknown coordinate {name!r}")
                continue
            if not b > a:
                errors.append(f"{name}: need hi > lo, got [{a}, {b}]")
            if name == "x" and a < 0:
                errors.append(f"x: lower bound {a} < 0")
            if name == "kappa" and not (0 < a and b <= 1):
                errors.append(f"kappa: [{a}, {b}] not inside (0, 1]")
            if name in ("eta", "alpha") and not a > 0:
                errors.append(f"{name}: lower bound {a} must be > 0")
            if name == "nu" and a < 0:
                errors.append(f"nu: lower bound {a} < 0")
            if name == "zeta" and not (0 <= a and b <= 1):
                errors.append(f"zeta: [{a}, {b}] not inside [0, 1]")
        if errors:
            raise ValueError("; ".join(errors))
        object.__setattr__(self, "m_points", int(self.m_points))

    @classmethod
    def from_bounds(cls, bounds: dict, m_points: int, fresh_per_step: bool = True):
        """``bounds`` maps coordinate name to ``(lo, hi)``; insertion order is kept."""
        names = tuple(bounds)
        return cls(names, tuple(bounds[k][0] for k in names), tuple(bounds[k][1] for k in names),
                   m_points, fresh_per_step)

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def bounds(self, name: str) -> tuple[float, float]:
        i = self.index(name)
        return self.lo[i], self.hi[i]

    def outside(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.any((y < np.asarray(self.lo)) | (y > np.asarray(self.hi)), axis=-1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingDomain":
        return cls(tuple(data["names"]), tuple(data["lo"]), tuple(data["hi"]),
                   data["m_points"], data.get("fresh_per_step", True))


def sample_design(dom: TrainingDomain, step: int, seed: int, pass_index: int = 0) -> np.ndarray:
    """``dom.m_points`` i.i.d. uniform points in the box, reproducible per (seed, step, pass).

    With ``fresh_per_step`` off every step reuses the step-0 draw.
    """
    key = step if dom.fresh_per_step else 0
    rng = np.random.default_rng([int(seed), int(key), int(pass_index)])
    lo, hi = np.asarray(dom.lo), np.asarray(dom.hi)
    return lo + rng.random((dom.m_points, dom.dim)) * (hi - lo)


class Fields(NamedTuple):
    """Design points unpacked into per-row model quantities."""

    x: np.ndarray           # (m,)
    dcomp: np.ndarray       # (m, K)
    kappas: np.ndarray      # (m, K) or broadcastable
    zetas: np.ndarray       # (m, K) or broadcastable
    eta: np.ndarray
    alpha: np.ndarray
    nu: np.ndarray

    def decayed_deviation(self) -> np.ndarray:
        return np.sum(self.zetas * (1.0 - self.kappas) * self.dcomp, axis=-1)


@dataclass(frozen=True)
class StateSpace:
    """Ties a training domain to the template supplying every non-coordinate parameter."""

    template: ModelParams
    domain: TrainingDomain

    def __post_init__(self):
        t, names = self.template, self.domain.names
        errors = []
        d_names = _d_names(t.n_kernels)
        if "x" not in names:
            errors.append("coordinate 'x' is required")
        missing = [d for d in d_names if d not in names]
        if missing:
            errors.append(f"a {t.n_kernels}-kernel model needs deviation coordinates {d_names}")
        extra_d = [n for n in names if n[0] == "d" and n not in d_names]
        if extra_d:
            errors.append(f"coordinates {extra_d} do not match a {t.n_kernels}-kernel model")
        if "kappa" in names and t.n_kernels != 1:
            errors.append("kappa can only be a coordinate for a single kernel")
        if "zeta" in names and t.n_kernels != 2:
            errors.append("zeta can only be a coordinate for two kernels")
        if "x" in names and self.domain.bounds("x")[1] > t.x0 * (1 + 1e-12):
            errors.append(f"x range {self.domain.bounds('x')} exceeds [0, X0={t.x0}]")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def names(self) -> tuple[str, ...]:
        return self.domain.names

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_steps(self) -> int:
        return self.template.n_steps

    def _col(self, y, name, default):
        if name in self.domain.names:
            return y[:, self.domain.index(name)]
        return np.full(y.shape[0], float(default))

    def unpack(self, y) -> Fields:
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != self.dim:
            raise ValueError(f"design must have shape (m, {self.dim}), got {y.shape}")
        t = self.template
        idx = [self.domain.index(d) for d in _d_names(t.n_kernels)]
        dcomp = y[:, idx]
        if "kappa" in self.domain.names:
            kappas = y[:, [self.domain.index("kappa")]]
        else:
            kappas = t.kappas[None, :]
        if "zeta" in self.domain.names:
            z = y[:, self.domain.index("zeta")]
            zetas = np.column_stack([z, 1.0 - z])
        else:
            zetas = t.zetas[None, :]
        return Fields(y[:, self.domain.index("x")], dcomp, kappas, zetas,
                      self._col(y, "eta", t.eta), self._col(y, "alpha", t.alpha),
                      self._col(y, "nu", t.nu))

    def stage_cost(self, f: Fields, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (f.decayed_deviation() * u + 0.5 * f.eta * signed_power(u, f.alpha) * u
                + f.nu * (f.x - u) ** 2)

    def terminal(self, y) -> np.ndarray:
        """Exact value of the forced final liquidation at design points ``y``."""
        f = self.unpack(y)
        return f.decayed_deviation() * f.x + 0.5 * f.eta * f.x ** (f.alpha + 1.0)

    def next_inputs(self, y, f: Fields, u, eps) -> np.ndarray:
        """Successor design points, shape ``(len(eps), m, dim)``, one slab per shock."""
        y = np.asarray(y, dtype=float)
        eps = np.asarray(eps, dtype=float)
        out = np.empty((eps.size,) + y.shape)
        out[...] = y
        out[..., self.domain.index("x")] = f.x - u
        push = f.eta * signed_power(u, f.alpha)
        kappas = np.broadcast_to(f.kappas, f.dcomp.shape)
        for k, name in enumerate(_d_names(self.template.n_kernels)):
            base = (1.0 - kappas[:, k]) * f.dcomp[:, k] + push
            out[..., self.domain.index(name)] = base[None, :] + eps[:, None]
        return out

    def inputs_for(self, p: ModelParams, x, dcomp) -> np.ndarray:
        """Design rows for concrete parameters ``p`` at states ``(x, dcomp)``."""
        x = np.asarray(x, dtype=float).reshape(-1)
        dcomp = np.asarray(dcomp, dtype=float).reshape(x.shape[0], -1)
        y = np.empty((x.shape[0], self.dim))
        for i, name in enumerate(self.domain.names):
            if name == "x":
                y[:, i] = x
            elif name == "d":
                y[:, i] = dcomp[:, 0]
            elif name[0] == "d":
                y[:, i] = dcomp[:, int(name[1:]) - 1]
            elif name == "kappa":
                y[:, i] = p.kappa
            elif name == "zeta":
                y[:, i] = p.zeta_list[0]
            else:
                y[:, i] = getattr(p, name)
        return y

    def violations(self, p: ModelParams) -> list[str]:
        """Every way in which ``p`` falls outside what this space was trained for."""
        t, dom = self.template, self.domain
        out = []
        if p.n_kernels != t.n_kernels:
            return [f"model has {p.n_kernels} kernels, solver was trained with {t.n_kernels}"]
        if p.n_steps != t.n_steps:
            out.append(f"n_steps={p.n_steps} but solver has {t.n_steps} periods")
        if not math.isclose(p.sigma, t.sigma, rel_tol=1e-12, abs_tol=0.0):
            out.append(f"sigma={p.sigma} but solver was trained with sigma={t.sigma}")

        def check(name, value, fixed):
            if name in dom.names:
                lo, hi = dom.bounds(name)
                if not lo <= value <= hi:
                    out.append(f"{name}={value} outside training range [{lo}, {hi}]")
            elif not math.isclose(value, fixed, rel_tol=1e-12, abs_tol=1e-300):
                out.append(f"{name}={value} but solver fixes {name}={fixed}")

        if t.n_kernels == 1:
            check("kappa", p.kappa, t.kappa)
        elif p.kappa_list != t.kappa_list:
            out.append(f"kappa_list={p.kappa_list} but solver uses {t.kappa_list}")
        if t.n_kernels == 2:
            check("zeta", p.zeta_list[0], t.zeta_list[0])
        elif t.n_kernels > 2 and p.zeta_list != t.zeta_list:
            out.append(f"zeta_list={p.zeta_list} but solver uses {t.zeta_list}")
        for name in ("eta", "alpha", "nu"):
            check(name, getattr(p, name), getattr(t, name))
        xlo, xhi = dom.bounds("x")
        if not xlo <= p.x0 <= xhi:
            out.append(f"x0={p.x0} outside training range [{xlo}, {xhi}]")
        for name in _d_names(t.n_kernels):
            lo, hi = dom.bounds(name)
            if not lo <= p.d0 <= hi:
                out.append(f"d0={p.d0} outside training range of {name} [{lo}, {hi}]")
        return out

    def to_dict(self) -> dict:
        return {"template": asdict(self.template), "domain": self.domain.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "StateSpace":
        t = dict(data["template"])
        t["kappa_list"] = tuple(t["kappa_list"])
        t["zeta_list"] = tuple(t["zeta_list"])
        return cls(ModelParams(**t), TrainingDomain.from_dict(data["domain"]))


@dataclass(frozen=True)
class StageResult:
    values: np.ndarray
    trades: np.ndarray
    n_capped: int
    n_evals: int


def stage_optimize(space: StateSpace, y, v_next: ValueFn, q: Quantizer, lower=None,
                   upper=None, n_grid: int = 9, rtol: float = 1e-8,
                   max_iter: int = 200) -> StageResult:
    """Pointwise minimisation of stage cost plus quantized continuation value.

    All design points are optimised together. A uniform grid of ``n_grid``
    trades on ``[lower, upper]`` (by default ``[0, x]``; the grid contains both
    ends and the midpoint) picks a bracket around the best grid point, which
    golden-section search then shrinks to width ``rtol * max(1, x)``. The
    returned trade is the best point evaluated, so it never does worse than
    any grid point. Points still unconverged after ``max_iter`` golden-section
    iterations are counted in ``n_capped``.
    """
    y = np.asarray(y, dtype=float)
    f = space.unpack(y)
    m = y.shape[0]
    lo = np.zeros(m) if lower is None else np.broadcast_to(np.asarray(lower, float), (m,))
    hi = f.x.copy() if upper is None else np.broadcast_to(np.asarray(upper, float), (m,))
    if np.any(hi < lo):
        raise ValueError("upper trade bound below lower bound")
    if n_grid < 3:
        raise ValueError("n_grid must be >= 3")
    weights, knots = q.weights, q.knots
    n_evals = 0

    def objective(u):
        nonlocal n_evals
        n_evals += 1
        nxt = space.next_inputs(y, f, u, knots)
        cont = np.asarray(v_next(nxt.reshape(-1, space.dim)), dtype=float).reshape(knots.size, m)
        return space.stage_cost(f, u) + weights @ cont

    grid = lo + np.linspace(0.0, 1.0, n_grid)[:, None] * (hi - lo)
    fgrid = np.stack([objective(u) for u in grid])
    if not np.all(np.isfinite(fgrid)):
        raise FloatingPointError("non-finite stage objective on the trade grid")
    k = np.argmin(fgrid, axis=0)
    cols = np.arange(m)
    best_u = grid[k, cols]
    best_f = fgrid[k, cols]
    a = grid[np.maximum(k - 1, 0), cols]
    c = grid[np.minimum(k + 1, n_grid - 1), cols]

    tol = rtol * np.maximum(1.0, np.abs(f.x))
    x1 = c - _GOLDEN * (c - a)
    x2 = a + _GOLDEN * (c - a)
    f1 = objective(x1)
    f2 = objective(x2)
    it = 0
    active = (c - a) > tol
    while active.any() and it < max_iter:
        left = f1 < f2
        new_a = np.where(left, a, x1)
        new_c = np.where(left, x2, c)
        probe = np.where(left, new_c - _GOLDEN * (new_c - new_a), new_a + _GOLDEN * (new_c - new_a))
        fp = objective(probe)
        nx1 = np.where(left, probe, x2)
        nf1 = np.where(left, fp, f2)
        nx2 = np.where(left, x1, probe)
        nf2 = np.where(left, f1, fp)
        a = np.where(active, new_a, a)
        c = np.where(active, new_c, c)
        x1 = np.where(active, nx1, x1)
        f1 = np.where(active, nf1, f1)
        x2 = np.where(active, nx2, x2)
        f2 = np.where(active, nf2, f2)
        it += 1
        active = (c - a) > tol
    n_capped = int(active.sum())
    if n_capped:
        log.warning("stage optimisation hit the %d-iteration cap on %d points", max_iter, n_capped)
    for u_c, f_c in ((x1, f1), (x2, f2)):
        better = f_c < best_f
        best_u = np.where(better, u_c, best_u)
        best_f = np.where(better, f_c, best_f)
    if not np.all(np.isfinite(best_f)):
        raise FloatingPointError("non-finite stage values")
    return StageResult(best_f, best_u, n_capped, n_evals)


@dataclass(frozen=True)
class SolverSettings:
    hidden_layers: int = 3
    hidden_width: int = 16
    epochs: int = 2000
    policy_epochs: int | None = None
    batch_size: int = 64
    learning_rate: float = 1e-3
    n_knots: int = 50
    warm_start: bool = False
    passes: int = 1
    fresh_per_pass: bool = True
    seed: int = 0
    n_grid: int = 9
    rtol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.epochs < 1 or (self.policy_epochs is not None and self.policy_epochs < 1):
            raise ValueError("epochs must be >= 1")

    def train_config(self, seed: int, policy: bool) -> TrainConfig:
        epochs = self.policy_epochs if policy and self.policy_epochs else self.epochs
        return TrainConfig(epochs=epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=seed)


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    pass_index: int
    stage_seconds: float
    value_fit_seconds: float
    policy_fit_seconds: float
    value_loss: float
    policy_loss: float
    value_lo: float
    value_hi: float
    mean_fraction: float
    n_capped: int
    frac_next_outside: float


def _fit_seed(seed: int, step: int, pass_index: int, head: int) -> int:
    return int(np.random.SeedSequence([int(seed), step, pass_index, head]).generate_state(1)[0])


def policy_fractions(x, trades) -> np.ndarray:
    """Trade as a fraction of inventory; 0.5 where the inventory is zero."""
    x = np.asarray(x, dtype=float)
    trades = np.asarray(trades, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, np.clip(trades / safe, 0.0, 1.0), 0.5)


@dataclass(frozen=True, eq=False)
class SolverArtifacts:
    """Fitted value and policy networks for periods 1..N-1 plus solver metadata."""

    space: StateSpace
    settings: SolverSettings
    values: dict
    policies: dict
    quantizer: Quantizer
    diagnostics: tuple = ()

    @property
    def n_steps(self) -> int:
        return self.space.n_steps

    def value_fn(self, n: int) -> ValueFn:
        """V_n on design points; exact at n = N."""
        if n == self.n_steps:
            return self.space.terminal
        return self.values[n].predict

    def fractions(self, n: int, y) -> np.ndarray:
        """Fraction of inventory to buy at period n (1 at n = N)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if n == self.n_steps:
            return np.ones(y.shape[0])
        return np.atleast_1d(self.policies[n].predict(y))

    def policy(self, p: ModelParams | None = None, allow_extrapolation: bool = False):
        """Feedback policy ``(n, x, d_components) -> u`` for concrete parameters ``p``."""
        p = self.space.template if p is None else p
        problems = self.space.violations(p)
        if problems and not allow_extrapolation:
            raise ValueError("parameters outside the trained solver: " + "; ".join(problems))

        def run(n, x, dcomp):
            x = np.asarray(x, dtype=float)
            if n >= self.n_steps:
                return x.copy()
            frac = self.fractions(n, self.space.inputs_for(p, x, dcomp))
            return frac * x

        return run

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for n in sorted(self.values):
            vf, pf = f"value_{n:03d}.json", f"policy_{n:03d}.json"
            self.values[n].save(directory / vf)
            self.policies[n].save(directory / pf)
            files[str(n)] = {"value": vf, "policy": pf}
        manifest = {
            "format_version": ARTIFACT_VERSION,
            "space": self.space.to_dict(),
            "settings": asdict(self.settings),
            "quantizer": {"sigma": self.quantizer.sigma,
                          "knots": self.quantizer.knots.tolist(),
                          "weights": self.quantizer.weights.tolist()},
            "files": files,
            "diagnostics": [asdict(dg) for dg in self.diagnostics],
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "SolverArtifacts":
        directory = Path(directory)
        path = directory / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no solver manifest at {path}")
        data = json.loads(path.read_text())
        if data.get("format_version") != ARTIFACT_VERSION:
            raise ValueError(f"unsupported artifact format {data.get('format_version')!r}")
        space = StateSpace.from_dict(data["space"])
        qd = data["quantizer"]
        q = Quantizer(np.array(qd["knots"]), np.array(qd["weights"]), qd["sigma"])
        value, policy = {}, {}
        for key, entry in data["files"].items():
            value[int(key)] = Surrogate.load(directory / entry["value"])
            policy[int(key)] = Surrogate.load(directory / entry["policy"])
        missing = [n for n in range(1, space.n_steps) if n not in value]
        if missing:
            raise FileNotFoundError(f"artifact directory lacks networks for steps {missing}")
        diags = tuple(StepDiagnostics(**dg) for dg in data.get("diagnostics", []))
        return cls(space, SolverSettings(**data["settings"]), value, policy, q, diags)


def nn_policy(artifacts: SolverArtifacts, n: int, state: MarketState,
              p: ModelParams | None = None) -> float:
    """Trade for one state: fitted fraction times inventory, everything at n = N."""
    if not 1 <= n <= artifacts.n_steps:
        raise ValueError(f"n must lie in 1..{artifacts.n_steps}, got {n}")
    p = artifacts.space.template if p is None else p
    u = artifacts.policy(p, allow_extrapolation=True)(
        n, np.array([state.x]), np.array([state.d_components]))
    return float(u[0])


def backward_solve(space: StateSpace, settings: SolverSettings = SolverSettings(),
                   q: Quantizer | None = None, init: SolverArtifacts | None = None,
                   progress: Callable[[StepDiagnostics], None] | None = None) -> SolverArtifacts:
    """Fit value and policy networks for n = N-1, ..., 1 by backward induction.

    ``init`` continues from previously fitted networks (their weights seed the
    first pass). With ``warm_start`` the networks of step n start from the
    freshly fitted ones of step n+1. Additional ``passes`` rerun the whole
    backward loop starting from the previous pass's weights, on fresh designs
    unless ``fresh_per_pass`` is off.
    """
    q = build_quantizer(space.template.sigma, settings.n_knots) if q is None else q
    n_steps = space.n_steps
    spec_v = MlpSpec(space.dim, settings.hidden_layers, settings.hidden_width, "identity")
    spec_p = MlpSpec(space.dim, settings.hidden_layers, settings.hidden_width, "sigmoid")
    dom = space.domain
    value: dict[int, Surrogate] = dict(init.values) if init else {}
    policy: dict[int, Surrogate] = dict(init.policies) if init else {}
    diags = list(init.diagnostics) if init else []

    def start_params(store, n, spec):
        if n in store and store[n].spec == spec:
            return store[n].params
        if settings.warm_start and n + 1 in store and store[n + 1].spec == spec:
            return store[n + 1].params
        return None

    for pass_index in range(settings.passes):
        design_pass = pass_index if settings.fresh_per_pass else 0
        for n in range(n_steps - 1, 0, -1):
            t0 = time.perf_counter()
            y = sample_design(dom, n, settings.seed, design_pass)
            v_next = space.terminal if n == n_steps - 1 else value[n + 1].predict
            res = stage_optimize(space, y, v_next, q, n_grid=settings.n_grid,
                                 rtol=settings.rtol, max_iter=settings.max_iter)
            f = space.unpack(y)
            nxt = space.next_inputs(y, f, res.trades, q.knots)
            frac_out = float(dom.outside(nxt).mean())
            t1 = time.perf_counter()

            scaling_v = ScalingSpec.for_targets(dom.lo, dom.hi, res.values)
            value[n] = fit(spec_v, scaling_v, settings.train_config(_fit_seed(settings.seed, n, pass_index, 0), False),
                           y, res.values, init=start_params(value, n, spec_v))
            t2 = time.perf_counter()
            fractions = policy_fractions(f.x, res.trades)
            policy[n] = fit(spec_p, ScalingSpec(dom.lo, dom.hi),
                            settings.train_config(_fit_seed(settings.seed, n, pass_index, 1), True),
                            y, fractions, init=start_params(policy, n, spec_p))
            t3 = time.perf_counter()
            dg = StepDiagnostics(n, pass_index, t1 - t0, t2 - t1, t3 - t2,
                                 float(value[n].loss_history[-1]), float(policy[n].loss_history[-1]),
                                 scaling_v.output_lo, scaling_v.output_hi,
                                 float(fractions.mean()), res.n_capped, frac_out)
            diags.append(dg)
            log.info("pass %d step %d: stage %.1fs, fits %.1fs/%.1fs, losses %.2e/%.2e",
                     pass_index, n, dg.stage_seconds, dg.value_fit_seconds,
                     dg.policy_fit_seconds, dg.value_loss, dg.policy_loss)
            if progress is not None:
                progress(dg)
    return SolverArtifacts(space, settings, value, policy, q, tuple(diags))
