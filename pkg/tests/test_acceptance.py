"""Acceptance suite: one test (or a small group) per criterion, at its stated tolerance.

The trained-solver criteria fit the packaged experiment configurations.
Fitted networks are cached under ``.acceptance_cache`` (override with
``OPTEXEC_ACCEPTANCE_CACHE``), keyed by the solver configuration and a
digest of the package sources, so any code or config change retrains.
"""
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize

import optexec
from optexec.adp import SolverArtifacts, SolverSettings, StateSpace, TrainingDomain, backward_solve
from optexec.cli import experiment_path, parse_config, run_evaluate
from optexec.closed_form import (backward_coeffs, cor4_strategy, deterministic_cost,
                                 deterministic_solution, unconstrained_feedback, unconstrained_value)
from optexec.evaluation import linear_feedback, unconstrained_linear
from optexec.market import (ModelParams, NoisePath, deviation_from_kernel, rescale_params,
                            simulate_paths)
from optexec.quantization import build_quantizer, quantized_expectation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CACHE = Path(os.environ.get("OPTEXEC_ACCEPTANCE_CACHE",
                            Path(__file__).resolve().parent.parent / ".acceptance_cache"))


def packaged(name):
    return parse_config(tomllib.loads(experiment_path(name).read_text()))


def _digest(space, settings) -> str:
    h = hashlib.sha256()
    for f in sorted(Path(optexec.__file__).parent.glob("*.py")):
        h.update(f.read_bytes())
    h.update(json.dumps(space.to_dict(), sort_keys=True).encode())
    h.update(json.dumps(asdict(settings), sort_keys=True).encode())
    return h.hexdigest()[:16]


def trained(tag, space, settings) -> SolverArtifacts:
    path = CACHE / f"{tag}-{_digest(space, settings)}"
    if (path / "manifest.json").exists():
        return SolverArtifacts.load(path)
    art = backward_solve(space, settings)
    art.save(path)
    return art


def gains(name, tmp_path_factory):
    """Train the packaged experiment and return {(test, baseline): gain %}."""
    cfg = packaged(name)
    art = trained(name, cfg.space, cfg.settings)
    rows = run_evaluate(cfg, tmp_path_factory.mktemp(name), art)
    return {(r["test"], r["baseline"]): r["rel_diff_pct"] for r in rows}


def single(kappa, eta=0.002, alpha=1.0, nu=0.0, sigma=0.0, n_steps=10, x0=1e5, d0=0.0):
    return ModelParams.single(kappa, eta, alpha, nu, sigma, n_steps, x0, d0)


@pytest.mark.criterion(1, "U-shaped schedule without urgency agrees with the general solution")
@pytest.mark.parametrize("kappa", [0.4, 0.6, 0.8, 1.0])
def test_c01_u_shape(kappa):
    t0 = time.perf_counter()
    p = single(kappa)
    u = cor4_strategy(p)
    u1 = p.x0 / (2 + (p.n_steps - 2) * kappa)
    assert u[0] == pytest.approx(u1, rel=1e-10) and u[-1] == pytest.approx(u1, rel=1e-10)
    assert np.allclose(u[1:-1], kappa * u1, rtol=1e-10, atol=0)
    general = deterministic_solution(p).u
    assert np.allclose(u, general, rtol=1e-10, atol=0)
    assert time.perf_counter() - t0 < 1.0


def _independent_cost(u_free, kappa, eta, nu, d0, x0):
    """Cost of (u1, u2, u3, X0 - sum) written out from the model definition."""
    u = np.append(u_free, x0 - np.sum(u_free))
    x, d, total = x0, d0, 0.0
    for n, un in enumerate(u):
        if n == len(u) - 1:
            return total + (1 - kappa) * d * x + 0.5 * eta * x * x
        total += (1 - kappa) * d * un + 0.5 * eta * un * un + nu * (x - un) ** 2
        d = (1 - kappa) * d + eta * un
        x -= un


@pytest.mark.criterion(2, "closed-form cost matches brute-force minimisation (N=4)")
def test_c02_brute_force_oracle(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    for nu in (0.0, 5e-5):
        for kappa in (0.4, 0.8):
            for d0 in (0.0, 10.0):
                p = single(kappa, nu=nu, n_steps=4, d0=d0)
                exact = deterministic_cost(p, deterministic_solution(p).u)
                # optimise in units of X0 so the problem is well scaled
                f = lambda v: _independent_cost(v * p.x0, kappa, p.eta, nu, d0, p.x0) / p.x0 ** 2
                res = minimize(f, np.full(3, 0.25), method="BFGS", options={"gtol": 1e-13})
                brute = res.fun * p.x0 ** 2
                rel = abs(brute - exact) / abs(exact)
                worst = max(worst, rel)
                assert rel < 1e-6, (kappa, nu, d0, exact, brute)
                assert brute >= exact * (1 - 1e-12)
    record_property("measured", f"worst relative gap {worst:.2e}")
    assert time.perf_counter() - t0 < 10.0


@pytest.mark.criterion(3, "mean noisy unconstrained trades match the deterministic schedule")
def test_c03_mean_matching(record_property):
    t0 = time.perf_counter()
    cfg = packaged("fig2")
    assert cfg.model.sigma == 2.0 and cfg.m_paths == 10_000
    worst = 0.0
    for case in cfg.exact["cases"]:
        p = cfg.model.with_(**case)
        noise = NoisePath.generate(p.sigma, p.n_steps, cfg.m_paths, cfg.eval_seed)
        trades = simulate_paths(p, unconstrained_linear(p), noise, constrained=False).trades
        det = deterministic_solution(p.with_(sigma=0.0)).u
        se = trades.std(axis=0, ddof=1) / math.sqrt(trades.shape[0])
        # the first trade is the same on every path; its spread is rounding only
        gap = np.abs(trades.mean(axis=0) - det)
        assert np.all(gap <= 3.0 * se + 1e-9 * np.abs(det)), (case, gap / se)
        worst = max(worst, float((gap / se)[1:].max()))
    record_property("measured", f"largest |mean - deterministic| over noisy steps = {worst:.2f} SE")
    assert time.perf_counter() - t0 < 60.0


@pytest.mark.criterion(4, "recursion denominators positive on a 10x10x5 grid, terminal value exact")
def test_c04_denominator_grid():
    for kappa in np.linspace(0.1, 1.0, 10):
        for eta in np.geomspace(1e-4, 1e-2, 10):
            for nu in (0.0, 1e-5, 5e-5, 1e-4, 1e-3):
                c = backward_coeffs(single(kappa, eta=eta, nu=nu, n_steps=20))
                assert np.all(c.delta > 0)
                assert c.delta[-1] == pytest.approx(4 * eta * kappa + 4 * nu, rel=1e-12, abs=0)


@pytest.mark.criterion(5, "50-knot Gaussian quantizer moments and exact Bellman step")
def test_c05_quantizer():
    q = build_quantizer(1.0, 50)
    assert abs(q.weights.sum() - 1.0) <= 1e-12
    assert abs(q.weights @ q.knots) <= 1e-10
    assert abs(q.weights @ q.knots ** 2 - 1.0) <= 1e-10
    p = single(0.6, eta=0.001, nu=5e-5, sigma=1.0)
    coeffs = backward_coeffs(p)
    for n in range(1, p.n_steps):
        for x, d in ((1e5, 0.0), (3e4, 4.0), (500.0, -2.0)):
            u = unconstrained_feedback(coeffs, n, x, d)
            stage = (1 - p.kappa) * d * u + p.eta / 2 * u * u + p.nu * (x - u) ** 2
            d_next = (1 - p.kappa) * d + p.eta * u
            cont = quantized_expectation(
                q, lambda e: unconstrained_value(coeffs, n + 1, x - u, d_next + e))
            assert stage + cont == pytest.approx(unconstrained_value(coeffs, n, x, d), rel=1e-8)


@pytest.fixture(scope="module")
def table2_gains(tmp_path_factory):
    return gains("table2", tmp_path_factory)


@pytest.mark.criterion(6, "linear case: 4D network within 0.5% / 1.5% of linear feedback")
def test_c06_linear_accuracy(table2_gains, record_property):
    cfg = packaged("table2")
    assert (cfg.space.domain.m_points, cfg.settings.epochs) == (2000, 2000)
    assert cfg.space.names == ("x", "d", "kappa", "eta")
    limits = {0.4: 0.5, 0.8: 1.5}
    for t in cfg.tests:
        excess = -table2_gains[(t.label, "lf")]
        record_property("measured", f"{t.label}: excess cost {excess:+.3f}%")
        assert excess <= limits[t.params.kappa], t.label


@pytest.fixture(scope="module")
def table1_gains(tmp_path_factory):
    return gains("table1", tmp_path_factory)


@pytest.mark.criterion(7, "5D network beats linear feedback for alpha != 1 and ties at alpha = 1")
def test_c07_nonlinear_gains(table1_gains, record_property):
    cfg = packaged("table1")
    assert cfg.space.names == ("x", "d", "kappa", "eta", "alpha")
    failures = []
    for t in cfg.tests:
        g = table1_gains[(t.label, "lf")]
        record_property("measured", f"{t.label}: gain {g:+.3f}%")
        ok = abs(g) <= 1.5 if t.params.alpha == 1.0 else 3.0 <= g <= 25.0
        if not ok:
            failures.append((t.label, g))
    assert not failures


@pytest.fixture(scope="module")
def table3_gains(tmp_path_factory):
    return gains("table3", tmp_path_factory)


@pytest.mark.criterion(8, "square-root impact: 5D network gains at least 10% over linear feedback")
def test_c08_square_root(table3_gains, record_property):
    cfg = packaged("table3")
    assert cfg.model.alpha == 0.5 and cfg.model.sigma == 0.1
    assert cfg.space.names == ("x", "d", "kappa", "eta", "nu")
    failures = []
    for t in cfg.tests:
        g = table3_gains[(t.label, "lf")]
        record_property("measured", f"{t.label}: gain {g:+.3f}%")
        if g < 10.0:
            failures.append((t.label, g))
    assert not failures


@pytest.mark.criterion(9, "round-trip value at the origin is negative")
@pytest.mark.parametrize("kappa", [0.1, 0.4, 0.8, 0.99])
def test_c09_round_trip(kappa):
    p = single(kappa, eta=0.001, nu=5e-5, sigma=1.0)
    c = backward_coeffs(p)
    v = unconstrained_value(c, 1, 0.0, 0.0)
    assert v == pytest.approx(p.sigma ** 2 * c.c[1:].sum(), rel=1e-14)
    assert v < 0


C10 = "kernel mixture degenerates to one kernel; mixture network beats misspecified LF"


@pytest.mark.criterion(10, C10)
def test_c10_closed_form_degeneracy():
    one = single(0.4, nu=1e-4)
    two = ModelParams((0.4, 0.8), (1.0, 0.0), 0.002, 1.0, 1e-4, 0.0, 10, 1e5)
    u = deterministic_solution(one).u
    # the second kernel carries no weight, so the propagator and the cost coincide
    assert np.allclose(deviation_from_kernel(two, u), deviation_from_kernel(one, u),
                       rtol=1e-12, atol=1e-12)
    batch = simulate_paths(two, linear_feedback(two, kappa=0.4), NoisePath.generate(0.0, 10, 1, 0))
    assert batch.costs[0] == pytest.approx(deterministic_cost(one, u), rel=1e-12)
    # with noise and concave impact the same holds path by path
    noise = NoisePath.generate(1.0, 10, 2000, 3)
    one_a, two_a = one.with_(alpha=0.9, sigma=1.0), two.with_(alpha=0.9, sigma=1.0)
    base = simulate_paths(one_a, linear_feedback(one_a), noise).costs
    same = simulate_paths(two_a, linear_feedback(two_a, kappa=0.4), noise).costs
    assert np.allclose(same, base, rtol=1e-12, atol=0)


def _degeneracy_solvers():
    settings = SolverSettings(epochs=1000, warm_start=True, seed=4)
    tmpl1 = single(0.4, alpha=0.9, nu=1e-4, sigma=1.0)
    tmpl2 = ModelParams((0.4, 0.8), (0.9, 0.1), 0.002, 0.9, 1e-4, 1.0, 10, 1e5)
    s1 = StateSpace(tmpl1, TrainingDomain.from_bounds({"x": (0, 1e5), "d": (-8, 45)}, 2000))
    s2 = StateSpace(tmpl2, TrainingDomain.from_bounds(
        {"x": (0, 1e5), "d1": (-8, 45), "d2": (-8, 45), "zeta": (0.75, 1.0)}, 2000))
    return tmpl1, trained("degenerate-1k", s1, settings), trained("degenerate-2k", s2, settings)


@pytest.mark.criterion(10, C10)
def test_c10_network_degeneracy(record_property):
    tmpl1, one, two = _degeneracy_solvers()
    p2 = ModelParams((0.4, 0.8), (1.0, 0.0), 0.002, 0.9, 1e-4, 1.0, 10, 1e5)
    noise = NoisePath.generate(1.0, 10, 10_000, 2024)
    c1 = simulate_paths(tmpl1, one.policy(tmpl1), noise).costs.mean()
    c2 = simulate_paths(p2, two.policy(p2), noise).costs.mean()
    rel = abs(c2 - c1) / c1 * 100
    record_property("measured", f"zeta=1 mixture network vs single-kernel network: {rel:.3f}% apart")
    # surrogate tolerance: the linear-case accuracy band at kappa = 0.4
    assert rel <= 0.5


@pytest.fixture(scope="module")
def fig8_gains(tmp_path_factory):
    return gains("fig8", tmp_path_factory)


@pytest.mark.criterion(10, C10)
def test_c10_mixture_gains(fig8_gains, record_property):
    cfg = packaged("fig8")
    assert cfg.model.alpha == 0.9 and cfg.space.names == ("x", "d1", "d2", "zeta")
    failures = []
    for (label, baseline), g in sorted(fig8_gains.items()):
        record_property("measured", f"{label} vs {baseline}: gain {g:+.3f}%")
        if not g > 0:
            failures.append((label, baseline, g))
    assert len(fig8_gains) == 9 and not failures


@pytest.mark.criterion(11, "rescaling ten periods to thirty gives the stated parameters")
def test_c11_rescale():
    p = single(0.4, eta=1 / 500, alpha=1.1, nu=1e-4, sigma=1.0)
    for kappa in (0.4, 0.8):
        q = rescale_params(p.with_(kappa_list=(kappa,)), 30)
        assert q.n_steps == 30 and q.kappa == kappa / 3
        assert q.sigma == 1 / math.sqrt(3) and q.nu == 1e-4 / 3
        assert (q.eta, q.alpha, q.x0, q.d0) == (1 / 500, 1.1, 1e5, 0.0)
    cfg = packaged("fig7")
    assert cfg.model.sigma == 1 / math.sqrt(3) and cfg.model.nu == 1e-4 / 3
    assert [t.params.kappa for t in cfg.tests] == [0.4 / 3, 0.8 / 3]
