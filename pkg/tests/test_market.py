import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optexec.closed_form import backward_coeffs, deterministic_solution, unconstrained_feedback
from optexec.evaluation import vwap
from optexec.market import (AdmissibilityError, MarketState, ModelParams, NoisePath,
                            deviation_from_kernel, rescale_params, simulate_path, simulate_paths,
                            stage_cost, step_state, terminal_value)


def single(kappa=0.5, eta=0.001, alpha=1.0, nu=0.0, sigma=0.0, n_steps=10, x0=1e5, d0=0.0):
    return ModelParams.single(kappa, eta, alpha, nu, sigma, n_steps, x0, d0)


class TestModelParams:
    def test_single_kernel_defaults(self):
        p = single()
        assert p.is_single and p.n_kernels == 1
        assert p.zeta_list == (1.0,)

    @pytest.mark.parametrize("kwargs, fragment", [
        ({"kappa_list": (0.0,), "zeta_list": (1.0,)}, "kappa"),
        ({"kappa_list": (1.2,), "zeta_list": (1.0,)}, "kappa"),
        ({"kappa_list": (0.4, 0.8), "zeta_list": (0.5, 0.6)}, "sum to 1"),
        ({"kappa_list": (0.4, 0.8), "zeta_list": (1.0,)}, "equal length"),
        ({"eta": 0.0}, "eta"),
        ({"alpha": -1.0}, "alpha"),
        ({"nu": -1e-4}, "nu"),
        ({"sigma": -1.0}, "sigma"),
        ({"n_steps": 0}, "n_steps"),
        ({"x0": 0.0}, "x0"),
    ])
    def test_rejects_invalid(self, kwargs, fragment):
        base = dict(kappa_list=(0.5,), zeta_list=(1.0,), eta=0.001, alpha=1.0, nu=0.0,
                    sigma=0.0, n_steps=10, x0=1e5)
        base.update(kwargs)
        with pytest.raises(ValueError, match=fragment):
            ModelParams(**base)

    def test_collects_every_violation(self):
        with pytest.raises(ValueError) as err:
            ModelParams((0.5,), (1.0,), -1.0, 1.0, -1.0, 0.0, 10, 1e5)
        assert "eta" in str(err.value) and "nu" in str(err.value)

    def test_kappa_undefined_for_mixture(self):
        p = ModelParams((0.4, 0.8), (0.5, 0.5), 0.001, 1.0, 0.0, 0.0, 10, 1e5)
        with pytest.raises(ValueError):
            p.kappa


class TestStepState:
    def test_zero_action_zero_noise(self):
        s = step_state(MarketState(1e5, (0.0,)), 0.0, 0.0, single(kappa=0.5))
        assert s.x == 1e5 and s.d_components == (0.0,) and s.step == 1

    def test_linear_impact_push(self):
        s = step_state(MarketState(1e5, (0.0,)), 1e4, 0.0, single(kappa=0.5, eta=0.001))
        assert s.x == 9e4
        assert s.d_components[0] == pytest.approx(10.0, rel=1e-14)

    def test_components_decay_separately(self):
        p = ModelParams((0.4, 0.8), (0.5, 0.5), 0.001, 1.0, 0.0, 0.0, 10, 1e5)
        s = step_state(MarketState(5e4, (10.0, 20.0)), 0.0, 0.0, p)
        assert s.d_components == pytest.approx((6.0, 4.0), rel=1e-14)

    def test_rejects_overbuy_and_selling(self):
        p = single()
        with pytest.raises(AdmissibilityError):
            step_state(MarketState(10.0, (0.0,)), 11.0, 0.0, p)
        with pytest.raises(AdmissibilityError):
            step_state(MarketState(10.0, (0.0,)), -1.0, 0.0, p)

    def test_no_step_past_horizon(self):
        with pytest.raises(ValueError):
            step_state(MarketState(0.0, (0.0,), 10), 0.0, 0.0, single())


class TestCosts:
    def test_stage_cost_examples(self):
        assert stage_cost(MarketState(100.0, (0.0,)), 0.0, single(nu=0.0)) == 0.0
        assert stage_cost(MarketState(100.0, (0.0,)), 100.0, single(eta=0.02)) == pytest.approx(100.0)
        # 0.5 * 10 * 50 + 0.01 * 50^2; eta must be positive, a tiny value stands in for 0
        p = single(kappa=0.5, eta=1e-300, nu=0.01)
        assert stage_cost(MarketState(100.0, (10.0,)), 50.0, p) == pytest.approx(275.0)

    def test_terminal_value_examples(self):
        assert terminal_value(MarketState(0.0, (37.0,)), single()) == 0.0
        assert terminal_value(MarketState(100.0, (0.0,)), single(eta=0.02)) == pytest.approx(100.0)
        assert terminal_value(MarketState(100.0, (50.0,)), single(kappa=1.0, eta=0.02)) == pytest.approx(100.0)

    @given(x=st.floats(0, 1e5), frac=st.floats(0, 1), d=st.floats(0, 100),
           kappa=st.floats(0.01, 1), alpha=st.floats(0.3, 1.5), nu=st.floats(0, 1e-3))
    def test_nonnegative_for_buys_at_nonnegative_deviation(self, x, frac, d, kappa, alpha, nu):
        p = single(kappa=kappa, alpha=alpha, nu=nu)
        s = MarketState(x, (d,))
        assert stage_cost(s, frac * x, p) >= 0.0
        assert terminal_value(s, p) >= 0.0


class TestSimulation:
    def test_single_period_forces_liquidation(self):
        p = single(kappa=0.3, eta=0.002, alpha=1.1, n_steps=1, x0=5e4, d0=4.0)
        trades, cost = simulate_path(p, lambda n, s: 0.0, [0.0])
        assert trades.tolist() == [5e4]
        assert cost == pytest.approx(0.7 * 4.0 * 5e4 + 0.001 * 5e4 ** 2.1, rel=1e-12)

    def test_vwap_trades_equal_slices(self):
        p = single()
        batch = simulate_paths(p, vwap(p), NoisePath.generate(1.0, 10, 5, 0))
        assert np.allclose(batch.trades, 1e4, rtol=1e-12)

    def test_scalar_and_batch_simulators_agree(self):
        p = ModelParams((0.3, 0.7), (0.4, 0.6), 0.001, 0.9, 1e-4, 1.0, 6, 1e4, 2.0)
        noise = NoisePath.generate(1.0, 6, 3, 11)

        def frac(n, x, d):
            return 0.3 * np.asarray(x)

        batch = simulate_paths(p, frac, noise)
        for i in range(3):
            trades, cost = simulate_path(p, lambda n, s: 0.3 * s.x, noise.eps[i])
            assert np.allclose(trades, batch.trades[i], rtol=1e-13)
            assert cost == pytest.approx(batch.costs[i], rel=1e-12)

    def test_deterministic_unconstrained_feedback_matches_explicit_cost(self):
        p = single(kappa=0.8, eta=1 / 500, nu=5e-5)
        coeffs = backward_coeffs(p)
        pol = lambda n, x, d: unconstrained_feedback(coeffs, n, x, d[:, 0])
        batch = simulate_paths(p, pol, NoisePath.generate(0.0, 10, 1, 0), constrained=False)
        det = deterministic_solution(p)
        assert np.allclose(batch.trades[0], det.u, rtol=1e-9)

    def test_constrained_simulation_rejects_bad_policy(self):
        p = single()
        with pytest.raises(AdmissibilityError, match="step 1"):
            simulate_paths(p, lambda n, x, d: 2 * x, NoisePath.generate(0.0, 10, 2, 0))

    def test_noise_shape_must_match(self):
        with pytest.raises(ValueError):
            simulate_paths(single(), vwap(single()), NoisePath.generate(1.0, 5, 2, 0))

    def test_noise_generation(self):
        assert np.all(NoisePath.generate(0.0, 4, 3, 1).eps == 0.0)
        a = NoisePath.generate(2.0, 4, 3, 1)
        assert np.array_equal(a.eps, NoisePath.generate(2.0, 4, 3, 1).eps)
        assert not a.eps.flags.writeable


policy_fractions = st.lists(st.floats(0, 1), min_size=9, max_size=9)


@given(fracs=policy_fractions, seed=st.integers(0, 2 ** 16), alpha=st.floats(0.5, 1.5))
@settings(max_examples=50)
def test_budget_identity(fracs, seed, alpha):
    p = single(kappa=0.4, eta=1 / 500, alpha=alpha, nu=1e-4, sigma=1.0)
    pol = lambda n, x, d: fracs[n - 1] * x
    batch = simulate_paths(p, pol, NoisePath.generate(p.sigma, 10, 4, seed))
    assert np.allclose(batch.trades.sum(axis=1), p.x0, rtol=0, atol=1e-9 * p.x0)
    assert np.all(np.diff(batch.x, axis=1) <= 0) and np.all(batch.x[:, -1] == 0)


@given(kappa=st.floats(0.05, 1.0), fracs=policy_fractions, seed=st.integers(0, 2 ** 16),
       other=st.floats(0.05, 1.0))
@settings(max_examples=50)
def test_kernel_reduction(kappa, fracs, seed, other):
    one = single(kappa=kappa, eta=1 / 500, alpha=0.9, nu=1e-4, sigma=1.0, d0=3.0)
    two = ModelParams((kappa, other), (1.0, 0.0), 1 / 500, 0.9, 1e-4, 1.0, 10, 1e5, 3.0)
    noise = NoisePath.generate(1.0, 10, 3, seed)
    pol = lambda n, x, d: fracs[n - 1] * x
    a, b = simulate_paths(one, pol, noise), simulate_paths(two, pol, noise)
    assert np.array_equal(a.trades, b.trades)
    assert np.array_equal(a.costs, b.costs)
    assert np.array_equal(a.d[:, :, 0], b.d[:, :, 0])


@given(fracs=policy_fractions, zeta=st.floats(0, 1), alpha=st.floats(0.5, 1.5),
       d0=st.floats(0, 50))
@settings(max_examples=50)
def test_deviation_representation(fracs, zeta, alpha, d0):
    p = ModelParams((0.3, 0.75), (zeta, 1.0 - zeta), 1 / 800, alpha, 0.0, 0.0, 10, 1e5, d0)
    batch = simulate_paths(p, lambda n, x, d: fracs[n - 1] * x, NoisePath.generate(0.0, 10, 1, 0))
    recursive = batch.d[0] @ p.zetas
    closed = deviation_from_kernel(p, batch.trades[0])
    assert np.allclose(recursive, closed, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(closed).max()))


def test_common_random_numbers_shared_across_policies():
    p = single(sigma=1.0)
    noise = NoisePath.generate(1.0, 10, 50, 3)
    a = simulate_paths(p, lambda n, x, d: 0.2 * x, noise)
    b = simulate_paths(p, lambda n, x, d: 0.7 * x, noise)
    # the shock in D_n - (1 - kappa) D_{n-1} - eta u_n is the same for both
    shocks = lambda r: r.d[:, 1:, 0] - 0.5 * r.d[:, :-1, 0] - p.eta * r.trades
    assert np.allclose(shocks(a), noise.eps, atol=1e-9)
    assert np.allclose(shocks(b), noise.eps, atol=1e-9)


class TestRescale:
    def test_identity(self):
        p = single(kappa=0.4, sigma=1.0, nu=1e-4)
        assert rescale_params(p, 10) == p

    def test_thirty_periods(self):
        p = single(kappa=0.4, eta=1 / 500, alpha=1.1, nu=1e-4, sigma=1.0)
        q = rescale_params(p, 30)
        assert q.n_steps == 30
        assert q.kappa == 0.4 / 3
        assert q.sigma == 1 / math.sqrt(3)
        assert q.nu == 1e-4 / 3
        assert q.eta == p.eta and q.alpha == p.alpha

    def test_kappa_bound(self):
        with pytest.raises(ValueError, match="kappa"):
            rescale_params(single(kappa=0.9), 3)
