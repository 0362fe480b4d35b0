"""Exact solutions for linear transient impact (alpha = 1, single kernel).

Covers the backward coefficient recursion of the quadratic value function,
the unconstrained linear feedback policy, the explicit deterministic schedule
parametrised by the first trade, the flat-intermediate U-shape for nu = 0, and
the two baseline policies (buy-only clamped linear feedback, and VWAP).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .market import ModelParams

log = logging.getLogger(__name__)


class DegenerateParametersError(ArithmeticError):
    """A denominator that is positive in exact arithmetic vanished numerically."""


def _require_linear(p: ModelParams, what: str) -> None:
    if p.alpha != 1.0:
        raise ValueError(f"{what} requires alpha == 1, got {p.alpha}")
    if not p.is_single:
        raise ValueError(f"{what} requires a single exponential kernel")


@dataclass(frozen=True)
class CoeffTable:
    """Arrays indexed by period n = 1..N (stored at position n - 1)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    e_const: np.ndarray
    delta: np.ndarray
    kappa: float
    eta: float
    nu: float
    sigma: float

    @property
    def n_steps(self) -> int:
        return self.a.shape[0]

    def at(self, n: int) -> tuple[float, float, float]:
        return self.a[n - 1], self.b[n - 1], self.c[n - 1]


def backward_coeffs(p: ModelParams) -> CoeffTable:
    """Backward recursion for the coefficients of V_n(x, d) = a x^2 + b x d + c d^2 + e."""
    _require_linear(p, "backward_coeffs")
    kappa, eta, nu, n_steps = p.kappa, p.eta, p.nu, p.n_steps
    r = 1.0 - kappa
    a = np.empty(n_steps)
    b = np.empty(n_steps)
    c = np.empty(n_steps)
    a[-1], b[-1], c[-1] = eta / 2.0, r, 0.0
    guard = 1e-12 * (eta + nu)
    for i in range(n_steps - 2, -1, -1):
        a1, b1, c1 = a[i + 1], b[i + 1], c[i + 1]
        den = 2 * eta + 4 * nu + 4 * a1 - 4 * eta * b1 + 4 * eta ** 2 * c1
        if not den > guard:
            raise DegenerateParametersError(
                f"denominator {den!r} at n={i + 2} below guard {guard!r}"
                f" (kappa={kappa}, eta={eta}, nu={nu})")
        p1 = 2 * nu + 2 * a1 - eta * b1
        q1 = 1.0 - b1 + 2 * eta * c1
        a[i] = nu + a1 - p1 ** 2 / den
        b[i] = r * b1 + 2 * r * p1 * q1 / den
        c[i] = r ** 2 * c1 - r ** 2 * q1 ** 2 / den
    delta = 2 * eta + 4 * nu + 4 * a - 4 * eta * b + 4 * eta ** 2 * c
    # e_n = sigma^2 * sum_{j > n} c_j
    tail = np.concatenate([np.cumsum(c[::-1])[::-1][1:], [0.0]])
    e_const = p.sigma ** 2 * tail
    return CoeffTable(a, b, c, e_const, delta, kappa, eta, nu, p.sigma)


def unconstrained_value(coeffs: CoeffTable, n: int, x, d):
    if not 1 <= n <= coeffs.n_steps:
        raise ValueError(f"n must lie in 1..{coeffs.n_steps}, got {n}")
    a, b, c = coeffs.at(n)
    return a * x * x + b * x * d + c * d * d + coeffs.e_const[n - 1]


def unconstrained_feedback(coeffs: CoeffTable, n: int, x, d):
    """Optimal unconstrained trade u_n given (X_{n-1}, D_{n-1}); may be negative."""
    if not 1 <= n <= coeffs.n_steps:
        raise ValueError(f"n must lie in 1..{coeffs.n_steps}, got {n}")
    if n == coeffs.n_steps:
        return x * 1.0
    a1, b1, c1 = coeffs.at(n + 1)
    eta, nu = coeffs.eta, coeffs.nu
    num = (2 * nu + 2 * a1 - eta * b1) * x - (1.0 - b1 + 2 * eta * c1) * (1.0 - coeffs.kappa) * d
    return num / (coeffs.delta[n] / 2.0)


def lf_policy(coeffs: CoeffTable, n: int, x, d):
    """Buy-only linear feedback: the unconstrained trade clamped to [0, x]."""
    u = unconstrained_feedback(coeffs, n, x, d)
    return np.minimum(np.maximum(u, 0.0), x)


def vwap_policy(p: ModelParams, n: int, x):
    """X0/N per period, remainder in the last one.

    Along a VWAP path the remainder never drops below X0/N before the end;
    the ``min`` only matters if the policy is applied to foreign states.
    """
    if n >= p.n_steps:
        return x * 1.0
    return np.minimum(p.x0 / p.n_steps, x)


@dataclass(frozen=True)
class DeterministicSolution:
    """Explicit sigma = 0 schedule and the vectors that generate it.

    Trade n (1-based) is ``aa[n-1]*u1 + bb[n-1]*d0 + cc[n-1]*x0``; inventory
    and deviation *before* trade n use ``aax/bbx/ccx`` and ``aad/bbd/ccd``.
    """

    u: np.ndarray
    x_path: np.ndarray      # X_0..X_N
    d_path: np.ndarray      # D_0..D_N
    aa: np.ndarray
    bb: np.ndarray
    cc: np.ndarray
    aax: np.ndarray
    bbx: np.ndarray
    ccx: np.ndarray
    aad: np.ndarray
    bbd: np.ndarray
    ccd: np.ndarray
    b_hat: float
    c_hat: float
    a_tilde: float
    b_tilde: float
    c_tilde: float

    @property
    def amplification(self) -> float:
        """Largest term of the explicit trade formula relative to X0.

        The explicit representation cancels large terms when trades decay
        fast (full resilience with strong urgency); round-off in ``u`` is
        about this factor times machine epsilon, relative to X0.
        """
        x0, d0, u1 = self.x_path[0], self.d_path[0], self.u[0]
        terms = np.abs(self.aa * u1) + np.abs(self.bb * d0) + np.abs(self.cc * x0)
        return float(terms.max() / x0)


def _tilde_constants(kappa: float, eta: float, nu: float) -> tuple[float, float, float]:
    den = 2 * kappa * eta - kappa ** 2 * eta - 2 * kappa * nu + 2 * nu
    a_t = kappa * (2 * kappa * eta - kappa ** 2 * eta + 2 * nu) / den
    b_t = kappa ** 2 * (2 - 3 * kappa + kappa ** 2) / den
    c_t = -2 * kappa * nu / den
    return a_t, b_t, c_t


def deterministic_solution(p: ModelParams) -> DeterministicSolution:
    _require_linear(p, "deterministic_solution")
    if p.sigma != 0.0:
        raise ValueError("deterministic_solution requires sigma == 0")
    kappa, eta, nu, n_steps, d0, x0 = p.kappa, p.eta, p.nu, p.n_steps, p.d0, p.x0
    r = 1.0 - kappa
    a_t, b_t, c_t = _tilde_constants(kappa, eta, nu)

    aa = np.zeros(n_steps)
    bb = np.zeros(n_steps)
    cc = np.zeros(n_steps)
    aa[0] = 1.0
    if n_steps >= 3:
        aa[1], bb[1], cc[1] = a_t, b_t, c_t
    # u_i = a~ u_{i-1} + b~ D_{i-2} + c~ X_{i-2}, unrolled onto (u1, d0, X0)
    for i in range(3, n_steps):          # 1-based i = 3..N-1
        j = np.arange(1, i - 1)
        w = b_t * eta * r ** (i - 2 - j) - c_t
        aa[i - 1] = a_t * aa[i - 2] + w @ aa[j - 1]
        bb[i - 1] = a_t * bb[i - 2] + b_t * r ** (i - 2) + w @ bb[j - 1]
        cc[i - 1] = a_t * cc[i - 2] + c_t + w @ cc[j - 1]
    if n_steps >= 2:
        aa[-1] = -aa[:-1].sum()
        bb[-1] = -bb[:-1].sum()
        cc[-1] = 1.0 - cc[:-1].sum()
    else:
        aa[0], cc[0] = 0.0, 1.0

    # state vectors, entry i (1-based) describes X_{i-1}, D_{i-1}
    aax = np.zeros(n_steps)
    bbx = np.zeros(n_steps)
    ccx = np.zeros(n_steps)
    ccx[0] = 1.0
    aax[1:] = -np.cumsum(aa)[:-1]
    bbx[1:] = -np.cumsum(bb)[:-1]
    ccx[1:] = 1.0 - np.cumsum(cc)[:-1]
    aad = np.zeros(n_steps)
    bbd = np.zeros(n_steps)
    ccd = np.zeros(n_steps)
    bbd[0] = 1.0
    for i in range(1, n_steps):
        lag = r ** (i - np.arange(1, i + 1))
        aad[i] = eta * lag @ aa[:i]
        bbd[i] = r ** i + eta * lag @ bb[:i]
        ccd[i] = eta * lag @ cc[:i]

    if n_steps == 1:
        b_hat, c_hat = 0.0, 1.0
    else:
        den = eta * aa @ aa + 2 * r * aad @ aa + 2 * nu * aax @ aax
        if not abs(den) > 1e-14 * max(1.0, abs(eta * aa @ aa)):
            raise DegenerateParametersError(f"first-trade denominator {den!r} vanished")
        b_hat = -(aa @ (eta * bb + r * bbd) + r * aad @ bb + 2 * nu * aax @ bbx) / den
        c_hat = -(aa @ (eta * cc + r * ccd) + r * aad @ cc + 2 * nu * aax @ ccx) / den
    u1 = b_hat * d0 + c_hat * x0
    if n_steps == 1:
        u = np.array([x0])
    else:
        u = aa * u1 + bb * d0 + cc * x0
        u[0] = u1

    x_path = np.empty(n_steps + 1)
    d_path = np.empty(n_steps + 1)
    x_path[:-1] = aax * u1 + bbx * d0 + ccx * x0
    d_path[:-1] = aad * u1 + bbd * d0 + ccd * x0
    x_path[-1] = 0.0
    d_path[-1] = r * d_path[-2] + eta * u[-1]
    sol = DeterministicSolution(u, x_path, d_path, aa, bb, cc, aax, bbx, ccx,
                                aad, bbd, ccd, float(b_hat), float(c_hat), a_t, b_t, c_t)
    if sol.amplification * np.finfo(float).eps > 1e-9:
        log.warning("explicit schedule is ill-conditioned (amplification %.1e); trades are "
                    "accurate to about %.0e of X0 only", sol.amplification,
                    sol.amplification * np.finfo(float).eps)
    return sol


def deterministic_cost(p: ModelParams, u) -> float:
    """Noise-free cost of an arbitrary (possibly signed) linear-impact schedule."""
    u = np.asarray(u, dtype=float)
    x, d, cost = p.x0, p.d0, 0.0
    r = 1.0 - p.kappa
    for un in u:
        cost += (r * d + 0.5 * p.eta * un) * un + p.nu * (x - un) ** 2
        x -= un
        d = r * d + p.eta * un
    return cost


def cor4_strategy(p: ModelParams) -> np.ndarray:
    """Explicit nu = 0 schedule: equal first/last trades, flat kappa-fraction middle."""
    _require_linear(p, "cor4_strategy")
    if p.nu != 0.0:
        raise ValueError("cor4_strategy requires nu == 0")
    kappa, eta, n_steps, d0, x0 = p.kappa, p.eta, p.n_steps, p.d0, p.x0
    if n_steps == 1:
        return np.array([x0])
    b_t = kappa * (2 - 3 * kappa + kappa ** 2) / (2 * eta - kappa * eta)
    c_hat = 1.0 / (2 + (n_steps - 2) * kappa)
    b_hat = -(eta * b_t * (n_steps - 2) * (1 + kappa * (n_steps - 1)) + kappa * (1 - kappa)) / (
        kappa * eta * (n_steps - 1) * (2 + (n_steps - 2) * kappa))
    u1 = b_hat * d0 + c_hat * x0
    u = np.full(n_steps, kappa * u1 + b_t * d0)
    u[0] = u1
    u[-1] = x0 - (1 + (n_steps - 2) * kappa) * u1 - (n_steps - 2) * b_t * d0
    return u
