"""Self-consistent spectral equations and closed-form risk-improvement predictions.

The pair (m1, m2) solves, for z > 0,

    (1/psi1)(m1 - m2)(mu2^2 m1 + mu1^2 m2) + mu1^2 m1 m2 (z m1 - 1) = 0,
    (psi2/psi1)(mu1^2 m1 m2 + (1/psi1)(m2 - m1)) + mu1^2 m1 m2 (z m1 - 1) = 0,

where m1 is the normalized resolvent trace of the Gaussian-equivalent feature
Gram and m2 its input-weighted counterpart; both are evaluated at
z = lambda psi1 / psi2.  Twelve scalars tau1..tau12 built from (m1, m2) and
their z-derivatives determine the asymptotic drop in ridge prediction risk
after one feature-learning step,

    delta = tau1 (tau7-tau5)(tau4+tau12-2 tau6) / D
            - [tau1 (tau7-tau5)(tau4+tau12-2 tau6) + (tau7-tau5)^2 tau8] / D^2,

with D = tau1 (tau2-tau3) - 1.  The large-sample (psi1 -> infinity) limit has
the explicit form delta = mu1*^2 (A B / (A+1) + C / (A+1)^2) in terms of two
Marchenko-Pastur integrals s1, s2; the large-width limit (psi2 -> infinity)
sends delta to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import legendre
from scipy import optimize

from .spectra import ThetaParams, mp_atom, mp_support, theta_params

__all__ = [
    "StieltjesPair",
    "TauTable",
    "DeltaResult",
    "LargeSampleAux",
    "SolverError",
    "mp_quadrature",
    "solve_m1_m2",
    "tau_table",
    "delta",
    "delta_large_sample",
    "delta_large_width_check",
]


class SolverError(RuntimeError):
    """The damped fixed-point iteration failed to certify a solution."""


@dataclass(frozen=True)
class StieltjesPair:
    """Solution of the self-consistent pair at a point z > 0.

    `residuals` are scale-invariant: each equation's absolute value divided by
    the sum of the absolute values of its terms (the raw terms cancel to
    machine precision, so the relative form is the meaningful certificate).
    """

    m1: float
    m2: float
    m1p: float
    m2p: float
    z: float
    residuals: tuple[float, float]


@dataclass(frozen=True)
class TauTable:
    tau1: float
    tau2: float
    tau3: float
    tau4: float
    tau5: float
    tau6: float
    tau7: float
    tau8: float
    tau9: float
    tau10: float
    tau11: float
    tau12: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.tau1, self.tau2, self.tau3, self.tau4, self.tau5, self.tau6,
                self.tau7, self.tau8, self.tau9, self.tau10, self.tau11, self.tau12)


@dataclass(frozen=True)
class DeltaResult:
    delta: float
    components: tuple[float, float]
    regime: str = "general"
    aux: "LargeSampleAux | None" = None


@dataclass(frozen=True)
class LargeSampleAux:
    s1: float
    s2: float
    A: float
    B: float
    C: float


def _mp_nodes(psi: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for the MP law with ratio psi: Gauss-Legendre
    after the square-root edge substitution x = lo + (hi-lo) sin^2(u), plus the
    atom at 0 (when psi > 1) folded in as an extra node."""
    lo, hi = mp_support(psi)
    u, w = legendre.leggauss(order)
    u = 0.25 * math.pi * (u + 1.0)
    w = 0.25 * math.pi * w
    s, c = np.sin(u), np.cos(u)
    x = lo + (hi - lo) * s * s
    dens = (hi - lo) ** 2 * 2.0 * (s * c) ** 2 / (2.0 * math.pi * psi * x)
    nodes, weights = x, w * dens
    atom = mp_atom(psi)
    if atom > 0.0:
        nodes = np.concatenate([[0.0], nodes])
        weights = np.concatenate([[atom], weights])
    return nodes, weights


def mp_quadrature(
    f: Callable[[np.ndarray], np.ndarray], psi: float, order: int = 400
) -> float:
    """Integral of f against the MP law with ratio psi (atom included)."""
    nodes, weights = _mp_nodes(psi, order)
    return float(np.dot(weights, np.asarray(f(nodes), dtype=float)))


def _raw_residuals(
    m1: float, m2: float, z: float, psi1: float, psi2: float, mu1: float, mu2: float
) -> tuple[float, float]:
    """Scale-invariant residuals of the two self-consistent equations."""
    t1 = (m1 - m2) * (mu2**2 * m1 + mu1**2 * m2) / psi1
    t2 = mu1**2 * m1 * m2 * (z * m1 - 1.0)
    r1 = abs(t1 + t2) / max(abs(t1) + abs(t2), 1e-300)
    u1 = (psi2 / psi1) * mu1**2 * m1 * m2
    u2 = (psi2 / psi1**2) * (m2 - m1)
    u3 = t2
    r2 = abs(u1 + u2 + u3) / max(abs(u1) + abs(u2) + abs(u3), 1e-300)
    return r1, r2


def _solve_m1_scalar(
    z: float, psi1: float, psi2: float, mu1: float, mu2: float, order: int
) -> float:
    """Solve for m1 through the equivalent scalar self-consistent form

        m1 = integral dMP_psi1(x) / [(mu1^2 x + mu2^2)(1 - r + r z m1) + z],

    r = psi1/psi2, which the pair of equations implies.  In the variable
    u = z*m1 in (0, 1] the right-hand side times z is strictly decreasing, so
    h(u) = u - z*F(u/z) is increasing with a guaranteed sign change on the
    admissible interval: the root is found by bracketed bisection (Brent) and
    polished by Newton."""
    r = psi1 / psi2
    nodes, weights = _mp_nodes(psi1, order)
    base = mu1**2 * nodes + mu2**2
    bmax = float(base.max())

    def g(u: float) -> float:
        denom = base * (1.0 - r + r * u) + z
        return float(z * np.dot(weights, 1.0 / denom))

    def gprime(u: float) -> float:
        denom = base * (1.0 - r + r * u) + z
        return float(-z * np.dot(weights, base * r / (denom * denom)))

    # the denominator stays positive for u > u_lo; g(u_lo) >= 1 > u_lo and
    # g(1) < 1, so h = u - g brackets a unique root on (u_lo, 1]
    u_lo = max(0.0, 1.0 - 1.0 / r - z / (r * bmax))
    lo = u_lo + 1e-14 * max(1.0, abs(u_lo))
    try:
        u = optimize.brentq(lambda t: t - g(t), lo, 1.0, xtol=1e-15, rtol=8.9e-16)
    except ValueError as e:
        raise SolverError(f"root bracketing failed at z={z!r}: {e}") from None
    for _ in range(50):  # Newton polish to machine precision
        step = (u - g(u)) / (1.0 - gprime(u))
        u -= step
        if abs(step) < 1e-16 * max(1.0, abs(u)):
            break
    if not 0.0 < u <= 1.0 + 1e-12:
        raise SolverError(f"iterate left the admissible branch: z*m1={u!r} at z={z!r}")
    return u / z


def _pair_at(
    z: float, psi1: float, psi2: float, mu1: float, mu2: float, order: int
) -> tuple[float, float]:
    if mu1 == 0.0:
        # features are a pure Gaussian matrix: closed form through the MP law
        ratio = psi1 / psi2
        m1 = mp_quadrature(lambda x: 1.0 / (mu2**2 * x + z), ratio, order)
        return m1, m1
    m1 = _solve_m1_scalar(z, psi1, psi2, mu1, mu2, order)
    tau1_z = (psi1 / psi2) * m1 + (1.0 - psi1 / psi2) / z
    m2 = m1 / (1.0 + psi1 * mu1**2 * z * m1 * tau1_z)
    return m1, m2


def solve_m1_m2(
    z: float, psi1: float, psi2: float, mu1: float, mu2: float, order: int = 400
) -> StieltjesPair:
    """Solve the self-consistent pair at z > 0 and differentiate numerically
    (central differences with Richardson extrapolation, relative step 1e-5)."""
    if z <= 0.0:
        raise ValueError("z must be > 0")
    if psi1 <= 0.0 or psi2 <= 0.0:
        raise ValueError("aspect ratios must be > 0")
    m1, m2 = _pair_at(z, psi1, psi2, mu1, mu2, order)
    h = 1e-5 * z
    vals = {s: _pair_at(z + s, psi1, psi2, mu1, mu2, order)
            for s in (-h, -0.5 * h, 0.5 * h, h)}
    d_h = ((vals[h][0] - vals[-h][0]) / (2 * h), (vals[h][1] - vals[-h][1]) / (2 * h))
    d_h2 = ((vals[0.5 * h][0] - vals[-0.5 * h][0]) / h, (vals[0.5 * h][1] - vals[-0.5 * h][1]) / h)
    m1p = (4.0 * d_h2[0] - d_h[0]) / 3.0
    m2p = (4.0 * d_h2[1] - d_h[1]) / 3.0
    if mu1 == 0.0:
        residuals = (0.0, 0.0)
    else:
        residuals = _raw_residuals(m1, m2, z, psi1, psi2, mu1, mu2)
    return StieltjesPair(m1=m1, m2=m2, m1p=m1p, m2p=m2p, z=z, residuals=residuals)


def tau_table(
    eta: float,
    lam: float,
    psi1: float,
    psi2: float,
    mu1: float,
    mu2: float,
    mu1_star: float,
    mu_bar: float,
    pair: StieltjesPair | None = None,
    order: int = 400,
) -> TauTable:
    """The twelve limiting scalars at z = lambda psi1 / psi2."""
    z = lam * psi1 / psi2
    if pair is None:
        pair = solve_m1_m2(z, psi1, psi2, mu1, mu2, order)
    theta = theta_params(eta, mu1, mu1_star, mu_bar, psi1)
    t1sq = theta.theta1**2
    th2 = theta.theta2
    r = psi1 / psi2
    m1, m2, m1p, m2p = pair.m1, pair.m2, pair.m1p, pair.m2p
    shrink = 1.0 - lam * r * m2
    ratio2 = 1.0 - 2.0 * m2 / m1 - m2p / m1**2
    return TauTable(
        tau1=r * m1 + (psi2 / psi1 - 1.0) / lam,
        tau2=mu1**2 * t1sq * r * shrink,
        tau3=mu1**2 * t1sq * r,
        tau4=mu1_star * th2,
        tau5=mu1**2 * mu1_star * th2 * r,
        tau6=mu1_star * th2 * (1.0 - m2 / m1),
        tau7=mu1**2 * mu1_star * th2 * r * shrink,
        tau8=(m1 + r * lam * m1p) / (mu1 * r * lam * m1) ** 2,
        tau9=t1sq * (1.0 - m2 / m1),
        tau10=t1sq,
        tau11=t1sq * ratio2,
        tau12=mu1_star * th2 * ratio2,
    )


def delta(
    eta: float,
    lam: float,
    psi1: float,
    psi2: float,
    mu1: float,
    mu2: float,
    mu1_star: float,
    mu_bar: float,
    order: int = 400,
) -> DeltaResult:
    """Asymptotic drop in ridge prediction risk after one eta = Theta(1) step."""
    if eta == 0.0 or mu1 == 0.0 or mu1_star == 0.0:
        return DeltaResult(delta=0.0, components=(0.0, 0.0), regime="general")
    taus = tau_table(eta, lam, psi1, psi2, mu1, mu2, mu1_star, mu_bar, order=order)
    D = taus.tau1 * (taus.tau2 - taus.tau3) - 1.0
    cross = taus.tau7 - taus.tau5
    gain = taus.tau4 + taus.tau12 - 2.0 * taus.tau6
    comp1 = taus.tau1 * cross * gain / D
    comp2 = -(taus.tau1 * cross * gain + cross**2 * taus.tau8) / D**2
    return DeltaResult(delta=comp1 + comp2, components=(comp1, comp2), regime="general")


def delta_large_sample(
    eta: float,
    lam: float,
    psi2: float,
    mu1: float,
    mu2: float,
    mu1_star: float,
    order: int = 400,
) -> DeltaResult:
    """Risk drop in the large-sample limit psi1 -> infinity."""
    if eta == 0.0 or mu1 == 0.0 or mu1_star == 0.0:
        aux = LargeSampleAux(s1=0.0, s2=0.0, A=0.0, B=0.0, C=0.0)
        return DeltaResult(delta=0.0, components=(0.0, 0.0), regime="large-sample", aux=aux)
    shift = mu2**2 + lam
    s1 = mp_quadrature(lambda x: 1.0 / (mu1**2 * x + shift), psi2, order)
    s2 = mp_quadrature(lambda x: 1.0 / (mu1**2 * x + shift) ** 2, psi2, order)
    th2 = mu1 * mu1_star * eta  # theta2 in the psi1 -> infinity limit
    edge = 1.0 + psi2 * shift * s1 - psi2
    A = mu1**2 * th2**2 * s1 * edge
    B = 1.0 - psi2 + psi2 * lam * shift * s2 + mu2**2 * psi2 * s1
    C = lam * mu1**2 * th2**2 * edge * (
        2.0 * shift * psi2 * s1 * s2 - psi2 * s1**2 + s2 * (1.0 - psi2)
    )
    comp1 = mu1_star**2 * A * B / (A + 1.0)
    comp2 = mu1_star**2 * C / (A + 1.0) ** 2
    aux = LargeSampleAux(s1=s1, s2=s2, A=A, B=B, C=C)
    return DeltaResult(delta=comp1 + comp2, components=(comp1, comp2),
                       regime="large-sample", aux=aux)


def delta_large_width_check(
    eta: float,
    lam: float,
    psi1: float,
    mu1: float,
    mu2: float,
    mu1_star: float,
    mu_bar: float,
    psi2_grid: tuple[float, ...] = (2.0, 8.0, 32.0, 128.0, 512.0),
    order: int = 400,
) -> dict:
    """Evaluate delta along a growing-width grid and report the decay."""
    values = [
        delta(eta, lam, psi1, p2, mu1, mu2, mu1_star, mu_bar, order=order).delta
        for p2 in psi2_grid
    ]
    first, last = values[0], values[-1]
    decayed = (first == 0.0 and last == 0.0) or last < first / 10.0
    slope = None
    if all(v > 0.0 for v in values):
        lg = np.log(values)
        lp = np.log(psi2_grid)
        slope = float(np.polyfit(lp, lg, 1)[0])
    return {"psi2": list(psi2_grid), "delta": values, "decayed": decayed, "fitted_slope": slope}
