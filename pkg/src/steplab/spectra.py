"""Spectral measurements and closed-form spike predictions.

After one gradient step with eta = Theta(1) the first-layer matrix W1 behaves
like a rank-one perturbation of a Gaussian matrix, so its leading singular
value undergoes a BBP-type phase transition governed by the effective signal
strengths

    theta1 = sqrt(mu_bar^2 / psi1 + mu1*^2) * mu1 * eta,
    theta2 = mu1 * mu1* * eta.

This module evaluates that prediction, the Marchenko-Pastur reference law and
its Stieltjes transform, and compares the spectrum of the nonlinear feature
matrix with its Gaussian-equivalent surrogate on fresh data.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .activation import ActivationProfile

__all__ = [
    "ThetaParams",
    "SpikePrediction",
    "SpectralSummary",
    "CKSpikeReport",
    "theta_params",
    "bbp_predict",
    "mp_stieltjes",
    "mp_density",
    "mp_atom",
    "mp_support",
    "spectral_summary",
    "is_isolated",
    "ck_spike_check",
]


@dataclass(frozen=True)
class ThetaParams:
    theta1: float
    theta2: float


@dataclass(frozen=True)
class SpikePrediction:
    s1_limit: float
    overlap_sq: float
    supercritical: bool


@dataclass(frozen=True)
class SpectralSummary:
    values: np.ndarray
    leading_vector: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class CKSpikeReport:
    """Leading singular values and label overlaps of the nonlinear feature
    matrix Phi = sigma(X W1)/sqrt(N) versus its Gaussian-equivalent surrogate
    Phi_bar = (mu1 X W1 + mu2 Z)/sqrt(N)."""

    s_ck: np.ndarray
    s_ge: np.ndarray
    overlap_ck: float
    overlap_ge: float
    odd_activation: bool


def theta_params(
    eta: float, mu1: float, mu1_star: float, mu_bar: float, psi1: float
) -> ThetaParams:
    """Effective signal strengths of the rank-one gradient spike."""
    if psi1 <= 0.0:
        raise ValueError("psi1 must be > 0")
    theta1 = math.sqrt(mu_bar**2 / psi1 + mu1_star**2) * mu1 * eta
    theta2 = mu1 * mu1_star * eta
    return ThetaParams(theta1=theta1, theta2=theta2)


def bbp_predict(theta: ThetaParams, psi2: float) -> SpikePrediction:
    """Limiting top singular value of W1 and squared overlap of its left
    singular vector with the teacher direction."""
    if psi2 <= 0.0:
        raise ValueError("psi2 must be > 0")
    t1, t2 = theta.theta1, theta.theta2
    if t1 > psi2**0.25:
        t1sq = t1 * t1
        s1 = math.sqrt((1.0 + t1sq) * (psi2 + t1sq) / t1sq)
        overlap = (t2 * t2 / t1sq) * (1.0 - (psi2 + t1sq) / (t1sq * (t1sq + 1.0)))
        return SpikePrediction(s1_limit=s1, overlap_sq=max(overlap, 0.0), supercritical=True)
    return SpikePrediction(s1_limit=1.0 + math.sqrt(psi2), overlap_sq=0.0, supercritical=False)


def mp_support(psi: float) -> tuple[float, float]:
    """Edges of the continuous Marchenko-Pastur bulk with ratio psi."""
    sq = math.sqrt(psi)
    return (1.0 - sq) ** 2, (1.0 + sq) ** 2


def mp_atom(psi: float) -> float:
    """Point mass at 0 of the MP law with ratio psi."""
    return max(0.0, 1.0 - 1.0 / psi)


def mp_density(x, psi: float):
    """Continuous MP density at x (the atom at 0 is reported by mp_atom)."""
    if psi <= 0.0:
        raise ValueError("psi must be > 0")
    lo, hi = mp_support(psi)
    x = np.asarray(x, dtype=float)
    inside = (x > lo) & (x < hi)
    out = np.zeros_like(x)
    xs = x[inside]
    out[inside] = np.sqrt((hi - xs) * (xs - lo)) / (2.0 * math.pi * psi * xs)
    return out if out.ndim else float(out)


def mp_stieltjes(z, psi: float):
    """Stieltjes transform m(z) of the MP law with ratio psi.

    m solves z*psi*m^2 - (1 - psi - z)*m + 1 = 0 on the branch with
    m(z) -> 0 as |z| -> infinity (m > 0 for real z < 0, m < 0 above the bulk,
    Im m > 0 for Im z > 0).  Real z inside the bulk is a domain error.
    """
    if psi <= 0.0:
        raise ValueError("psi must be > 0")
    zc = complex(z)
    if zc.imag == 0.0:
        lo, hi = mp_support(psi)
        zr = zc.real
        if zr == 0.0 or (lo - 1e-12 <= zr <= hi + 1e-12 and zr > 0):
            raise ValueError(f"z={z!r} lies inside the MP bulk [{lo}, {hi}]")
        if psi > 1.0 and 0.0 < zr < lo:
            # between the atom at 0 and the bulk the real branch is ambiguous
            raise ValueError(f"z={z!r} lies between the MP atom and the bulk")
        a = zr * psi
        b = -(1.0 - psi - zr)
        disc = math.sqrt(b * b - 4.0 * a)
        r1 = (-b + disc) / (2.0 * a)
        r2 = (-b - disc) / (2.0 * a)
        # Stieltjes branch: positive below the support, negative above it.
        want_positive = zr < lo or zr < 0
        roots = [r for r in (r1, r2) if (r > 0) == want_positive]
        if not roots:
            raise ValueError(f"no Stieltjes-branch root at z={z!r}")
        return min(roots, key=abs)
    a = zc * psi
    b = -(1.0 - psi - zc)
    disc = cmath.sqrt(b * b - 4.0 * a)
    r1 = (-b + disc) / (2.0 * a)
    r2 = (-b - disc) / (2.0 * a)
    return r1 if r1.imag > 0 else r2


def spectral_summary(M: np.ndarray, kind: str = "svd", bins: int = 60) -> SpectralSummary:
    """Sorted spectrum, leading left singular (or eigen) vector, histogram."""
    if kind == "svd":
        U, s, _ = np.linalg.svd(M, full_matrices=False)
        values, vec = s, U[:, 0]
    elif kind == "eig":
        w, V = np.linalg.eigh(M)
        order = np.argsort(w)[::-1]
        values, vec = w[order], V[:, order[0]]
    else:
        raise ValueError(f"kind must be 'svd' or 'eig', got {kind!r}")
    counts, edges = np.histogram(values, bins=bins)
    return SpectralSummary(values=values, leading_vector=vec, bin_edges=edges, counts=counts)


def is_isolated(s1: float, psi2: float, d: int, buffer: float = 5.0) -> bool:
    """Spike detector: s1 must clear the bulk edge by a Tracy-Widom-scale margin."""
    return s1 > (1.0 + math.sqrt(psi2)) * (1.0 + buffer * d ** (-2.0 / 3.0))


def _is_odd(act: ActivationProfile) -> bool:
    grid = np.linspace(0.1, 4.0, 64)
    return bool(np.allclose(act.eval(-grid), -np.asarray(act.eval(grid)), atol=1e-8))


def ck_spike_check(
    W1: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    act: ActivationProfile,
    rng: np.random.Generator,
    k: int = 10,
) -> CKSpikeReport:
    """Compare the top-k singular values of the nonlinear feature matrix on
    fresh data with those of its Gaussian-equivalent surrogate, plus the
    squared overlap of each leading left singular vector with y/||y||."""
    n, N = X.shape[0], W1.shape[1]
    scale = 1.0 / math.sqrt(N)
    XW = X @ W1
    Phi = scale * np.asarray(act.eval(XW), dtype=float)
    Z = rng.standard_normal((n, N))
    Phi_bar = scale * (act.mu1 * XW + act.mu2 * Z)

    yhat = y / np.linalg.norm(y)
    U, s_ck, _ = np.linalg.svd(Phi, full_matrices=False)
    overlap_ck = float(np.dot(U[:, 0], yhat) ** 2)
    U, s_ge, _ = np.linalg.svd(Phi_bar, full_matrices=False)
    overlap_ge = float(np.dot(U[:, 0], yhat) ** 2)
    return CKSpikeReport(
        s_ck=s_ck[:k],
        s_ge=s_ge[:k],
        overlap_ck=overlap_ck,
        overlap_ge=overlap_ge,
        odd_activation=_is_odd(act),
    )
