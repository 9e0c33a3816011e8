"""Scalar activations, their derivatives, and Gaussian-decomposition coefficients.

Every activation sigma is decomposed against the standard Gaussian measure as

    sigma(z) = mu0 + mu1 * z + sigma_perp(z),

with mu0 = E[sigma(z)], mu1 = E[z * sigma(z)], and mu2^2 = E[sigma_perp(z)^2]
= E[sigma^2] - mu0^2 - mu1^2 for z ~ N(0, 1).  The same decomposition applied
to a single-index teacher nonlinearity yields (mu0*, mu1*, mu2*) and the L2
norm mu_bar of the target function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import hermite_e, legendre
from scipy import special

__all__ = [
    "QuadratureRule",
    "ActivationProfile",
    "TeacherModel",
    "gaussian_expectation",
    "coefficients",
    "center",
    "teacher_profile",
    "builtin",
    "BUILTIN_NAMES",
    "EvaluationError",
    "CoefficientError",
]

DEFAULT_ORDER = 200
_TAIL = 12.0  # Gaussian mass beyond |z|=12 is ~1e-32, below every tolerance used


class EvaluationError(ValueError):
    """A function returned a non-finite value at a quadrature node."""


class CoefficientError(ValueError):
    """The Gaussian moments of an activation are inconsistent."""


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights integrating f against the standard Gaussian measure."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @classmethod
    def gauss_hermite(cls, order: int = DEFAULT_ORDER) -> "QuadratureRule":
        """Probabilists' Gauss-Hermite rule: exact for polynomials of degree
        <= 2*order - 1 under N(0, 1)."""
        nodes, weights = hermite_e.hermegauss(order)
        return cls(nodes=nodes, weights=weights / math.sqrt(2.0 * math.pi), order=order)

    @classmethod
    def piecewise(cls, kinks: Sequence[float], order: int = DEFAULT_ORDER) -> "QuadratureRule":
        """Composite Gauss-Legendre rule against the Gaussian density, split at
        the given kink points so piecewise-smooth integrands keep full order."""
        edges = [-_TAIL, *sorted(kinks), _TAIL]
        glx, glw = legendre.leggauss(order)
        nodes, weights = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi <= lo:
                continue
            x = 0.5 * (hi - lo) * glx + 0.5 * (hi + lo)
            w = 0.5 * (hi - lo) * glw * np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
            nodes.append(x)
            weights.append(w)
        return cls(nodes=np.concatenate(nodes), weights=np.concatenate(weights), order=order)


def gaussian_expectation(f: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule) -> float:
    """E_{z ~ N(0,1)}[f(z)] via the quadrature rule."""
    values = np.asarray(f(rule.nodes), dtype=float)
    if not np.all(np.isfinite(values)):
        bad = rule.nodes[~np.isfinite(values)][0]
        raise EvaluationError(f"non-finite value at quadrature node z={bad!r}")
    return float(np.dot(rule.weights, values))


@dataclass(frozen=True)
class ActivationProfile:
    """A scalar nonlinearity with its derivative and Gaussian coefficients."""

    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    mu0: float
    mu1: float
    mu2: float
    centered: bool
    kinks: tuple[float, ...] = ()
    smooth: bool = True

    def rule(self, order: int = DEFAULT_ORDER) -> QuadratureRule:
        """Quadrature rule adapted to this activation (split at kinks)."""
        if self.kinks:
            return QuadratureRule.piecewise(self.kinks, order)
        return QuadratureRule.gauss_hermite(order)


def coefficients(
    f: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule, tol: float = 1e-8
) -> tuple[float, float, float]:
    """Gaussian coefficients (mu0, mu1, mu2) of a raw scalar nonlinearity."""
    mu0 = gaussian_expectation(f, rule)
    mu1 = gaussian_expectation(lambda z: z * f(z), rule)
    second = gaussian_expectation(lambda z: f(z) ** 2, rule)
    mu2_sq = second - mu0 * mu0 - mu1 * mu1
    if mu2_sq < -tol:
        raise CoefficientError(
            f"inconsistent moments: E[sigma^2] - mu0^2 - mu1^2 = {mu2_sq!r} < 0"
        )
    return mu0, mu1, math.sqrt(max(0.0, mu2_sq))


def center(act: ActivationProfile) -> ActivationProfile:
    """Subtract the Gaussian mean so that E[sigma(z)] = 0; idempotent."""
    if act.centered:
        return act
    mu0 = act.mu0
    raw = act.eval
    return replace(
        act,
        name=act.name,
        eval=lambda z, _raw=raw, _mu0=mu0: _raw(z) - _mu0,
        mu0=0.0,
        centered=True,
    )


@dataclass(frozen=True)
class TeacherModel:
    """Single-index target f*(x) = sigma*(<x, beta*>) plus label noise."""

    beta_star: np.ndarray
    sigma_star: ActivationProfile
    mu0_star: float
    mu1_star: float
    mu2_star: float
    mu_bar: float
    sigma_eps: float

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.beta_star))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"teacher direction must be unit norm, got {norm!r}")

    def target(self, X: np.ndarray) -> np.ndarray:
        """Noise-free targets f*(x_i) for rows x_i of X."""
        return np.asarray(self.sigma_star.eval(X @ self.beta_star), dtype=float)

    @classmethod
    def build(
        cls,
        beta_star: np.ndarray,
        sigma_star: ActivationProfile,
        sigma_eps: float = 0.0,
        order: int = DEFAULT_ORDER,
    ) -> "TeacherModel":
        mu0s, mu1s, mu2s, mu_bar = teacher_profile(sigma_star, order=order)
        beta = np.asarray(beta_star, dtype=float)
        return cls(
            beta_star=beta / np.linalg.norm(beta),
            sigma_star=sigma_star,
            mu0_star=mu0s,
            mu1_star=mu1s,
            mu2_star=mu2s,
            mu_bar=mu_bar,
            sigma_eps=float(sigma_eps),
        )


def teacher_profile(
    sigma_star: ActivationProfile, order: int = DEFAULT_ORDER
) -> tuple[float, float, float, float]:
    """(mu0*, mu1*, mu2*, mu_bar) of a single-index teacher nonlinearity,
    where mu_bar^2 = mu0*^2 + mu1*^2 + mu2*^2 is the squared L2 norm of f*."""
    rule = sigma_star.rule(order)
    mu0s, mu1s, mu2s = coefficients(sigma_star.eval, rule)
    mu_bar = math.sqrt(mu0s * mu0s + mu1s * mu1s + mu2s * mu2s)
    return mu0s, mu1s, mu2s, mu_bar


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return special.expit(z)


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _relu_deriv(z: np.ndarray) -> np.ndarray:
    # derivative at the kink z=0 is defined as 0 (subgradient convention)
    return (np.asarray(z) > 0.0).astype(float)


def _erf_deriv(z: np.ndarray) -> np.ndarray:
    return 2.0 / math.sqrt(math.pi) * np.exp(-np.square(z))


def _tanh_deriv(z: np.ndarray) -> np.ndarray:
    return 1.0 / np.cosh(z) ** 2


_BUILTINS: dict[str, dict] = {
    "erf": dict(eval=special.erf, deriv=_erf_deriv, kinks=(), smooth=True),
    "tanh": dict(eval=np.tanh, deriv=_tanh_deriv, kinks=(), smooth=True),
    "relu": dict(eval=_relu, deriv=_relu_deriv, kinks=(0.0,), smooth=False),
    "softplus": dict(eval=_softplus, deriv=_sigmoid, kinks=(), smooth=True),
    "identity": dict(eval=lambda z: np.asarray(z, dtype=float), deriv=lambda z: np.ones_like(np.asarray(z, dtype=float)), kinks=(), smooth=True),
}

BUILTIN_NAMES = tuple(_BUILTINS)


def builtin(name: str, order: int = DEFAULT_ORDER, centered: bool = False) -> ActivationProfile:
    """Construct a built-in activation profile, optionally centered."""
    try:
        spec = _BUILTINS[name]
    except KeyError:
        raise KeyError(
            f"unknown activation {name!r}; available: {', '.join(BUILTIN_NAMES)}"
        ) from None
    rule = (
        QuadratureRule.piecewise(spec["kinks"], order)
        if spec["kinks"]
        else QuadratureRule.gauss_hermite(order)
    )
    mu0, mu1, mu2 = coefficients(spec["eval"], rule)
    profile = ActivationProfile(
        name=name,
        eval=spec["eval"],
        deriv=spec["deriv"],
        mu0=mu0,
        mu1=mu1,
        mu2=mu2,
        centered=abs(mu0) < 1e-14,
        kinks=tuple(spec["kinks"]),
        smooth=spec["smooth"],
    )
    if centered:
        profile = center(profile)
    return profile
