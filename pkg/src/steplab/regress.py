"""Ridge regression on learned features, Monte Carlo risk, and kernel baselines.

The second layer is fit on *fresh* data by

    a_hat = (Phi^T Phi + (lambda n / N) I)^{-1} Phi^T y,

the minimizer of (1/n)||y - Phi a||^2 + (lambda/N)||a||^2, where
Phi = sigma(X W)/sqrt(N) are the learned features (or their Gaussian-equivalent
surrogate (mu1 X W + mu2 Z)/sqrt(N)).  Prediction risk is R(f_hat) =
E_x (f_hat(x) - f*(x))^2, excluding the label noise variance.

Baselines: closed-form asymptotic risk of ridge on the raw inputs, the
linearized tangent-kernel equivalent obtained by a penalty shift, and a
rotationally invariant inner-product kernel evaluated by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg as sla

from .activation import ActivationProfile, QuadratureRule, TeacherModel, gaussian_expectation
from .spectra import mp_stieltjes

__all__ = [
    "RidgeSolution",
    "RiskEstimate",
    "RiskDecompositionGE",
    "ck_features",
    "ge_features",
    "ridge_fit",
    "ck_predictor",
    "ge_predictor",
    "risk_mc",
    "ge_risk_closed",
    "ge_bias_variance",
    "linear_ridge_risk",
    "optimal_linear_ridge",
    "deriv_coefficients",
    "ntk_equiv_risk",
    "input_ridge_predictor",
    "inner_product_kernel_ridge_mc",
    "kta",
    "alignment_components",
]


@dataclass(frozen=True)
class RidgeSolution:
    a_hat: np.ndarray
    lam: float
    lam_tilde: float
    residual: float
    convention: str = "main-text"
    pseudo_inverse: bool = False
    condition: float | None = None


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    std_err: float
    n_test: int
    replicas: int = 1


@dataclass(frozen=True)
class RiskDecompositionGE:
    B1: float
    B2: float
    V: float

    @property
    def total(self) -> float:
        return self.B1 + self.B2 + self.V


def ck_features(W: np.ndarray, X: np.ndarray, act: ActivationProfile) -> np.ndarray:
    """Nonlinear feature matrix Phi = sigma(X W)/sqrt(N)."""
    N = W.shape[1]
    return np.asarray(act.eval(X @ W), dtype=float) / math.sqrt(N)


def ge_features(
    W: np.ndarray, X: np.ndarray, mu1: float, mu2: float, rng: np.random.Generator
) -> np.ndarray:
    """Gaussian-equivalent features (mu1 X W + mu2 Z)/sqrt(N) with fresh Z."""
    n, N = X.shape[0], W.shape[1]
    Z = rng.standard_normal((n, N))
    return (mu1 * (X @ W) + mu2 * Z) / math.sqrt(N)


def ridge_fit(Phi: np.ndarray, y: np.ndarray, lam: float, N: int | None = None) -> RidgeSolution:
    """Solve the penalized least squares problem on the smaller Gram side."""
    n, cols = Phi.shape
    N = cols if N is None else N
    lam_tilde = lam * n / N
    rhs = Phi.T @ y
    if lam == 0.0:
        a_hat, *_ = np.linalg.lstsq(Phi, y, rcond=None)
        s = np.linalg.svd(Phi, compute_uv=False)
        cond = float(s[0] / max(s[s > 0].min(), 1e-300))
        resid = float(np.linalg.norm((Phi.T @ Phi) @ a_hat - rhs) / max(np.linalg.norm(rhs), 1e-300))
        return RidgeSolution(a_hat=a_hat, lam=0.0, lam_tilde=0.0, residual=resid,
                             pseudo_inverse=True, condition=cond)
    if cols <= n:
        Gram = Phi.T @ Phi
        Gram[np.diag_indices_from(Gram)] += lam_tilde
        cho = sla.cho_factor(Gram, lower=True)
        a_hat = sla.cho_solve(cho, rhs)
        Gram[np.diag_indices_from(Gram)] -= lam_tilde
        resid = float(np.linalg.norm(Gram @ a_hat + lam_tilde * a_hat - rhs)
                      / max(np.linalg.norm(rhs), 1e-300))
    else:
        Gram = Phi @ Phi.T
        Gram[np.diag_indices_from(Gram)] += lam_tilde
        cho = sla.cho_factor(Gram, lower=True)
        a_hat = Phi.T @ sla.cho_solve(cho, y)
        resid = float(np.linalg.norm((Phi.T @ (Phi @ a_hat)) + lam_tilde * a_hat - rhs)
                      / max(np.linalg.norm(rhs), 1e-300))
    return RidgeSolution(a_hat=a_hat, lam=lam, lam_tilde=lam_tilde, residual=resid)


def ck_predictor(
    W: np.ndarray, act: ActivationProfile, a_hat: np.ndarray
) -> Callable[[np.ndarray], np.ndarray]:
    """x -> (1/sqrt(N)) a_hat^T sigma(W^T x), vectorized over rows of X."""
    N = W.shape[1]

    def predict(X: np.ndarray) -> np.ndarray:
        return np.asarray(act.eval(X @ W), dtype=float) @ a_hat / math.sqrt(N)

    return predict


def ge_predictor(
    W: np.ndarray, mu1: float, mu2: float, a_hat: np.ndarray, rng: np.random.Generator
) -> Callable[[np.ndarray], np.ndarray]:
    """Gaussian-equivalent predictor; draws a fresh latent z per evaluation point."""
    N = W.shape[1]

    def predict(X: np.ndarray) -> np.ndarray:
        z = rng.standard_normal(X.shape[0])
        lin = (X @ W) @ a_hat * mu1
        # each row contributes mu2 * <z_i, a_hat> with z_i ~ N(0, I); its law is
        # N(0, mu2^2 ||a_hat||^2), sampled directly
        return (lin + mu2 * np.linalg.norm(a_hat) * z) / math.sqrt(N)

    return predict


def risk_mc(
    predict: Callable[[np.ndarray], np.ndarray],
    teacher: TeacherModel,
    n_test: int,
    rng: np.random.Generator,
) -> RiskEstimate:
    """Monte Carlo prediction risk over fresh Gaussian inputs (noise excluded)."""
    d = teacher.beta_star.shape[0]
    X = rng.standard_normal((n_test, d))
    err_sq = (np.asarray(predict(X), dtype=float) - teacher.target(X)) ** 2
    return RiskEstimate(
        mean=float(err_sq.mean()),
        std_err=float(err_sq.std(ddof=1) / math.sqrt(n_test)),
        n_test=n_test,
    )


def ge_risk_closed(
    W: np.ndarray,
    a_hat: np.ndarray,
    mu1: float,
    mu2: float,
    teacher: TeacherModel,
) -> float:
    """Exact population risk of the Gaussian-equivalent predictor with weights a_hat:

    (mu1* - (mu1/sqrt(N)) beta*^T W a_hat)^2 + mu2*^2
      + (1/N) a_hat^T (mu1^2 W^T W + mu2^2 I - mu1^2 W^T beta* beta*^T W) a_hat
    """
    N = W.shape[1]
    Wa = W @ a_hat
    proj = float(teacher.beta_star @ Wa)
    quad = mu1**2 * float(Wa @ Wa) + mu2**2 * float(a_hat @ a_hat) - mu1**2 * proj**2
    bias = (teacher.mu1_star - mu1 * proj / math.sqrt(N)) ** 2
    return bias + teacher.mu2_star**2 + quad / N


def ge_bias_variance(
    W: np.ndarray,
    Phi_bar: np.ndarray,
    fstar: np.ndarray,
    lam: float,
    mu1: float,
    mu2: float,
    teacher: TeacherModel,
) -> RiskDecompositionGE:
    """Population bias/variance split of the Gaussian-equivalent ridge risk."""
    n, N = Phi_bar.shape
    lam_tilde = lam * n / N
    Sigma_hat = Phi_bar.T @ Phi_bar
    Sigma_bar = (mu1**2 * (W.T @ W) + mu2**2 * np.eye(N)) / N
    reg = Sigma_hat + lam_tilde * np.eye(N)
    cho = sla.cho_factor(reg, lower=True)
    v = sla.cho_solve(cho, Phi_bar.T @ fstar)  # (Sigma_hat + lam I)^{-1} Phi_bar^T f*
    B1 = (
        teacher.mu1_star**2
        + teacher.mu2_star**2
        - 2.0 * mu1 * teacher.mu1_star / math.sqrt(N) * float((teacher.beta_star @ W) @ v)
    )
    B2 = float(v @ (Sigma_bar @ v))
    inv_sig = sla.cho_solve(cho, Sigma_hat)
    V = teacher.sigma_eps**2 * float(np.trace(sla.cho_solve(cho, inv_sig @ Sigma_bar)))
    return RiskDecompositionGE(B1=B1, B2=B2, V=V)


def _mbar_pair(lam: float, psi1: float) -> tuple[float, float]:
    """Companion MP transform of the n x n input Gram spectrum and its derivative
    at z = -lam (ratio d/n = 1/psi1)."""
    psi = 1.0 / psi1
    z = -lam
    m = mp_stieltjes(z, psi)
    # implicit differentiation of z*psi*m^2 - (1 - psi - z)*m + 1 = 0
    mp = -(psi * m * m + m) / (2.0 * z * psi * m - (1.0 - psi - z))
    mbar = psi * m - (1.0 - psi) / z
    mbar_p = psi * mp + (1.0 - psi) / z**2
    return mbar, mbar_p


def linear_ridge_risk(
    lam: float, psi1: float, mu1_star: float, mu2_star: float, sigma_eps: float
) -> float:
    """Asymptotic prediction risk of ridge regression on the raw inputs with
    estimator (X^T X + lam n I)^{-1} X^T y."""
    if lam <= 0.0:
        raise ValueError("lam must be > 0")
    mbar, mbar_p = _mbar_pair(lam, psi1)
    ratio = mbar_p / mbar**2
    return (
        ratio * mu1_star**2 / (1.0 + mbar) ** 2
        + (sigma_eps**2 + mu2_star**2) * (ratio - 1.0)
        + mu2_star**2
    )


def optimal_linear_ridge(
    psi1: float, mu1_star: float, mu2_star: float, sigma_eps: float
) -> tuple[float, float]:
    """Risk-optimal penalty and the corresponding limiting risk."""
    lam_opt = (sigma_eps**2 + mu2_star**2) / (psi1 * mu1_star**2)
    mbar, _ = _mbar_pair(lam_opt, psi1)
    risk = (sigma_eps**2 + mu2_star**2) / (lam_opt * mbar) - sigma_eps**2
    return lam_opt, risk


def deriv_coefficients(act: ActivationProfile, order: int = 200) -> tuple[float, float]:
    """(b0, b1^2) with b0 = E[sigma'(z)] and b1^2 = E[sigma'(z)^2] - b0^2."""
    rule = act.rule(order)
    b0 = gaussian_expectation(act.deriv, rule)
    second = gaussian_expectation(lambda z: np.asarray(act.deriv(z)) ** 2, rule)
    return b0, second - b0 * b0


def ntk_equiv_risk(
    lam: float,
    psi1: float,
    b0: float,
    b1_sq: float,
    mu1_star: float,
    mu2_star: float,
    sigma_eps: float,
) -> float:
    """Tangent-kernel ridge risk via the linearized penalty shift
    R_NTK(lam) = R_Lin((lam + b1^2) / (b0^2 psi1))."""
    return linear_ridge_risk((lam + b1_sq) / (b0**2 * psi1), psi1, mu1_star, mu2_star, sigma_eps)


def input_ridge_predictor(
    X: np.ndarray, y: np.ndarray, lam: float
) -> Callable[[np.ndarray], np.ndarray]:
    """Ridge on raw inputs: theta = (X^T X + lam n I)^{-1} X^T y."""
    n, d = X.shape
    Gram = X.T @ X
    Gram[np.diag_indices_from(Gram)] += lam * n
    theta = np.linalg.solve(Gram, X.T @ y)

    def predict(X_new: np.ndarray) -> np.ndarray:
        return X_new @ theta

    return predict


def inner_product_kernel_ridge_mc(
    g: Callable[[np.ndarray], np.ndarray],
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    teacher: TeacherModel,
    n_test: int,
    rng: np.random.Generator,
) -> RiskEstimate:
    """Monte Carlo risk of the rotationally invariant kernel ridge estimator
    f_hat(x) = g(<x, X>/d)^T (K + lam I)^{-1} y with K_ij = g(<x_i, x_j>/d)."""
    n, d = X.shape
    K = np.asarray(g(X @ X.T / d), dtype=float)
    K[np.diag_indices_from(K)] += lam
    coef = np.linalg.solve(K, y)

    def predict(X_new: np.ndarray) -> np.ndarray:
        return np.asarray(g(X_new @ X.T / d), dtype=float) @ coef

    return risk_mc(predict, teacher, n_test, rng)


def kta(K: np.ndarray, y: np.ndarray) -> float:
    """Kernel-target alignment <K, y y^T> / (||K||_F ||y||^2), in [0, 1] for PSD K."""
    return float((y @ (K @ y)) / (np.linalg.norm(K, "fro") * float(y @ y)))


def alignment_components(
    predict: Callable[[np.ndarray], np.ndarray],
    teacher: TeacherModel,
    n_mc: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo inner products of the predictor with the unit-normalized
    linear and nonlinear components of the teacher."""
    d = teacher.beta_star.shape[0]
    X = rng.standard_normal((n_mc, d))
    z = X @ teacher.beta_star
    f_hat = np.asarray(predict(X), dtype=float)
    f_lin = teacher.mu0_star + teacher.mu1_star * z
    f_nl = teacher.target(X) - f_lin
    norm_lin = math.sqrt(teacher.mu0_star**2 + teacher.mu1_star**2)
    norm_nl = teacher.mu2_star
    lin = float((f_hat * f_lin).mean() / norm_lin) if norm_lin > 0 else 0.0
    nl = float((f_hat * f_nl).mean() / norm_nl) if norm_nl > 0 else 0.0
    return lin, nl
