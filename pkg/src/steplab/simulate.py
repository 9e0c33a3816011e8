"""Synthetic data, network initialization, and the exact first-layer gradient step.

The student is the mean-field two-layer network

    f(x) = (1 / sqrt(N)) * a^T sigma(W^T x),   W in R^{d x N},  a in R^N,

trained on the squared loss.  One full-batch gradient step on W with learning
rate eta reads

    W_{t+1} = W_t + eta * sqrt(N) * G_t,
    G_t = (1/n) X^T [ ((1/sqrt(N)) (y - f(X)) a^T) ∘ sigma'(X W_t) ],

where ∘ is the entrywise product (realized as row/column scaling).  At t = 0
the gradient decomposes as G_0 = A + B - C with A rank one; this module also
computes that decomposition and its norm diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .activation import ActivationProfile, TeacherModel

__all__ = [
    "ExperimentConfig",
    "Dataset",
    "NetworkState",
    "GradientDecomposition",
    "STREAM_ROLES",
    "stream",
    "sample_dataset",
    "init_network",
    "forward",
    "gradient",
    "gradient_step",
    "multi_step",
    "decompose_gradient",
]

# Counter-based streams keyed by (seed, replica, role): reproducible regardless
# of scheduling.  `first-layer` seeds W0, `second-layer` seeds a.
STREAM_ROLES = {
    "train": 0,
    "fresh": 1,
    "test": 2,
    "ge-noise": 3,
    "second-layer": 4,
    "first-layer": 5,
}

_MAX_ELEMENTS = 2**34  # refuse allocations that cannot be meant at desk scale


def stream(seed: int, replica: int, role: str) -> np.random.Generator:
    """Deterministic Philox stream for (seed, replica, role)."""
    key = np.random.SeedSequence(seed, spawn_key=(replica, STREAM_ROLES[role]))
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class ExperimentConfig:
    """Problem sizes and training knobs; aspect ratios are derived."""

    n: int
    d: int
    N: int
    eta_bar: float = 1.0
    alpha: float = 0.0
    lam: float = 1e-3
    seed: int = 0
    replicas: int = 1
    n_test: int = 4096

    def __post_init__(self) -> None:
        for name in ("n", "d", "N", "replicas", "n_test"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 <= self.alpha <= 0.5:
            raise ValueError(f"alpha must lie in [0, 1/2], got {self.alpha!r}")
        if self.lam < 0.0:
            raise ValueError("lam must be >= 0")
        if self.eta_bar < 0.0:
            raise ValueError("eta_bar must be >= 0")

    @property
    def psi1(self) -> float:
        return self.n / self.d

    @property
    def psi2(self) -> float:
        return self.N / self.d

    @property
    def eta(self) -> float:
        """Effective learning rate eta = eta_bar * N**alpha."""
        return self.eta_bar * self.N**self.alpha


@dataclass(frozen=True)
class Dataset:
    """Gaussian inputs with single-index labels y = f*(X) + eps."""

    X: np.ndarray
    y: np.ndarray
    eps: np.ndarray


@dataclass(frozen=True)
class NetworkState:
    """First-layer matrix W (d x N), second layer a (N), step counter t."""

    W: np.ndarray
    a: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class GradientDecomposition:
    """G0 = A + B - C with A = A1 + A2 rank one; norms and residuals."""

    G0: np.ndarray
    A: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    B: np.ndarray
    C: np.ndarray
    norms: dict = field(default_factory=dict)
    rel_residual: float = 0.0
    reconstruction_error: float = 0.0


def sample_dataset(
    cfg: ExperimentConfig,
    teacher: TeacherModel,
    role: str = "train",
    replica: int = 0,
    n: int | None = None,
) -> Dataset:
    """Draw a dataset from the named stream; deterministic in (seed, replica, role)."""
    n = cfg.n if n is None else n
    if n * cfg.d > _MAX_ELEMENTS:
        raise ValueError(f"dataset of {n}x{cfg.d} entries exceeds the allocation guard")
    rng = stream(cfg.seed, replica, role)
    X = rng.standard_normal((n, cfg.d))
    eps = teacher.sigma_eps * rng.standard_normal(n)
    y = teacher.target(X) + eps
    return Dataset(X=X, y=y, eps=eps)


def init_network(cfg: ExperimentConfig, replica: int = 0) -> NetworkState:
    """Gaussian initialization: sqrt(d)*W0 and sqrt(N)*a entries are N(0, 1)."""
    W = stream(cfg.seed, replica, "first-layer").standard_normal((cfg.d, cfg.N))
    W /= math.sqrt(cfg.d)
    a = stream(cfg.seed, replica, "second-layer").standard_normal(cfg.N)
    a /= math.sqrt(cfg.N)
    return NetworkState(W=W, a=a, t=0)


def forward(net: NetworkState, X: np.ndarray, act: ActivationProfile) -> np.ndarray:
    """Predictions (1/sqrt(N)) * sigma(X W) a."""
    if X.shape[1] != net.W.shape[0]:
        raise ValueError(f"shape mismatch: X is {X.shape}, W is {net.W.shape}")
    N = net.W.shape[1]
    return np.asarray(act.eval(X @ net.W), dtype=float) @ net.a / math.sqrt(N)


def gradient(net: NetworkState, data: Dataset, act: ActivationProfile) -> np.ndarray:
    """Full-batch gradient G_t of the empirical squared loss w.r.t. W (up to the
    -2 factor absorbed into the update convention): decreases the MSE."""
    n = data.X.shape[0]
    N = net.W.shape[1]
    pre = data.X @ net.W
    resid = data.y - np.asarray(act.eval(pre), dtype=float) @ net.a / math.sqrt(N)
    M = np.asarray(act.deriv(pre), dtype=float)
    M *= net.a[None, :]
    M *= resid[:, None]
    G = data.X.T @ M
    G /= n * math.sqrt(N)
    if not np.all(np.isfinite(G)):
        raise FloatingPointError("non-finite gradient entries")
    return G


def gradient_step(
    net: NetworkState, data: Dataset, act: ActivationProfile, eta: float
) -> NetworkState:
    """W_{t+1} = W_t + eta * sqrt(N) * G_t; second layer unchanged."""
    if eta < 0.0:
        raise ValueError("eta must be >= 0")
    if eta == 0.0:
        return replace(net, t=net.t + 1)
    N = net.W.shape[1]
    G = gradient(net, data, act)
    return NetworkState(W=net.W + eta * math.sqrt(N) * G, a=net.a, t=net.t + 1)


def multi_step(
    net: NetworkState, data: Dataset, act: ActivationProfile, eta: float, steps: int
) -> NetworkState:
    """`steps` gradient steps on the *same* dataset (noise not redrawn)."""
    if not 1 <= steps <= 100:
        raise ValueError("steps must lie in [1, 100]")
    for _ in range(steps):
        net = gradient_step(net, data, act, eta)
    return net


def _norm_table(M: np.ndarray) -> dict:
    return {
        "op": float(np.linalg.norm(M, 2)),
        "fro": float(np.linalg.norm(M, "fro")),
        "two_inf": float(np.sqrt((M * M).sum(axis=1).max())),
    }


def decompose_gradient(
    net0: NetworkState, data: Dataset, act: ActivationProfile, teacher: TeacherModel
) -> GradientDecomposition:
    """Split the first gradient G0 into A + B - C with A = A1 + A2 rank one.

    A  = (mu1 / (n sqrt(N))) X^T y a^T                    (rank-1 signal)
    A1 = (mu1 mu1* / (n sqrt(N))) X^T X beta* a^T         (linear-teacher part)
    A2 = A - A1                                           (nonlinear + noise part)
    B  = (1 / (n sqrt(N))) X^T [ y a^T ∘ sigma'_perp(X W0) ]
    C  = (1 / (n N)) X^T [ (sigma(X W0) a) a^T ∘ sigma'(X W0) ]
    """
    if net0.t != 0:
        raise ValueError("gradient decomposition is defined at t = 0")
    X, y, a = data.X, data.y, net0.a
    n = X.shape[0]
    N = net0.W.shape[1]
    mu1 = act.mu1
    scale = 1.0 / (n * math.sqrt(N))

    pre = X @ net0.W
    sig = np.asarray(act.eval(pre), dtype=float)
    dsig = np.asarray(act.deriv(pre), dtype=float)

    A = scale * mu1 * np.outer(X.T @ y, a)
    A1 = scale * mu1 * teacher.mu1_star * np.outer(X.T @ (X @ teacher.beta_star), a)
    A2 = A - A1
    B = scale * (X.T @ ((dsig - mu1) * a[None, :] * y[:, None]))
    C = (scale / math.sqrt(N)) * (X.T @ (dsig * a[None, :] * (sig @ a)[:, None]))
    G0 = gradient(net0, data, act)

    recon = A + B - C
    recon_err = float(np.linalg.norm(recon - G0, "fro") / max(np.linalg.norm(G0, "fro"), 1e-300))
    norms = {name: _norm_table(M) for name, M in
             [("G0", G0), ("A", A), ("A1", A1), ("A2", A2), ("B", B), ("C", C)]}
    rel_residual = float(np.linalg.norm(G0 - A, 2) / max(norms["G0"]["op"], 1e-300))
    return GradientDecomposition(
        G0=G0, A=A, A1=A1, A2=A2, B=B, C=C,
        norms=norms, rel_residual=rel_residual, reconstruction_error=recon_err,
    )
