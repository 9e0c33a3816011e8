"""HTTP service exposing the closed-form predictions.

Only the fast, deterministic operations are served (spike prediction, risk
drop delta, tau*, resolvent pair, activation coefficients, config
validation); Monte Carlo sweeps stay in the CLI where their outputs are
written as reproducible CSV artifacts.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .activation import BUILTIN_NAMES, builtin, teacher_profile
from .harness import ConfigError, normalize_config
from .largelr import tau_star
from .spectra import bbp_predict, theta_params
from .theory import SolverError, delta, solve_m1_m2

app = FastAPI(title="steplab", version=__version__)


class ActivationPair(BaseModel):
    sigma: str = Field(description=f"student activation, one of {BUILTIN_NAMES}")
    sigma_star: str = Field(description="teacher nonlinearity")


def _profiles(pair: ActivationPair):
    try:
        act = builtin(pair.sigma, centered=True)
        star = builtin(pair.sigma_star, centered=True)
    except KeyError as e:
        raise HTTPException(status_code=422, detail=str(e)) from None
    return act, star


class SpikeRequest(ActivationPair):
    eta: float = Field(gt=0)
    psi1: float = Field(gt=0)
    psi2: float = Field(gt=0)


class SpikeResponse(BaseModel):
    theta1: float
    theta2: float
    s1_limit: float
    overlap_sq: float
    supercritical: bool


@app.post("/spike", response_model=SpikeResponse)
def spike(req: SpikeRequest) -> SpikeResponse:
    act, star = _profiles(req)
    _, mu1s, _, mu_bar = teacher_profile(star)
    theta = theta_params(req.eta, act.mu1, mu1s, mu_bar, req.psi1)
    pred = bbp_predict(theta, req.psi2)
    return SpikeResponse(theta1=theta.theta1, theta2=theta.theta2,
                         s1_limit=pred.s1_limit, overlap_sq=pred.overlap_sq,
                         supercritical=pred.supercritical)


class DeltaRequest(ActivationPair):
    eta: float = Field(ge=0)
    lam: float = Field(gt=0)
    psi1: float = Field(gt=0)
    psi2: float = Field(gt=0)


class DeltaResponse(BaseModel):
    delta: float
    component_main: float
    component_residual: float


@app.post("/delta", response_model=DeltaResponse)
def delta_endpoint(req: DeltaRequest) -> DeltaResponse:
    act, star = _profiles(req)
    _, mu1s, _, mu_bar = teacher_profile(star)
    try:
        res = delta(req.eta, req.lam, req.psi1, req.psi2,
                    act.mu1, act.mu2, mu1s, mu_bar)
    except SolverError as e:
        raise HTTPException(status_code=500, detail=str(e)) from None
    return DeltaResponse(delta=res.delta, component_main=res.components[0],
                         component_residual=res.components[1])


class TauStarResponse(BaseModel):
    tau_star: float
    kappa_star: float
    achieved: bool


@app.post("/taustar", response_model=TauStarResponse)
def taustar_endpoint(pair: ActivationPair) -> TauStarResponse:
    act, star = _profiles(pair)
    res = tau_star(act, star)
    return TauStarResponse(tau_star=res.tau_star, kappa_star=res.kappa_star,
                           achieved=res.achieved)


class StieltjesRequest(ActivationPair):
    z: float = Field(gt=0)
    psi1: float = Field(gt=0)
    psi2: float = Field(gt=0)


class StieltjesResponse(BaseModel):
    m1: float
    m2: float
    m1p: float
    m2p: float
    residuals: tuple[float, float]


@app.post("/stieltjes", response_model=StieltjesResponse)
def stieltjes(req: StieltjesRequest) -> StieltjesResponse:
    act, _ = _profiles(req)
    try:
        pair = solve_m1_m2(req.z, req.psi1, req.psi2, act.mu1, act.mu2)
    except SolverError as e:
        raise HTTPException(status_code=500, detail=str(e)) from None
    return StieltjesResponse(m1=pair.m1, m2=pair.m2, m1p=pair.m1p, m2p=pair.m2p,
                             residuals=pair.residuals)


class CoefficientsResponse(BaseModel):
    mu0: float
    mu1: float
    mu2: float


@app.get("/coefficients/{name}", response_model=CoefficientsResponse)
def coefficients_endpoint(name: str, centered: bool = False) -> CoefficientsResponse:
    try:
        act = builtin(name, centered=centered)
    except KeyError as e:
        raise HTTPException(status_code=404, detail=str(e)) from None
    return CoefficientsResponse(mu0=act.mu0, mu1=act.mu1, mu2=act.mu2)


@app.post("/validate-config")
def validate_config_endpoint(raw: dict) -> dict:
    try:
        settings = normalize_config(raw, source="<request>")
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e)) from None
    return settings.as_dict()


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}
