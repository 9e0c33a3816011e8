"""Configuration, sweep orchestration, replica statistics, and CSV/JSON output.

Configs are flat key-value text files with dotted section names
(`quadrature.order = 200`) or equivalent JSON.  A sweep is a base
configuration plus one named axis with a list of values; built-in recipes
bundle the sweep setups used by the standard experiments.  Every run writes
one CSV per measured quantity plus a JSON manifest (config snapshot, seeds,
wall clock, file digests) sufficient to reproduce the outputs byte-for-byte
at any worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .activation import ActivationProfile, BUILTIN_NAMES, TeacherModel, builtin
from .largelr import oracle_risk_experiment, tau_star
from .regress import (
    ck_features,
    ck_predictor,
    deriv_coefficients,
    linear_ridge_risk,
    ntk_equiv_risk,
    optimal_linear_ridge,
    ridge_fit,
    risk_mc,
)
from .simulate import (
    ExperimentConfig,
    init_network,
    multi_step,
    sample_dataset,
    stream,
)
from .spectra import (
    bbp_predict,
    ck_spike_check,
    mp_density,
    spectral_summary,
    theta_params,
)
from .theory import delta, solve_m1_m2, tau_table

__all__ = [
    "ConfigError",
    "NumericalError",
    "RunSettings",
    "SweepSpec",
    "RunManifest",
    "RECIPES",
    "parse_config",
    "validate_config",
    "build_spec",
    "run",
    "write_csv",
    "format_float",
    "replica_stats",
]

RECIPES = (
    "fig1", "fig3", "fig4", "fig5a", "fig5b", "fig5c", "fig6", "fig7a",
    "theory-grid", "taustar-table", "custom",
)

_CONFIG_KEYS = {
    "n": int, "d": int, "N": int, "eta_bar": float, "alpha": float,
    "lam": float, "seed": int, "replicas": int, "n_test": int,
    "sigma": str, "sigma_star": str, "sigma_eps": float, "steps": int,
    "recipe": str, "quadrature.order": int,
}

_DEFAULTS = {
    "sigma": "tanh", "sigma_star": "tanh", "sigma_eps": 0.0,
    "steps": 1, "recipe": "custom", "quadrature.order": 200,
}


class ConfigError(ValueError):
    """Invalid configuration file or keys (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """A solver or linear-algebra step failed (CLI exit code 3)."""


@dataclass(frozen=True)
class RunSettings:
    """Normalized configuration: problem sizes plus model choices."""

    cfg: ExperimentConfig
    sigma: str
    sigma_star: str
    sigma_eps: float
    steps: int
    recipe: str
    order: int

    def activation(self) -> ActivationProfile:
        # the decomposition constants assume E[sigma] = 0: always center
        return builtin(self.sigma, order=self.order, centered=True)

    def teacher(self, replica_independent_seed: int | None = None) -> TeacherModel:
        act = builtin(self.sigma_star, order=self.order, centered=True)
        d = self.cfg.d
        beta = np.zeros(d)
        beta[0] = 1.0  # rotation invariance: the first axis is fully general
        return TeacherModel.build(beta, act, sigma_eps=self.sigma_eps, order=self.order)

    def as_dict(self) -> dict:
        out = dict(asdict(self.cfg))
        out.update(sigma=self.sigma, sigma_star=self.sigma_star,
                   sigma_eps=self.sigma_eps, steps=self.steps,
                   recipe=self.recipe, **{"quadrature.order": self.order})
        return out


@dataclass(frozen=True)
class SweepSpec:
    """Base settings plus one swept parameter."""

    base: RunSettings
    axis: str
    values: tuple
    recipe: str = "custom"

    def __post_init__(self) -> None:
        if not self.values:
            raise ConfigError("sweep value list must be nonempty")
        if self.axis not in _CONFIG_KEYS:
            raise ConfigError(f"unknown sweep axis {self.axis!r}")

    def points(self) -> list[RunSettings]:
        out = []
        for v in self.values:
            out.append(_apply(self.base, {self.axis: v}))
        return out


@dataclass(frozen=True)
class RunManifest:
    config: dict
    recipe: str
    version: str
    seeds: list[int]
    wall_clock_s: float
    digests: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def format_float(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(format_float(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def replica_stats(values: np.ndarray) -> dict:
    """Mean, sample std, std-err, and median across replicas."""
    v = np.asarray(values, dtype=float)
    k = v.shape[0]
    return {
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if k > 1 else 0.0,
        "std_err": float(v.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
        "median": float(np.median(v)),
    }


# ---------------------------------------------------------------------------
# configuration parsing


def _coerce(key: str, raw, source: str):
    typ = _CONFIG_KEYS[key]
    try:
        if typ is int:
            v = int(raw)
        elif typ is float:
            v = float(raw)
        else:
            v = str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"key {key!r} in {source}: cannot parse {raw!r} as {typ.__name__}")
    return v


def parse_config(path: str | Path) -> dict:
    """Read a flat key-value (or JSON) config file into a raw dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"JSON config must be an object, got {type(raw).__name__}")
        flat = {}
        for k, v in raw.items():
            if isinstance(v, dict):  # one level of nesting maps to dotted keys
                flat.update({f"{k}.{k2}": v2 for k2, v2 in v.items()})
            else:
                flat[k] = v
        return flat
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def normalize_config(raw: dict, source: str = "<config>") -> RunSettings:
    """Validate raw key-value pairs against the schema; unknown keys are
    reported exhaustively."""
    unknown = sorted(set(raw) - set(_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys in {source}: {', '.join(unknown)}")
    vals = dict(_DEFAULTS)
    vals.update({k: _coerce(k, v, source) for k, v in raw.items()})
    missing = sorted(k for k in ("n", "d", "N") if k not in vals)
    if missing:
        raise ConfigError(f"missing required keys in {source}: {', '.join(missing)}")
    for key in ("sigma", "sigma_star"):
        if vals[key] not in BUILTIN_NAMES:
            raise ConfigError(
                f"key {key!r} in {source}: unknown activation {vals[key]!r} "
                f"(available: {', '.join(BUILTIN_NAMES)})"
            )
    if vals.get("recipe", "custom") not in RECIPES:
        raise ConfigError(f"unknown recipe {vals['recipe']!r} (available: {', '.join(RECIPES)})")
    cfg_kwargs = {k: vals[k] for k in
                  ("n", "d", "N", "eta_bar", "alpha", "lam", "seed", "replicas", "n_test")
                  if k in vals}
    try:
        cfg = ExperimentConfig(**cfg_kwargs)
    except ValueError as e:
        raise ConfigError(f"invalid config in {source}: {e}") from None
    if not 1 <= vals["steps"] <= 100:
        raise ConfigError(f"steps must lie in [1, 100], got {vals['steps']}")
    return RunSettings(
        cfg=cfg, sigma=vals["sigma"], sigma_star=vals["sigma_star"],
        sigma_eps=vals["sigma_eps"], steps=vals["steps"], recipe=vals["recipe"],
        order=vals["quadrature.order"],
    )


def validate_config(path: str | Path) -> RunSettings:
    """Parse and normalize a config file (defaults filled in)."""
    return normalize_config(parse_config(path), source=str(path))


def _apply(settings: RunSettings, overrides: dict) -> RunSettings:
    cfg_fields = {"n", "d", "N", "eta_bar", "alpha", "lam", "seed", "replicas", "n_test"}
    cfg_over = {k: v for k, v in overrides.items() if k in cfg_fields}
    other = {k: v for k, v in overrides.items() if k not in cfg_fields}
    cfg = replace(settings.cfg, **cfg_over) if cfg_over else settings.cfg
    rename = {"quadrature.order": "order"}
    other = {rename.get(k, k): v for k, v in other.items()}
    return replace(settings, cfg=cfg, **other)


# ---------------------------------------------------------------------------
# per-replica measurements


def spike_replica(settings: RunSettings, replica: int) -> dict:
    """One replica of the first-layer spectrum after one step, with the
    closed-form spike/overlap prediction."""
    cfg = settings.cfg
    act = settings.activation()
    teacher = settings.teacher()
    data = sample_dataset(cfg, teacher, role="train", replica=replica)
    net0 = init_network(cfg, replica=replica)
    net1 = multi_step(net0, data, act, cfg.eta, settings.steps)
    summary = spectral_summary(net1.W)
    pred = bbp_predict(
        theta_params(cfg.eta, act.mu1, teacher.mu1_star, teacher.mu_bar, cfg.psi1),
        cfg.psi2,
    )
    overlap = float(np.dot(summary.leading_vector, teacher.beta_star) ** 2)
    return {
        "seed": cfg.seed,
        "replica": replica,
        "s1_emp": float(summary.values[0]),
        "s2_emp": float(summary.values[1]),
        "s1_pred": pred.s1_limit,
        "overlap_emp": overlap,
        "overlap_pred": pred.overlap_sq,
        "values": summary.values,
    }


def risk_replica(settings: RunSettings, replica: int) -> dict:
    """Monte Carlo ridge risk before and after the gradient step(s) on one replica."""
    cfg = settings.cfg
    act = settings.activation()
    teacher = settings.teacher()
    data = sample_dataset(cfg, teacher, role="train", replica=replica)
    fresh = sample_dataset(cfg, teacher, role="fresh", replica=replica)
    net = init_network(cfg, replica=replica)
    risks = {}
    for step in range(settings.steps + 1):
        if step > 0:
            net = multi_step(net, data, act, cfg.eta, 1)
        Phi = ck_features(net.W, fresh.X, act)
        fit = ridge_fit(Phi, fresh.y, cfg.lam, N=cfg.N)
        est = risk_mc(
            ck_predictor(net.W, act, fit.a_hat),
            teacher,
            cfg.n_test,
            stream(cfg.seed, replica, "test"),
        )
        risks[step] = est
    return {"replica": replica, "risks": risks}


def ck_ge_replica(settings: RunSettings, replica: int) -> dict:
    """Leading feature-matrix singular values, nonlinear versus Gaussian-equivalent."""
    cfg = settings.cfg
    act = settings.activation()
    teacher = settings.teacher()
    data = sample_dataset(cfg, teacher, role="train", replica=replica)
    net0 = init_network(cfg, replica=replica)
    net1 = multi_step(net0, data, act, cfg.eta, settings.steps)
    fresh = sample_dataset(cfg, teacher, role="fresh", replica=replica)
    report = ck_spike_check(
        net1.W, fresh.X, fresh.y, act, stream(cfg.seed, replica, "ge-noise")
    )
    return {
        "seed": cfg.seed,
        "replica": replica,
        "s1_ck": float(report.s_ck[0]),
        "s1_ge": float(report.s_ge[0]),
        "overlap_ck": report.overlap_ck,
        "overlap_ge": report.overlap_ge,
    }


def theory_row(settings: RunSettings) -> list:
    cfg = settings.cfg
    act = settings.activation()
    teacher = settings.teacher()
    res = delta(cfg.eta, cfg.lam, cfg.psi1, cfg.psi2, act.mu1, act.mu2,
                teacher.mu1_star, teacher.mu_bar, order=400)
    z = cfg.lam * cfg.psi1 / cfg.psi2
    pair = solve_m1_m2(z, cfg.psi1, cfg.psi2, act.mu1, act.mu2)
    taus = tau_table(cfg.eta, cfg.lam, cfg.psi1, cfg.psi2, act.mu1, act.mu2,
                     teacher.mu1_star, teacher.mu_bar, pair=pair)
    return [cfg.eta, cfg.lam, cfg.psi1, cfg.psi2,
            res.delta, res.components[0], res.components[1],
            pair.m1, pair.m2, pair.m1p, pair.m2p, *taus.as_tuple()]


THEORY_HEADER = ["eta", "lambda", "psi1", "psi2", "delta", "delta_c1", "delta_c2",
                 "m1", "m2", "m1p", "m2p"] + [f"tau{i}" for i in range(1, 13)]

RISK_HEADER = ["psi1", "psi2", "eta", "alpha", "lambda", "step",
               "risk_mean", "risk_stderr", "baseline_lin", "baseline_ntk", "kernel_lb"]

SPIKE_HEADER = ["seed", "s1_emp", "s1_pred", "overlap_emp", "overlap_pred"]

HISTOGRAM_HEADER = ["bin_left", "bin_right", "count", "mp_density"]

TAUSTAR_HEADER = ["sigma", "sigma_star", "tau_star", "kappa_star", "achieved"]

LARGELR_HEADER = RISK_HEADER + ["tau_star", "oracle_risk"]


# ---------------------------------------------------------------------------
# recipes


def build_spec(settings: RunSettings, axis: str | None = None,
               values: tuple | None = None) -> SweepSpec:
    """Materialize a SweepSpec from settings, applying the recipe's canonical
    overrides and sweep axis when one is named."""
    recipe = settings.recipe
    if recipe == "custom":
        if axis is not None and values:
            return SweepSpec(base=settings, axis=axis, values=tuple(values), recipe=recipe)
        return SweepSpec(base=settings, axis="seed", values=(settings.cfg.seed,), recipe=recipe)
    if axis is not None and values:
        return SweepSpec(base=settings, axis=axis, values=tuple(values), recipe=recipe)
    presets: dict[str, tuple[dict, str, tuple]] = {
        # large-learning-rate separation: risk versus sample ratio
        "fig1": (dict(sigma="erf", sigma_star="erf", alpha=0.5, eta_bar=1.0),
                 "n", tuple(int(r * settings.cfg.d) for r in (2, 4, 8, 16))),
        # first-layer spectrum and spike after one step
        "fig3": (dict(sigma="tanh", sigma_star="relu", eta_bar=2.0, sigma_eps=0.2),
                 "seed", (settings.cfg.seed,)),
        # nonlinear features versus their Gaussian surrogate
        "fig4": (dict(sigma="softplus", sigma_star="tanh", eta_bar=2.0),
                 "seed", (settings.cfg.seed,)),
        # risk drop versus learning rate / sample ratio / penalty
        "fig5a": (dict(sigma="tanh", sigma_star="softplus", sigma_eps=0.25, lam=1e-4),
                  "eta_bar", (0.5, 1.0, 2.0, 4.0)),
        "fig5b": (dict(sigma="tanh", sigma_star="relu", lam=1e-2),
                  "n", tuple(int(r * settings.cfg.d) for r in (2, 5, 10, 20))),
        "fig5c": (dict(sigma="tanh", sigma_star="softplus", sigma_eps=0.25),
                  "lam", (1e-4, 1e-3, 1e-2, 1e-1)),
        # intermediate learning-rate exponents
        "fig6": (dict(sigma="erf", sigma_star="erf"),
                 "alpha", (0.0, 0.125, 0.25, 0.375, 0.5)),
        # several gradient steps on the same data
        "fig7a": (dict(), "steps", (1, 2, 4)),
        "theory-grid": (dict(), "eta_bar", (0.25, 0.5, 1.0, 2.0, 4.0)),
        "taustar-table": (dict(), "seed", (settings.cfg.seed,)),
    }
    overrides, default_axis, default_values = presets[recipe]
    base = _apply(settings, overrides)
    return SweepSpec(base=base, axis=default_axis, values=default_values, recipe=recipe)


def _pmap(fn, tasks, workers: int):
    """Order-preserving parallel map; output independent of worker count."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))


def _risk_rows(spec: SweepSpec, workers: int) -> list[list]:
    rows = []
    for point in spec.points():
        cfg = point.cfg
        act = point.activation()
        teacher = point.teacher()
        results = _pmap(risk_replica, [(point, r) for r in range(cfg.replicas)], workers)
        b0, b1_sq = deriv_coefficients(act, order=point.order)
        _, lin = optimal_linear_ridge(cfg.psi1, teacher.mu1_star, teacher.mu2_star,
                                      teacher.sigma_eps)
        ntk = ntk_equiv_risk(cfg.lam, cfg.psi1, b0, b1_sq,
                             teacher.mu1_star, teacher.mu2_star, teacher.sigma_eps)
        for step in range(point.steps + 1):
            stats = replica_stats([res["risks"][step].mean for res in results])
            stderr = stats["std_err"] if cfg.replicas > 1 else results[0]["risks"][step].std_err
            rows.append([cfg.psi1, cfg.psi2, cfg.eta, cfg.alpha, cfg.lam, step,
                         stats["mean"], stderr, lin, ntk, teacher.mu2_star**2])
    return rows


def _spike_outputs(spec: SweepSpec, workers: int) -> dict[str, tuple[list, list]]:
    spike_rows, all_values = [], []
    for point in spec.points():
        results = _pmap(spike_replica,
                        [(point, r) for r in range(point.cfg.replicas)], workers)
        for res in results:
            spike_rows.append([res["seed"], res["s1_emp"], res["s1_pred"],
                               res["overlap_emp"], res["overlap_pred"]])
            all_values.append(res["values"])
    values = np.concatenate(all_values)
    counts, edges = np.histogram(values, bins=60)
    psi2 = spec.points()[0].cfg.psi2
    hist_rows = []
    total = values.size
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        center = 0.5 * (lo + hi)
        # singular-value density: s -> 2 s * rho_MP(s^2)
        dens = 2.0 * center * mp_density(center**2, psi2)
        hist_rows.append([lo, hi, int(c), dens])
    return {"spike": (SPIKE_HEADER, spike_rows),
            "histogram": (HISTOGRAM_HEADER, hist_rows)}


def _ck_ge_outputs(spec: SweepSpec, workers: int) -> dict[str, tuple[list, list]]:
    rows = []
    for point in spec.points():
        results = _pmap(ck_ge_replica,
                        [(point, r) for r in range(point.cfg.replicas)], workers)
        rows += [[res["seed"], res["s1_ck"], res["s1_ge"],
                  res["overlap_ck"], res["overlap_ge"]] for res in results]
    header = ["seed", "s1_ck", "s1_ge", "overlap_ck", "overlap_ge"]
    return {"ck_ge": (header, rows)}


def _taustar_outputs() -> dict[str, tuple[list, list]]:
    pairs = [("erf", "erf"), ("tanh", "tanh"), ("softplus", "softplus"),
             ("relu", "softplus")]
    rows = []
    for sigma, sigma_star in pairs:
        act = builtin(sigma, centered=True)
        star = builtin(sigma_star, centered=True)
        res = tau_star(act, star)
        rows.append([sigma, sigma_star, res.tau_star, res.kappa_star, res.achieved])
    return {"taustar": (TAUSTAR_HEADER, rows)}


def _largelr_outputs(spec: SweepSpec, workers: int) -> dict[str, tuple[list, list]]:
    rows = []
    base = spec.points()[0]
    act = base.activation()
    teacher = base.teacher()
    tau = tau_star(act, teacher.sigma_star)
    for point in spec.points():
        cfg = point.cfg
        act = point.activation()
        teacher = point.teacher()
        results = _pmap(
            lambda r: oracle_risk_experiment(cfg, act, teacher, replica=r, tau=tau),
            [(r,) for r in range(cfg.replicas)], workers)
        ridge = replica_stats([res["ridge_risk"].mean for res in results])
        oracle_means = [res["oracle_risk"].mean for res in results
                        if res["oracle_risk"] is not None]
        oracle_mean = replica_stats(oracle_means)["mean"] if oracle_means else float("nan")
        stderr = ridge["std_err"] if cfg.replicas > 1 else results[0]["ridge_risk"].std_err
        rows.append([cfg.psi1, cfg.psi2, cfg.eta_bar * math.sqrt(cfg.N), 0.5,
                     results[0]["lam"], 1, ridge["mean"], stderr, float("nan"),
                     float("nan"), teacher.mu2_star**2, tau.tau_star, oracle_mean])
    return {"largelr": (LARGELR_HEADER, rows)}


def _theory_outputs(spec: SweepSpec) -> dict[str, tuple[list, list]]:
    rows = [theory_row(point) for point in spec.points()]
    return {"theory": (THEORY_HEADER, rows)}


def run(spec: SweepSpec, out_dir: str | Path, workers: int = 1) -> RunManifest:
    """Execute a sweep, write one CSV per measured quantity plus a manifest."""
    t0 = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recipe = spec.recipe
    if recipe == "fig3":
        outputs = _spike_outputs(spec, workers)
    elif recipe == "fig4":
        outputs = _ck_ge_outputs(spec, workers)
    elif recipe == "taustar-table":
        outputs = _taustar_outputs()
    elif recipe == "fig1":
        outputs = _largelr_outputs(spec, workers)
    elif recipe == "theory-grid":
        outputs = _theory_outputs(spec)
    else:  # fig5a/b/c, fig6, fig7a, custom: empirical risk sweeps
        outputs = {"risk": (RISK_HEADER, _risk_rows(spec, workers))}
        if recipe in ("fig5a", "fig5b", "fig5c"):
            outputs.update(_theory_outputs(spec))
    digests = {}
    for name, (header, rows) in outputs.items():
        path = out / f"{name}.csv"
        write_csv(path, header, rows)
        digests[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = RunManifest(
        config=dict(spec.base.as_dict(), axis=spec.axis,
                    values=[format_float(v) for v in spec.values]),
        recipe=recipe,
        version=__version__,
        seeds=[spec.base.cfg.seed + r for r in range(spec.base.cfg.replicas)],
        wall_clock_s=time.monotonic() - t0,
        digests=digests,
    )
    manifest.write(out / "manifest.json")
    return manifest
