"""Config parsing, sweep construction, CSV/manifest output, and determinism."""

import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steplab.harness import (
    ConfigError,
    RECIPES,
    SweepSpec,
    build_spec,
    format_float,
    normalize_config,
    parse_config,
    replica_stats,
    run,
    validate_config,
    write_csv,
)

MINIMAL = {"n": 128, "d": 64, "N": 96}


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_key_value_config_with_comments(tmp_path):
    path = _write(tmp_path, """
# experiment sizes
n = 128
d = 64          # inline comment
N = 96
quadrature.order = 120
sigma = erf
""")
    raw = parse_config(path)
    assert raw == {"n": "128", "d": "64", "N": "96",
                   "quadrature.order": "120", "sigma": "erf"}


def test_parse_json_config_with_nested_section(tmp_path):
    path = _write(tmp_path, json.dumps(
        {"n": 128, "d": 64, "N": 96, "quadrature": {"order": 120}}
    ))
    raw = parse_config(path)
    assert raw["quadrature.order"] == 120


def test_parse_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "absent.cfg")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(_write(tmp_path, "{broken", "bad.json"))
    # a JSON array does not start with "{" and falls through to the
    # key=value parser, which rejects it line by line
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config(_write(tmp_path, "[1, 2]", "list.json"))
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config(_write(tmp_path, "just words\n", "bad.cfg"))


def test_normalize_config_defaults_and_types():
    settings_obj = normalize_config(dict(MINIMAL, eta_bar="2.5", seed="7"))
    assert settings_obj.cfg.n == 128 and settings_obj.cfg.eta_bar == 2.5
    assert settings_obj.cfg.seed == 7
    assert settings_obj.sigma == "tanh" and settings_obj.steps == 1
    assert settings_obj.order == 200 and settings_obj.recipe == "custom"


def test_normalize_config_reports_all_unknown_keys():
    with pytest.raises(ConfigError) as err:
        normalize_config(dict(MINIMAL, bogus=1, wrong=2))
    assert "bogus" in str(err.value) and "wrong" in str(err.value)


def test_normalize_config_missing_and_invalid():
    with pytest.raises(ConfigError, match="missing required keys.*N.*n"):
        normalize_config({"d": 64})
    with pytest.raises(ConfigError, match="unknown activation"):
        normalize_config(dict(MINIMAL, sigma="swish"))
    with pytest.raises(ConfigError, match="unknown recipe"):
        normalize_config(dict(MINIMAL, recipe="fig9"))
    with pytest.raises(ConfigError, match="cannot parse"):
        normalize_config(dict(MINIMAL, n="many"))
    with pytest.raises(ConfigError, match="invalid config"):
        normalize_config(dict(MINIMAL, alpha=0.9))
    with pytest.raises(ConfigError, match="steps"):
        normalize_config(dict(MINIMAL, steps=0))


def test_validate_config_roundtrip(tmp_path):
    path = _write(tmp_path, "n = 128\nd = 64\nN = 96\nsigma_star = erf\n")
    settings_obj = validate_config(path)
    d = settings_obj.as_dict()
    assert d["sigma_star"] == "erf" and d["quadrature.order"] == 200
    # the normalized dict re-validates to the same settings
    assert normalize_config(d) == settings_obj


@settings(max_examples=50, deadline=None)
@given(x=st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_round_trips_doubles(x):
    assert float(format_float(x)) == x


def test_format_float_integers_and_bools():
    assert format_float(True) == "True"
    assert format_float(np.int64(7)) == "7"
    assert format_float(0.1) == "0.10000000000000001"


def test_write_csv_layout(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [[1, 0.5], [2, 1.0 / 3.0]])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert lines[1] == "1,0.5"
    assert float(lines[2].split(",")[1]) == 1.0 / 3.0


def test_replica_stats_reference_values():
    stats = replica_stats([1.0, 2.0, 3.0, 4.0])
    assert stats["mean"] == pytest.approx(2.5)
    assert stats["std"] == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    assert stats["std_err"] == pytest.approx(stats["std"] / 2.0)
    assert stats["median"] == pytest.approx(2.5)
    single = replica_stats([5.0])
    assert single["std"] == 0.0 and single["std_err"] == 0.0


def test_sweep_spec_points_and_validation():
    base = normalize_config(MINIMAL)
    spec = SweepSpec(base=base, axis="eta_bar", values=(0.5, 2.0))
    etas = [p.cfg.eta_bar for p in spec.points()]
    assert etas == [0.5, 2.0]
    with pytest.raises(ConfigError, match="nonempty"):
        SweepSpec(base=base, axis="eta_bar", values=())
    with pytest.raises(ConfigError, match="unknown sweep axis"):
        SweepSpec(base=base, axis="banana", values=(1,))


@pytest.mark.parametrize("recipe", [r for r in RECIPES if r != "custom"])
def test_build_spec_recipes_produce_valid_sweeps(recipe):
    base = normalize_config(dict(MINIMAL, recipe=recipe))
    spec = build_spec(base)
    assert spec.recipe == recipe
    assert len(spec.points()) >= 1
    for point in spec.points():
        assert point.cfg.n > 0 and point.cfg.d > 0


def test_build_spec_custom_axis_override():
    base = normalize_config(MINIMAL)
    spec = build_spec(base, axis="lam", values=(1e-3, 1e-2))
    assert spec.axis == "lam" and len(spec.points()) == 2


def test_run_writes_csv_and_manifest_with_matching_digests(tmp_path):
    base = normalize_config(dict(MINIMAL, replicas=2, n_test=512))
    spec = SweepSpec(base=base, axis="seed", values=(0,))
    manifest = run(spec, tmp_path / "out")
    risk = tmp_path / "out" / "risk.csv"
    assert risk.exists()
    assert manifest.digests["risk.csv"] == hashlib.sha256(risk.read_bytes()).hexdigest()
    loaded = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert loaded["digests"] == manifest.digests
    assert loaded["recipe"] == "custom"
    header = risk.read_text().splitlines()[0].split(",")
    assert header[:6] == ["psi1", "psi2", "eta", "alpha", "lambda", "step"]


def test_run_output_is_worker_count_invariant(tmp_path):
    base = normalize_config(dict(MINIMAL, replicas=4, n_test=256))
    spec = SweepSpec(base=base, axis="eta_bar", values=(0.5, 1.0))
    one = run(spec, tmp_path / "w1", workers=1)
    eight = run(spec, tmp_path / "w8", workers=8)
    assert one.digests == eight.digests
    assert (tmp_path / "w1" / "risk.csv").read_bytes() == \
        (tmp_path / "w8" / "risk.csv").read_bytes()


def test_run_theory_grid_recipe(tmp_path):
    base = normalize_config(dict(MINIMAL, recipe="theory-grid", lam=1e-3))
    spec = build_spec(base)
    run(spec, tmp_path / "out")
    lines = (tmp_path / "out" / "theory.csv").read_text().splitlines()
    assert lines[0].startswith("eta,lambda,psi1,psi2,delta")
    assert len(lines) == 1 + len(spec.values)
    deltas = [float(line.split(",")[4]) for line in lines[1:]]
    assert all(v >= 0.0 for v in deltas)
