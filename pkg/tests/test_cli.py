import csv
import json
import time

import numpy as np
import pytest

from harnack_lab.cli import (
    EXIT_ERROR,
    EXIT_FAIL,
    EXIT_PASS,
    PRESETS,
    list_presets,
    main,
    parse_config,
    preset_text,
    run_experiment,
    worker_count,
)
from harnack_lab.errors import ParseError, ValidationError
from harnack_lab.geometry import ModelKind
from harnack_lab.harnack import Regime

MINIMAL = "experiment = simulate\nmodel = torus\n"


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# --- parsing ---------------------------------------------------------------


def test_minimal_document_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.integrator == "rk4" and cfg.cfl == 0.5 and cfg.T == 20
    assert cfg.model is ModelKind.TORUS and cfg.resolution == 96
    assert cfg.a == 1 and cfg.b == -1 and cfg.p == 2 and cfg.m == 3
    assert cfg.K == 0 and cfg.regime is Regime.DL
    echo = cfg.echo()
    assert echo["model"] == "torus" and echo["regime"] == "DL"


def test_default_resolutions_per_model():
    assert parse_config("experiment = simulate\nmodel = circle").resolution == 256
    assert parse_config("experiment = simulate\nmodel = sphere").resolution == 128


def test_comments_and_whitespace(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# header\n\nexperiment = simulate   # inline\n  model=circle\np = 3\n")
    cfg = parse_config(path)
    assert cfg.model is ModelKind.CIRCLE and cfg.p == 3


@pytest.mark.parametrize("doc,match", [("p = 0.5", "p > 1"), ("b = 1", "b <= 0"), ("a = -1", "a >= 0")])
def test_equation_hypotheses_rejected(doc, match):
    with pytest.raises(ValidationError, match=match):
        parse_config(MINIMAL + doc)


@pytest.mark.parametrize(
    "doc,line,key",
    [
        ("experiment = simulate\nresolution = many\n", 2, "resolution"),
        ("experiment = simulate\ncolour = red\n", 2, "colour"),
        ("experiment = simulate\np = 2\np = 3\n", 3, "p"),
        ("experiment = simulate\njust words\n", 2, None),
        ("experiment = dance\n", 1, "experiment"),
    ],
)
def test_parse_errors_carry_location(doc, line, key):
    with pytest.raises(ParseError) as info:
        parse_config(doc)
    assert info.value.line == line and info.value.key == key
    assert f"line {line}" in str(info.value)


def test_missing_experiment_key():
    with pytest.raises(ParseError, match="experiment"):
        parse_config("model = torus\np = 2\n")


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_dg1_at_threshold_rejected():
    with pytest.raises(ValidationError, match=r"K in \[0, L\(m,p,a\)\)"):
        parse_config(MINIMAL + "regime = DG1\nK = 0.5\n")


def test_regime_hypotheses():
    with pytest.raises(ValidationError, match="DG1"):
        parse_config(MINIMAL + "regime = DG1\np = 1.5\n")
    with pytest.raises(ValidationError, match="DL0"):
        parse_config(MINIMAL + "regime = DL0\n")
    assert parse_config(MINIMAL + "a = 0\n").regime is Regime.DL0


def test_m_must_exceed_dimension():
    with pytest.raises(ValidationError, match="m must exceed"):
        parse_config(MINIMAL + "m = 2\n")


def test_K_auto_from_model():
    cfg = parse_config("experiment = simulate\nmodel = circle\ndrift = sin(theta)\nm = 3\n")
    assert cfg.K == pytest.approx(1.0, abs=1e-12)


def test_K_override_below_model_bound_rejected():
    with pytest.raises(ValidationError, match="below the model"):
        parse_config("experiment = simulate\nmodel = circle\ndrift = sin(theta)\nm = 3\nK = 0.5\n")


def test_K_override_above_model_bound_warns():
    with pytest.warns(UserWarning, match="weaker hypothesis"):
        cfg = parse_config(MINIMAL + "K = 0.1\n")
    assert cfg.K == 0.1 and cfg.warnings


def test_amplitude_must_keep_data_positive():
    with pytest.raises(ValidationError, match="amplitude"):
        parse_config(MINIMAL + "initial_value = 0.5\namplitude = 0.5\n")


def test_initial_file_must_exist(tmp_path):
    with pytest.raises(ValidationError, match="does not exist"):
        parse_config(MINIMAL + f"initial = file\ninitial_file = {tmp_path / 'nope.csv'}\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ValidationError):
        parse_config(tmp_path / "absent.cfg")


def test_overrides_apply():
    cfg = parse_config(MINIMAL, {"resolution": 32, "seed": 7})
    assert cfg.resolution == 32 and cfg.seed == 7


# --- running ---------------------------------------------------------------


def test_simulate_with_initial_file(tmp_path):
    values = 0.5 + 0.1 * np.sin(np.linspace(0, 2 * np.pi, 32, endpoint=False))
    np.savetxt(tmp_path / "u0.csv", values, delimiter=",")
    doc = "experiment = simulate\nmodel = circle\nresolution = 32\nT = 0.5\ninitial = file\ninitial_file = u0.csv\n"
    (tmp_path / "run.cfg").write_text(doc)
    cfg = parse_config(tmp_path / "run.cfg")
    rep = run_experiment(cfg, tmp_path / "out")
    assert rep.exit_code == EXIT_PASS
    rows = read_csv(tmp_path / "out" / "trajectory.csv")
    assert float(rows[0]["u"]) == pytest.approx(values[0])
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["passed"] and "trajectory.csv" in report["outputs"]


def test_lemma_check_at_equilibrium(tmp_path):
    cfg = parse_config("experiment = lemma-check\nmodel = torus\nresolution = 16\ninitial = constant\ninitial_value = 1\n")
    rep = run_experiment(cfg, tmp_path)
    assert rep.exit_code == EXIT_PASS
    assert rep.checks[0]["name"] == "homogeneous_residual" and rep.checks[0]["statistic"] == 0


def test_sweep_flags_out_of_regime_rows(tmp_path):
    cfg = parse_config("experiment = sweep\nmodel = circle\nm = 3\np = 2\na = 1\nsweep_points = 13\n")
    rep = run_experiment(cfg, tmp_path)
    assert rep.exit_code == EXIT_PASS
    rows = read_csv(tmp_path / "region.csv")
    assert list(rows[0]) == ["m", "p", "a", "K", "regime", "gamma", "delta", "margin1", "margin2", "margin3", "margin4", "feasible", "in_regime"]
    L = rep.fitted["L"]
    Ks = sorted({float(r["K"]) for r in rows})
    assert Ks[0] == 0 and Ks[-1] == pytest.approx(1.2 * L)
    for r in rows:
        if r["regime"] == "DG1":
            assert (r["in_regime"] == "true") == (float(r["K"]) < L)
            assert (r["feasible"] == "true") == (float(r["K"]) < L)
        else:
            assert r["feasible"] == "true"


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    doc = "experiment = sweep\nmodel = circle\nm = 3\np = 2.5\na = 1\nsweep_points = 4\nworkers = 2\n"
    monkeypatch.setenv("HARNACK_LAB_THREADS", "1")
    run_experiment(parse_config(doc), tmp_path / "serial")
    monkeypatch.setenv("HARNACK_LAB_THREADS", "2")
    run_experiment(parse_config(doc), tmp_path / "pool")
    assert (tmp_path / "serial" / "region.csv").read_bytes() == (tmp_path / "pool" / "region.csv").read_bytes()


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("HARNACK_LAB_THREADS", "3")
    assert worker_count(8) == 3 and worker_count(2) == 2
    monkeypatch.delenv("HARNACK_LAB_THREADS")
    assert worker_count(8) == 8


def test_feasibility_failure_gives_exit_one(tmp_path):
    cfg = parse_config("experiment = feasibility\nmodel = circle\nm = 2\ngamma = 0.9\ndelta = -5\n")
    rep = run_experiment(cfg, tmp_path)
    assert rep.exit_code == EXIT_FAIL
    assert read_csv(tmp_path / "region.csv")[0]["feasible"] == "false"


def test_runtime_error_gives_exit_two(tmp_path):
    # the radius is too large for the circle's injectivity scale
    cfg = parse_config("experiment = cutoff-check\nmodel = circle\nm = 2\nR = 3\n")
    rep = run_experiment(cfg, tmp_path)
    assert rep.exit_code == EXIT_ERROR and "RadiusTooLarge" in rep.error


def test_outputs_are_deterministic(tmp_path):
    doc = "experiment = verify-harnack\nmodel = circle\nresolution = 32\nT = 1\nensemble = 3\nseed = 11\n"
    for name in ("one", "two"):
        run_experiment(parse_config(doc), tmp_path / name)
    for f in ("harnack_series.csv", "trajectory.csv"):
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()


def test_seed_changes_ensemble(tmp_path):
    base = "experiment = verify-harnack\nmodel = circle\nresolution = 32\nT = 1\nensemble = 3\n"
    a = run_experiment(parse_config(base + "seed = 1\n"), tmp_path / "a")
    b = run_experiment(parse_config(base + "seed = 2\n"), tmp_path / "b")
    assert a.fitted["C_fit"] != b.fitted["C_fit"] or (tmp_path / "a" / "harnack_series.csv").read_bytes() != (
        tmp_path / "b" / "harnack_series.csv"
    ).read_bytes()


# --- command line ----------------------------------------------------------


def test_presets_catalog(capsys):
    assert len(list_presets()) >= 10
    assert main(["presets"]) == EXIT_PASS
    out = capsys.readouterr().out
    for name in (
        "thm-1-1-harnack",
        "cor-1-2-trapping",
        "thm-1-3-a0",
        "cor-1-6-decay",
        "thm-1-7-dg",
        "cor-1-9-convergence",
        "cor-1-10-rate",
        "cor-1-11-elliptic",
        "lemma-2-1-check",
        "lemma-2-2-cutoff",
    ):
        assert name in out


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_parse(name):
    cfg = parse_config(preset_text(name))
    assert cfg.experiment


def test_main_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("experiment = simulate\np = 0.5\n")
    assert main(["simulate", "--config", str(bad)]) == EXIT_ERROR
    assert "p > 1" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == EXIT_ERROR
    assert main(["feasibility", "--preset", "lemma-2-2-cutoff"]) == EXIT_ERROR
    good = tmp_path / "good.cfg"
    good.write_text("experiment = feasibility\nmodel = circle\nm = 3\np = 2.5\nregime = DG1\n")
    assert main(["feasibility", "--config", str(good), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_PASS
    assert (tmp_path / "o" / "report.json").exists()


def test_main_resolution_and_seed_flags(tmp_path):
    code = main(["cutoff-check", "--preset", "lemma-2-2-cutoff", "--resolution", "128", "--seed", "3", "--out", str(tmp_path), "--quiet"])
    assert code == EXIT_PASS
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["resolution"] == 128 and report["config"]["seed"] == 3


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_runs_under_a_minute(name, tmp_path):
    start = time.perf_counter()
    code = main(["run", "--preset", name, "--out", str(tmp_path), "--quiet"])
    elapsed = time.perf_counter() - start
    assert code == EXIT_PASS
    assert elapsed < 60
    report = json.loads((tmp_path / "report.json").read_text())
    if report["experiment"] == "verify-harnack":
        assert report["fitted"]["C_fit"] >= 0
