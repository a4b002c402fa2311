import json
import os

import pytest

from fockga import search
from fockga.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, ENV_RUN_DIR, ENV_WORKERS, main
from fockga.fitness import lossy_squeezed_vacuum_qfi_scaled
from fockga.report import read_tsv

from conftest import circuit_path

TINY = """\
seed: 2
toolbox:
  preset: tool1
search:
  preset: tool1
  populations: [60, 20, 12]
  generations: [1, 2, 1]
  elite_count: 2
  tournament_size: 3
  truncations: [15, 20]
  adaptive_start: 20
limits:
  t_max: 60
  m_ops: 2
"""

SWEEP = """\
seed: 1
toolbox:
  preset: sv_pair
fitness:
  kind: MixedQfiScaled
search:
  populations: [40, 12, 8]
  generations: [1, 1, 1]
  elite_count: 2
  tournament_size: 3
  truncations: [20, 30]
  adaptive_start: 20
limits:
  t_max: 40
  m_ops: 1
sweep:
  gammas: [0.1, 0.2]
  apply_to: output
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return str(path)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv(ENV_RUN_DIR, raising=False)
    monkeypatch.delenv(ENV_WORKERS, raising=False)


def _load(run_dir):
    with open(os.path.join(run_dir, "report.json")) as fh:
        return json.load(fh)


def _without_runtime(run_dir):
    d = _load(run_dir)
    d.pop("runtime")
    with open(os.path.join(run_dir, "report.txt")) as fh:
        text = [ln for ln in fh if not ln.startswith("timing")]
    return d, text


def test_simulate_prints_and_writes_a_report(tmp_path, capsys):
    out = str(tmp_path / "sim")
    assert main(["simulate", circuit_path("coherent"), "--out", out]) == EXIT_OK
    text = capsys.readouterr().out
    assert "heralding probability  100.0000 %" in text
    d = _load(out)
    assert d["format"] == "fockga-report" and d["kind"] == "simulate"
    assert d["result"]["nbar"] == pytest.approx(4.0, abs=1e-6)
    assert set(d["provenance"]) >= {"code_version", "config_hash", "seed", "kernel_backend"}
    cols, rows = read_tsv(os.path.join(out, "number_distribution.tsv"))
    assert cols == ["n", "probability", "log10_probability"]
    with open(os.path.join(out, "number_distribution.tsv")) as fh:
        assert fh.readline().startswith("# fockga-plot v1:")


def test_simulate_impossible_herald_is_not_an_error(tmp_path, capsys):
    path = tmp_path / "c.circuit"
    path.write_text("input: |0, 0>\nPOVM: |n=3><n=3|\n")
    assert main(["simulate", str(path), "--fixed", "--t-max", "8"]) == EXIT_OK
    assert "heralding impossible" in capsys.readouterr().out


def test_bad_circuit_file_exits_with_a_located_error(tmp_path, capsys):
    path = tmp_path / "bad.circuit"
    path.write_text("input: |0, 0>\nO1: Q_1(2)\nPOVM: I\n")
    assert main(["simulate", str(path)]) == EXIT_CONFIG
    assert f"{path}:2:" in capsys.readouterr().err
    assert main(["simulate", str(tmp_path / "missing.circuit")]) == EXIT_CONFIG


def test_config_errors_exit_2_with_line_and_column(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("seed: 1\nsearch:\n  popsize: 10\n")
    assert main(["search", "--config", str(path), "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert f"{path}:3:3: unknown key 'search.popsize'" in capsys.readouterr().err


def test_missing_required_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["search"])
    assert err.value.code == 2


def test_evaluate_qfi_reports_the_squeezed_vacuum_baseline(capsys):
    assert main(["evaluate", circuit_path("coherent"), "--fitness", "PureQfiScaled"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "fitness PureQfiScaled = 4" in text
    assert "squeezed vacuum at equal n-bar: 40" in text


def test_evaluate_bmse_reports_improvement_factors(tmp_path):
    out = str(tmp_path / "ev")
    code = main(["evaluate", circuit_path("bmse_mu1"), "--fitness", "BmseSingleShotOptimal",
                 "--t-max", "40", "--out", out])
    assert code == EXIT_OK
    d = _load(out)
    value = d["fitness"]["value"]
    refs = d["baseline"]["references"]
    assert set(refs) == {"CoherentVacuumBS", "TwoSqueezedVac"}
    for k, r in refs.items():
        assert d["baseline"]["improvement"][k] == pytest.approx((r["value"] - value) / r["value"])


def test_evaluate_undefined_fitness_is_an_input_error(capsys):
    code = main(["evaluate", circuit_path("vacuum"), "--fitness", "PureQfiScaled", "--t-max", "10"])
    assert code == EXIT_CONFIG
    assert "fitness undefined" in capsys.readouterr().err


def test_search_writes_reports_and_is_independent_of_workers(tiny, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["search", "--config", tiny, "--out", a, "--workers", "1"]) == EXIT_OK
    assert main(["search", "--config", tiny, "--out", b, "--workers", "2"]) == EXIT_OK
    da, ta = _without_runtime(a)
    db, tb = _without_runtime(b)
    assert da == db and ta == tb
    assert _load(b)["runtime"]["workers"] == 2
    for name in ("report.txt", "report.json", "trace.tsv", "number_distribution.tsv",
                 "checkpoint.json", "config.yaml"):
        assert os.path.exists(os.path.join(a, name))
    d = _load(a)
    assert d["genome"] and d["trace"][-1]["stage"] == 3
    assert d["evaluations"]["total"] == 60 + 20 + 2 * 18 + 12 + 10
    assert d["baseline"]["ratio"] == pytest.approx(
        d["fitness"]["value"] / (8 * (d["result"]["nbar"] + 1)), rel=1e-9)


def test_environment_overrides(tiny, tmp_path, monkeypatch):
    run_dir = str(tmp_path / "env_run")
    monkeypatch.setenv(ENV_RUN_DIR, run_dir)
    monkeypatch.setenv(ENV_WORKERS, "2")
    assert main(["search", "--config", tiny]) == EXIT_OK
    assert _load(run_dir)["runtime"] == {**_load(run_dir)["runtime"], "run_dir": run_dir, "workers": 2}
    # flags win over the environment
    flagged = str(tmp_path / "flag_run")
    assert main(["search", "--config", tiny, "--out", flagged, "--workers", "1"]) == EXIT_OK
    assert _load(flagged)["runtime"]["workers"] == 1
    monkeypatch.setenv(ENV_WORKERS, "many")
    assert main(["search", "--config", tiny]) == EXIT_CONFIG


def test_seed_and_t_max_flags_reach_the_config(tiny, tmp_path):
    out = str(tmp_path / "s")
    assert main(["search", "--config", tiny, "--out", out, "--seed", "7", "--t-max", "18"]) == EXIT_OK
    d = _load(out)
    assert d["provenance"]["seed"] == 7
    assert d["config"]["limits"]["t_max"] == 18
    assert d["config"]["search"]["truncations"] == [15, 18]


def test_ctrl_c_flushes_a_checkpoint_and_the_rerun_resumes(tiny, tmp_path, monkeypatch, capsys):
    reference = str(tmp_path / "ref")
    assert main(["search", "--config", tiny, "--out", reference]) == EXIT_OK
    run = str(tmp_path / "run")
    real = search._trace_row

    def interrupt(stage, generation, population, evaluations):
        if stage == 2 and generation == 2:
            raise KeyboardInterrupt
        return real(stage, generation, population, evaluations)

    monkeypatch.setattr(search, "_trace_row", interrupt)
    assert main(["search", "--config", tiny, "--out", run]) == EXIT_RUNTIME
    assert "checkpoint flushed" in capsys.readouterr().err
    with open(os.path.join(run, "checkpoint.json")) as fh:
        assert json.load(fh)["stages"][-1]["generation"] == 1
    assert not os.path.exists(os.path.join(run, "report.json"))
    monkeypatch.setattr(search, "_trace_row", real)
    assert main(["search", "--config", tiny, "--out", run]) == EXIT_OK
    assert _without_runtime(run) == _without_runtime(reference)


def test_foreign_checkpoint_is_a_runtime_failure(tiny, tmp_path, capsys):
    out = str(tmp_path / "r")
    assert main(["search", "--config", tiny, "--out", out]) == EXIT_OK
    assert main(["search", "--config", tiny, "--out", out, "--seed", "9"]) == EXIT_RUNTIME
    assert "different configuration" in capsys.readouterr().err
    assert main(["search", "--config", tiny, "--out", out, "--seed", "9", "--fresh"]) == EXIT_OK


def test_sweep_and_report(tmp_path, capsys):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(SWEEP)
    root = str(tmp_path / "sweep")
    assert main(["sweep", "--config", str(cfg), "--out", root]) == EXIT_OK
    for g in ("0.1", "0.2"):
        d = _load(os.path.join(root, f"gamma_{g}"))
        assert d["config"]["loss"] == {"gamma_out": float(g), "gamma_det": 0.0}
        assert d["baseline"]["squeezed_vacuum"] == pytest.approx(
            lossy_squeezed_vacuum_qfi_scaled(d["result"]["nbar"], float(g)), rel=1e-6)
    cols, rows = read_tsv(os.path.join(root, "loss_sweep.tsv"))
    assert cols == ["gamma", "transmission", "F_over_nbar", "squeezed_vacuum", "herald_percent", "nbar"]
    assert [float(r[0]) for r in rows] == [0.1, 0.2]
    capsys.readouterr()
    assert main(["report", root]) == EXIT_OK
    text = capsys.readouterr().out
    assert "gamma_0.1" in text and "2 report(s)" in text
    with open(os.path.join(root, "summary.json")) as fh:
        assert len(json.load(fh)["reports"]) == 2


def test_sweep_without_gammas_is_a_config_error(tiny, tmp_path):
    assert main(["sweep", "--config", tiny, "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_report_needs_an_existing_run(tmp_path):
    assert main(["report", str(tmp_path / "nowhere")]) == EXIT_CONFIG
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
