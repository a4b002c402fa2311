import glob
import os

import pytest

from fockga.config import ConfigError, RunConfig, dump_config, load_config, parse_config
from fockga.fitness import FitnessKind
from fockga.toolbox import PRESETS, LossModel

from conftest import CONFIGS


def _error(text):
    with pytest.raises(ConfigError) as err:
        parse_config(text, path="run.yaml")
    return err.value


def test_unknown_key_points_at_the_key():
    err = _error("seed: 1\nsearch:\n  populations: [200, 40, 16]\n  colour: red\n")
    assert (err.line, err.column) == (4, 3)
    assert "unknown key 'search.colour'" in str(err)
    assert str(err).startswith("run.yaml:4:3:")


def test_unknown_section_is_rejected():
    err = _error("seed: 1\nsearches: {}\n")
    assert err.line == 2 and "searches" in err.message


def test_bad_value_points_at_the_value():
    err = _error("loss:\n  gamma_out: 1.5\n")
    assert (err.line, err.column) == (2, 14)
    assert "above the maximum" in err.message


def test_list_entry_errors_point_at_the_entry():
    err = _error("search:\n  populations: [200, forty, 16]\n")
    assert (err.line, err.column) == (2, 22)
    assert "search.populations.1" in err.message


def test_type_and_choice_errors():
    assert "integer" in _error("seed: one\n").message
    assert "not one of" in _error("fitness:\n  kind: Qfi\n").message
    assert "true or false" in _error("fitness:\n  refine_grid: 1\n").message
    assert "needs exactly 3" in _error("search:\n  generations: [1, 2]\n").message
    assert "json" in _error("output:\n  formats: [text]\n").message


def test_cross_section_checks_are_located():
    err = _error("search:\n  truncations: [30, 80]\nlimits:\n  t_max: 50\n")
    assert err.line == 4 and "t_max" in err.message
    err = _error("search:\n  populations: [10, 100, 20]\n")
    assert err.line == 2 and "stage-1 population" in err.message


def test_yaml_syntax_errors_carry_a_line():
    err = _error("seed: 1\nsearch: [\n")
    assert err.line is not None


def test_exponent_floats_are_numbers():
    cfg = parse_config("search:\n  stall_tol: 1e-6\nfitness:\n  outcome_tol: 2E-9\n")
    assert cfg.search.stall_tol == 1e-6
    assert cfg.fitness.outcome_tol == 2e-9


def test_defaults_and_presets():
    cfg = parse_config("")
    assert cfg == RunConfig()
    cfg = parse_config("seed: 5\ntoolbox:\n  preset: tool2\nsearch:\n  preset: tool2\n")
    assert cfg.toolbox == PRESETS["tool2"] and cfg.toolbox_preset == "tool2"
    assert cfg.search.seed == 5 and cfg.search.crossover == "single_point"
    custom = parse_config("toolbox:\n  preset: tool1\n  bounds:\n    pnrd_max: 8\n")
    assert custom.toolbox.bounds.pnrd_max == 8 and custom.toolbox_preset is None


def test_round_trip_through_yaml():
    text = ("seed: 3\ntoolbox:\n  preset: full\nloss:\n  gamma_out: 0.1\nfitness:\n"
            "  kind: MixedQfiScaled\nsearch:\n  preset: loss0.1\n  populations: [100, 20, 10]\n"
            "  elite_count: 2\nsweep:\n  gammas: [0.05, 0.1]\nruntime:\n  workers: 2\n")
    cfg = parse_config(text)
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_hash_ignores_run_dir_and_workers():
    a = parse_config("output:\n  run_dir: a\nruntime:\n  workers: 1\n")
    b = parse_config("output:\n  run_dir: b\nruntime:\n  workers: 4\n")
    c = parse_config("seed: 2\n")
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_sweep_loss_targets():
    cfg = parse_config("sweep:\n  gammas: [0.1]\n  apply_to: output\n")
    assert cfg.sweep.loss_for(0.1) == LossModel(0.1, 0.0)
    assert parse_config("sweep:\n  gammas: [0.1]\n").sweep.loss_for(0.2) == LossModel(0.2, 0.2)


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(CONFIGS, "*.yaml"))))
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert parse_config(dump_config(cfg)) == cfg


def test_shipped_bmse_config_uses_the_single_shot_fitness():
    cfg = load_config(os.path.join(CONFIGS, "bmse_single_shot.yaml"))
    assert cfg.fitness.kind is FitnessKind.BMSE_SINGLE_SHOT_OPTIMAL


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "absent.yaml"))


def test_herald_minimum_is_a_fitness_key():
    assert parse_config("fitness:\n  herald_min: 0.05\n").fitness.herald_min == 0.05
    assert "above the maximum" in _error("fitness:\n  herald_min: 2\n").message
