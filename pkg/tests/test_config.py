import math

import pytest

from qtraj.config import ConfigError, load_config, parse_config

BASE = "mode = average\nn_traj = 10\nmaster_seed = 1\n"


def test_preset_fills_drive_and_dephasing():
    cfg = parse_config(BASE + "preset = fig2a\n", env={})
    assert cfg.params.omega / (2 * math.pi) == pytest.approx(0.5)
    assert cfg.params.gamma_d == pytest.approx(0.2)
    assert cfg.params.eta_f == 0.14 and cfg.params.eta_d == 0.34


def test_file_values_override_the_preset():
    cfg = parse_config(BASE + "preset = fig2a\ngamma_d_per_us = 0.5\n", env={})
    assert cfg.params.gamma_d == 0.5


def test_out_of_range_efficiency_names_the_key():
    with pytest.raises(ConfigError) as err:
        parse_config("eta_f = 1.5\n", env={})
    assert err.value.key == "eta_f" and err.value.line == 1
    assert "eta_f" in str(err.value) and "[0, 1]" in str(err.value)


def test_empty_file_lists_required_keys():
    with pytest.raises(ConfigError) as err:
        parse_config("# nothing here\n\n", env={})
    for key in ("mode", "n_traj", "master_seed", "rabi_per_us", "gamma_d_per_us"):
        assert key in str(err.value)


@pytest.mark.parametrize("text, line, key", [
    (BASE + "preset = fig2a\nspeed = 3\n", 5, "speed"),
    (BASE + "preset = fig2a\nn_traj = 4\n", 5, "n_traj"),
    (BASE + "rabi_per_us = fast\n", 4, "rabi_per_us"),
    (BASE + "preset = fig2a\nsubset = uw\n", 5, "subset"),
    (BASE + "preset = fig2a\nworkers = 0\n", 5, "workers"),
    ("mode = average\nn_traj = 10\nmaster_seed = 1\npreset = fig2a\neta_d\n", 5, None),
])
def test_errors_carry_line_numbers(text, line, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text, env={})
    assert err.value.line == line
    assert err.value.key == key


def test_invalid_physics_is_rejected_before_running():
    with pytest.raises(ConfigError):
        parse_config(BASE + "preset = fig2a\ndt_int_us = 0.03\n", env={})
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("average", "histogram") + "preset = zeno\ntaus_us = 25\n", env={})


def test_environment_and_override_precedence():
    text = BASE + "preset = fig2a\neta_d = 0.3\n"
    cfg = parse_config(text, env={"QTRAJ_ETA_D": "0.4", "QTRAJ_N_TRAJ": "1e3"})
    assert cfg.params.eta_d == 0.4 and cfg.n_traj == 1000
    cfg = parse_config(text, env={"QTRAJ_ETA_D": "0.4"}, overrides={"eta_d": 0.5, "master_seed": 9})
    assert cfg.params.eta_d == 0.5 and cfg.master_seed == 9
    with pytest.raises(ConfigError):
        parse_config(text, env={"QTRAJ_ETA_D": "2"})


def test_options_and_rebuild():
    cfg = parse_config(BASE + "preset = zeno\ntaus_us = 1, 6.5\nplanes = xz yz\ninitial_state = +x\n", env={})
    assert cfg.option("taus_us") == (1.0, 6.5)
    assert cfg.option("planes") == ("xz", "yz")
    assert cfg.option("records_file") is None
    assert cfg.params.initial_state.matrix()[0, 1] == pytest.approx(0.5)
    with pytest.raises(KeyError):
        cfg.option("colour")
    assert cfg.with_overrides(workers=4).workers == 4


def test_load_config_reports_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.cfg"))
    path = tmp_path / "run.cfg"
    path.write_text(BASE + "preset = fig2b\n")
    assert load_config(str(path), env={}).params.gamma_d == pytest.approx(1 / 0.9)
