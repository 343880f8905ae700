import math

import numpy as np
import pytest

from rotisar.config import (
    ConfigError, ScenarioConfig, dumps, from_dict, load_config, load_preset, loads,
)


def test_empty_config_gives_defaults():
    cfg = loads("")
    assert cfg == ScenarioConfig()
    assert cfg.rotation.theta == pytest.approx(3 * math.pi / 4)
    assert cfg.snr_db is None and cfg.noise_seed == 1000


def test_desk_preset_parameters():
    cfg = load_preset("desk")
    assert cfg.pulse.carrier == 2.4e9 and cfg.pulse.num_freqs == 64
    assert cfg.geometry.receiver_count == 7
    assert cfg.imaging.grid_size == 32 and cfg.imaging.num_pulses == 400
    assert cfg.pulse.spacing == 0.015


def test_full_preset_parameters():
    cfg = load_preset("paper_full")
    assert cfg.pulse.carrier == 9.6e9
    assert cfg.pulse.bandwidth == pytest.approx(0.5 * 622e6)
    assert cfg.geometry.receiver_count == 15
    assert cfg.geometry.area == 200e3 and cfg.geometry.receiver_height == 15e3
    assert cfg.trajectory.position[2] == 500e3 and cfg.trajectory.velocity[0] == 7600.0
    assert cfg.rotation.omega == pytest.approx(2 * math.pi / 5)
    assert cfg.imaging.num_pulses == 1500
    offsets = np.array(cfg.scene.offsets)
    assert np.allclose(sorted(map(tuple, offsets)),
                       sorted([(0, 0.15), (0, -0.15), (0.06, 0.06), (0.06, -0.06),
                               (-0.06, 0.06), (-0.06, -0.06)]))


def test_receivers_are_deterministic():
    a, b = load_preset("desk").layout(), load_preset("desk").layout()
    assert np.array_equal(a.receivers, b.receivers)
    c = loads("[geometry]\nreceiver_seed = 5\n").layout()
    assert not np.array_equal(a.receivers, c.receivers)


def test_explicit_receivers():
    cfg = loads("[geometry]\nreceivers = [[0, 0, 10], [5, 5, 10.0]]\n")
    assert cfg.layout().num_receivers == 2


def test_round_trip():
    cfg = load_preset("paper_full")
    assert loads(dumps(cfg)) == cfg
    cfg = loads('[noise]\nsnr_db = -3\nseed = 4\n[rotation]\naxis_offset = [0.0, 0.1, 0.0]\n')
    assert loads(dumps(cfg)) == cfg and cfg.snr_db == -3.0 and cfg.noise_seed == 4


@pytest.mark.parametrize("text, field", [
    ("[rotation]\ntheta = 4.0\n", "rotation.theta"),
    ("[rotation]\nthetaa = 1.0\n", "rotation.thetaa"),
    ("[rotations]\ntheta = 1.0\n", "rotations"),
    ("[pulse]\nnum_freqs = 2.5\n", "pulse.num_freqs"),
    ("[pulse]\nsample_rate = 1e9\n", "pulse.sample_rate"),
    ("[noise]\nsnr_db = \"loud\"\n", "noise.snr_db"),
    ("[estimation]\nalpha = 1.5\n", "estimation.alpha"),
    ("[imaging]\nimages = [\"rank-2\"]\n", "imaging.images"),
    ("[imaging]\nrotation_error = [0.1]\n", "imaging.rotation_error"),
    ("[geometry]\nreceivers = [[0, 0, 1], [1, 1, 2]]\n", "geometry.receivers"),
    ("[scene]\noffsets = [[0, 0, 1]]\n", "scene"),
    ("seed = -1\n", "seed"),
])
def test_validation_names_the_field(text, field):
    with pytest.raises(ConfigError, match=field.replace("[", r"\[")):
        loads(text)


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[rotation]\ntheta = \n")
    with pytest.raises(ConfigError, match=r"bad.toml.*line 2"):
        load_config(path)
    with pytest.raises(ConfigError, match="no such file"):
        load_config(tmp_path / "missing.toml")


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_preset("huge")


def test_replace_dotted_paths():
    cfg = load_preset("desk").replace(**{"rotation.theta": 2.0, "imaging.num_pulses": 50})
    assert cfg.rotation.theta == 2.0 and cfg.imaging.num_pulses == 50
    with pytest.raises(ConfigError):
        cfg.replace(**{"rotation.nope": 1})
    with pytest.raises(ConfigError):
        cfg.replace(**{"rotation.theta": 9.0})


def test_derived_objects():
    cfg = load_preset("desk")
    sc = cfg.scenario(10, time_domain=True)
    assert sc.pulse.sample_rate == 8e9 and sc.pulse.window == cfg.estimation.record
    assert cfg.scenario(10).pulse.sample_rate is None
    assert cfg.grid_spacing() == pytest.approx(299_792_458.0 / 2.4e9 / 3)
    assert from_dict(cfg.to_dict()) == cfg
