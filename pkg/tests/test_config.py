import json

import pytest

from layerbind.config import DEFAULTS, load_config
from layerbind.errors import ConfigError


def test_defaults():
    cfg = load_config(env={})
    assert cfg == DEFAULTS
    assert cfg["schedule"]["eta1"] == 0.2 and cfg["beta"] == 0.7 and cfg["alpha"]["gamma"] == 0.9


def test_merge_from_text_file_and_dict(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 9, "schedule": {"steps": 30}}))
    for src in (str(p), p.read_text(), {"seed": 9, "schedule": {"steps": 30}}):
        cfg = load_config(src, env={})
        assert cfg["seed"] == 9 and cfg["schedule"]["steps"] == 30 and cfg["schedule"]["eta2"] == 0.7


def test_env_seed_overrides():
    assert load_config({"seed": 1}, env={"LAYERBIND_SEED": "42"})["seed"] == 42
    with pytest.raises(ConfigError):
        load_config({}, env={"LAYERBIND_SEED": "x"})


@pytest.mark.parametrize(
    "bad",
    [
        {"colour": 1},
        {"schedule": {"stepz": 3}},
        {"schedule": {"eta1": 0.9}},
        {"model": {"d_model": 10}},
        {"vital_blocks": "flux"},
        {"vital_blocks": [0, 99]},
        {"vital_blocks": 3},
        {"blend_mode": "fancy"},
        {"blend_mode": {"1": "fancy"}},
        {"beta": 2.0},
        {"seed": -1},
        {"dump": {"every": -1}},
        {"vital_counts": [1]},
        {"profile_steps_frac": 0},
        {"alpha": {"lam": 0}},
    ],
)
def test_rejects(bad):
    with pytest.raises(ConfigError) as exc:
        load_config(bad, env={})
    assert exc.value.exit_code == 6


def test_preset_accepted_on_deep_model():
    cfg = load_config({"vital_blocks": "flux", "model": {"num_blocks": 57, "d_model": 8, "heads": 2}}, env={})
    assert cfg["vital_blocks"] == "flux"


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"), env={})
    with pytest.raises(ConfigError):
        load_config("{oops", env={})
    with pytest.raises(ConfigError):
        load_config("[1, 2]", env={})
