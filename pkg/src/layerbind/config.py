"""Pipeline configuration and run manifests.

The config file and the manifest written by a run share one JSON schema::

    {
      "seed": 0,
      "model": {"num_blocks": 12, "d_model": 64, "heads": 4, "grid_h": 16, "grid_w": 16,
                "max_text_tokens": 16, "weight_seed": 0, "vocab_size": 1024,
                "mlp_ratio": 2, "max_timestep": 1000.0},
      "schedule": {"steps": 20, "max_timestep": 1000.0, "eta1": 0.2, "eta2": 0.7, "spawn_step": 0},
      "vital_blocks": "auto",            # or "flux" / "sd35" / [0, 3, ...]
      "vital_counts": [2, 3],            # early-mid / late picks for "auto"
      "profile_steps_frac": 0.2,
      "blend_mode": "matted",            # or {"<order>": "direct|soft|matted"}
      "beta": 0.7,
      "nursing": {"enabled": true, "regional_prompting_only": false},
      "alpha": {"gamma": 0.9, "eps": 1e-06, "lam": 4.0, "tol": 0.0001, "max_iters": 200},
      "dump": {"every": 0, "alpha": false, "composite": false},
      "output_dir": "layerbind_out"
    }

A manifest additionally stores the resolved vital block list and the layout
document, so ``run --config manifest.json`` needs nothing else.
"""

import copy
import json
import os
from dataclasses import asdict

from .binding import BLEND_MODES, AlphaParams
from .errors import ConfigError, LayerBindError
from .model import ETA1_PRESETS, VITAL_PRESETS, ModelSpec
from .nursing import NursingConfig
from .sampler import make_schedule

SEED_ENV = "LAYERBIND_SEED"

DEFAULTS = {
    "seed": 0,
    "model": asdict(ModelSpec()),
    "schedule": {"steps": 20, "max_timestep": 1000.0, "eta1": ETA1_PRESETS["flux"], "eta2": 0.7, "spawn_step": 0},
    "vital_blocks": "auto",
    "vital_counts": [2, 3],
    "profile_steps_frac": 0.2,
    "blend_mode": "matted",
    "beta": 0.7,
    "nursing": {"enabled": True, "regional_prompting_only": False},
    "alpha": asdict(AlphaParams()),
    "dump": {"every": 0, "alpha": False, "composite": False},
    "output_dir": "layerbind_out",
}

_KNOWN_TOP = set(DEFAULTS) | {"layout", "resolved_vital_blocks", "model_checksum", "version"}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if path == "" and key not in _KNOWN_TOP:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(out.get(key), dict) and key not in ("blend_mode",):
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be an object")
            unknown = set(val) - set(out[key])
            if unknown:
                raise ConfigError(f"unknown config key: {where}.{sorted(unknown)[0]}")
            out[key] = _merge(out[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(source=None, env=None):
    """Merge a config (path, JSON text or dict) over the defaults and check it.

    ``LAYERBIND_SEED`` in ``env`` (default ``os.environ``) overrides ``seed``.
    """
    env = os.environ if env is None else env
    raw = {}
    if isinstance(source, dict):
        raw = source
    elif source is not None:
        text = source
        if not str(source).lstrip().startswith("{"):
            try:
                with open(source, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, raw)
    if env.get(SEED_ENV) not in (None, ""):
        try:
            cfg["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    check_config(cfg)
    return cfg


def check_config(cfg):
    try:
        spec = ModelSpec(**cfg["model"])
        sch = cfg["schedule"]
        make_schedule(sch["steps"], sch["max_timestep"], sch["eta1"], sch["eta2"], sch["spawn_step"])
        AlphaParams(**cfg["alpha"])
        NursingConfig(beta=cfg["beta"], **cfg["nursing"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    except LayerBindError as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    vb = cfg["vital_blocks"]
    if isinstance(vb, str):
        if vb != "auto" and vb not in VITAL_PRESETS:
            raise ConfigError(f"vital_blocks must be 'auto', a preset {sorted(VITAL_PRESETS)} or a list")
        if vb in VITAL_PRESETS and max(VITAL_PRESETS[vb]) >= spec.num_blocks:
            raise ConfigError(f"preset {vb!r} needs at least {max(VITAL_PRESETS[vb]) + 1} blocks")
    elif isinstance(vb, list):
        if not all(isinstance(b, int) and 0 <= b < spec.num_blocks for b in vb):
            raise ConfigError("explicit vital_blocks must be block indices of the model")
    else:
        raise ConfigError("vital_blocks has the wrong type")
    counts = cfg["vital_counts"]
    if not (isinstance(counts, list) and len(counts) == 2 and all(isinstance(c, int) and c >= 0 for c in counts)):
        raise ConfigError("vital_counts must be two non-negative integers")
    if not 0 < cfg["profile_steps_frac"] <= 1:
        raise ConfigError("profile_steps_frac must lie in (0, 1]")
    bm = cfg["blend_mode"]
    modes = [bm] if isinstance(bm, str) else list(bm.values()) if isinstance(bm, dict) else None
    if modes is None or any(m not in BLEND_MODES for m in modes):
        raise ConfigError(f"blend_mode entries must be one of {BLEND_MODES}")
    every = cfg["dump"]["every"]
    if not isinstance(every, int) or every < 0:
        raise ConfigError("dump.every must be a non-negative integer")
    return cfg
