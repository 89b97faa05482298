"""scikit-learn style front end for the full pipeline."""

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .attention import AttentionRecorder
from .binding import AlphaParams
from .layout import SceneSpec, parse_layout, scene_regions, validate
from .model import VITAL_PRESETS, ModelSpec, init_model, mark_vital, profile_blocks, select_vital_blocks
from .nursing import NursingConfig
from .sampler import SamplerConfig, make_schedule, record_plain_attention, sample

_MODEL_KEYS = ("num_blocks", "d_model", "heads", "grid_h", "grid_w", "max_text_tokens", "weight_seed", "vocab_size", "mlp_ratio")


def check_scene(scene, strict=False):
    """Accept a SceneSpec, a layout dict or JSON text; returns ``(scene, report)``."""
    if not isinstance(scene, SceneSpec):
        scene = parse_layout(scene)
    return scene, validate(scene, strict=strict)


class LayerBindGenerator(BaseEstimator):
    """Region- and occlusion-controlled sampler on the toy MM-DiT.

    ``fit`` builds the seeded model and schedule and resolves the vital
    blocks (profiling the scene when ``vital_blocks="auto"``); ``generate``
    returns the full :class:`~layerbind.sampler.Trajectory` and ``predict``
    the final latent tokens.

    Parameters
    ----------
    vital_blocks : "auto", "flux", "sd35" or list of int
    blend_mode : "direct", "soft", "matted" or dict mapping layer order to mode
    beta : opacity of the nursing transparency scheduler
    """

    def __init__(
        self,
        num_blocks=12,
        d_model=64,
        heads=4,
        grid_h=16,
        grid_w=16,
        max_text_tokens=16,
        weight_seed=0,
        vocab_size=1024,
        mlp_ratio=2,
        steps=20,
        max_timestep=1000.0,
        eta1=0.2,
        eta2=0.7,
        spawn_step=0,
        vital_blocks="auto",
        vital_counts=(2, 3),
        profile_steps_frac=0.2,
        blend_mode="matted",
        beta=0.7,
        nursing=True,
        regional_prompting_only=False,
        gamma=0.9,
        eps=1e-6,
        lam=4.0,
        tol=1e-4,
        max_iters=200,
        seed=0,
    ):
        self.num_blocks = num_blocks
        self.d_model = d_model
        self.heads = heads
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.max_text_tokens = max_text_tokens
        self.weight_seed = weight_seed
        self.vocab_size = vocab_size
        self.mlp_ratio = mlp_ratio
        self.steps = steps
        self.max_timestep = max_timestep
        self.eta1 = eta1
        self.eta2 = eta2
        self.spawn_step = spawn_step
        self.vital_blocks = vital_blocks
        self.vital_counts = vital_counts
        self.profile_steps_frac = profile_steps_frac
        self.blend_mode = blend_mode
        self.beta = beta
        self.nursing = nursing
        self.regional_prompting_only = regional_prompting_only
        self.gamma = gamma
        self.eps = eps
        self.lam = lam
        self.tol = tol
        self.max_iters = max_iters
        self.seed = seed

    @classmethod
    def from_config(cls, cfg):
        model = cfg["model"]
        sch = cfg["schedule"]
        vb = cfg.get("resolved_vital_blocks", cfg["vital_blocks"])
        return cls(
            **{k: model[k] for k in _MODEL_KEYS},
            steps=sch["steps"],
            max_timestep=sch["max_timestep"],
            eta1=sch["eta1"],
            eta2=sch["eta2"],
            spawn_step=sch["spawn_step"],
            vital_blocks=list(vb) if isinstance(vb, (list, tuple)) else vb,
            vital_counts=tuple(cfg["vital_counts"]),
            profile_steps_frac=cfg["profile_steps_frac"],
            blend_mode=cfg["blend_mode"],
            beta=cfg["beta"],
            nursing=cfg["nursing"]["enabled"],
            regional_prompting_only=cfg["nursing"]["regional_prompting_only"],
            seed=cfg["seed"],
            **cfg["alpha"],
        )

    def model_spec(self):
        return ModelSpec(**{k: getattr(self, k) for k in _MODEL_KEYS}, max_timestep=float(self.max_timestep))

    def sampler_config(self):
        self._check_fitted()
        return SamplerConfig(
            seed=self.seed,
            vital_blocks=frozenset(self.vital_blocks_),
            blend_modes=self.blend_mode,
            nursing=NursingConfig(self.beta, self.nursing, self.regional_prompting_only),
            alpha=AlphaParams(self.gamma, self.eps, self.lam, self.tol, self.max_iters),
        )

    def fit(self, X, y=None):
        """Build model and schedule for scene ``X`` and resolve vital blocks."""
        scene, report = check_scene(X)
        self.validation_report_ = report
        self.model_ = init_model(self.model_spec())
        self.schedule_ = make_schedule(self.steps, float(self.max_timestep), self.eta1, self.eta2, self.spawn_step)
        self.profiles_ = None
        vb = self.vital_blocks
        if isinstance(vb, str) and vb in VITAL_PRESETS:
            vital = list(VITAL_PRESETS[vb])
        elif isinstance(vb, str):
            vital = self._auto_vital(scene)
        else:
            vital = sorted(int(b) for b in vb)
        self.vital_blocks_ = vital
        self.scene_ = scene
        return self

    def _auto_vital(self, scene):
        regions = scene_regions(scene, self.grid_h, self.grid_w)
        if not regions:
            return []
        n_steps = max(1, math.floor(self.profile_steps_frac * self.steps + 1e-9))
        rec = record_plain_attention(
            self.model_, scene, self.schedule_, AttentionRecorder(frozenset(range(n_steps))), self.seed
        )
        foreground = np.unique(np.concatenate([r.indices for r in regions]))
        early, late = self.vital_counts
        profiles = profile_blocks(rec, foreground, None)
        vital = select_vital_blocks(profiles, early, late)
        self.profiles_ = mark_vital(profiles, vital)
        return vital

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() first")

    def generate(self, X=None, **kwargs):
        """Sample a trajectory; keyword args go to :func:`~layerbind.sampler.sample`."""
        self._check_fitted()
        scene = self.scene_ if X is None else check_scene(X)[0]
        return sample(self.model_, scene, self.schedule_, self.sampler_config(), **kwargs)

    def predict(self, X=None):
        return self.generate(X).final.tokens
