"""Rectified-flow Euler sampling with the two LayerBind phases attached.

States are indexed by step: ``x_0`` sits at ``t = T`` and ``x_S`` at
``t = 0``. Step ``k`` maps ``x_k`` to ``x_{k+1}`` using the velocity at
``t_k``. Phase events happen on states:

* at index ``spawn_step`` the branches are copied from the global latent;
* steps ``spawn_step <= k < blend_step`` run instance initialization;
* at index ``blend_step`` (after the velocity update of the last
  initialization step) the branches are blended back;
* steps ``blend_step <= k < nursing_end_step`` run semantic nursing;
* the remaining steps are plain denoising with the scene prompt.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .binding import AlphaParams, blend_branches, construct_branches
from .errors import OrderingError, RangeError, ShapeError
from .layout import scene_regions
from .model import PhasePolicy, TextStreams, encode_text, forward_step
from .nursing import NursingConfig
from .validation import check_random_state, check_tokens

# guards floor() against ratios like 0.29 * 100 = 28.999999999999996
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class PhaseSchedule:
    total_steps: int
    max_timestep: float
    timesteps: tuple
    eta1: float
    eta2: float
    spawn_step: int
    blend_step: int
    nursing_end_step: int

    @property
    def t1(self):
        return self.timesteps[self.blend_step]

    @property
    def t2(self):
        return self.timesteps[self.nursing_end_step]

    def phase_of(self, k):
        """Phase name for step ``k`` (``x_k -> x_{k+1}``)."""
        if k < self.spawn_step:
            return "pre"
        if k < self.blend_step:
            return "init"
        if k < self.nursing_end_step:
            return "nursing"
        return "post"


def make_schedule(S=20, T=1000.0, eta1=0.2, eta2=0.7, spawn_step=0):
    if not isinstance(S, int) or isinstance(S, bool) or S < 2:
        raise RangeError(f"S must be an integer >= 2, got {S!r}")
    if not T > 0:
        raise RangeError(f"T must be positive, got {T!r}")
    if not 0 < eta1 < 1:
        raise RangeError(f"eta1={eta1} outside (0, 1)")
    if not 0 < eta2 <= 1:
        raise RangeError(f"eta2={eta2} outside (0, 1]")
    if eta1 >= eta2:
        raise OrderingError(f"eta1={eta1} must be below eta2={eta2}")
    blend = math.floor(eta1 * S + _FLOOR_SLACK)
    nursing_end = math.floor(eta2 * S + _FLOOR_SLACK)
    if not isinstance(spawn_step, int) or spawn_step < 0:
        raise RangeError(f"spawn_step must be a non-negative integer, got {spawn_step!r}")
    if spawn_step >= blend:
        raise OrderingError(f"spawn_step={spawn_step} must precede blend_step={blend}")
    if blend >= nursing_end:
        raise OrderingError(f"blend_step={blend} must precede nursing_end_step={nursing_end}")
    ts = tuple(float(t) for t in np.linspace(T, 0.0, S + 1))
    return PhaseSchedule(S, float(T), ts, eta1, eta2, spawn_step, blend, nursing_end)


@dataclass
class LatentState:
    """Global image-token latent plus live instance branches (if any)."""

    tokens: np.ndarray
    grid_height: int
    grid_width: int
    step_index: int = 0
    branches: tuple = ()

    def __post_init__(self):
        self.tokens = check_tokens(self.tokens, "latent")
        if len(self.tokens) != self.grid_height * self.grid_width:
            raise ShapeError(f"{len(self.tokens)} tokens for a {self.grid_height}x{self.grid_width} grid")
        self.branches = tuple(self.branches)

    @property
    def d_model(self):
        return self.tokens.shape[1]

    def copy(self):
        return LatentState(
            self.tokens.copy(), self.grid_height, self.grid_width, self.step_index, tuple(b.copy() for b in self.branches)
        )


def euler_step(x, v, t_k, t_prev):
    """``x_{k+1} = x_k + (t_prev - t_k) * v``; branches are carried unchanged."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.tokens.shape:
        raise ShapeError(f"velocity shape {v.shape} != latent shape {x.tokens.shape}")
    if not np.all(np.isfinite(v)):
        raise RangeError("velocity contains non-finite values")
    if t_prev > t_k:
        raise RangeError(f"timestep must not increase ({t_k} -> {t_prev})")
    return LatentState(x.tokens + (t_prev - t_k) * v, x.grid_height, x.grid_width, x.step_index + 1, x.branches)


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    vital_blocks: frozenset = frozenset()
    blend_modes: object = "matted"
    nursing: NursingConfig = NursingConfig()
    alpha: AlphaParams = AlphaParams()

    def modes_for(self, layers):
        """Blend mode per layer (layers in ascending order)."""
        if isinstance(self.blend_modes, str):
            return [self.blend_modes] * len(layers)
        modes = dict(self.blend_modes)
        return [modes.get(l.order, modes.get(str(l.order), "matted")) for l in layers]


@dataclass
class Trajectory:
    states: list
    alphas: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.states[-1]


def initial_noise(seed, n_tokens, d_model):
    return check_random_state(seed).standard_normal((n_tokens, d_model))


def initial_state(model, seed):
    spec = model.spec
    return LatentState(initial_noise(seed, spec.n_image_tokens, spec.d_model), spec.grid_h, spec.grid_w, 0)


def sample(model, scene, schedule, config=None, hooks=(), start=None, stop=None, recorder=None, trace=None):
    """Integrate from ``start`` (default: seeded noise at index 0) to ``stop``.

    ``hooks`` are callables ``hook(state, schedule)`` run on every saved
    state after its phase events; a returned LatentState replaces it.
    Resuming from any saved state reproduces the rest of the run bitwise.
    """
    config = config or SamplerConfig()
    spec = model.spec
    stop = schedule.total_steps if stop is None else stop
    layers = scene.sorted_layers()
    regions = scene_regions(scene, spec.grid_h, spec.grid_w)
    modes = config.modes_for(layers)
    text_bg = encode_text(model, scene.background_prompt)
    text_scene = encode_text(model, scene.scene_prompt)
    regional = tuple(encode_text(model, l.region_prompt) for l in layers)
    alphas = {}

    def events(state):
        k = state.step_index
        if regions and k == schedule.spawn_step and not state.branches:
            state.branches = tuple(construct_branches(state.tokens, regions, model.positions))
        if k == schedule.blend_step and state.branches:
            tokens, used = blend_branches(state.tokens, list(state.branches), modes, config.alpha, trace)
            alphas.update(used)
            state = LatentState(tokens, state.grid_height, state.grid_width, k, ())
        for hook in hooks:
            res = hook(state, schedule)
            if res is not None:
                state = res
        return state

    if start is None:
        state = events(initial_state(model, config.seed))
    else:
        state = start.copy()
    states = [state.copy()]
    while state.step_index < stop:
        k = state.step_index
        policy, text = _policy_for(k, schedule, regions, config, text_bg, text_scene, regional)
        branches = state.branches if policy.phase == "init" else ()
        v = forward_step(model, state.tokens, text, schedule.timesteps[k], policy, branches, k, recorder, trace)
        t_k, t_next = schedule.timesteps[k], schedule.timesteps[k + 1]
        nxt = euler_step(state, v.image, t_k, t_next)
        if branches:
            dt = t_next - t_k
            nxt.branches = tuple(replace(b, tokens=b.tokens + dt * vb) for b, vb in zip(branches, v.branches))
        state = events(nxt)
        states.append(state.copy())
    return Trajectory(states, alphas)


def _policy_for(k, schedule, regions, config, text_bg, text_scene, regional):
    phase = schedule.phase_of(k)
    if phase in ("pre", "init"):
        if phase == "init" and regions:
            pol = PhasePolicy("init", regions, config.vital_blocks, config.nursing)
            return pol, TextStreams(text_bg, regional)
        return PhasePolicy("plain"), TextStreams(text_bg)
    if phase == "nursing" and regions and config.nursing.enabled:
        return PhasePolicy("nursing", regions, config.vital_blocks, config.nursing), TextStreams(text_scene, regional)
    return PhasePolicy("plain"), TextStreams(text_scene)


def record_plain_attention(model, scene, schedule, recorder, seed=0):
    """Run plain (uncontrolled) denoising with the scene prompt over the
    steps the recorder wants, storing joint attention maps."""
    if not recorder.steps:
        return recorder
    state = initial_state(model, seed)
    text = TextStreams(encode_text(model, scene.scene_prompt))
    last = max(recorder.steps)
    for k in range(last + 1):
        t_k, t_next = schedule.timesteps[k], schedule.timesteps[k + 1]
        v = forward_step(model, state.tokens, text, t_k, PhasePolicy("plain"), (), k, recorder)
        state = euler_step(state, v.image, t_k, t_next)
    return recorder
