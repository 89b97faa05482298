"""Seeded toy multimodal diffusion transformer.

A small MM-DiT: separate image/text weights per block, joint attention with
2D axial rotary phases on image tokens, per-stream GELU MLPs and adaLN-style
scale/shift conditioning from a sinusoidal timestep embedding. The attention
routing of each block is chosen by a :class:`PhasePolicy` so the same weights
serve plain denoising, instance initialization and semantic nursing.
"""

import hashlib
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionRecorder, Projection, contextual_attention, joint_attention
from .binding import branch_update, grid_positions, regional_text_update, reverse_adapt_background
from .errors import CountError, EmptyForegroundError, ShapeError, SpecError
from .nursing import NursingConfig, composite_layers, nurse_local, nurse_text, regional_prompting
from .validation import check_random_state, check_tokens

VITAL_PRESETS = {
    "flux": (0, 15, 18, 42, 45, 48, 50, 53, 54),
    "sd35": (0, 11, 14, 19, 21, 24, 29, 32, 34),
}
ETA1_PRESETS = {"flux": 0.2, "sd35": 0.25}

PHASES = ("plain", "init", "nursing")


@dataclass(frozen=True)
class ModelSpec:
    num_blocks: int = 12
    d_model: int = 64
    heads: int = 4
    grid_h: int = 16
    grid_w: int = 16
    max_text_tokens: int = 16
    weight_seed: int = 0
    vocab_size: int = 1024
    mlp_ratio: int = 2
    max_timestep: float = 1000.0

    def __post_init__(self):
        for name in ("num_blocks", "d_model", "heads", "grid_h", "grid_w", "max_text_tokens", "vocab_size", "mlp_ratio"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise SpecError(f"{name} must be a positive integer, got {val!r}")
        if self.d_model % (2 * self.heads):
            raise SpecError(f"d_model={self.d_model} not divisible by 2*heads={2 * self.heads}")
        if not isinstance(self.weight_seed, int) or not 0 <= self.weight_seed < 2**64:
            raise SpecError("weight_seed must be a 64-bit unsigned integer")
        if not self.max_timestep > 0:
            raise SpecError("max_timestep must be positive")

    @property
    def n_image_tokens(self):
        return self.grid_h * self.grid_w


@dataclass(frozen=True)
class ToyMMDiT:
    spec: ModelSpec
    params: dict = field(repr=False)
    positions: np.ndarray = field(repr=False)
    blocks: tuple = field(default=(), repr=False)

    def checksum(self):
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].tobytes())
        return h.hexdigest()

    def block(self, b, stream):
        return self.blocks[b][stream]


def init_model(spec):
    """Draw every weight from one PCG64 stream seeded by ``spec.weight_seed``."""
    if not isinstance(spec, ModelSpec):
        raise SpecError("init_model expects a ModelSpec")
    rng = check_random_state(spec.weight_seed)
    d = spec.d_model
    hidden = spec.mlp_ratio * d
    depth_scale = 1.0 / math.sqrt(2 * spec.num_blocks)

    def dense(fan_in, fan_out, scale=1.0):
        return rng.standard_normal((fan_in, fan_out)) * (scale / math.sqrt(fan_in))

    p = {}
    p["text_embed"] = rng.standard_normal((spec.vocab_size, d))
    p["img_in.w"] = dense(d, d)
    p["img_in.b"] = np.zeros(d)
    p["time.w1"] = dense(d, d)
    p["time.w2"] = dense(d, d)
    for b in range(spec.num_blocks):
        for s in ("img", "txt"):
            pre = f"blocks.{b}.{s}."
            p[pre + "mod"] = dense(d, 4 * d, 0.1)
            p[pre + "qkv"] = dense(d, 3 * d)
            p[pre + "out"] = dense(d, d, depth_scale)
            p[pre + "mlp1"] = dense(d, hidden)
            p[pre + "mlp2"] = dense(hidden, d, depth_scale)
    p["final.mod"] = dense(d, 2 * d, 0.1)
    p["final.w"] = dense(d, d)
    for arr in p.values():
        arr.setflags(write=False)
        if not np.all(np.isfinite(arr)):
            raise SpecError("non-finite weight after initialization")
    blocks = tuple(
        {s: {k.rsplit(".", 1)[1]: v for k, v in p.items() if k.startswith(f"blocks.{b}.{s}.")} for s in ("img", "txt")}
        for b in range(spec.num_blocks)
    )
    return ToyMMDiT(spec, p, grid_positions(spec.grid_h, spec.grid_w), blocks)


def encode_text(model, prompt):
    """Toy text encoder: CRC32 word hashes into a seeded embedding table."""
    words = prompt.lower().split()[: model.spec.max_text_tokens]
    if not words:
        raise SpecError("cannot encode an empty prompt")
    ids = [zlib.crc32(w.encode("utf-8")) % model.spec.vocab_size for w in words]
    return np.array(model.params["text_embed"][ids])


@dataclass(frozen=True)
class TextStreams:
    """Encoder outputs fed at the start of a step: the global text (background
    or scene prompt, depending on phase) and one stream per layer."""

    global_text: np.ndarray
    regional: tuple = ()


@dataclass(frozen=True)
class PhasePolicy:
    """Attention routing for every block of one forward pass.

    ``regions`` are RegionIndexSets in ascending layer order.
    """

    phase: str = "plain"
    regions: tuple = ()
    vital_blocks: frozenset = frozenset()
    nursing: NursingConfig = NursingConfig()

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "vital_blocks", frozenset(self.vital_blocks))


@dataclass
class StepVelocity:
    image: np.ndarray
    branches: list = field(default_factory=list)


class Trace:
    """Per-run instrumentation: named counters plus optional array captures."""

    def __init__(self, capture=False):
        self.counts = Counter()
        self.capture = capture
        self.captured = {}

    def hit(self, name, n=1):
        self.counts[name] += n

    def keep(self, key, value):
        if self.capture:
            self.captured[key] = np.array(value, copy=True)


def timestep_embedding(t, dim, max_period=10000.0):
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = float(t) * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _layer_norm(x, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


class _Stream:
    """Hidden state of one token stream inside a forward pass."""

    __slots__ = ("h", "kind", "tag", "positions", "proj", "mods")

    def __init__(self, h, kind, tag, positions=None):
        self.h, self.kind, self.tag, self.positions = h, kind, tag, positions
        self.proj = None
        self.mods = None

    def prepare(self, w, cond):
        mod = cond @ w["mod"]
        shift1, scale1, shift2, scale2 = np.split(mod, 4)
        self.mods = (shift2, scale2)
        n = _layer_norm(self.h) * (1.0 + scale1) + shift1
        q, k, v = np.split(n @ w["qkv"], 3, axis=1)
        self.proj = Projection(q, k, v, self.tag, self.positions)
        return self.proj

    def finish(self, w, attn_out):
        self.h = self.h + attn_out @ w["out"]
        shift2, scale2 = self.mods
        n = _layer_norm(self.h) * (1.0 + scale2) + shift2
        self.h = self.h + _gelu(n @ w["mlp1"]) @ w["mlp2"]


def _global_text_tag(phase):
    return "text_background" if phase == "init" else "text_scene"


def forward_step(model, latent, text, t, policy=None, branches=(), step=None, recorder=None, trace=None):
    """Velocity for the global latent (and every branch) at timestep ``t``.

    ``latent`` is the (N_I, d) token matrix. In the ``init`` phase one branch
    per region must be supplied and the returned :class:`StepVelocity` holds
    a velocity per branch as well.
    """
    spec = model.spec
    policy = policy or PhasePolicy()
    x = check_tokens(latent, "latent")
    n_img, d = spec.n_image_tokens, spec.d_model
    if x.shape != (n_img, d):
        raise ShapeError(f"latent shape {x.shape} != {(n_img, d)}")
    g_text = check_tokens(text.global_text, "global_text")
    if g_text.shape[1] != d:
        raise ShapeError("text width does not match d_model")
    n_layers = len(policy.regions)
    if policy.phase == "init" and len(branches) != n_layers:
        raise ShapeError(f"{n_layers} regions but {len(branches)} branches")
    if policy.phase != "plain" and len(text.regional) != n_layers:
        raise ShapeError(f"{n_layers} regions but {len(text.regional)} regional texts")
    p = model.params
    heads = spec.heads

    temb = _silu(timestep_embedding(t, d) @ p["time.w1"]) @ p["time.w2"]
    cond = _silu(temb)

    img = _Stream(x @ p["img_in.w"] + p["img_in.b"], "img", "image_global", model.positions)
    txt = _Stream(g_text.copy(), "txt", _global_text_tag(policy.phase))
    regs, brs = [], []
    if policy.phase != "plain":
        for region, rt in zip(policy.regions, text.regional):
            rt = check_tokens(rt, "regional_text")
            regs.append(_Stream(rt.copy(), "txt", f"text_regional:{region.order}"))
    if policy.phase == "init":
        for region, br in zip(policy.regions, branches):
            tok = check_tokens(br.tokens, "branch")
            if tok.shape != (len(region.indices), d):
                raise ShapeError(f"branch {region.order} shape {tok.shape}")
            brs.append(_Stream(tok @ p["img_in.w"] + p["img_in.b"], "img", f"image_branch:{region.order}", br.positions))

    streams = [img, txt, *regs, *brs]
    for b in range(spec.num_blocks):
        w = {"img": model.block(b, "img"), "txt": model.block(b, "txt")}
        for s in streams:
            s.prepare(w[s.kind], cond)
        if policy.phase == "plain":
            outs = _plain_block(img, txt, heads, step, b, recorder)
        elif policy.phase == "init":
            outs = _init_block(img, txt, regs, brs, policy, b in policy.vital_blocks, heads, step, b, trace)
        else:
            outs = _nursing_block(img, txt, regs, policy, heads, step, b, trace)
        for s in streams:
            s.finish(w[s.kind], outs[s.tag])

    shift, scale = np.split(cond @ p["final.mod"], 2)

    # velocity per unit timestep so that t in [0, max_timestep] spans the path
    def head(h):
        return ((_layer_norm(h) * (1.0 + scale) + shift) @ p["final.w"]) / spec.max_timestep

    return StepVelocity(head(img.h), [head(s.h) for s in brs])


def _plain_block(img, txt, heads, step, block, recorder):
    if recorder is not None and recorder.wants(step):
        t_out, i_out, wts = joint_attention(txt.proj, img.proj, heads, return_weights=True)
        recorder.record(step, block, wts, len(txt.proj))
    else:
        t_out, i_out = joint_attention(txt.proj, img.proj, heads)
    return {txt.tag: t_out, img.tag: i_out}


def _init_block(img, txt, regs, brs, policy, vital, heads, step, block, trace):
    P_img, P_txt = img.proj, txt.proj
    regions = policy.regions
    n_img = len(P_img)
    outs = {}
    if vital and regions:
        outs[txt.tag], outs[img.tag] = _reverse_adapt_global(P_img, P_txt, brs, regions, heads, trace)
    else:
        outs[txt.tag], outs[img.tag] = joint_attention(P_txt, P_img, heads)

    for region, reg, br in zip(regions, regs, brs):
        bg = P_img.take(region.complement(), f"image_background:{region.order}")
        b_out = branch_update(br.proj, bg, reg.proj, vital, heads, trace)
        if trace is not None:
            trace.keep(("branch_update", step, block, region.order), b_out)
        outs[br.tag] = b_out
        outs[reg.tag] = regional_text_update(reg.proj, br.proj, bg, heads)
    return outs


def _reverse_adapt_global(P_img, P_txt, brs, regions, heads, trace):
    """Vital-block update of the global stream with one or more layers.

    For every layer the tokens outside its region attend to themselves, the
    background text and that layer's branch; a token that is background to
    several layers takes the mean of those updates. Tokens inside every
    region keep their joint-attention rows. The background text attends to
    itself and each layer's background, averaged over layers.
    """
    n_img = len(P_img)
    width = P_img.v.shape[1]
    acc = np.zeros((n_img, width))
    hits = np.zeros(n_img)
    txt_acc = np.zeros((len(P_txt), width))
    for region, br in zip(regions, brs):
        rows = region.complement()
        if len(rows) == 0:
            continue
        bg = P_img.take(rows, f"image_background:{region.order}")
        acc[rows] += reverse_adapt_background(bg, P_txt, br.proj, True, heads, trace)
        hits[rows] += 1
        txt_acc += contextual_attention(P_txt, [bg], heads=heads)
    n_bg_layers = sum(1 for r in regions if len(r.indices) < n_img)
    if n_bg_layers:
        txt_out = txt_acc / n_bg_layers
    else:
        txt_out = contextual_attention(P_txt, [], heads=heads)
    img_out = acc / np.maximum(hits, 1)[:, None]
    core = np.flatnonzero(hits == 0)
    if len(core):
        rest = np.flatnonzero(hits > 0)
        img_out[core] = contextual_attention(
            P_img.take(core, "image_query"), [P_txt, P_img.take(rest, "image_context")], heads=heads
        )
    return txt_out, img_out


def _nursing_block(img, txt, regs, policy, heads, step, block, trace):
    P_img, P_txt = img.proj, txt.proj
    n_img = len(P_img)
    t_out, g_out = joint_attention(P_txt, P_img, heads)
    outs = {txt.tag: t_out}
    locals_, masks, orders = [], [], []
    for region, reg in zip(policy.regions, regs):
        inside = P_img.take(region.indices, f"image_region:{region.order}")
        outside = P_img.take(region.complement(), f"image_outside:{region.order}")
        locals_.append(nurse_local(inside, reg.proj, outside, region.indices, n_img, heads))
        masks.append(region.mask.ravel())
        orders.append(region.order)
        outs[reg.tag] = nurse_text(reg.proj, inside, P_txt, heads)
    if policy.nursing.regional_prompting_only:
        img_out = regional_prompting(g_out, locals_, masks)
    else:
        img_out = composite_layers(g_out, locals_, masks, policy.nursing.beta, orders)
    if trace is not None:
        trace.hit("nursing_block")
        trace.keep(("composite", step, block), img_out)
    outs[img.tag] = img_out
    return outs


@dataclass(frozen=True)
class BlockProfile:
    block_index: int
    response_self: float
    response_background: float
    response_text: float
    vital: bool = False


def profile_blocks(maps, foreground, n_text):
    """Foreground-query attention mass per block, split into self
    (foreground image keys), background (other image keys) and text keys.

    ``maps`` maps block index to a list of (N_T + N_I) square attention maps
    (text first); ``n_text`` is N_T as an int or a per-map list.
    """
    fg = np.unique(np.asarray(foreground, dtype=np.intp))
    if fg.size == 0:
        raise EmptyForegroundError("foreground token set is empty")
    if isinstance(maps, AttentionRecorder):
        n_text = maps.n_text
        maps = maps.maps
    out = []
    for block in sorted(maps):
        acc = np.zeros(3)
        recs = maps[block]
        nts = n_text[block] if isinstance(n_text, dict) else [n_text] * len(recs)
        for m, nt in zip(recs, nts):
            m = np.asarray(m, dtype=np.float64)
            n_img = m.shape[0] - nt
            if fg.max() >= n_img:
                raise ShapeError("foreground index outside the image tokens")
            rows = m[nt + fg]
            is_fg = np.zeros(n_img, dtype=bool)
            is_fg[fg] = True
            text_mass = rows[:, :nt].sum(axis=1)
            self_mass = rows[:, nt:][:, is_fg].sum(axis=1)
            bg_mass = rows[:, nt:][:, ~is_fg].sum(axis=1)
            acc += [self_mass.mean(), bg_mass.mean(), text_mass.mean()]
        acc /= acc.sum()
        out.append(BlockProfile(int(block), float(acc[0]), float(acc[1]), float(acc[2])))
    return out


def stage_of(block, num_blocks):
    """``"first"`` for block 0, ``"early_mid"`` below two thirds, else ``"late"``."""
    if block == 0:
        return "first"
    return "early_mid" if 3 * block < 2 * num_blocks else "late"


def select_vital_blocks(profiles, early_mid_count=2, late_count=6):
    """Block 0 plus the most text-responsive early-mid and late blocks.

    Ties prefer the lower block index. Returns an ascending list.
    """
    n = len(profiles)
    index = {p.block_index for p in profiles}
    if index != set(range(n)):
        raise CountError("profiles must cover blocks 0..n-1 exactly once")
    early = [p for p in profiles if stage_of(p.block_index, n) == "early_mid"]
    late = [p for p in profiles if stage_of(p.block_index, n) == "late"]
    if early_mid_count > len(early) or late_count > len(late) or min(early_mid_count, late_count) < 0:
        raise CountError(
            f"requested {early_mid_count} early-mid / {late_count} late blocks, "
            f"available {len(early)} / {len(late)}"
        )

    def top(group, k):
        return [p.block_index for p in sorted(group, key=lambda p: (-p.response_text, p.block_index))[:k]]

    return sorted({0, *top(early, early_mid_count), *top(late, late_count)})


def mark_vital(profiles, vital):
    vital = set(vital)
    return [BlockProfile(p.block_index, p.response_self, p.response_background, p.response_text, p.block_index in vital) for p in profiles]
