"""Joint multimodal attention and the contextual (local) update operator.

Tokens are row vectors. A :class:`Projection` bundles the query/key/value rows
of one token stream; image streams also carry integer grid positions from
which 2D axial rotary phases are derived. Heads are split along the feature
axis, attended independently and concatenated back (no output projection
here; that belongs to the transformer block).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import AllMaskedError, EmptyContextError, NonFiniteError, ShapeError

IMAGE_PREFIX = "image"
TEXT_PREFIX = "text"

ROPE_THETA = 10000.0


def stream_tag(kind, layer=None):
    """Build a stream tag such as ``image_global`` or ``text_regional:2``."""
    return kind if layer is None else f"{kind}:{layer}"


def is_image_tag(tag):
    return tag.startswith(IMAGE_PREFIX)


@dataclass(frozen=True)
class Projection:
    """Query/key/value rows for one token stream.

    ``positions`` holds the (row, col) grid coordinates of every token and
    must be given for image streams and omitted for text streams.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    tag: str
    positions: np.ndarray = None

    def __post_init__(self):
        if not (self.q.ndim == self.k.ndim == self.v.ndim == 2):
            raise ShapeError(f"{self.tag}: q/k/v must be 2-d")
        if not (len(self.q) == len(self.k) == len(self.v)):
            raise ShapeError(f"{self.tag}: q/k/v row counts differ")
        if self.q.shape[1] != self.k.shape[1]:
            raise ShapeError(f"{self.tag}: q and k widths differ")
        image = is_image_tag(self.tag)
        if image and self.positions is None:
            raise ShapeError(f"{self.tag}: image stream requires positions")
        if not image and self.positions is not None:
            raise ShapeError(f"{self.tag}: text stream must not carry positions")
        if self.positions is not None and np.shape(self.positions) != (len(self.q), 2):
            raise ShapeError(f"{self.tag}: positions must be ({len(self.q)}, 2)")

    def __len__(self):
        return len(self.q)

    def take(self, rows, tag=None):
        """Sub-stream made of the given rows (positions follow the rows)."""
        rows = np.asarray(rows, dtype=np.intp)
        pos = None if self.positions is None else self.positions[rows]
        return Projection(self.q[rows], self.k[rows], self.v[rows], tag or self.tag, pos)


@dataclass(frozen=True)
class AttentionPolicy:
    query: str
    contexts: tuple = ()
    include_self: bool = True

    def __post_init__(self):
        object.__setattr__(self, "contexts", tuple(self.contexts))
        if len(set(self.contexts)) != len(self.contexts):
            raise ValueError(f"duplicate context tags in policy for {self.query}")
        if self.query in self.contexts:
            raise ValueError("query stream cannot also be listed as a context")

    def allowed_keys(self):
        return ((self.query,) if self.include_self else ()) + self.contexts


def rotary_angles(positions, head_dim):
    """Per-token rotation angles for the row half and the column half of a head.

    Returns two arrays of shape (N, pairs) where ``pairs = head_dim // 4``.
    """
    pairs = head_dim // 4
    half = head_dim // 2
    freqs = ROPE_THETA ** (-np.arange(pairs, dtype=np.float64) * 2.0 / half)
    pos = np.asarray(positions, dtype=np.float64)
    return pos[:, 0:1] * freqs, pos[:, 1:2] * freqs


def _rotate_pairs(x, angles):
    # x: (N, 2*pairs) with adjacent (even, odd) pairs
    even, odd = x[:, 0::2], x[:, 1::2]
    cos, sin = np.cos(angles), np.sin(angles)
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def apply_rotary(x, positions, heads):
    """Axial 2D rotary embedding: in each head the first half of the dims
    rotates with the grid row, the second half with the grid column.
    A trailing odd dim in either half is left unrotated."""
    n, width = x.shape
    head_dim = width // heads
    half = head_dim // 2
    pairs = head_dim // 4
    if pairs == 0:
        return x.copy()
    row_ang, col_ang = rotary_angles(positions, head_dim)
    out = x.copy()
    for h in range(heads):
        base = h * head_dim
        rs = slice(base, base + 2 * pairs)
        cs = slice(base + half, base + half + 2 * pairs)
        out[:, rs] = _rotate_pairs(x[:, rs], row_ang)
        out[:, cs] = _rotate_pairs(x[:, cs], col_ang)
    return out


def _rotated_qk(p, heads):
    if p.positions is None:
        return p.q, p.k
    return apply_rotary(p.q, p.positions, heads), apply_rotary(p.k, p.positions, heads)


def _split_heads(x, heads):
    n, width = x.shape
    if width % heads:
        raise ShapeError(f"width {width} not divisible by {heads} heads")
    return x.reshape(n, heads, width // heads).transpose(1, 0, 2)


def attend(q, k, v, heads=1, mask=None, return_weights=False):
    """Scaled dot-product attention with optional boolean key mask.

    ``mask`` has shape (Nq, Nk); False entries receive -inf before the
    softmax. Scores are reduced with a fixed order so repeated calls on equal
    inputs are bitwise identical.
    """
    if q.shape[1] != k.shape[1]:
        raise ShapeError("query/key widths differ")
    if len(k) != len(v):
        raise ShapeError("key/value row counts differ")
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = np.matmul(qh, kh.transpose(0, 2, 1)) * scale
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("attention scores contain non-finite values")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (len(q), len(k)):
            raise ShapeError(f"mask shape {mask.shape} != {(len(q), len(k))}")
        if not np.all(mask.any(axis=1)):
            raise AllMaskedError("a query row has every key masked")
        scores = np.where(mask[None], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = np.matmul(weights, vh).transpose(1, 0, 2).reshape(len(q), -1)
    if return_weights:
        return out, weights
    return out


def _concat(projections, heads):
    qs, ks = zip(*(_rotated_qk(p, heads) for p in projections))
    return np.concatenate(qs), np.concatenate(ks), np.concatenate([p.v for p in projections])


def joint_attention(text, image, heads=1, return_weights=False):
    """Attention over the concatenated ``[text ; image]`` sequence.

    Returns ``(text_out, image_out)``; with ``return_weights`` a third item
    holds the (heads, N, N) weight tensor with text rows/cols first.
    """
    q, k, v = _concat([text, image], heads)
    res = attend(q, k, v, heads, return_weights=return_weights)
    out, w = res if return_weights else (res, None)
    n_t = len(text)
    if return_weights:
        return out[:n_t], out[n_t:], w
    return out[:n_t], out[n_t:]


def contextual_attention(query, contexts=(), policy=None, heads=1, return_weights=False):
    """Update ``query`` rows attending to themselves and the given contexts.

    Keys/values are ``[self ; ctx_1 ; ctx_2 ; ...]`` (self omitted when the
    policy says ``include_self=False``). Zero-row contexts are allowed and
    contribute nothing.
    """
    contexts = list(contexts)
    include_self = True if policy is None else policy.include_self
    if policy is not None:
        tags = tuple(c.tag for c in contexts)
        if tags != policy.contexts:
            raise ValueError(f"contexts {tags} do not match policy {policy.contexts}")
    if not include_self and not any(len(c) for c in contexts):
        raise EmptyContextError(f"{query.tag}: no self and no context keys")
    if len(query) == 0:
        width = query.v.shape[1]
        return np.zeros((0, width)) if not return_weights else (np.zeros((0, width)), None)
    keyed = ([query] if include_self else []) + [c for c in contexts if len(c)]
    q, _ = _rotated_qk(query, heads)
    _, k, v = _concat(keyed, heads)
    return attend(q, k, v, heads, return_weights=return_weights)


def build_mask(streams, policies):
    """Boolean (N, N) mask over the concatenation of ``streams``.

    Rows of a stream with a policy may see exactly that policy's allowed
    streams; rows of streams without a policy see only themselves.
    """
    spans, start = {}, 0
    for s in streams:
        if s.tag in spans:
            raise ValueError(f"duplicate stream tag {s.tag}")
        spans[s.tag] = slice(start, start + len(s))
        start += len(s)
    mask = np.zeros((start, start), dtype=bool)
    by_query = {p.query: p for p in policies}
    for s in streams:
        rows = spans[s.tag]
        pol = by_query.get(s.tag)
        allowed = pol.allowed_keys() if pol is not None else (s.tag,)
        for tag in allowed:
            mask[rows, spans[tag]] = True
    return mask


def masked_attention_oracle(streams, mask, heads=1):
    """Dense attention over all concatenated streams with a key mask.

    Reference path for checking :func:`contextual_attention`; returns the
    updated rows for the whole concatenation.
    """
    q, k, v = _concat(list(streams), heads)
    mask = np.asarray(mask, dtype=bool)
    n = len(q)
    if mask.shape != (n, n):
        raise ShapeError(f"mask shape {mask.shape} != {(n, n)}")
    return attend(q, k, v, heads, mask=mask)


def stream_slices(streams):
    """Map each stream tag to its row slice within the concatenation."""
    out, start = {}, 0
    for s in streams:
        out[s.tag] = slice(start, start + len(s))
        start += len(s)
    return out


@dataclass
class AttentionRecorder:
    """Collects mean-over-heads joint attention maps per (step, block).

    Only steps listed in ``steps`` are kept; maps are (N_T + N_I) square with
    text first.
    """

    steps: frozenset = frozenset()
    maps: dict = field(default_factory=dict)
    n_text: dict = field(default_factory=dict)

    def wants(self, step):
        return step in self.steps

    def record(self, step, block, weights, n_text):
        self.maps.setdefault(block, []).append(weights.mean(axis=0))
        self.n_text.setdefault(block, []).append(n_text)
