import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerbind.attention import (
    AttentionPolicy,
    Projection,
    apply_rotary,
    attend,
    build_mask,
    contextual_attention,
    joint_attention,
    masked_attention_oracle,
    stream_slices,
)
from layerbind.errors import AllMaskedError, EmptyContextError, NonFiniteError, ShapeError


def make_proj(rng, n, width, tag, image=None):
    image = tag.startswith("image") if image is None else image
    pos = rng.integers(0, 16, size=(n, 2)) if image else None
    return Projection(rng.standard_normal((n, width)), rng.standard_normal((n, width)), rng.standard_normal((n, width)), tag, pos)


def naive_attention(q, k, v):
    """Row-by-row softmax with explicit loops (single head)."""
    out = np.zeros((len(q), v.shape[1]))
    for i in range(len(q)):
        s = [float(q[i] @ k[j]) / math.sqrt(q.shape[1]) for j in range(len(k))]
        m = max(s)
        e = [math.exp(x - m) for x in s]
        z = sum(e)
        for j in range(len(k)):
            out[i] += e[j] / z * v[j]
    return out


def test_scalar_contextual_example():
    query = Projection(np.array([[1.0]]), np.array([[1.0]]), np.array([[2.0]]), "text_q")
    ctx = Projection(np.array([[0.0]]), np.array([[0.0]]), np.array([[4.0]]), "text_c")
    out = contextual_attention(query, [ctx])
    w_self = math.exp(1) / (math.exp(1) + 1)
    expected = 2 * w_self + 4 * (1 - w_self)
    assert out[0, 0] == pytest.approx(expected, abs=1e-12)
    assert out[0, 0] == pytest.approx(2.5379, abs=1e-4)


def test_singleton_softmax_returns_value(rng):
    text = make_proj(rng, 1, 4, "text_a")
    text = Projection(text.q, text.q, text.v, "text_a")
    image = Projection(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros((0, 4)), "image_g", np.zeros((0, 2)))
    t_out, i_out = joint_attention(text, image)
    np.testing.assert_allclose(t_out, text.v, atol=1e-15)
    assert i_out.shape == (0, 4)
    np.testing.assert_allclose(contextual_attention(text, []), text.v, atol=1e-15)


def test_attend_matches_loop_oracle(rng):
    q, k, v = rng.standard_normal((5, 3)), rng.standard_normal((7, 3)), rng.standard_normal((7, 2))
    np.testing.assert_allclose(attend(q, k, v), naive_attention(q, k, v), atol=1e-12)


def test_multi_head_is_per_head_concat(rng):
    q, k, v = rng.standard_normal((4, 8)), rng.standard_normal((6, 8)), rng.standard_normal((6, 8))
    out = attend(q, k, v, heads=2)
    np.testing.assert_allclose(out[:, :4], naive_attention(q[:, :4], k[:, :4], v[:, :4]), atol=1e-12)
    np.testing.assert_allclose(out[:, 4:], naive_attention(q[:, 4:], k[:, 4:], v[:, 4:]), atol=1e-12)


def test_key_permutation_invariance(rng):
    text = make_proj(rng, 3, 8, "text_a")
    image = make_proj(rng, 5, 8, "text_b")
    t_out, i_out = joint_attention(text, image, heads=2)
    q = np.concatenate([text.q, image.q])
    k = np.concatenate([text.k, image.k])
    v = np.concatenate([text.v, image.v])
    perm = rng.permutation(8)
    out = attend(q, k[perm], v[perm], heads=2)
    np.testing.assert_allclose(out, np.concatenate([t_out, i_out]), atol=1e-12)


def test_joint_equals_contextual_per_stream(rng):
    text = make_proj(rng, 3, 8, "text_a")
    image = make_proj(rng, 5, 8, "image_b")
    t_out, i_out = joint_attention(text, image, heads=2)
    np.testing.assert_allclose(contextual_attention(text, [image], heads=2), t_out, atol=1e-6)
    np.testing.assert_allclose(contextual_attention(image, [text], heads=2), i_out, atol=1e-6)


def test_include_self_false(rng):
    q = make_proj(rng, 2, 4, "text_q")
    c = make_proj(rng, 3, 4, "text_c")
    pol = AttentionPolicy("text_q", ("text_c",), include_self=False)
    np.testing.assert_allclose(contextual_attention(q, [c], pol), naive_attention(q.q, c.k, c.v), atol=1e-12)
    with pytest.raises(EmptyContextError):
        contextual_attention(q, [], AttentionPolicy("text_q", (), include_self=False))


def test_policy_rejects_duplicates():
    with pytest.raises(ValueError):
        AttentionPolicy("a", ("b", "b"))


def test_projection_invariants(rng):
    with pytest.raises(ShapeError):
        Projection(np.zeros((2, 4)), np.zeros((3, 4)), np.zeros((2, 4)), "text_x")
    with pytest.raises(ShapeError):
        Projection(np.zeros((2, 4)), np.zeros((2, 4)), np.zeros((2, 4)), "image_x")
    with pytest.raises(ShapeError):
        Projection(np.zeros((2, 4)), np.zeros((2, 4)), np.zeros((2, 4)), "text_x", np.zeros((2, 2)))


def test_non_finite_scores_raise():
    q = np.array([[np.inf]])
    with pytest.raises(NonFiniteError):
        attend(q, np.ones((1, 1)), np.ones((1, 1)))


def test_mask_identity_and_full(rng):
    a = make_proj(rng, 3, 4, "text_a")
    b = make_proj(rng, 4, 4, "image_b")
    out = masked_attention_oracle([a, b], np.eye(7, dtype=bool))
    np.testing.assert_allclose(out, np.concatenate([a.v, b.v]), atol=1e-15)
    t_out, i_out = joint_attention(a, b)
    np.testing.assert_allclose(masked_attention_oracle([a, b], np.ones((7, 7), bool)), np.concatenate([t_out, i_out]), atol=1e-12)
    mask = np.ones((7, 7), bool)
    mask[2] = False
    with pytest.raises(AllMaskedError):
        masked_attention_oracle([a, b], mask)


def test_rotary_preserves_norm_and_relative_position(rng):
    x = rng.standard_normal((1, 16))
    y = rng.standard_normal((1, 16))
    p1, p2 = np.array([[3, 5]]), np.array([[1, 2]])
    rx, ry = apply_rotary(x, p1, 2), apply_rotary(y, p2, 2)
    np.testing.assert_allclose(np.linalg.norm(rx), np.linalg.norm(x), rtol=1e-12)
    # score depends only on position difference
    sx, sy = apply_rotary(x, p1 + 4, 2), apply_rotary(y, p2 + 4, 2)
    assert (rx @ ry.T).item() == pytest.approx((sx @ sy.T).item(), abs=1e-10)
    np.testing.assert_array_equal(apply_rotary(x, np.zeros((1, 2)), 2), x)


def test_context_order_invariance(rng):
    q = make_proj(rng, 4, 8, "image_q")
    c1, c2, c3 = make_proj(rng, 3, 8, "text_c1"), make_proj(rng, 5, 8, "image_c2"), make_proj(rng, 2, 8, "text_c3")
    a = contextual_attention(q, [c1, c2, c3], heads=2)
    b = contextual_attention(q, [c3, c1, c2], heads=2)
    np.testing.assert_allclose(a, b, atol=1e-6)
    np.testing.assert_array_equal(a, contextual_attention(q, [c1, c2, c3], heads=2))


def test_row_stochastic_weights(rng):
    q = make_proj(rng, 4, 8, "image_q")
    c = make_proj(rng, 6, 8, "text_c")
    _, w = contextual_attention(q, [c], heads=2, return_weights=True)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-50, 50))
def test_score_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    q, k, v = rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    # appending a constant feature to q and k adds the same constant to every score in a row
    q2 = np.concatenate([q, np.full((3, 1), shift)], axis=1)
    k2 = np.concatenate([k, np.ones((5, 1))], axis=1)
    shifted = attend(q2, k2, v)
    # attend scales by 1/sqrt(5) here, the loop oracle by 1/sqrt(4)
    ref = naive_attention(q * 2 / math.sqrt(5), k, v)
    np.testing.assert_allclose(shifted, ref, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_contextual_matches_masked_oracle(seed):
    rng = np.random.default_rng(seed)
    heads = int(rng.choice([1, 2]))
    width = heads * int(rng.choice([4, 8]))
    sizes = rng.integers(1, 6, size=4)
    streams = [
        make_proj(rng, sizes[0], width, "image_q"),
        make_proj(rng, sizes[1], width, "text_a"),
        make_proj(rng, sizes[2], width, "image_b"),
        make_proj(rng, sizes[3], width, "text_c"),
    ]
    ctx_tags = [s.tag for s in streams[1:] if rng.random() < 0.6]
    pol = AttentionPolicy("image_q", tuple(ctx_tags))
    by_tag = {s.tag: s for s in streams}
    got = contextual_attention(streams[0], [by_tag[t] for t in ctx_tags], pol, heads=heads)
    mask = build_mask(streams, [pol])
    ref = masked_attention_oracle(streams, mask, heads=heads)[stream_slices(streams)["image_q"]]
    np.testing.assert_allclose(got, ref, atol=1e-6)
