import json

import numpy as np
import pytest

from layerbind.errors import EmptyRegionError, SchemaError, ShapeError, ValidationError
from layerbind.layout import LayerSpec, SceneSpec, box_to_indices, parse_layout, scene_regions, serialize_layout, validate


def doc(*elements, **extra):
    d = {"rewritten_prompt": "a scene", "background_prompt": "a room", "elements": list(elements)}
    d.update(extra)
    return d


def el(prompt, box, order):
    return {"region_prompt": prompt, "layout": box, "order": order}


def test_minimal_document():
    spec = parse_layout(doc(el("a cat", [0, 0, 512, 512], 1)))
    assert len(spec.layers) == 1
    assert spec.layers[0] == LayerSpec("a cat", (0, 0, 512, 512), 1)
    assert spec.planning is None


def test_json_text_and_unknown_keys():
    text = json.dumps(doc(el("a cat", [0, 0, 512, 512], 1), planning="p", extra=1))
    spec = parse_layout(text)
    assert spec.planning == "p"


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d.pop("background_prompt"), "background_prompt"),
        (lambda d: d.pop("rewritten_prompt"), "rewritten_prompt"),
        (lambda d: d.update(elements={}), "elements"),
        (lambda d: d["elements"][0].pop("layout"), "elements[0].layout"),
        (lambda d: d["elements"][0].update(layout=[1, 2, 3]), "elements[0].layout"),
        (lambda d: d["elements"][0].update(order="1"), "elements[0].order"),
        (lambda d: d["elements"][0].update(region_prompt=""), "elements[0].region_prompt"),
        (lambda d: d.update(background_prompt=" "), "background_prompt"),
    ],
)
def test_schema_errors_name_field(mutate, field):
    d = doc(el("a cat", [0, 0, 512, 512], 1))
    mutate(d)
    with pytest.raises(SchemaError) as exc:
        parse_layout(d)
    assert exc.value.field == field


def test_malformed_json():
    with pytest.raises(SchemaError):
        parse_layout("{not json")


def test_processing_order_sorted():
    spec = parse_layout(doc(el("b", [0, 0, 100, 100], 2), el("a", [0, 0, 100, 100], 1), el("c", [0, 0, 100, 100], 3)))
    assert [l.order for l in spec.sorted_layers()] == [1, 2, 3]
    assert [l.order for l in spec.layers] == [2, 1, 3]


def test_round_trip():
    d = doc(el("b", [10, 20, 300, 400], 2), el("a", [0, 0, 100.5, 100], 1), planning="why")
    spec = parse_layout(d)
    assert parse_layout(serialize_layout(spec)) == spec
    assert parse_layout(json.dumps(serialize_layout(spec))) == spec


def test_fully_occluded_detected():
    spec = parse_layout(doc(el("small", [100, 100, 200, 200], 1), el("big", [0, 0, 500, 500], 2)))
    report = validate(spec, strict=False)
    assert kinds(report) == {"fully_occluded"}
    assert report.ok and report.warnings[0].order == 1
    with pytest.raises(ValidationError):
        validate(spec, strict=True)


def test_occluded_by_union_of_boxes():
    spec = parse_layout(doc(el("mid", [100, 100, 300, 300], 1), el("l", [0, 0, 200, 400], 2), el("r", [200, 0, 400, 400], 3)))
    assert kinds(validate(spec, strict=False)) == {"fully_occluded"}
    spec = parse_layout(doc(el("mid", [100, 100, 300, 300], 1), el("l", [0, 0, 199, 400], 2), el("r", [200, 0, 400, 400], 3)))
    assert kinds(validate(spec, strict=False)) == set()


def test_lower_box_does_not_occlude():
    spec = parse_layout(doc(el("small", [100, 100, 200, 200], 2), el("big", [0, 0, 500, 500], 1)))
    assert validate(spec).ok


def test_degenerate_and_duplicate():
    spec = parse_layout(doc(el("a", [600, 600, 100, 100], 1), el("b", [0, 0, 10, 10], 2), el("c", [20, 20, 30, 30], 2)))
    report = validate(spec, strict=False)
    assert {"degenerate_box", "duplicate_order"} <= kinds(report)
    assert not report.ok
    with pytest.raises(ValidationError) as exc:
        validate(spec)
    assert exc.value.exit_code == 4


def test_out_of_canvas_and_bad_order():
    spec = parse_layout(doc(el("a", [0, 0, 1025, 100], 1), el("b", [0, 0, 10, 10], 0)))
    assert kinds(validate(spec, strict=False)) == {"out_of_canvas", "bad_order"}


def test_validation_is_order_insensitive():
    els = [el("a", [0, 0, 600, 600], 1), el("b", [600, 600, 100, 100], 3), el("c", [100, 100, 200, 200], 2), el("d", [0, 0, 900, 900], 3)]
    first = validate(parse_layout(doc(*els)), strict=False)
    second = validate(parse_layout(doc(*els[::-1])), strict=False)
    assert first == second


def kinds(report):
    return {k for k, _ in report.kinds()}


def centre_oracle(box, gh, gw, canvas=1024):
    out = []
    for r in range(gh):
        for c in range(gw):
            cx, cy = (c + 0.5) * canvas / gw, (r + 0.5) * canvas / gh
            if box[0] <= cx < box[2] and box[1] <= cy < box[3]:
                out.append(r * gw + c)
    return out


def test_box_to_indices_examples():
    reg = box_to_indices((0, 0, 512, 512), 16, 16)
    assert len(reg.indices) == 64
    assert reg.indices.tolist() == [r * 16 + c for r in range(8) for c in range(8)]
    assert reg.bbox() == (0, 8, 0, 8)
    assert len(box_to_indices((0, 0, 1024, 1024), 16, 16).indices) == 256
    with pytest.raises(EmptyRegionError):
        box_to_indices((0, 0, 10, 10), 16, 16)
    with pytest.raises(ShapeError):
        box_to_indices((0, 0, 10, 10), 15, 16)


def test_box_to_indices_matches_enumeration(rng):
    for _ in range(200):
        x0, y0 = rng.integers(0, 900, size=2)
        x1, y1 = x0 + rng.integers(70, 400), y0 + rng.integers(70, 400)
        gh, gw = rng.choice([8, 16, 32], size=2)
        box = (int(x0), int(y0), int(min(x1, 1024)), int(min(y1, 1024)))
        expected = centre_oracle(box, gh, gw)
        if not expected:
            continue
        assert box_to_indices(box, gh, gw).indices.tolist() == expected


def test_box_to_indices_monotone(rng):
    for _ in range(50):
        x0, y0 = rng.integers(0, 400, size=2)
        inner = (int(x0), int(y0), int(x0 + 200), int(y0 + 200))
        outer = (inner[0] - 10 if inner[0] >= 10 else 0, inner[1], inner[2] + 50, inner[3] + 30)
        a = set(box_to_indices(inner, 16, 16).indices)
        b = set(box_to_indices(outer, 16, 16).indices)
        assert a <= b


def test_region_complement_and_scene_regions():
    scene = SceneSpec("s", "b", (LayerSpec("y", (512, 0, 1024, 512), 2), LayerSpec("x", (0, 0, 512, 512), 1)))
    regs = scene_regions(scene, 16, 16)
    assert [r.order for r in regs] == [1, 2]
    comp = regs[0].complement()
    assert len(comp) == 192
    assert set(comp).isdisjoint(regs[0].indices)
    assert np.array_equal(np.sort(np.concatenate([comp, regs[0].indices])), np.arange(256))
