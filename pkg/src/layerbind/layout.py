"""Layout documents: parsing, validation and box-to-token mapping.

The on-disk format is the layout-parser JSON shape::

    {"planning": "...", "rewritten_prompt": "...", "background_prompt": "...",
     "elements": [{"region_prompt": "...", "layout": [x0, y0, x1, y1], "order": 1}]}

Boxes live on a 1024x1024 canvas, ``order`` runs from farthest (1) to nearest.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyRegionError, SchemaError, ShapeError, ValidationError

CANVAS = 1024


@dataclass(frozen=True)
class LayerSpec:
    region_prompt: str
    box: tuple
    order: int


@dataclass(frozen=True)
class SceneSpec:
    scene_prompt: str
    background_prompt: str
    layers: tuple = ()
    planning: str = None

    def sorted_layers(self):
        """Layers in processing order (ascending occlusion order)."""
        return tuple(sorted(self.layers, key=lambda l: l.order))


@dataclass(frozen=True)
class RegionIndexSet:
    order: int
    indices: np.ndarray
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        if idx.size == 0:
            raise EmptyRegionError(f"layer {self.order}: empty region")
        mask = np.asarray(self.mask, dtype=bool)
        if not np.array_equal(np.flatnonzero(mask.ravel()), idx):
            raise ShapeError(f"layer {self.order}: mask support != indices")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "mask", mask)

    @property
    def grid_shape(self):
        return self.mask.shape

    def bbox(self):
        """Inclusive-exclusive (r0, r1, c0, c1) bounding rectangle on the grid."""
        rows, cols = np.nonzero(self.mask)
        return rows.min(), rows.max() + 1, cols.min(), cols.max() + 1

    def complement(self):
        return np.flatnonzero(~self.mask.ravel())


@dataclass(frozen=True)
class Violation:
    kind: str
    order: int
    detail: str
    severity: str = "error"

    def __str__(self):
        return f"{self.severity}:{self.kind}(order={self.order}): {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def errors(self):
        return tuple(v for v in self.violations if v.severity == "error")

    @property
    def warnings(self):
        return tuple(v for v in self.violations if v.severity == "warning")

    @property
    def ok(self):
        return not self.errors

    def kinds(self):
        return sorted((v.kind, v.order) for v in self.violations)


def _require(obj, key, types, path):
    if key not in obj:
        raise SchemaError(path, f"missing field: {path}")
    val = obj[key]
    if not isinstance(val, types) or isinstance(val, bool):
        raise SchemaError(path, f"ill-typed field: {path}")
    return val


def parse_layout(document):
    """Build a :class:`SceneSpec` from a layout document (JSON text or dict).

    Unknown keys are ignored and ``planning`` is optional. Structural
    problems raise :class:`SchemaError` naming the field; semantic problems
    (bad boxes, duplicate orders) are left to :func:`validate`.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("<document>", f"malformed JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise SchemaError("<document>", "top level must be an object")
    background = _require(document, "background_prompt", str, "background_prompt")
    scene = _require(document, "rewritten_prompt", str, "rewritten_prompt")
    planning = document.get("planning")
    if planning is not None and not isinstance(planning, str):
        raise SchemaError("planning", "ill-typed field: planning")
    elements = _require(document, "elements", list, "elements")
    for name, val in (("background_prompt", background), ("rewritten_prompt", scene)):
        if not val.strip():
            raise SchemaError(name, f"empty field: {name}")

    layers = []
    for n, el in enumerate(elements):
        path = f"elements[{n}]"
        if not isinstance(el, dict):
            raise SchemaError(path, f"ill-typed field: {path}")
        prompt = _require(el, "region_prompt", str, f"{path}.region_prompt")
        if not prompt.strip():
            raise SchemaError(f"{path}.region_prompt", f"empty field: {path}.region_prompt")
        box = _require(el, "layout", list, f"{path}.layout")
        if len(box) != 4 or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in box):
            raise SchemaError(f"{path}.layout", f"ill-typed field: {path}.layout")
        order = _require(el, "order", int, f"{path}.order")
        layers.append(LayerSpec(prompt, tuple(box), order))
    return SceneSpec(scene, background, tuple(layers), planning)


def serialize_layout(spec):
    """Inverse of :func:`parse_layout`; returns a JSON-compatible dict."""
    doc = {}
    if spec.planning is not None:
        doc["planning"] = spec.planning
    doc["rewritten_prompt"] = spec.scene_prompt
    doc["background_prompt"] = spec.background_prompt
    doc["elements"] = [
        {"region_prompt": l.region_prompt, "layout": list(l.box), "order": l.order}
        for l in spec.layers
    ]
    return doc


def _box_problem(box, canvas):
    x0, y0, x1, y1 = box
    if x1 <= x0 or y1 <= y0:
        return "degenerate_box", f"box {list(box)} has non-positive extent"
    if x0 < 0 or y0 < 0 or x1 > canvas or y1 > canvas:
        return "out_of_canvas", f"box {list(box)} leaves the {canvas}x{canvas} canvas"
    return None


def _fully_covered(box, covers):
    """True when ``box`` lies inside the union of ``covers`` (exact, via
    coordinate compression)."""
    if not covers:
        return False
    x0, y0, x1, y1 = box
    xs = sorted({x0, x1, *(c for b in covers for c in (b[0], b[2]) if x0 < c < x1)})
    ys = sorted({y0, y1, *(c for b in covers for c in (b[1], b[3]) if y0 < c < y1)})
    for xa, xb in zip(xs, xs[1:]):
        cx = (xa + xb) / 2
        for ya, yb in zip(ys, ys[1:]):
            cy = (ya + yb) / 2
            if not any(b[0] <= cx <= b[2] and b[1] <= cy <= b[3] for b in covers):
                return False
    return True


def validate(spec, strict=True, canvas=CANVAS):
    """Check a parsed scene and return a :class:`ValidationReport`.

    Reports out-of-canvas and degenerate boxes, duplicate orders, and
    layers whose box is fully covered by the union of higher-order boxes.
    Fully-occluded layers are errors in strict mode and warnings otherwise;
    with ``strict=True`` any error raises :class:`ValidationError`.
    """
    found = []
    counts = {}
    for layer in spec.layers:
        counts[layer.order] = counts.get(layer.order, 0) + 1
        if layer.order < 1:
            found.append(Violation("bad_order", layer.order, "order must be a positive integer"))
        prob = _box_problem(layer.box, canvas)
        if prob:
            found.append(Violation(prob[0], layer.order, prob[1]))
    for order, n in counts.items():
        if n > 1:
            found.append(Violation("duplicate_order", order, f"{n} layers share order {order}"))

    boxes_ok = [l for l in spec.layers if _box_problem(l.box, canvas) is None]
    for layer in boxes_ok:
        above = [l.box for l in boxes_ok if l.order > layer.order]
        if _fully_covered(layer.box, above):
            found.append(
                Violation(
                    "fully_occluded",
                    layer.order,
                    "box covered by higher-order layers",
                    "error" if strict else "warning",
                )
            )
    found.sort(key=lambda v: (v.order, v.kind, v.detail))
    report = ValidationReport(tuple(found))
    if strict and report.errors:
        raise ValidationError(report.errors)
    return report


def box_to_indices(box, grid_h, grid_w, canvas=CANVAS, order=0):
    """Token indices whose patch centre lies in the half-open box.

    A patch (r, c) has centre ((c + 0.5) * pw, (r + 0.5) * ph) and is kept
    when ``x0 <= cx < x1`` and ``y0 <= cy < y1``.
    """
    if canvas % grid_h or canvas % grid_w:
        raise ShapeError(f"grid {grid_h}x{grid_w} does not divide canvas {canvas}")
    x0, y0, x1, y1 = box
    cy = (np.arange(grid_h) + 0.5) * (canvas / grid_h)
    cx = (np.arange(grid_w) + 0.5) * (canvas / grid_w)
    rows = (cy >= y0) & (cy < y1)
    cols = (cx >= x0) & (cx < x1)
    mask = rows[:, None] & cols[None, :]
    if not mask.any():
        raise EmptyRegionError(f"box {list(box)} covers no patch centre on a {grid_h}x{grid_w} grid")
    return RegionIndexSet(order, np.flatnonzero(mask.ravel()), mask)


def scene_regions(spec, grid_h, grid_w, canvas=CANVAS):
    """RegionIndexSet for every layer, in processing order."""
    return [box_to_indices(l.box, grid_h, grid_w, canvas, order=l.order) for l in spec.sorted_layers()]
