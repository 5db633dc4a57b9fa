"""Pretrained cascade parsing and multi-scale sliding-window detection.

Implements the classic rejection-cascade detector over integral images:
stump weak classifiers on rectangular features, variance-normalized per
window, evaluated stage by stage with early rejection. Both the legacy
tree-of-stumps XML layout and the newer flat stages/features layout are
parsed; only upright (non-tilted) features and depth-1 stumps are accepted.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .frames import Frame
from .geometry import Rect


class XmlSyntax(Exception):
    def __init__(self, position: tuple[int, int], detail: str):
        super().__init__(f"XML syntax error at line {position[0]}, column {position[1]}: {detail}")
        self.position = position


class SchemaViolation(Exception):
    def __init__(self, path: str, detail: str = ""):
        msg = f"cascade schema violation at {path}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.path = path


class UnsupportedFeature(Exception):
    def __init__(self, path: str, detail: str):
        super().__init__(f"unsupported feature at {path}: {detail}")
        self.path = path


class WindowOutOfBounds(Exception):
    pass


@dataclass(frozen=True)
class FeatureRect:
    x: int
    y: int
    w: int
    h: int
    weight: float


@dataclass(frozen=True)
class HaarFeature:
    rects: tuple[FeatureRect, ...]


@dataclass(frozen=True)
class WeakClassifier:
    feature: HaarFeature
    threshold: float
    left_value: float
    right_value: float


@dataclass(frozen=True)
class CascadeStage:
    weak_classifiers: tuple[WeakClassifier, ...]
    stage_threshold: float


@dataclass(frozen=True)
class CascadeModel:
    base_window_w: int
    base_window_h: int
    stages: tuple[CascadeStage, ...]


@dataclass(frozen=True)
class Detection:
    box: Rect
    kind: str  # "face" | "eye"
    neighbor_count: int


_EMPTY_HITS = np.empty((0, 4), dtype=np.float64)


def _check_feature(rects: list[FeatureRect], base_w: int, base_h: int, path: str) -> HaarFeature:
    if not 2 <= len(rects) <= 3:
        raise SchemaViolation(path, f"feature needs 2-3 rects, got {len(rects)}")
    for i, r in enumerate(rects):
        if r.w <= 0 or r.h <= 0 or r.x < 0 or r.y < 0 or r.x + r.w > base_w or r.y + r.h > base_h:
            raise SchemaViolation(f"{path}/rects[{i}]", "rect outside base window")
    weights = [r.weight for r in rects]
    if not (any(w > 0 for w in weights) and any(w < 0 for w in weights)):
        raise SchemaViolation(path, "rect weights must include a positive and a negative value")
    return HaarFeature(rects=tuple(rects))


def _parse_rect_line(text: str, path: str) -> FeatureRect:
    parts = text.split()
    if len(parts) != 5:
        raise SchemaViolation(path, f"rect line needs 5 fields, got {len(parts)}")
    try:
        x, y, w, h = (int(p) for p in parts[:4])
        weight = float(parts[4])
    except ValueError as exc:
        raise SchemaViolation(path, str(exc)) from exc
    return FeatureRect(x, y, w, h, weight)


def _text_of(node: Optional[ET.Element], path: str) -> str:
    if node is None or node.text is None:
        raise SchemaViolation(path, "missing element")
    return node.text.strip()


def _parse_legacy(root: ET.Element, model_el: ET.Element) -> CascadeModel:
    size = _text_of(model_el.find("size"), "size").split()
    if len(size) != 2:
        raise SchemaViolation("size", "expected two integers")
    base_w, base_h = int(size[0]), int(size[1])
    stages_el = model_el.find("stages")
    if stages_el is None:
        raise SchemaViolation("stages", "missing element")
    stages = []
    for si, stage_el in enumerate(stages_el.findall("_")):
        spath = f"stages[{si}]"
        trees_el = stage_el.find("trees")
        if trees_el is None:
            raise SchemaViolation(f"{spath}/trees", "missing element")
        classifiers = []
        for ti, tree_el in enumerate(trees_el.findall("_")):
            tpath = f"{spath}/trees[{ti}]"
            nodes = tree_el.findall("_")
            if len(nodes) != 1:
                raise SchemaViolation(tpath, "only single-node stumps are supported")
            node = nodes[0]
            feat_el = node.find("feature")
            if feat_el is None:
                raise SchemaViolation(f"{tpath}/feature", "missing element")
            tilted = feat_el.find("tilted")
            if tilted is not None and _text_of(tilted, f"{tpath}/tilted") not in ("0", "0."):
                raise UnsupportedFeature(f"{tpath}/feature", "tilted features are not supported")
            rects_el = feat_el.find("rects")
            if rects_el is None:
                raise SchemaViolation(f"{tpath}/feature/rects", "missing element")
            rects = [
                _parse_rect_line(_text_of(r, f"{tpath}/rects[{ri}]"), f"{tpath}/rects[{ri}]")
                for ri, r in enumerate(rects_el.findall("_"))
            ]
            feature = _check_feature(rects, base_w, base_h, f"{tpath}/feature")
            if node.find("left_val") is None or node.find("right_val") is None:
                raise SchemaViolation(tpath, "stump needs left_val and right_val")
            classifiers.append(
                WeakClassifier(
                    feature=feature,
                    threshold=float(_text_of(node.find("threshold"), f"{tpath}/threshold")),
                    left_value=float(_text_of(node.find("left_val"), f"{tpath}/left_val")),
                    right_value=float(_text_of(node.find("right_val"), f"{tpath}/right_val")),
                )
            )
        if not classifiers:
            raise SchemaViolation(f"{spath}/trees", "stage has no classifiers")
        threshold = float(_text_of(stage_el.find("stage_threshold"), f"{spath}/stage_threshold"))
        stages.append(CascadeStage(weak_classifiers=tuple(classifiers), stage_threshold=threshold))
    return _finish_model(base_w, base_h, stages)


def _parse_new(cascade_el: ET.Element) -> CascadeModel:
    base_w = int(_text_of(cascade_el.find("width"), "width"))
    base_h = int(_text_of(cascade_el.find("height"), "height"))
    features_el = cascade_el.find("features")
    if features_el is None:
        raise SchemaViolation("features", "missing element")
    features = []
    for fi, feat_el in enumerate(features_el.findall("_")):
        fpath = f"features[{fi}]"
        tilted = feat_el.find("tilted")
        if tilted is not None and _text_of(tilted, f"{fpath}/tilted") not in ("0", "0."):
            raise UnsupportedFeature(fpath, "tilted features are not supported")
        rects_el = feat_el.find("rects")
        if rects_el is None:
            raise SchemaViolation(f"{fpath}/rects", "missing element")
        rects = [
            _parse_rect_line(_text_of(r, f"{fpath}/rects[{ri}]"), f"{fpath}/rects[{ri}]")
            for ri, r in enumerate(rects_el.findall("_"))
        ]
        features.append(_check_feature(rects, base_w, base_h, fpath))
    stages_el = cascade_el.find("stages")
    if stages_el is None:
        raise SchemaViolation("stages", "missing element")
    stages = []
    for si, stage_el in enumerate(stages_el.findall("_")):
        spath = f"stages[{si}]"
        threshold = float(_text_of(stage_el.find("stageThreshold"), f"{spath}/stageThreshold"))
        weak_el = stage_el.find("weakClassifiers")
        if weak_el is None:
            raise SchemaViolation(f"{spath}/weakClassifiers", "missing element")
        classifiers = []
        for wi, wc_el in enumerate(weak_el.findall("_")):
            wpath = f"{spath}/weakClassifiers[{wi}]"
            nodes = _text_of(wc_el.find("internalNodes"), f"{wpath}/internalNodes").split()
            leaves = _text_of(wc_el.find("leafValues"), f"{wpath}/leafValues").split()
            if len(nodes) != 4:
                raise SchemaViolation(f"{wpath}/internalNodes", "only depth-1 stumps are supported")
            if len(leaves) != 2:
                raise SchemaViolation(f"{wpath}/leafValues", "stump needs exactly two leaves")
            feat_idx = int(nodes[2])
            if not 0 <= feat_idx < len(features):
                raise SchemaViolation(f"{wpath}/internalNodes", f"feature index {feat_idx} out of range")
            classifiers.append(
                WeakClassifier(
                    feature=features[feat_idx],
                    threshold=float(nodes[3]),
                    left_value=float(leaves[0]),
                    right_value=float(leaves[1]),
                )
            )
        if not classifiers:
            raise SchemaViolation(f"{spath}/weakClassifiers", "stage has no classifiers")
        stages.append(CascadeStage(weak_classifiers=tuple(classifiers), stage_threshold=threshold))
    return _finish_model(base_w, base_h, stages)


def _finish_model(base_w: int, base_h: int, stages: list[CascadeStage]) -> CascadeModel:
    if base_w < 8 or base_h < 8:
        raise SchemaViolation("size", f"base window {base_w}x{base_h} below 8x8 minimum")
    if not stages:
        raise SchemaViolation("stages", "cascade has no stages")
    return CascadeModel(base_window_w=base_w, base_window_h=base_h, stages=tuple(stages))


def parse_cascade(document: str) -> CascadeModel:
    """Parse cascade XML (legacy tree style or flat stages/features style)."""
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise XmlSyntax(exc.position, str(exc)) from exc
    if root.tag != "opencv_storage":
        raise SchemaViolation("/", f"expected opencv_storage root, got {root.tag}")
    for child in root:
        if child.get("type_id") == "opencv-haar-classifier":
            return _parse_legacy(root, child)
        if child.tag == "cascade" or child.get("type_id") == "opencv-cascade-classifier":
            return _parse_new(child)
    raise SchemaViolation("/", "no cascade element found")


def load_cascade(path) -> CascadeModel:
    from pathlib import Path

    return parse_cascade(Path(path).read_text())


def serialize_cascade(model: CascadeModel) -> str:
    """Canonical serialization in the flat stages/features style; reparses to an identical model."""
    features: list[HaarFeature] = []
    index: dict[HaarFeature, int] = {}
    for stage in model.stages:
        for wc in stage.weak_classifiers:
            if wc.feature not in index:
                index[wc.feature] = len(features)
                features.append(wc.feature)
    lines = [
        '<?xml version="1.0"?>',
        "<opencv_storage>",
        '<cascade type_id="opencv-cascade-classifier">',
        "  <stageType>BOOST</stageType>",
        "  <featureType>HAAR</featureType>",
        f"  <height>{model.base_window_h}</height>",
        f"  <width>{model.base_window_w}</width>",
        f"  <stageNum>{len(model.stages)}</stageNum>",
        "  <stages>",
    ]
    for stage in model.stages:
        lines.append("    <_>")
        lines.append(f"      <maxWeakCount>{len(stage.weak_classifiers)}</maxWeakCount>")
        lines.append(f"      <stageThreshold>{float(stage.stage_threshold)!r}</stageThreshold>")
        lines.append("      <weakClassifiers>")
        for wc in stage.weak_classifiers:
            lines.append("        <_>")
            lines.append(
                f"          <internalNodes>0 -1 {index[wc.feature]} {float(wc.threshold)!r}</internalNodes>"
            )
            lines.append(
                f"          <leafValues>{float(wc.left_value)!r} {float(wc.right_value)!r}</leafValues>"
            )
            lines.append("        </_>")
        lines.append("      </weakClassifiers>")
        lines.append("    </_>")
    lines.append("  </stages>")
    lines.append("  <features>")
    for feature in features:
        lines.append("    <_>")
        lines.append("      <rects>")
        for r in feature.rects:
            lines.append(f"        <_>{r.x} {r.y} {r.w} {r.h} {float(r.weight)!r}</_>")
        lines.append("      </rects>")
        lines.append("      <tilted>0</tilted>")
        lines.append("    </_>")
    lines.append("  </features>")
    lines.append("</cascade>")
    lines.append("</opencv_storage>")
    return "\n".join(lines) + "\n"


def luminance_u8(pixels: np.ndarray) -> np.ndarray:
    """Rec.601 luminance, rounded to the nearest integer."""
    p = pixels.astype(np.float64)
    return np.rint(0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]).astype(np.int64)


class IntegralImage:
    """Summed-area tables (plain and squared) over rounded luminance.

    Tables are (height+1, width+1) with a zero top row and left column, so the
    sum over [x, x+w) x [y, y+h) is four lookups.
    """

    def __init__(self, luminance: np.ndarray):
        h, w = luminance.shape
        self.width = w
        self.height = h
        self.sum_table = np.zeros((h + 1, w + 1), dtype=np.int64)
        self.sq_table = np.zeros((h + 1, w + 1), dtype=np.int64)
        np.cumsum(np.cumsum(luminance, axis=0), axis=1, out=self.sum_table[1:, 1:])
        sq = luminance * luminance
        np.cumsum(np.cumsum(sq, axis=0), axis=1, out=self.sq_table[1:, 1:])

    @staticmethod
    def from_frame(frame: Frame) -> "IntegralImage":
        return IntegralImage(luminance_u8(frame.pixels))

    def rect_sum(self, x: int, y: int, w: int, h: int) -> int:
        t = self.sum_table
        return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])

    def rect_sq_sum(self, x: int, y: int, w: int, h: int) -> int:
        t = self.sq_table
        return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])


def integral_image(frame: Frame) -> IntegralImage:
    return IntegralImage.from_frame(frame)


def _scaled_rect(r: FeatureRect, scale: float, win_w: int, win_h: int) -> tuple[int, int, int, int]:
    x = int(round(r.x * scale))
    y = int(round(r.y * scale))
    w = int(round(r.w * scale))
    h = int(round(r.h * scale))
    w = min(w, win_w - x)
    h = min(h, win_h - y)
    return x, y, w, h


def _table_rect(table: np.ndarray, xs: np.ndarray, ys: np.ndarray, x: int, y: int, w: int, h: int):
    return (
        table[ys + y + h, xs + x + w]
        - table[ys + y, xs + x + w]
        - table[ys + y + h, xs + x]
        + table[ys + y, xs + x]
    )


def _rebalanced_rects(
    feature: HaarFeature, scale: float, win_w: int, win_h: int
) -> list[tuple[int, int, int, int, float]]:
    """Scale feature rects and rebalance the first weight.

    Rounding each rect separately breaks the zero-sum of weight*area, which
    would make uniform regions respond; solving the first rect's weight from
    the others restores the balance exactly at every scale.
    """
    scaled = [(_scaled_rect(r, scale, win_w, win_h), r.weight) for r in feature.rects]
    (r0, _), rest = scaled[0], scaled[1:]
    tail = sum(w * (rw * rh) for (_, _, rw, rh), w in rest)
    w0 = -tail / (r0[2] * r0[3])
    return [(*r0, w0)] + [(*r, w) for r, w in rest]


def _eval_windows(
    model: CascadeModel, ii: IntegralImage, xs: np.ndarray, ys: np.ndarray, win_w: int, win_h: int, scale: float
) -> np.ndarray:
    """Evaluate the cascade at every (xs[i], ys[i]) window; returns a bool mask.

    Feature value for a window: sum over rects of weight * pixel-sum of the
    rect scaled by `scale` (offsets and sizes rounded, clamped to the window,
    first weight rebalanced), divided by
    (window_area / base_area) * max(window pixel stddev, 1).
    """
    n_pix = win_w * win_h
    s1 = _table_rect(ii.sum_table, xs, ys, 0, 0, win_w, win_h).astype(np.float64)
    s2 = _table_rect(ii.sq_table, xs, ys, 0, 0, win_w, win_h).astype(np.float64)
    mean = s1 / n_pix
    variance = s2 / n_pix - mean * mean
    sd = np.sqrt(np.maximum(variance, 0.0))
    sd = np.maximum(sd, 1.0)
    area_ratio = n_pix / float(model.base_window_w * model.base_window_h)
    denom = area_ratio * sd

    alive = np.ones(xs.shape[0], dtype=bool)
    for stage in model.stages:
        total = np.zeros(xs.shape[0], dtype=np.float64)
        for wc in stage.weak_classifiers:
            f = np.zeros(xs.shape[0], dtype=np.float64)
            for rx, ry, rw, rh, weight in _rebalanced_rects(wc.feature, scale, win_w, win_h):
                f += weight * _table_rect(ii.sum_table, xs, ys, rx, ry, rw, rh)
            fn = f / denom
            total += np.where(fn < wc.threshold, wc.left_value, wc.right_value)
        alive &= total >= stage.stage_threshold
        if not alive.any():
            break
    return alive


def eval_window(model: CascadeModel, ii: IntegralImage, window: Rect, scale: float) -> bool:
    """True iff every stage's summed stump votes reach its threshold at this window."""
    if not window.within(ii.width, ii.height):
        raise WindowOutOfBounds(f"window {window} outside {ii.width}x{ii.height}")
    xs = np.array([window.x], dtype=np.intp)
    ys = np.array([window.y], dtype=np.intp)
    return bool(_eval_windows(model, ii, xs, ys, window.w, window.h, scale)[0])


def _group_boxes(hits: list[Rect], min_neighbors: int) -> list[tuple[Rect, int]]:
    """Transitive grouping of similar boxes; groups are averaged.

    Two boxes are similar when every side differs by less than 20% of the
    smaller width. Components are found by label propagation over the dense
    similarity matrix (hit counts are small, a few hundred at most).
    """
    n = len(hits)
    if n == 0:
        return []
    arr = np.array([[b.x, b.y, b.w, b.h] for b in hits], dtype=np.float64)
    x1, y1, w, h = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    x2 = x1 + w
    y2 = y1 + h
    margin = 0.2 * np.minimum(w[:, None], w[None, :])
    similar = (
        (np.abs(x1[:, None] - x1[None, :]) < margin)
        & (np.abs(y1[:, None] - y1[None, :]) < margin)
        & (np.abs(x2[:, None] - x2[None, :]) < margin)
        & (np.abs(y2[:, None] - y2[None, :]) < margin)
    )
    return _group_array(arr, min_neighbors, similar)


def _group_array(arr: np.ndarray, min_neighbors: int, similar: np.ndarray) -> list[tuple[Rect, int]]:
    n = arr.shape[0]
    labels = np.full(n, -1, dtype=np.intp)
    component = 0
    for i in range(n):
        if labels[i] >= 0:
            continue
        members = np.zeros(n, dtype=bool)
        members[i] = True
        frontier = members.copy()
        while frontier.any():
            reached = similar[frontier].any(axis=0) & ~members
            members |= reached
            frontier = reached
        labels[members] = component
        component += 1
    out = []
    for c in range(component):
        members = labels == c
        count = int(members.sum())
        if count < max(min_neighbors, 1):
            continue
        mean = arr[members].mean(axis=0)
        avg = Rect(*(int(round(v)) for v in mean))
        out.append((avg, count))
    return out


def _group_hit_array(arr: np.ndarray, min_neighbors: int) -> list[tuple[Rect, int]]:
    """Grouping for raw scan hits already shaped (n, 4) as x, y, w, h floats."""
    if arr.shape[0] == 0:
        return []
    x1, y1, w, h = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    x2 = x1 + w
    y2 = y1 + h
    margin = 0.2 * np.minimum(w[:, None], w[None, :])
    similar = (
        (np.abs(x1[:, None] - x1[None, :]) < margin)
        & (np.abs(y1[:, None] - y1[None, :]) < margin)
        & (np.abs(x2[:, None] - x2[None, :]) < margin)
        & (np.abs(y2[:, None] - y2[None, :]) < margin)
    )
    return _group_array(arr, min_neighbors, similar)


def _grid_rect_sums(table: np.ndarray, x0: int, y0: int, nx: int, ny: int, step: int,
                    rx: int, ry: int, rw: int, rh: int) -> np.ndarray:
    """Rect sums for the whole scan grid at once via strided slicing."""
    rows1 = slice(y0 + ry, y0 + ry + ny * step, step)
    rows2 = slice(y0 + ry + rh, y0 + ry + rh + ny * step, step)
    cols1 = slice(x0 + rx, x0 + rx + nx * step, step)
    cols2 = slice(x0 + rx + rw, x0 + rx + rw + nx * step, step)
    return table[rows2, cols2] - table[rows1, cols2] - table[rows2, cols1] + table[rows1, cols1]


def _scan_scale(
    model: CascadeModel, ii: IntegralImage, roi: Rect, win_w: int, win_h: int, scale: float, step: int
) -> list[Rect]:
    """All passing windows at one scale; identical arithmetic to eval_window."""
    nx = (roi.w - win_w) // step + 1
    ny = (roi.h - win_h) // step + 1
    if nx <= 0 or ny <= 0:
        return _EMPTY_HITS
    x0, y0 = roi.x, roi.y
    n_pix = win_w * win_h
    s1 = _grid_rect_sums(ii.sum_table, x0, y0, nx, ny, step, 0, 0, win_w, win_h).astype(np.float64)
    s2 = _grid_rect_sums(ii.sq_table, x0, y0, nx, ny, step, 0, 0, win_w, win_h).astype(np.float64)
    mean = s1 / n_pix
    sd = np.maximum(np.sqrt(np.maximum(s2 / n_pix - mean * mean, 0.0)), 1.0)
    denom = (n_pix / float(model.base_window_w * model.base_window_h)) * sd

    # stage 1 over the full grid with strided sums
    first = model.stages[0]
    total = np.zeros((ny, nx), dtype=np.float64)
    for wc in first.weak_classifiers:
        f = np.zeros((ny, nx), dtype=np.float64)
        for rx, ry, rw, rh, weight in _rebalanced_rects(wc.feature, scale, win_w, win_h):
            f += weight * _grid_rect_sums(ii.sum_table, x0, y0, nx, ny, step, rx, ry, rw, rh)
        fn = f / denom
        total += np.where(fn < wc.threshold, wc.left_value, wc.right_value)
    alive = total >= first.stage_threshold
    if not alive.any():
        return _EMPTY_HITS

    # later stages only on survivors, with gathered sums
    iy, ix = np.nonzero(alive)
    xs = (x0 + ix * step).astype(np.intp)
    ys = (y0 + iy * step).astype(np.intp)
    live_denom = denom[iy, ix]
    for stage in model.stages[1:]:
        total = np.zeros(xs.shape[0], dtype=np.float64)
        for wc in stage.weak_classifiers:
            f = np.zeros(xs.shape[0], dtype=np.float64)
            for rx, ry, rw, rh, weight in _rebalanced_rects(wc.feature, scale, win_w, win_h):
                f += weight * _table_rect(ii.sum_table, xs, ys, rx, ry, rw, rh)
            fn = f / live_denom
            total += np.where(fn < wc.threshold, wc.left_value, wc.right_value)
        keep = total >= stage.stage_threshold
        xs, ys, live_denom = xs[keep], ys[keep], live_denom[keep]
        if xs.size == 0:
            return _EMPTY_HITS
    out = np.empty((xs.size, 4), dtype=np.float64)
    out[:, 0] = xs
    out[:, 1] = ys
    out[:, 2] = win_w
    out[:, 3] = win_h
    return out


def detect(
    model: CascadeModel,
    frame: Frame | IntegralImage,
    *,
    scale_factor: float = 1.1,
    min_neighbors: int = 3,
    min_size: Optional[int] = None,
    max_size: Optional[int] = None,
    search_roi: Optional[Rect] = None,
    kind: str = "face",
) -> list[Detection]:
    """Multi-scale scan; overlapping raw hits are grouped and averaged.

    Boxes group when all four sides differ by less than 20% of the smaller
    width; groups smaller than min_neighbors are dropped. Results are sorted
    by area, largest first.
    """
    if scale_factor <= 1.0:
        raise ValueError("scale_factor must be > 1")
    if min_neighbors < 0:
        raise ValueError("min_neighbors must be >= 0")
    ii = frame if isinstance(frame, IntegralImage) else IntegralImage.from_frame(frame)
    roi = search_roi.clip(ii.width, ii.height) if search_roi is not None else Rect(0, 0, ii.width, ii.height)
    if roi.area == 0:
        return []
    if min_size is None:
        min_size = max(ii.height // 8, model.base_window_h)

    hit_arrays = []
    scale = max(1.0, min_size / float(model.base_window_h))
    while True:
        win_w = int(round(model.base_window_w * scale))
        win_h = int(round(model.base_window_h * scale))
        if win_w > roi.w or win_h > roi.h:
            break
        if max_size is not None and win_h > max_size:
            break
        step = max(1, int(round(scale)))
        hit_arrays.append(_scan_scale(model, ii, roi, win_w, win_h, scale, step))
        scale *= scale_factor

    hits = np.concatenate(hit_arrays, axis=0) if hit_arrays else _EMPTY_HITS
    grouped = _group_hit_array(hits, min_neighbors)
    detections = [
        Detection(box=box.clip(ii.width, ii.height), kind=kind, neighbor_count=count)
        for box, count in grouped
    ]
    detections.sort(key=lambda d: d.box.area, reverse=True)
    return detections


EYE_ROI_HEIGHT_FRAC = 0.55


def locate_eyes(
    eye_model: CascadeModel,
    frame: Frame | IntegralImage,
    face_box: Rect,
    *,
    scale_factor: float = 1.1,
    min_neighbors: int = 2,
) -> tuple[Optional[Detection], Optional[Detection]]:
    """Find one eye per half of the upper face region.

    Returns (designated, other): the designated eye is the one in the right
    half of the face box (the observer's left eye); the other acts as a
    liveness check. Largest detection per half wins.
    """
    ii = frame if isinstance(frame, IntegralImage) else IntegralImage.from_frame(frame)
    roi_h = int(round(face_box.h * EYE_ROI_HEIGHT_FRAC))
    half_w = face_box.w // 2
    left_half = Rect(face_box.x, face_box.y, half_w, roi_h)
    right_half = Rect(face_box.x + half_w, face_box.y, face_box.w - half_w, roi_h)
    min_size = max(eye_model.base_window_h, int(round(face_box.w * 0.21)))
    max_size = int(round(face_box.w * 0.29))

    def best(roi: Rect) -> Optional[Detection]:
        found = detect(
            eye_model,
            ii,
            scale_factor=scale_factor,
            min_neighbors=min_neighbors,
            min_size=min_size,
            max_size=max_size,
            search_roi=roi,
            kind="eye",
        )
        return found[0] if found else None

    return best(right_half), best(left_half)
