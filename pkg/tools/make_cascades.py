"""Regenerate the shipped cascade fixtures from synthetic-scene statistics.

Feature geometry is declared here. Each feature's stump threshold is set just
below the weakest response seen on well-aligned object windows, so aligned
windows always pass every stage; discrimination against everything else comes
from the conjunction of stages plus neighbor grouping, which the validation
phase checks by running the real detector over a matrix of scenes.

Run from the repo root:  python tools/make_cascades.py
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from vpctrack.frames import (
    SyntheticSceneSpec,
    render_frame,
    pupil_center_px,
    EYE_CENTERS,
    EYE_SOCKET_SEMI,
)
from vpctrack.geometry import Rect
from vpctrack.haar import (
    CascadeModel,
    CascadeStage,
    FeatureRect,
    HaarFeature,
    IntegralImage,
    WeakClassifier,
    detect,
    locate_eyes,
    serialize_cascade,
    _table_rect,
    _rebalanced_rects,
)

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "vpctrack" / "cascades"

FACE_BASE = 24
EYE_BASE = 16


@dataclass
class Candidate:
    name: str
    rects: list[tuple[int, int, int, int, float]]
    sign: int  # +1: aligned object windows give HIGH fn, -1: LOW fn


# Face features in 24x24 base units. The schematic face maps the box onto the
# window: forehead rows ~2-7, brow+eye band rows ~7-13, cheeks rows ~13-17,
# mouth rows ~17-20, background visible at the corners.
# Scene rows (fractions of the face box): forehead skin to 0.21, brows
# 0.21-0.29, gap, sockets 0.345-0.455, cheek skin, mouth 0.745-0.815.
# The background is darker than skin, so the face is a bright interior inside
# a dark ring while every face-internal structure (socket, brow, mouth) is a
# dark blob inside bright skin; the two ring features separate those
# polarities outright, the band features then pin the face layout.
FACE_FEATURES = [
    Candidate("ring_vs_interior", [(0, 0, 24, 24, 1.0), (4, 4, 16, 16, -2.25)], -1),
    Candidate(
        "corners_vs_crown",
        [(0, 0, 5, 5, 1.0), (19, 0, 5, 5, 1.0), (7, 1, 10, 5, -1.0)],
        -1,
    ),
    Candidate("forehead_vs_eyeband", [(3, 3, 18, 2, 2.5), (3, 5, 18, 5, -1.0)], +1),
    Candidate("cheek_vs_eyeband", [(3, 13, 18, 4, 1.5), (3, 5, 18, 6, -1.0)], +1),
    Candidate("mouth_dip", [(5, 16, 14, 4, 1.0), (9, 16, 6, 4, -14.0 / 6.0)], +1),
]
FACE_STAGES = [
    ["ring_vs_interior"],
    ["corners_vs_crown", "forehead_vs_eyeband"],
    ["cheek_vs_eyeband", "mouth_dip"],
]

# Eye features in 16x16 base units: scan windows ~1.0-1.3x the socket width
# put the socket band around rows 5-11, the brow in the top rows and clean
# skin in the bottom rows; both contrasts are gaze-invariant.
EYE_FEATURES = [
    Candidate("below_vs_above", [(2, 11, 12, 5, 1.0), (2, 0, 12, 5, -1.0)], +1),
    Candidate("below_vs_socket", [(2, 11, 12, 5, 1.0), (2, 5, 12, 6, -60.0 / 72.0)], +1),
]
EYE_STAGES = [
    ["below_vs_above"],
    ["below_vs_socket"],
]


def feature_values(cand, ii, xs, ys, win, scale, base):
    n_pix = win * win
    s1 = _table_rect(ii.sum_table, xs, ys, 0, 0, win, win).astype(np.float64)
    s2 = _table_rect(ii.sq_table, xs, ys, 0, 0, win, win).astype(np.float64)
    mean = s1 / n_pix
    sd = np.maximum(np.sqrt(np.maximum(s2 / n_pix - mean * mean, 0.0)), 1.0)
    denom = (n_pix / float(base * base)) * sd
    feature = HaarFeature(tuple(FeatureRect(*r) for r in cand.rects))
    f = np.zeros(xs.shape[0], dtype=np.float64)
    for sx, sy, sw, sh, w in _rebalanced_rects(feature, scale, win, win):
        f += w * _table_rect(ii.sum_table, xs, ys, sx, sy, sw, sh)
    return f / denom


def scan_scales(base, min_size, max_size, limit, scale_factor=1.1):
    scale = max(1.0, min_size / float(base))
    while True:
        win = int(round(base * scale))
        if win > limit or (max_size and win > max_size):
            return
        yield win, scale
        scale *= scale_factor


def face_specs(seeds=(0, 1, 2)):
    for fw, fh in [(0.35, 0.46), (0.5, 0.65), (0.62, 0.8)]:
        for ox, oy in [(0.25, 0.15), (0.1, 0.05), (0.35, 0.12)]:
            if ox + fw > 0.98 or oy + fh > 0.98:
                continue
            for gaze in (0.0, 0.3, 0.5, 0.8, 1.0):
                for noise, seed in zip((0.0, 3.0, 5.0), seeds):
                    yield SyntheticSceneSpec(
                        gaze_track=[(0, gaze)],
                        face_box_norm=(ox, oy, fw, fh),
                        noise_sigma=noise,
                    ), seed


def collect_face_minima():
    mins = {c.name: np.inf for c in FACE_FEATURES}
    n_windows = 0
    for spec, seed in face_specs():
        rng = np.random.default_rng(seed)
        frame = render_frame(spec, 0, 0, rng)
        ii = IntegralImage.from_frame(frame)
        fx, fy, fw, fh = spec.face_box_px()
        cx, cy = fx + fw / 2.0, fy + fh / 2.0
        size = (fw + fh) / 2.0
        for win, scale in scan_scales(
            FACE_BASE, spec.height // 8, None, min(spec.width, spec.height), scale_factor=1.05
        ):
            if not 0.95 <= win / size <= 1.15:
                continue
            step = max(1, int(round(scale)))
            xs1 = np.arange(0, spec.width - win + 1, step, dtype=np.intp)
            ys1 = np.arange(0, spec.height - win + 1, step, dtype=np.intp)
            gx, gy = np.meshgrid(xs1, ys1)
            xs, ys = gx.ravel(), gy.ravel()
            tol = 0.5 * step + 1.0
            aligned = (np.abs(xs + win / 2.0 - cx) <= tol) & (np.abs(ys + win / 2.0 - cy) <= tol)
            if not aligned.any():
                continue
            n_windows += int(aligned.sum())
            for cand in FACE_FEATURES:
                fn = feature_values(cand, ii, xs[aligned], ys[aligned], win, scale, FACE_BASE) * cand.sign
                mins[cand.name] = min(mins[cand.name], fn.min())
    print(f"face: {n_windows} aligned windows measured")
    return mins


def eye_specs(seeds=(0, 3)):
    for fw, fh in [(0.4, 0.52), (0.5, 0.65), (0.62, 0.8)]:
        for gaze in (0.0, 0.25, 0.5, 0.75, 1.0):
            for noise, seed in zip((0.0, 5.0), seeds):
                yield SyntheticSceneSpec(
                    gaze_track=[(0, gaze)],
                    face_box_norm=(0.22, 0.1, fw, fh),
                    noise_sigma=noise,
                ), seed


def collect_eye_minima():
    mins = {c.name: np.inf for c in EYE_FEATURES}
    n_windows = 0
    for spec, seed in eye_specs():
        rng = np.random.default_rng(seed)
        frame = render_frame(spec, 0, 0, rng)
        ii = IntegralImage.from_frame(frame)
        fx, fy, fw, fh = spec.face_box_px()
        socket_w = 2.0 * EYE_SOCKET_SEMI[0] * fw
        centers = [(fx + ex * fw, fy + ey * fh) for ex, ey in EYE_CENTERS]
        min_size = max(EYE_BASE, int(round(fw * 0.21)))
        max_size = int(round(fw * 0.29))
        for win, scale in scan_scales(EYE_BASE, min_size, max_size, min(spec.width, spec.height)):
            if not 0.95 <= win / socket_w <= 1.33:
                continue
            step = max(1, int(round(scale)))
            xs1 = np.arange(0, spec.width - win + 1, step, dtype=np.intp)
            ys1 = np.arange(0, spec.height - win + 1, step, dtype=np.intp)
            gx, gy = np.meshgrid(xs1, ys1)
            xs, ys = gx.ravel(), gy.ravel()
            tol = 0.5 * step + 1.0
            aligned = np.zeros(xs.shape[0], dtype=bool)
            for cx, cy in centers:
                aligned |= (np.abs(xs + win / 2.0 - cx) <= tol) & (np.abs(ys + win / 2.0 - cy) <= tol)
            if not aligned.any():
                continue
            n_windows += int(aligned.sum())
            for cand in EYE_FEATURES:
                fn = feature_values(cand, ii, xs[aligned], ys[aligned], win, scale, EYE_BASE) * cand.sign
                mins[cand.name] = min(mins[cand.name], fn.min())
    print(f"eye: {n_windows} aligned windows measured")
    return mins


def build_model(candidates, stages_spec, mins, base, label, factor=0.72):
    print(f"== {label} ==")
    by_name = {c.name: c for c in candidates}
    thresholds = {}
    for cand in candidates:
        lo = mins[cand.name]
        if lo <= 4.0:
            raise SystemExit(f"{cand.name}: aligned-window minimum {lo:.2f} too weak, adjust geometry")
        thr = factor * lo
        thresholds[cand.name] = thr
        print(f"  {cand.name:22s} aligned_min {lo:8.2f}  threshold {thr:8.2f}")
    stages = []
    for names in stages_spec:
        classifiers = []
        for name in names:
            cand = by_name[name]
            feature = HaarFeature(tuple(FeatureRect(*r) for r in cand.rects))
            if cand.sign > 0:
                wc = WeakClassifier(feature, thresholds[name], left_value=-1.0, right_value=1.0)
            else:
                wc = WeakClassifier(feature, -thresholds[name], left_value=1.0, right_value=-1.0)
            classifiers.append(wc)
        stages.append(CascadeStage(tuple(classifiers), stage_threshold=len(classifiers) - 0.5))
    return CascadeModel(base, base, tuple(stages))


def validate(face_model, eye_model):
    failures = []
    min_count = np.inf
    for fw, fh in [(0.4, 0.52), (0.5, 0.65), (0.58, 0.75)]:
        for ox, oy in [(0.25, 0.15), (0.14, 0.08), (0.3, 0.2)]:
            if ox + fw > 0.99 or oy + fh > 0.99:
                continue
            for gaze in (0.0, 0.5, 1.0):
                for noise, seed in ((0.0, 7), (5.0, 11)):
                    spec = SyntheticSceneSpec(
                        gaze_track=[(0, gaze)],
                        face_box_norm=(ox, oy, fw, fh),
                        noise_sigma=noise,
                    )
                    frame = render_frame(spec, 0, 0, np.random.default_rng(seed))
                    tag = f"fw={fw} pos=({ox},{oy}) gaze={gaze} noise={noise}"
                    found = detect(face_model, frame, scale_factor=1.05, min_size=frame.height // 4, min_neighbors=8)
                    fx, fy, fwp, fhp = spec.face_box_px()
                    cx, cy = fx + fwp / 2, fy + fhp / 2
                    if len(found) != 1:
                        failures.append(f"{tag}: {len(found)} face detections {[d.box for d in found]}")
                        continue
                    box = found[0].box
                    min_count = min(min_count, found[0].neighbor_count)
                    if not box.contains_point(cx, cy):
                        failures.append(f"{tag}: face box {box} misses center ({cx},{cy})")
                        continue
                    if abs(box.center[0] - cx) > 0.1 * fwp or abs(box.center[1] - cy) > 0.1 * fhp:
                        failures.append(f"{tag}: face box {box} center far from ({cx:.0f},{cy:.0f})")
                    designated, other = locate_eyes(eye_model, frame, box)
                    if designated is None or other is None:
                        failures.append(f"{tag}: eyes missing d={designated} o={other}")
                        continue
                    px, py = pupil_center_px(spec, gaze, eye=1)
                    if not designated.box.contains_point(px, py):
                        failures.append(f"{tag}: designated eye {designated.box} misses pupil ({px:.0f},{py:.0f})")
                    ox2, oy2 = pupil_center_px(spec, gaze, eye=0)
                    if not other.box.contains_point(ox2, oy2):
                        failures.append(f"{tag}: other eye {other.box} misses pupil ({ox2:.0f},{oy2:.0f})")
    print(f"smallest face group size seen: {min_count}")

    # translation equivariance at scale 1: +-2 px box-center shift
    base = SyntheticSceneSpec(gaze_track=[(0, 0.5)], face_box_norm=(0.25, 0.15, 0.5, 0.65))
    f0 = render_frame(base, 0, 0)
    d0 = detect(face_model, f0, scale_factor=1.05, min_size=f0.height // 4, min_neighbors=8)
    for dx_n, dy_n in ((10 / 320, 0), (0, 8 / 240), (7 / 320, 5 / 240)):
        shifted = SyntheticSceneSpec(
            gaze_track=[(0, 0.5)], face_box_norm=(0.25 + dx_n, 0.15 + dy_n, 0.5, 0.65)
        )
        f1 = render_frame(shifted, 0, 0)
        d1 = detect(face_model, f1, scale_factor=1.05, min_size=f1.height // 4, min_neighbors=8)
        if len(d0) != 1 or len(d1) != 1:
            failures.append(f"equivariance: detection counts {len(d0)}/{len(d1)}")
            continue
        dx_px, dy_px = dx_n * 320, dy_n * 240
        got_dx = d1[0].box.center[0] - d0[0].box.center[0]
        got_dy = d1[0].box.center[1] - d0[0].box.center[1]
        if abs(got_dx - dx_px) > 2 or abs(got_dy - dy_px) > 2:
            failures.append(
                f"equivariance: shift ({dx_px},{dy_px}) detected ({got_dx:.1f},{got_dy:.1f})"
            )

    # blank scenes must produce nothing
    for noise, seed in ((0.0, 0), (5.0, 1)):
        spec = SyntheticSceneSpec(gaze_track=[(0, 0.5)], noise_sigma=noise, face_box_norm=(0.4, 0.4, 0.01, 0.01))
        frame = render_frame(spec, 0, 0, np.random.default_rng(seed))
        # overwrite with pure background + noise
        from vpctrack.frames import _BG

        bg = np.full((spec.height, spec.width, 3), _BG, dtype=np.float64)
        if noise:
            bg += np.random.default_rng(seed).normal(0, noise, bg.shape)
        from vpctrack.frames import Frame

        blank = Frame(0, 0, spec.width, spec.height, np.clip(np.rint(bg), 0, 255).astype(np.uint8))
        found = detect(face_model, blank, scale_factor=1.05, min_size=blank.height // 4, min_neighbors=8)
        if found:
            failures.append(f"blank noise={noise}: {len(found)} spurious detections")
    return failures


def serialize_legacy(model: CascadeModel, name: str) -> str:
    """Legacy tree-of-stumps XML layout, to exercise the second parser path."""
    lines = [
        '<?xml version="1.0"?>',
        "<opencv_storage>",
        f'<{name} type_id="opencv-haar-classifier">',
        f"  <size>{model.base_window_w} {model.base_window_h}</size>",
        "  <stages>",
    ]
    for stage in model.stages:
        lines.append("    <_>")
        lines.append("      <trees>")
        for wc in stage.weak_classifiers:
            lines.append("        <_>")
            lines.append("          <_>")
            lines.append("            <feature>")
            lines.append("              <rects>")
            for r in wc.feature.rects:
                lines.append(f"                <_>{r.x} {r.y} {r.w} {r.h} {float(r.weight)!r}</_>")
            lines.append("              </rects>")
            lines.append("              <tilted>0</tilted>")
            lines.append("            </feature>")
            lines.append(f"            <threshold>{float(wc.threshold)!r}</threshold>")
            lines.append(f"            <left_val>{float(wc.left_value)!r}</left_val>")
            lines.append(f"            <right_val>{float(wc.right_value)!r}</right_val>")
            lines.append("          </_>")
            lines.append("        </_>")
        lines.append("      </trees>")
        lines.append(f"      <stage_threshold>{float(stage.stage_threshold)!r}</stage_threshold>")
        lines.append("      <parent>-1</parent>")
        lines.append("      <next>-1</next>")
        lines.append("    </_>")
    lines.append("  </stages>")
    lines.append(f"</{name}>")
    lines.append("</opencv_storage>")
    return "\n".join(lines) + "\n"


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)

    face_model = build_model(FACE_FEATURES, FACE_STAGES, collect_face_minima(), FACE_BASE, "face cascade")
    eye_model = build_model(EYE_FEATURES, EYE_STAGES, collect_eye_minima(), EYE_BASE, "eye cascade")

    failures = validate(face_model, eye_model)
    if failures:
        print(f"\nVALIDATION FAILURES ({len(failures)}):")
        for f in failures[:40]:
            print("  " + f)
        raise SystemExit(1)
    print("\nvalidation clean")

    (OUT_DIR / "synthetic_face.xml").write_text(serialize_cascade(face_model))
    (OUT_DIR / "synthetic_eye.xml").write_text(serialize_legacy(eye_model, "synthetic_eye"))
    print(f"wrote {OUT_DIR}/synthetic_face.xml and synthetic_eye.xml")


if __name__ == "__main__":
    main()
