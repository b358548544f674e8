"""Pose and attention map extraction.

Two interchangeable sources produce the structural conditions:

- oracle mode renders directly from generator metadata (the ground-truth
  skeleton / foreground mask);
- heuristic mode works on pixels only, tuned to the synthetic figure
  conventions in :mod:`bodyrestore.anatomy` (uniform background, skin
  and shoe palettes, upright figure).

Pose maps are 3-channel: joint Gaussian blobs (sigma 2px), 2px
anti-aliased limb lines, and an identity channel weighting each joint
blob by its index. Attention maps are single-channel foreground
heatmaps in [0,1]. Both persist as PNG next to images with suffixes
``_pose.png`` / ``_attn.png``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import anatomy, raster
from . import kernels as K
from .metrics import gaussian_kernel1d

JOINT_SIGMA = 2.0
LINE_HALFWIDTH = 1.0
# attention smoothing: 3px kernel radius (sigma 1) so thin limbs survive
# the 0.5 level; zero exactly outside the 3px-dilated foreground
ATTN_ORACLE_SIGMA = 1.0
ATTN_ORACLE_RADIUS = 3
ATTN_HEURISTIC_SIGMA = 1.5
FG_THRESHOLD = 0.12
SKIN_MATCH = 0.10
MIN_COVERAGE = 0.02

POSE_SUFFIX = "_pose.png"
ATTN_SUFFIX = "_attn.png"
PARTS_SUFFIX = "_parts.png"


@dataclass
class Skeleton:
    """12-joint figure: (x, y) per joint plus visibility flags."""

    joints: np.ndarray  # (12, 2) float, (x, y) pixel coords
    visible: np.ndarray  # (12,) bool

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.joints.shape != (anatomy.NUM_JOINTS, 2):
            raise ValueError(f"joints must be ({anatomy.NUM_JOINTS}, 2), got {self.joints.shape}")
        if self.visible.shape != (anatomy.NUM_JOINTS,):
            raise ValueError("visibility must have one flag per joint")

    def validate_bounds(self, hw: tuple[int, int]) -> None:
        h, w = hw
        vis = self.joints[self.visible]
        if vis.size and (vis[:, 0].min() < 0 or vis[:, 0].max() > w - 1
                         or vis[:, 1].min() < 0 or vis[:, 1].max() > h - 1):
            raise ValueError("visible joint outside image bounds")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.joints[anatomy.JOINT_INDEX[name]]


def render_pose(skel: Skeleton, hw: tuple[int, int]) -> np.ndarray:
    """Render a skeleton into the 3-channel pose map."""
    h, w = hw
    xs, ys = raster.pixel_grid(hw)
    blobs = np.zeros(hw)
    ident = np.zeros(hw)
    for i in range(anatomy.NUM_JOINTS):
        if not skel.visible[i]:
            continue
        jx, jy = skel.joints[i]
        g = np.exp(-((xs - jx) ** 2 + (ys - jy) ** 2) / (2.0 * JOINT_SIGMA ** 2))
        blobs = np.maximum(blobs, g)
        ident = np.maximum(ident, g * ((i + 1) / anatomy.NUM_JOINTS))
    lines = np.zeros(hw)
    for a, b in anatomy.LIMBS:
        if not (skel.visible[a] and skel.visible[b]):
            continue
        d = raster.segment_distance(hw, skel.joints[a], skel.joints[b])
        lines = np.maximum(lines, np.clip(LINE_HALFWIDTH + 0.5 - d, 0.0, 1.0))
    return np.stack([blobs, lines, ident], axis=-1).astype(np.float32)


def estimate_background(img: np.ndarray) -> np.ndarray:
    """Median color of the 1px image border."""
    border = np.concatenate([img[0], img[-1], img[:, 0], img[:, -1]], axis=0)
    return np.median(border, axis=0)


def foreground_mask(img: np.ndarray, threshold: float = FG_THRESHOLD) -> np.ndarray:
    bg = estimate_background(img)
    dist = np.max(np.abs(img - bg), axis=-1)
    return dist > threshold


def foreground_coverage(img: np.ndarray) -> float:
    return float(foreground_mask(img).mean())


def foreground_bbox(img: np.ndarray) -> tuple[int, int, int, int] | None:
    """(top, left, bottom, right) of the heuristic foreground, or None."""
    mask = foreground_mask(img)
    if not mask.any():
        return None
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def extract_attention(I_reg: np.ndarray, mode: str = "heuristic",
                      meta: np.ndarray | None = None) -> np.ndarray:
    """Single-channel body attention heatmap in [0,1].

    Oracle mode smooths the ground-truth foreground mask (3px Gaussian,
    exactly zero outside the kernel support); heuristic mode thresholds
    distance to the estimated background color, smooths, and rescales to
    peak 1. Degenerate images yield an all-zero map.
    """
    if mode == "oracle":
        if meta is None:
            raise ValueError("oracle attention requires the foreground mask")
        mask = meta.astype(np.float64)
        sigma, radius = ATTN_ORACLE_SIGMA, ATTN_ORACLE_RADIUS
    elif mode == "heuristic":
        mask = foreground_mask(I_reg).astype(np.float64)
        sigma = ATTN_HEURISTIC_SIGMA
        radius = int(np.ceil(3.0 * sigma))
    else:
        raise ValueError(f"mode must be oracle|heuristic, got {mode!r}")
    smoothed = K.filter2_same(mask, gaussian_kernel1d(sigma, radius))
    if mode == "heuristic":
        peak = smoothed.max()
        if peak > 0.0:
            smoothed = smoothed / peak
    return np.clip(smoothed, 0.0, 1.0).astype(np.float32)


def extract_pose(I_reg: np.ndarray, mode: str = "heuristic",
                 meta: Skeleton | None = None) -> np.ndarray | None:
    """Pose map from a restored image; None when nothing is detected."""
    hw = I_reg.shape[:2]
    if mode == "oracle":
        if meta is None:
            raise ValueError("oracle pose requires a skeleton")
        return render_pose(meta, hw)
    if mode != "heuristic":
        raise ValueError(f"mode must be oracle|heuristic, got {mode!r}")
    skel = detect_skeleton(I_reg)
    if skel is None:
        return None
    return render_pose(skel, hw)


def _skin_mask(img: np.ndarray) -> np.ndarray:
    dist = np.full(img.shape[:2], np.inf)
    for tone in anatomy.SKIN_TONES.values():
        dist = np.minimum(dist, np.max(np.abs(img - np.asarray(tone)), axis=-1))
    return dist < SKIN_MATCH


def detect_skeleton(img: np.ndarray) -> Skeleton | None:
    """Heuristic 12-joint detection on a synthetic-style figure image.

    Exploits the generator conventions: near-uniform background, topmost
    head, skin-toned head/hands (and shins when legs are bare), feet at
    the foreground bottom. Returns None when foreground coverage is
    below MIN_COVERAGE.
    """
    fg = foreground_mask(img)
    if fg.mean() < MIN_COVERAGE:
        return None
    # keep only the largest connected component: regression outputs can
    # carry isolated artifact pixels that would corrupt the band scans
    labels, count = ndimage.label(fg)
    if count > 1:
        sizes = ndimage.sum_labels(np.ones(labels.shape), labels,
                                   index=np.arange(1, count + 1))
        fg = labels == (1 + int(np.argmax(sizes)))
        if fg.mean() < MIN_COVERAGE:
            return None
    h, w = img.shape[:2]
    rows = np.flatnonzero(fg.any(axis=1))
    y_top, y_bot = int(rows[0]), int(rows[-1])
    span = max(y_bot - y_top, 1)

    # head: the disk equator is the widest row band of the top region
    top_limit = y_top + max(2, int(0.18 * span))
    widths = fg[y_top:top_limit + 1].sum(axis=1)
    wmax = widths.max()
    eq_rows = np.flatnonzero(widths >= max(wmax - 1, 1))
    if not eq_rows.size:
        return None
    head_cy = float(y_top + eq_rows.mean())
    centroids = [np.flatnonzero(fg[y_top + r]).mean() for r in eq_rows]
    head_cx = float(np.mean(centroids))
    head_r = max(wmax / 2.0 - 0.5, 2.0)

    # figure scale from the full vertical span (nominal height fractions
    # sum to ~1.02 from head top to sole; a hat adds ~0.04)
    scale = span / 1.02
    limb_hw = anatomy.PROP["limb_halfwidth"] * scale

    # shoulder line: first row below the head disk where the span widens
    # past the neck stroke (the torso top edge)
    neck_guess = head_cy + head_r + anatomy.PROP["neck_gap"] * scale
    torso_top = None
    for row in range(int(head_cy + head_r + 1), min(int(neck_guess + 0.12 * scale) + 4, h)):
        if fg[row].sum() > 0.15 * scale:
            torso_top = row
            break
    if torso_top is None:
        torso_top = int(neck_guess + anatomy.PROP["shoulder_drop"] * scale)
    sho_y = torso_top + limb_hw + 0.5
    neck = np.array([head_cx, sho_y - anatomy.PROP["shoulder_drop"] * scale])
    row = int(round(np.clip(sho_y + 1.0, 0, h - 1)))
    sho_cols = np.flatnonzero(fg[row])
    if sho_cols.size:
        l_sho = np.array([sho_cols[0] + limb_hw + 0.5, sho_y])
        r_sho = np.array([sho_cols[-1] - limb_hw - 0.5, sho_y])
    else:
        shw = anatomy.PROP["shoulder_halfwidth"] * scale
        l_sho = np.array([head_cx - shw, sho_y])
        r_sho = np.array([head_cx + shw, sho_y])

    # hips: prefer the between-legs gap on the center column
    hip_hw = anatomy.PROP["hip_halfwidth"] * scale
    pelvis_y = neck[1] + anatomy.PROP["torso_len"] * scale
    cx_col = int(round(np.clip(head_cx, 0, w - 1)))
    scan_from = int(neck[1] + 0.20 * scale)
    scan_to = min(int(neck[1] + 0.45 * scale), h - 1)
    column = fg[:, cx_col]
    gap_rows = np.flatnonzero(~column[scan_from:scan_to + 1])
    if gap_rows.size:
        pelvis_y = float(scan_from + gap_rows[0] - 1 - limb_hw)
    l_hip = np.array([head_cx - hip_hw, pelvis_y])
    r_hip = np.array([head_cx + hip_hw, pelvis_y])

    # feet: per-side centroids of the bottom foreground band
    band_top = y_bot - max(2, int(0.05 * span))
    band = fg[band_top:y_bot + 1]
    bys, bxs = np.nonzero(band)
    if bxs.size:
        mid = bxs.mean()
        l_pts = bxs[bxs < mid], bys[bxs < mid]
        r_pts = bxs[bxs >= mid], bys[bxs >= mid]
        l_foot = np.array([l_pts[0].mean() if l_pts[0].size else head_cx - hip_hw,
                           band_top + (l_pts[1].mean() if l_pts[1].size else 0)])
        r_foot = np.array([r_pts[0].mean() if r_pts[0].size else head_cx + hip_hw,
                           band_top + (r_pts[1].mean() if r_pts[1].size else 0)])
    else:
        l_foot = np.array([head_cx - hip_hw, float(y_bot)])
        r_foot = np.array([head_cx + hip_hw, float(y_bot)])

    # hands and bare shins from skin-toned blobs, gated by plausible
    # vertical ranges so the neck stroke never competes
    skin = _skin_mask(img)
    xs, ys = raster.pixel_grid(img.shape[:2])
    skin &= np.hypot(xs - head_cx, ys - head_cy) > 1.3 * head_r
    skin &= ys > sho_y + 0.08 * scale
    labels, count = ndimage.label(skin)
    hand_lo = sho_y + 0.14 * scale
    hand_hi = pelvis_y + 0.12 * scale
    hands, shins = [], []
    for idx in range(1, count + 1):
        blob = labels == idx
        area = int(blob.sum())
        if area < 4:
            continue
        bys_, bxs_ = np.nonzero(blob)
        bh = bys_.max() - bys_.min() + 1
        bw = bxs_.max() - bxs_.min() + 1
        elong = max(bh, bw) / max(min(bh, bw), 1)
        centroid = np.array([bxs_.mean(), bys_.mean()])
        if elong < 2.2 and hand_lo <= centroid[1] <= hand_hi:
            hands.append((area, centroid))
        elif elong >= 2.2 and centroid[1] > pelvis_y + 0.10 * scale:
            shins.append((bys_, bxs_))
    hands.sort(key=lambda t: -t[0])
    hand_pts = [c for _, c in hands[:2]]
    arm_len = anatomy.PROP["arm_len"] * scale
    fallback_angle = np.deg2rad(19.0)
    defaults = [
        np.array([l_sho[0] - arm_len * np.sin(fallback_angle),
                  l_sho[1] + arm_len * np.cos(fallback_angle)]),
        np.array([r_sho[0] + arm_len * np.sin(fallback_angle),
                  r_sho[1] + arm_len * np.cos(fallback_angle)]),
    ]
    if len(hand_pts) == 2:
        hand_pts.sort(key=lambda c: c[0])
        l_hand, r_hand = hand_pts
    elif len(hand_pts) == 1:
        if hand_pts[0][0] < head_cx:
            l_hand, r_hand = hand_pts[0], defaults[1]
        else:
            l_hand, r_hand = defaults[0], hand_pts[0]
    else:
        l_hand, r_hand = defaults

    # knees: top of a bare-shin blob when present, else the leg midpoint
    thigh = anatomy.PROP["thigh_len"] * scale
    shin = anatomy.PROP["shin_len"] * scale
    frac = thigh / (thigh + shin)

    def knee_for(hip, foot, side_sign):
        x_lin = hip[0] + frac * (foot[0] - hip[0])
        for bys_, bxs_ in shins:
            cx_blob = bxs_.mean()
            if np.sign(cx_blob - head_cx) == side_sign and abs(cx_blob - x_lin) < 0.15 * scale:
                top_row = bys_.min()
                top_x = bxs_[bys_ == top_row].mean()
                return np.array([top_x, float(top_row)])
        y_knee = hip[1] + frac * (foot[1] - hip[1])
        row_k = int(round(np.clip(y_knee, 0, h - 1)))
        win = np.flatnonzero(fg[row_k])
        win = win[np.abs(win - x_lin) < 0.10 * scale]
        x_knee = win.mean() if win.size else x_lin
        return np.array([x_knee, y_knee])

    l_knee = knee_for(l_hip, l_foot, -1)
    r_knee = knee_for(r_hip, r_foot, 1)

    joints = np.stack([
        np.array([head_cx, head_cy]), neck, l_sho, r_sho,
        np.asarray(l_hand, dtype=float), np.asarray(r_hand, dtype=float),
        l_hip, r_hip, l_knee, r_knee, l_foot, r_foot,
    ])
    if not np.all(np.isfinite(joints)):
        return None
    joints[:, 0] = np.clip(joints[:, 0], 0, w - 1)
    joints[:, 1] = np.clip(joints[:, 1], 0, h - 1)
    return Skeleton(joints=joints, visible=np.ones(anatomy.NUM_JOINTS, dtype=bool))


def part_masks_from_skeleton(skel: Skeleton, hw: tuple[int, int]) -> np.ndarray:
    """(5,H,W) boolean masks for head/torso/hands/legs/feet regions.

    Regions are derived geometrically from the joints and made disjoint
    by priority (feet > hands > head > legs > torso).
    """
    head, neck = skel["head"], skel["neck"]
    l_sho, r_sho = skel["l_shoulder"], skel["r_shoulder"]
    l_hand, r_hand = skel["l_hand"], skel["r_hand"]
    l_hip, r_hip = skel["l_hip"], skel["r_hip"]
    l_knee, r_knee = skel["l_knee"], skel["r_knee"]
    l_foot, r_foot = skel["l_foot"], skel["r_foot"]
    scale = max(np.linalg.norm(((l_hip + r_hip) / 2) - neck), 1.0) / anatomy.PROP["torso_len"]

    head_r = max(np.linalg.norm(head - neck) * 0.8, 2.0)
    alphas = {
        "head": raster.disk_alpha(hw, head, head_r),
        "torso": raster.convex_poly_alpha(hw, [l_sho, r_sho, r_hip, l_hip]),
        "hands": np.maximum(
            raster.disk_alpha(hw, l_hand, anatomy.PROP["hand_radius"] * scale + 0.5),
            raster.disk_alpha(hw, r_hand, anatomy.PROP["hand_radius"] * scale + 0.5)),
        "legs": np.maximum.reduce([
            raster.capsule_alpha(hw, l_hip, l_knee, anatomy.PROP["limb_halfwidth"] * scale),
            raster.capsule_alpha(hw, l_knee, l_foot, anatomy.PROP["limb_halfwidth"] * scale),
            raster.capsule_alpha(hw, r_hip, r_knee, anatomy.PROP["limb_halfwidth"] * scale),
            raster.capsule_alpha(hw, r_knee, r_foot, anatomy.PROP["limb_halfwidth"] * scale)]),
        "feet": np.maximum(
            raster.ellipse_alpha(hw, l_foot, anatomy.PROP["foot_halfwidth"] * scale,
                                 anatomy.PROP["foot_halfheight"] * scale),
            raster.ellipse_alpha(hw, r_foot, anatomy.PROP["foot_halfwidth"] * scale,
                                 anatomy.PROP["foot_halfheight"] * scale)),
    }
    priority = ("feet", "hands", "head", "legs", "torso")
    taken = np.zeros(hw, dtype=bool)
    masks = {}
    for name in priority:
        m = (alphas[name] >= 0.5) & ~taken
        masks[name] = m
        taken |= m
    return np.stack([masks[name] for name in anatomy.PART_NAMES])
