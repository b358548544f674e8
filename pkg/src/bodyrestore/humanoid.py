"""Procedural stick-figure humanoid generator.

Every sample carries its ground truth: skeleton, foreground mask, five
disjoint part masks, and a structured caption whose color/accessory
tokens match what was actually drawn. Generation is fully deterministic
in the seed.

Figures are upright 2:1 portrait compositions. A fit pass rescales the
figure if its extent (including hat/bag overhang and anti-alias spill)
would violate the 2px frame margin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import anatomy, raster, structural
from .curation import CaptionRecord, serialize_caption
from .imageio import save_image, save_index_map
from .rng import item_seed, substream

FRAME_MARGIN = 2.0
AA_PAD = 1.0

BAG_COLOR = (0.30, 0.26, 0.34)
WATCH_COLOR = (0.10, 0.12, 0.35)
GLASSES_COLOR = (0.05, 0.05, 0.05)
HAT_COLOR = (0.20, 0.35, 0.55)

_LENGTH_KEYS = ("head_radius", "torso_len", "arm_len", "thigh_len", "shin_len",
                "shoulder_halfwidth", "hip_halfwidth")


@dataclass
class HumanoidSpec:
    image_hw: tuple[int, int] = (128, 64)
    figure_height: float = 100.0
    center_x: float = 32.0
    arm_angle_l: float = 0.3
    arm_angle_r: float = 0.3
    leg_angle_l: float = 0.12
    leg_angle_r: float = 0.12
    knee_bend_l: float = 0.05
    knee_bend_r: float = 0.05
    jitter: dict = field(default_factory=dict)  # proportion key -> multiplier
    ethnicity: str = "white"
    age: str = "young"
    gender: str = "woman"
    hair_color: str = "brown"
    upper_color: str = "blue"
    upper_type: str = "long sleeve"
    lower_color: str | None = "black"
    lower_type: str | None = "pants"
    shoe_color: str = "white"
    shoe_type: str = "sneakers"
    glasses: bool = False
    hat: bool = False
    bag: bool = False
    watch: bool = False
    bg_color: tuple[float, float, float] = (0.85, 0.85, 0.88)

    def prop(self, key: str) -> float:
        return anatomy.PROP[key] * self.figure_height * self.jitter.get(key, 1.0)


@dataclass
class HumanoidSample:
    image: np.ndarray            # (H,W,3) float32 in [0,1]
    skeleton: structural.Skeleton
    fg_mask: np.ndarray          # (H,W) bool
    part_masks: np.ndarray       # (5,H,W) bool, disjoint, within fg
    caption: CaptionRecord
    spec: HumanoidSpec


def _geometry(spec: HumanoidSpec) -> dict:
    """Joint positions (figure-local, y=0 at head top) plus accessory extents."""
    r = spec.prop("head_radius")
    head = np.array([0.0, r])
    neck = np.array([0.0, 2 * r + spec.prop("neck_gap")])
    sho_y = neck[1] + spec.prop("shoulder_drop")
    shw = spec.prop("shoulder_halfwidth")
    l_sho = np.array([-shw, sho_y])
    r_sho = np.array([shw, sho_y])
    arm = spec.prop("arm_len")
    l_hand = l_sho + arm * np.array([-np.sin(spec.arm_angle_l), np.cos(spec.arm_angle_l)])
    r_hand = r_sho + arm * np.array([np.sin(spec.arm_angle_r), np.cos(spec.arm_angle_r)])
    pelvis_y = neck[1] + spec.prop("torso_len")
    hip = spec.prop("hip_halfwidth")
    l_hip = np.array([-hip, pelvis_y])
    r_hip = np.array([hip, pelvis_y])
    thigh, shin = spec.prop("thigh_len"), spec.prop("shin_len")
    l_knee = l_hip + thigh * np.array([-np.sin(spec.leg_angle_l), np.cos(spec.leg_angle_l)])
    r_knee = r_hip + thigh * np.array([np.sin(spec.leg_angle_r), np.cos(spec.leg_angle_r)])
    ang_l = spec.leg_angle_l - spec.knee_bend_l
    ang_r = spec.leg_angle_r - spec.knee_bend_r
    l_foot = l_knee + shin * np.array([-np.sin(ang_l), np.cos(ang_l)])
    r_foot = r_knee + shin * np.array([np.sin(ang_r), np.cos(ang_r)])

    joints = np.stack([head, neck, l_sho, r_sho, l_hand, r_hand,
                       l_hip, r_hip, l_knee, r_knee, l_foot, r_foot])
    g = {
        "joints": joints,
        "head_r": r,
        "hand_r": anatomy.PROP["hand_radius"] * spec.figure_height,
        "limb_hw": anatomy.PROP["limb_halfwidth"] * spec.figure_height,
        "foot_rx": anatomy.PROP["foot_halfwidth"] * spec.figure_height,
        "foot_ry": anatomy.PROP["foot_halfheight"] * spec.figure_height,
    }

    xs = [joints[:, 0].min() - g["limb_hw"], joints[:, 0].max() + g["limb_hw"],
          l_hand[0] - g["hand_r"], r_hand[0] + g["hand_r"],
          l_foot[0] - g["foot_rx"], r_foot[0] + g["foot_rx"],
          -r * 0.95, r * 0.95]
    ys_top = [0.0]
    ys_bot = [l_foot[1] + g["foot_ry"], r_foot[1] + g["foot_ry"],
              l_hand[1] + g["hand_r"], r_hand[1] + g["hand_r"]]
    if spec.hat:
        ys_top.append(-0.45 * r)
        xs.extend([-0.8 * r, 0.8 * r])
    if spec.glasses:
        xs.extend([-0.95 * r, 0.95 * r])
    if spec.bag:
        bag_c = r_hand + np.array([0.0, 0.11 * spec.figure_height])
        bw, bh = 0.060 * spec.figure_height, 0.065 * spec.figure_height
        g["bag_center"], g["bag_hw"], g["bag_hh"] = bag_c, bw, bh
        xs.extend([bag_c[0] - bw, bag_c[0] + bw])
        ys_bot.append(bag_c[1] + bh)
    g["extent"] = (min(xs), max(xs), min(ys_top), max(ys_bot))
    return g


def _fit_and_place(spec: HumanoidSpec) -> tuple[HumanoidSpec, dict, np.ndarray]:
    """Rescale if needed, then translate figure-local coords into the frame."""
    h, w = spec.image_hw
    budget_w = w - 2 * (FRAME_MARGIN + AA_PAD)
    budget_h = h - 2 * (FRAME_MARGIN + AA_PAD)
    g = _geometry(spec)
    x0, x1, y0, y1 = g["extent"]
    scale = min(1.0, budget_w / max(x1 - x0, 1e-9), budget_h / max(y1 - y0, 1e-9))
    if scale < 1.0:
        if scale < 0.5:
            raise ValueError("constraints make the figure unrenderable")
        spec = replace(spec, figure_height=spec.figure_height * scale * 0.99)
        g = _geometry(spec)
        x0, x1, y0, y1 = g["extent"]
    ty = (h - (y1 - y0)) / 2.0 - y0
    cx = float(np.clip(spec.center_x, FRAME_MARGIN + AA_PAD - x0,
                       w - FRAME_MARGIN - AA_PAD - x1))
    offset = np.array([cx, ty])
    return spec, g, offset


def render_sample(spec: HumanoidSpec) -> HumanoidSample:
    """Deterministically render a spec into image + ground truth."""
    spec, g, offset = _fit_and_place(spec)
    hw = spec.image_hw
    joints = g["joints"] + offset
    skel = structural.Skeleton(joints=joints,
                               visible=np.ones(anatomy.NUM_JOINTS, dtype=bool))
    skel.validate_bounds(hw)
    jd = {name: joints[i] for i, name in enumerate(anatomy.JOINT_NAMES)}

    img = np.empty(hw + (3,), dtype=np.float64)
    img[:] = np.asarray(spec.bg_color)
    ids = np.zeros(hw, dtype=np.uint8)
    painted = np.zeros(hw, dtype=bool)

    skin = np.asarray(anatomy.SKIN_TONES[spec.ethnicity])
    hair = np.asarray(anatomy.HAIR_COLORS[spec.hair_color])
    upper = np.asarray(anatomy.GARMENT_COLORS[spec.upper_color])
    jumpsuit = spec.upper_type == "jumpsuit"
    lower = upper if jumpsuit else np.asarray(anatomy.GARMENT_COLORS[spec.lower_color])
    lower_type = "pants" if jumpsuit else spec.lower_type

    def paint(alpha, color, part_id):
        raster.composite(img, alpha, color)
        hard = alpha >= 0.5
        ids[hard] = part_id
        painted[hard] = True

    lhw = g["limb_hw"]
    if spec.bag:
        bc = g["bag_center"] + offset
        paint(raster.convex_poly_alpha(hw, [
            (bc[0] - g["bag_hw"], bc[1] - g["bag_hh"]),
            (bc[0] + g["bag_hw"], bc[1] - g["bag_hh"]),
            (bc[0] + g["bag_hw"], bc[1] + g["bag_hh"]),
            (bc[0] - g["bag_hw"], bc[1] + g["bag_hh"])]), BAG_COLOR, 0)

    # legs: thighs and shins; garment coverage depends on the lower type
    shin_color = lower if lower_type == "pants" else skin
    for side in ("l", "r"):
        paint(raster.capsule_alpha(hw, jd[f"{side}_hip"], jd[f"{side}_knee"], lhw),
              lower if lower_type != "skirt" else skin, 4)
        paint(raster.capsule_alpha(hw, jd[f"{side}_knee"], jd[f"{side}_foot"], lhw),
              shin_color, 4)
    if lower_type == "skirt":
        hem = 0.13 * spec.figure_height
        paint(raster.convex_poly_alpha(hw, [
            (jd["l_hip"][0] - 1.3 * lhw, jd["l_hip"][1] - lhw),
            (jd["r_hip"][0] + 1.3 * lhw, jd["r_hip"][1] - lhw),
            ((jd["r_knee"][0] + jd["l_knee"][0]) / 2 + hem, jd["r_knee"][1]),
            ((jd["r_knee"][0] + jd["l_knee"][0]) / 2 - hem, jd["l_knee"][1])]),
            lower, 4)

    # torso quad widened by the limb halfwidth, plus the neck
    paint(raster.convex_poly_alpha(hw, [
        (jd["l_shoulder"][0] - lhw, jd["l_shoulder"][1] - lhw),
        (jd["r_shoulder"][0] + lhw, jd["r_shoulder"][1] - lhw),
        (jd["r_hip"][0] + lhw, jd["r_hip"][1] + lhw),
        (jd["l_hip"][0] - lhw, jd["l_hip"][1] + lhw)]), upper, 2)
    paint(raster.capsule_alpha(hw, jd["head"] + [0, 0.5 * g["head_r"]], jd["neck"], lhw),
          skin, 2)

    for side in ("l", "r"):
        paint(raster.capsule_alpha(hw, jd[f"{side}_shoulder"], jd[f"{side}_hand"], lhw),
              upper, 0)

    head_c, head_r = jd["head"], g["head_r"]
    paint(raster.disk_alpha(hw, head_c, head_r), skin, 1)
    hair_alpha = raster.disk_alpha(hw, head_c - [0, 0.45 * head_r], 0.78 * head_r)
    hair_alpha = np.minimum(hair_alpha, raster.disk_alpha(hw, head_c, head_r))
    paint(hair_alpha, hair, 1)
    if spec.hat:
        top = head_c[1] - head_r
        paint(raster.convex_poly_alpha(hw, [
            (head_c[0] - 0.8 * head_r, top - 0.45 * head_r),
            (head_c[0] + 0.8 * head_r, top - 0.45 * head_r),
            (head_c[0] + 0.8 * head_r, top + 0.25 * head_r),
            (head_c[0] - 0.8 * head_r, top + 0.25 * head_r)]), HAT_COLOR, 0)
    if spec.glasses:
        ey = head_c[1] - 0.15 * head_r
        paint(raster.convex_poly_alpha(hw, [
            (head_c[0] - 0.95 * head_r, ey - 0.16 * head_r),
            (head_c[0] + 0.95 * head_r, ey - 0.16 * head_r),
            (head_c[0] + 0.95 * head_r, ey + 0.16 * head_r),
            (head_c[0] - 0.95 * head_r, ey + 0.16 * head_r)]), GLASSES_COLOR, 0)

    for side in ("l", "r"):
        paint(raster.disk_alpha(hw, jd[f"{side}_hand"], g["hand_r"]), skin, 3)
    if spec.watch:
        wrist = jd["l_hand"] + 0.18 * (jd["l_shoulder"] - jd["l_hand"])
        paint(raster.disk_alpha(hw, wrist, 0.55 * g["hand_r"]), WATCH_COLOR, 0)

    for side in ("l", "r"):
        fc = jd[f"{side}_foot"]
        alpha = raster.ellipse_alpha(hw, fc, g["foot_rx"], g["foot_ry"])
        if spec.shoe_color == "black and white":
            xs, _ = raster.pixel_grid(hw)
            left_half = np.where(xs < fc[0], alpha, 0.0)
            right_half = np.where(xs >= fc[0], alpha, 0.0)
            paint(left_half, anatomy.SHOE_COLORS["white"], 5)
            paint(right_half, anatomy.SHOE_COLORS["black"], 5)
        else:
            paint(alpha, anatomy.SHOE_COLORS[spec.shoe_color], 5)

    part_masks = np.stack([ids == k for k in range(1, anatomy.NUM_PARTS + 1)])
    caption = CaptionRecord(
        identity=f"{spec.ethnicity} {spec.age} {spec.gender}",
        hair=f"{spec.hair_color} hair",
        accessory_on_face="sunglasses" if spec.glasses else "",
        upper_garment=f"{spec.upper_color} {spec.upper_type}",
        accessory_on_hands="wearing a watch" if spec.watch else "",
        lower_garment="" if jumpsuit else f"{spec.lower_color} {spec.lower_type}",
        shoes=f"{spec.shoe_color} {spec.shoe_type}",
        carried_items="carrying tote bag" if spec.bag else "",
    )
    return HumanoidSample(image=np.clip(img, 0.0, 1.0).astype(np.float32),
                          skeleton=skel, fg_mask=painted, part_masks=part_masks,
                          caption=caption, spec=spec)


def generate_sample(seed: int, constraints: dict | None = None) -> HumanoidSample:
    """Sample a spec from the generator distribution and render it."""
    rng = substream(seed, "humanoid")
    h, w = (128, 64)
    jitter = {key: float(rng.uniform(0.93, 1.07)) for key in _LENGTH_KEYS}
    upper_color = str(rng.choice(list(anatomy.GARMENT_COLORS)))
    lower_choices = [c for c in anatomy.GARMENT_COLORS if c != upper_color]
    lower_color = str(rng.choice(lower_choices))
    upper_type = str(rng.choice(anatomy.UPPER_TYPES, p=(0.4, 0.25, 0.25, 0.1)))
    shoe_choices = [c for c in anatomy.SHOE_COLORS if c != lower_color]
    spec = HumanoidSpec(
        image_hw=(h, w),
        figure_height=float(rng.uniform(0.72, 0.86) * h),
        center_x=float(rng.uniform(0.47, 0.53) * w),
        arm_angle_l=float(rng.uniform(*anatomy.ARM_ANGLE_RANGE)),
        arm_angle_r=float(rng.uniform(*anatomy.ARM_ANGLE_RANGE)),
        leg_angle_l=float(rng.uniform(*anatomy.LEG_ANGLE_RANGE)),
        leg_angle_r=float(rng.uniform(*anatomy.LEG_ANGLE_RANGE)),
        knee_bend_l=float(rng.uniform(*anatomy.KNEE_BEND_RANGE)),
        knee_bend_r=float(rng.uniform(*anatomy.KNEE_BEND_RANGE)),
        jitter=jitter,
        ethnicity=str(rng.choice(anatomy.ETHNICITIES)),
        age=str(rng.choice(anatomy.AGES)),
        gender=str(rng.choice(anatomy.GENDERS)),
        hair_color=str(rng.choice(list(anatomy.HAIR_COLORS))),
        upper_color=upper_color,
        upper_type=upper_type,
        lower_color=lower_color,
        lower_type=str(rng.choice(anatomy.LOWER_TYPES, p=(0.3, 0.5, 0.2))),
        shoe_color=str(rng.choice(shoe_choices)),
        shoe_type=str(rng.choice(anatomy.SHOE_TYPES)),
        glasses=bool(rng.random() < 0.35),
        hat=bool(rng.random() < 0.25),
        bag=bool(rng.random() < 0.30),
        watch=bool(rng.random() < 0.30),
        bg_color=(0.8, 0.8, 0.8),
    )
    fig_colors = [anatomy.SKIN_TONES[spec.ethnicity], anatomy.HAIR_COLORS[spec.hair_color],
                  anatomy.GARMENT_COLORS[spec.upper_color],
                  anatomy.GARMENT_COLORS[spec.lower_color],
                  BAG_COLOR, WATCH_COLOR, HAT_COLOR, GLASSES_COLOR]
    fig_colors += [v for v in anatomy.SHOE_COLORS.values() if v is not None]
    bg = None
    for _ in range(64):
        base = rng.uniform(0.70, 0.96)
        cand = tuple(np.clip(base + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0))
        if all(anatomy.color_distance(cand, c) >= anatomy.BG_CONTRAST for c in fig_colors):
            bg = cand
            break
    if bg is None:
        bg = (0.70, 0.74, 0.78)
    spec = replace(spec, bg_color=tuple(float(v) for v in bg))
    if constraints:
        unknown = set(constraints) - {f.name for f in spec.__dataclass_fields__.values()}
        if unknown:
            raise ValueError(f"unknown constraint fields: {sorted(unknown)}")
        spec = replace(spec, **constraints)
    return render_sample(spec)


def load_manifest(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def generate_dataset(n: int, seed: int, out_dir: str | Path,
                     test_fraction: float = 1.0 / 11.0) -> Path:
    """Write n samples + sidecars + JSONL manifest; returns the manifest path.

    The last floor(n * test_fraction) samples form the test split.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if not (0.0 <= test_fraction < 1.0):
        raise ValueError(f"test_fraction must be in [0,1), got {test_fraction}")
    out_dir = Path(out_dir)
    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    n_test = int(np.floor(n * test_fraction))
    n_train = n - n_test
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for i in range(n):
            sample = generate_sample(item_seed(seed, i))
            sid = f"hum_{i:06d}"
            save_image(images / f"{sid}.png", sample.image)
            pose = structural.render_pose(sample.skeleton, sample.spec.image_hw)
            save_image(images / f"{sid}{structural.POSE_SUFFIX}", pose)
            attn = structural.extract_attention(sample.image, mode="oracle",
                                                meta=sample.fg_mask)
            save_image(images / f"{sid}{structural.ATTN_SUFFIX}", attn)
            ids = np.zeros(sample.spec.image_hw, dtype=np.uint8)
            for k in range(anatomy.NUM_PARTS):
                ids[sample.part_masks[k]] = k + 1
            save_index_map(images / f"{sid}{structural.PARTS_SUFFIX}", ids)
            record = {
                "id": sid,
                "image": f"images/{sid}.png",
                "pose": f"images/{sid}{structural.POSE_SUFFIX}",
                "attn": f"images/{sid}{structural.ATTN_SUFFIX}",
                "parts": f"images/{sid}{structural.PARTS_SUFFIX}",
                "caption": serialize_caption(sample.caption),
                "split": "train" if i < n_train else "test",
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return manifest_path
