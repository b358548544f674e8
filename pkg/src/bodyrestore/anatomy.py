"""Shared humanoid figure conventions.

The fixed 12-joint skeleton table, limb connectivity, body proportions
(as fractions of figure height), and the color palettes used by the
procedural generator. The heuristic pose detector is tuned to the same
conventions, so they live in one place.

Body parts for feature extraction are the five regions head, torso,
hands, legs, feet, in that fixed order.
"""

from __future__ import annotations

import numpy as np

JOINT_NAMES = (
    "head", "neck",
    "l_shoulder", "r_shoulder",
    "l_hand", "r_hand",
    "l_hip", "r_hip",
    "l_knee", "r_knee",
    "l_foot", "r_foot",
)
NUM_JOINTS = len(JOINT_NAMES)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

# (from, to) joint-index pairs; arms connect shoulder directly to hand
LIMBS = tuple(
    (JOINT_INDEX[a], JOINT_INDEX[b]) for a, b in (
        ("head", "neck"),
        ("neck", "l_shoulder"), ("neck", "r_shoulder"),
        ("l_shoulder", "l_hand"), ("r_shoulder", "r_hand"),
        ("neck", "l_hip"), ("neck", "r_hip"),
        ("l_hip", "r_hip"),
        ("l_hip", "l_knee"), ("l_knee", "l_foot"),
        ("r_hip", "r_knee"), ("r_knee", "r_foot"),
    )
)

PART_NAMES = ("head", "torso", "hands", "legs", "feet")
NUM_PARTS = len(PART_NAMES)

# proportions as fractions of figure height
PROP = {
    "head_radius": 0.095,
    "neck_gap": 0.02,        # head circle bottom to neck joint
    "shoulder_drop": 0.025,  # neck joint to shoulder line
    "shoulder_halfwidth": 0.10,
    "torso_len": 0.33,       # neck joint to pelvis line
    "hip_halfwidth": 0.065,
    "arm_len": 0.28,         # shoulder joint to hand joint
    "thigh_len": 0.22,
    "shin_len": 0.22,
    "limb_halfwidth": 0.018,
    "hand_radius": 0.026,
    "foot_halfwidth": 0.045,
    "foot_halfheight": 0.022,
}

# articulation limits (radians from vertical); chosen so the head stays
# topmost, hands stay clear of the head and shins, and the figure fits a
# 2:1 portrait frame
ARM_ANGLE_RANGE = (np.deg2rad(8.0), np.deg2rad(30.0))
LEG_ANGLE_RANGE = (np.deg2rad(3.0), np.deg2rad(14.0))
KNEE_BEND_RANGE = (np.deg2rad(0.0), np.deg2rad(12.0))

GARMENT_COLORS = {
    "pink": (0.95, 0.60, 0.75),
    "white": (0.93, 0.93, 0.93),
    "blue": (0.25, 0.35, 0.80),
    "red": (0.85, 0.15, 0.15),
    "green": (0.20, 0.65, 0.30),
    "yellow": (0.92, 0.85, 0.20),
    "black": (0.08, 0.08, 0.08),
    "purple": (0.55, 0.25, 0.70),
}

SHOE_COLORS = {
    "white": (0.93, 0.93, 0.93),
    "black": (0.08, 0.08, 0.08),
    "red": (0.85, 0.15, 0.15),
    "black and white": None,  # rendered as a split ellipse
}

# ethnicity token -> skin tone
SKIN_TONES = {
    "white": (0.96, 0.80, 0.69),
    "asian": (0.88, 0.68, 0.50),
    "black": (0.47, 0.30, 0.20),
}

HAIR_COLORS = {
    "blond": (0.90, 0.78, 0.40),
    "black": (0.10, 0.09, 0.08),
    "brown": (0.42, 0.26, 0.12),
    "red": (0.65, 0.22, 0.10),
}

UPPER_TYPES = ("long sleeve", "jacket", "sweater", "jumpsuit")
LOWER_TYPES = ("shorts", "pants", "skirt")
SHOE_TYPES = ("sneakers", "boots", "high heel shoes")
ETHNICITIES = tuple(SKIN_TONES)
AGES = ("young", "old")
GENDERS = ("woman", "man")

# minimum max-channel distance between the background and any figure color
BG_CONTRAST = 0.15


def color_distance(a, b) -> float:
    """Max-channel absolute difference between two RGB triples."""
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
