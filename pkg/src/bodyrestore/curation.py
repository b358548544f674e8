"""Four-phase dataset curation and the structured caption schema.

Phases: (1) format screening, (2) human detection, (3) format
normalization, (4) manual review via an offline queue file. A record
rejected at phase k never reaches phase k+1; borderline records are
flagged for review instead of silently accepted.

Captions are ordered field lists serialized as one comma-joined line,
e.g. ``white young woman, blond hair, sunglasses, pink long sleeve,
white shorts, white sneakers, carrying tote bag``. Empty fields are
omitted; parsing assigns phrases back to fields by position and phrase
shape, tolerating out-of-order input with a warning.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, fields as dc_fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import structural
from .imageio import bilinear_resize, load_image, save_image

CAPTION_FIELDS = (
    "identity", "hair", "accessory_on_face", "accessory_on_neck",
    "upper_garment", "accessory_on_hands", "lower_garment", "shoes",
    "carried_items",
)


@dataclass
class CaptionRecord:
    """Human description in the fixed schema field order."""

    identity: str = ""
    hair: str = ""
    accessory_on_face: str = ""
    accessory_on_neck: str = ""
    upper_garment: str = ""
    accessory_on_hands: str = ""
    lower_garment: str = ""
    shoes: str = ""
    carried_items: str = ""

    def __post_init__(self):
        for f in dc_fields(self):
            value = getattr(self, f.name)
            if "," in value:
                raise ValueError(f"caption field {f.name!r} must not contain a comma")

    def tokens(self) -> list[str]:
        """Whitespace tokens of all non-empty fields, in schema order."""
        out: list[str] = []
        for name in CAPTION_FIELDS:
            value = getattr(self, name)
            if value:
                out.extend(value.split())
        return out


def serialize_caption(rec: CaptionRecord) -> str:
    return ", ".join(getattr(rec, name) for name in CAPTION_FIELDS if getattr(rec, name))


def _looks_like(name: str, phrase: str) -> bool:
    p = phrase.lower()
    words = p.split()
    if name == "identity":
        return len(words) >= 2 and words[0] in ("white", "asian", "black") and \
            words[-1] in ("woman", "man", "boy", "girl")
    if name == "hair":
        return words[-1] == "hair"
    if name == "accessory_on_face":
        return words[-1] in ("sunglasses", "glasses")
    if name == "accessory_on_neck":
        return words[-1] in ("necklace", "scarf")
    if name == "upper_garment":
        return words[-1] in ("sleeve", "jacket", "sweater", "jumpsuit", "shirt")
    if name == "accessory_on_hands":
        return words[0] == "wearing"
    if name == "lower_garment":
        return words[-1] in ("shorts", "pants", "skirt", "jeans")
    if name == "shoes":
        return words[-1] in ("sneakers", "boots", "shoes", "heels")
    if name == "carried_items":
        return words[0] == "carrying"
    return False


def parse_caption(text: str) -> CaptionRecord:
    """Inverse of serialize_caption under the field-order assumption."""
    rec = CaptionRecord()
    if not text.strip():
        return rec
    phrases = [p.strip() for p in text.split(",") if p.strip()]
    cursor = 0
    for phrase in phrases:
        names = CAPTION_FIELDS[cursor:]
        hit = next((n for n in names if _looks_like(n, phrase)), None)
        if hit is None:
            hit = next((n for n in CAPTION_FIELDS if _looks_like(n, phrase)), None)
            if hit is None:
                warnings.warn(f"unrecognized caption phrase dropped: {phrase!r}")
                continue
            warnings.warn(f"out-of-order caption phrase: {phrase!r}")
        setattr(rec, hit, phrase)
        cursor = max(cursor, CAPTION_FIELDS.index(hit) + 1 if hit in CAPTION_FIELDS else cursor)
    return rec


@dataclass
class CurationConfig:
    min_height: int = 128
    min_width: int = 64
    aspect_band: tuple[float, float] = (1.5, 2.5)
    coverage_tau: float = 0.05
    extreme_aspect_margin: float = 0.1
    target_hw: tuple[int, int] = (128, 64)


@dataclass
class CurationRecord:
    path: str
    format_ok: bool = False
    image_hw: tuple[int, int] | None = None
    human_checked: bool = False
    human_detected: bool = False
    coverage: float = 0.0
    bbox: tuple[int, int, int, int] | None = None  # (top, left, bottom, right)
    normalized_path: str | None = None
    inspection_flag: bool = False
    flag_reason: str | None = None
    status: str = "rejected"
    reject_phase: int | None = None
    reject_reason: str | None = None

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "path", "format_ok", "image_hw", "human_checked", "human_detected",
            "coverage", "bbox", "normalized_path", "inspection_flag", "flag_reason",
            "status", "reject_phase", "reject_reason")}
        for key in ("bbox", "image_hw"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


def _derive_status(rec: CurationRecord) -> CurationRecord:
    # only phases that actually ran can reject
    if not rec.format_ok:
        return replace(rec, status="rejected", reject_phase=rec.reject_phase or 1)
    if rec.human_checked and not rec.human_detected:
        return replace(rec, status="rejected", reject_phase=2,
                       reject_reason=rec.reject_reason or "no human detected")
    if rec.inspection_flag:
        return replace(rec, status="needs_review")
    return replace(rec, status="accepted")


def screen_format(paths, config: CurationConfig | None = None) -> list[CurationRecord]:
    """Phase 1: keep decodable PNG/JPEG of adequate size and aspect."""
    config = config or CurationConfig()
    lo, hi = config.aspect_band
    records = []
    for path in paths:
        rec = CurationRecord(path=str(path))
        try:
            with Image.open(path) as im:
                im.load()
                if im.format not in ("PNG", "JPEG"):
                    raise ValueError(f"unsupported format {im.format}")
                w, h = im.size
        except (OSError, UnidentifiedImageError, ValueError):
            records.append(replace(rec, reject_phase=1, reject_reason="undecodable"))
            continue
        if h < config.min_height or w < config.min_width:
            records.append(replace(rec, reject_phase=1, reject_reason="too small"))
            continue
        aspect = h / w
        if not (lo <= aspect <= hi):
            records.append(replace(rec, reject_phase=1, reject_reason="bad aspect"))
            continue
        records.append(replace(rec, format_ok=True, image_hw=(h, w)))
    return [_derive_status(r) for r in records]


def detect_human(image: np.ndarray, detector: Callable[[np.ndarray], float] | None = None,
                 tau: float = 0.05) -> tuple[bool, float]:
    """Phase 2: coverage from the pluggable detector; threshold inclusive."""
    coverage_fn = detector or structural.foreground_coverage
    coverage = float(coverage_fn(image))
    return coverage >= tau, coverage


def normalize_format(image: np.ndarray, target_hw: tuple[int, int],
                     bbox: tuple[int, int, int, int] | None) -> np.ndarray:
    """Phase 3: center-crop on the bbox to the target aspect, then resample."""
    h, w = image.shape[:2]
    th, tw = target_hw
    if bbox is None or bbox[2] - bbox[0] < 2 or bbox[3] - bbox[1] < 2:
        # degenerate detection: whole-image fallback crop
        bbox = (0, 0, h, w)
    top, left, bottom, right = bbox
    top, left = max(0, top), max(0, left)
    bottom, right = min(h, bottom), min(w, right)
    cy, cx = (top + bottom) / 2.0, (left + right) / 2.0
    bh, bw = bottom - top, right - left
    aspect = th / tw
    # smallest target-aspect window containing the bbox, clamped to the image
    ch = min(h, max(bh, bw * aspect))
    cw = min(w, ch / aspect)
    ch = min(h, cw * aspect)
    y0 = int(round(np.clip(cy - ch / 2.0, 0, h - ch)))
    x0 = int(round(np.clip(cx - cw / 2.0, 0, w - cw)))
    crop = image[y0:y0 + int(round(ch)), x0:x0 + int(round(cw))]
    return bilinear_resize(crop, (th, tw))


def build_review_queue(records: list[CurationRecord], config: CurationConfig,
                       queue_path: str | Path | None = None) -> list[CurationRecord]:
    """Phase 4: flag borderline records and emit the offline review queue."""
    tau = config.coverage_tau
    lo, hi = config.aspect_band
    margin = config.extreme_aspect_margin
    out = []
    for rec in records:
        if rec.status == "rejected":
            out.append(rec)
            continue
        reasons = []
        if tau <= rec.coverage < 2 * tau:
            reasons.append("borderline coverage")
        if rec.image_hw is not None:
            aspect = rec.image_hw[0] / rec.image_hw[1]
            if aspect <= lo + margin or aspect >= hi - margin:
                reasons.append("extreme aspect")
        flagged = bool(reasons)
        out.append(_derive_status(replace(
            rec, inspection_flag=flagged,
            flag_reason="; ".join(reasons) if reasons else None)))
    if queue_path is not None:
        with open(queue_path, "w") as fh:
            for rec in out:
                if rec.status == "needs_review":
                    fh.write(json.dumps({"id": rec.path, "reason": rec.flag_reason},
                                        sort_keys=True) + "\n")
    return out


def apply_review(records: list[CurationRecord], marks: list[dict]) -> list[CurationRecord]:
    """Fold offline review verdicts back into the records.

    Marks are {"id", "verdict"} with verdict accept|reject; conflicting
    verdicts for one id are an error.
    """
    verdicts: dict[str, str] = {}
    for mark in marks:
        rid, verdict = mark["id"], mark["verdict"]
        if verdict not in ("accept", "reject"):
            raise ValueError(f"unknown verdict {verdict!r} for {rid!r}")
        if rid in verdicts and verdicts[rid] != verdict:
            raise ValueError(f"conflicting review marks for {rid!r}")
        verdicts[rid] = verdict
    out = []
    for rec in records:
        if rec.status == "needs_review" and rec.path in verdicts:
            if verdicts[rec.path] == "accept":
                out.append(replace(rec, status="accepted", inspection_flag=False))
            else:
                out.append(replace(rec, status="rejected", reject_phase=4,
                                   reject_reason="manual reject"))
        else:
            out.append(rec)
    return out


def run_curation(in_dir: str | Path, out_dir: str | Path,
                 config: CurationConfig | None = None,
                 marks_path: str | Path | None = None) -> list[CurationRecord]:
    """Run phases 1-4 over a directory; write normalized images + manifests.

    Emits ``curation_records.jsonl`` (all records), ``review_queue.jsonl``
    (phase-4 queue), and normalized accepted images under ``images/``.
    If ``marks_path`` is given, its verdicts are folded in after phase 4.
    """
    config = config or CurationConfig()
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in in_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    records = screen_format(paths, config)
    staged = []
    for rec in records:
        if rec.status == "rejected":
            staged.append(rec)
            continue
        image = load_image(rec.path)
        detected, coverage = detect_human(image, tau=config.coverage_tau)
        rec = _derive_status(replace(rec, human_checked=True, human_detected=detected,
                                     coverage=coverage,
                                     bbox=structural.foreground_bbox(image)))
        if rec.status == "rejected":
            staged.append(rec)
            continue
        normalized = normalize_format(image, config.target_hw, rec.bbox)
        norm_path = out_dir / "images" / (Path(rec.path).stem + ".png")
        save_image(norm_path, normalized)
        staged.append(replace(rec, normalized_path=str(norm_path)))
    staged = build_review_queue(staged, config, out_dir / "review_queue.jsonl")
    if marks_path is not None:
        with open(marks_path) as fh:
            marks = [json.loads(line) for line in fh if line.strip()]
        staged = apply_review(staged, marks)
    with open(out_dir / "curation_records.jsonl", "w") as fh:
        for rec in staged:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    return staged
