import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyrestore import humanoid
from bodyrestore.curation import (CaptionRecord, CurationConfig, CurationRecord,
                                  apply_review, build_review_queue, detect_human,
                                  normalize_format, parse_caption, run_curation,
                                  screen_format, serialize_caption)
from bodyrestore.imageio import save_image
from bodyrestore.metrics import psnr

EXAMPLE = ("white young woman, blond hair, sunglasses, pink long sleeve, "
           "white shorts, white sneakers, carrying tote bag")


class TestCaptionSchema:
    def test_reference_example_verbatim(self):
        rec = CaptionRecord(identity="white young woman", hair="blond hair",
                            accessory_on_face="sunglasses",
                            upper_garment="pink long sleeve",
                            lower_garment="white shorts", shoes="white sneakers",
                            carried_items="carrying tote bag")
        assert serialize_caption(rec) == EXAMPLE

    def test_empty_record_empty_string(self):
        assert serialize_caption(CaptionRecord()) == ""
        assert parse_caption("") == CaptionRecord()

    def test_round_trip_reference_example(self):
        assert serialize_caption(parse_caption(EXAMPLE)) == EXAMPLE

    def test_second_reference_style_example(self):
        text = ("asian old woman, black hair, necklace, yellow jumpsuit, "
                "black and white high heel shoes, wearing a watch")
        rec = parse_caption(text)
        assert rec.accessory_on_neck == "necklace"
        assert rec.upper_garment == "yellow jumpsuit"
        assert rec.shoes == "black and white high heel shoes"
        assert rec.accessory_on_hands == "wearing a watch"

    def test_comma_in_field_rejected(self):
        with pytest.raises(ValueError):
            CaptionRecord(hair="blond, wavy hair")

    def test_out_of_order_best_effort_with_warning(self):
        with pytest.warns(UserWarning, match="out-of-order"):
            rec = parse_caption("blond hair, white young woman")
        assert rec.identity == "white young woman"
        assert rec.hair == "blond hair"

    def test_unrecognized_phrase_dropped_with_warning(self):
        with pytest.warns(UserWarning, match="unrecognized"):
            rec = parse_caption("white young woman, purple halo")
        assert rec.identity == "white young woman"


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_generated_captions_round_trip_property(seed):
    caption = humanoid.generate_sample(seed).caption
    assert parse_caption(serialize_caption(caption)) == caption


class TestScreenFormat:
    def test_truncated_file_rejected(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")
        (rec,) = screen_format([bad])
        assert rec.status == "rejected"
        assert rec.reject_phase == 1
        assert rec.reject_reason == "undecodable"

    def test_too_small_rejected(self, tmp_path):
        p = tmp_path / "small.png"
        save_image(p, np.zeros((64, 64, 3)))
        (rec,) = screen_format([p])
        assert rec.reject_reason == "too small"

    def test_bad_aspect_rejected(self, tmp_path):
        p = tmp_path / "square.png"
        save_image(p, np.zeros((128, 128, 3)))
        (rec,) = screen_format([p])
        assert rec.reject_reason == "bad aspect"

    def test_valid_png_passes(self, tmp_path):
        p = tmp_path / "ok.png"
        save_image(p, np.zeros((256, 128, 3)))
        (rec,) = screen_format([p])
        assert rec.format_ok and rec.status != "rejected"


class TestDetectHuman:
    def test_blank_image(self):
        detected, coverage = detect_human(np.full((128, 64, 3), 0.8))
        assert (detected, coverage) == (False, 0.0)

    def test_synthetic_humanoid(self, humanoid_batch):
        detected, coverage = detect_human(humanoid_batch[0].image)
        assert detected and coverage > 0.05

    def test_threshold_inclusive(self):
        detected, coverage = detect_human(np.zeros((4, 4, 3)),
                                          detector=lambda img: 0.05, tau=0.05)
        assert detected and coverage == 0.05


class TestNormalizeFormat:
    def test_already_at_target_high_fidelity(self, humanoid_batch):
        img = humanoid_batch[0].image
        out = normalize_format(img, (128, 64), (0, 0, 128, 64))
        assert out.shape == (128, 64, 3)
        assert psnr(out, img) >= 40.0

    def test_downscale_to_target(self, humanoid_batch):
        big = np.repeat(np.repeat(humanoid_batch[0].image, 4, 0), 4, 1)
        out = normalize_format(big, (128, 64), (40, 20, 480, 240))
        assert out.shape == (128, 64, 3)

    def test_degenerate_bbox_falls_back_to_whole_image(self, humanoid_batch):
        img = humanoid_batch[0].image
        out = normalize_format(img, (128, 64), (10, 10, 11, 11))
        np.testing.assert_allclose(out, normalize_format(img, (128, 64), (0, 0, 128, 64)))


class TestReviewQueue:
    def _rec(self, coverage, hw=(128, 64)):
        return CurationRecord(path="x.png", format_ok=True, image_hw=hw,
                              human_detected=True, coverage=coverage,
                              status="accepted")

    def test_borderline_coverage_flagged(self, tmp_path):
        cfg = CurationConfig()
        (rec,) = build_review_queue([self._rec(0.075)], cfg)
        assert rec.status == "needs_review"
        assert "borderline coverage" in rec.flag_reason

    def test_clear_record_not_flagged(self):
        cfg = CurationConfig()
        (rec,) = build_review_queue([self._rec(0.2)], cfg)
        assert rec.status == "accepted" and not rec.inspection_flag

    def test_extreme_aspect_flagged(self):
        cfg = CurationConfig()
        (rec,) = build_review_queue([self._rec(0.2, hw=(155, 100))], cfg)
        assert rec.status == "needs_review"
        assert "extreme aspect" in rec.flag_reason

    def test_apply_review_accept_and_reject(self):
        cfg = CurationConfig()
        recs = build_review_queue([self._rec(0.075), self._rec(0.075)], cfg)
        recs[1] = CurationRecord(**{**recs[1].__dict__, "path": "y.png"})
        out = apply_review(recs, [{"id": "x.png", "verdict": "accept"},
                                  {"id": "y.png", "verdict": "reject"}])
        assert out[0].status == "accepted"
        assert out[1].status == "rejected" and out[1].reject_phase == 4

    def test_conflicting_marks_error(self):
        cfg = CurationConfig()
        recs = build_review_queue([self._rec(0.075)], cfg)
        with pytest.raises(ValueError, match="conflicting"):
            apply_review(recs, [{"id": "x.png", "verdict": "accept"},
                                {"id": "x.png", "verdict": "reject"}])


class TestFixturePipeline:
    def test_fixture_counts(self, tmp_path):
        # 5 corrupt, 5 blank, 10 humanoids -> 5 phase-1 rejects,
        # 5 phase-2 rejects, 10 accepts
        src = tmp_path / "src"
        src.mkdir()
        for i in range(5):
            (src / f"corrupt_{i}.png").write_bytes(b"\x89PNG garbage" + bytes([i]))
        for i in range(5):
            save_image(src / f"blank_{i}.png", np.full((128, 64, 3), 0.75 + 0.01 * i))
        for i in range(10):
            save_image(src / f"human_{i}.png", humanoid.generate_sample(i).image)
        records = run_curation(src, tmp_path / "out")
        by_status = {}
        for rec in records:
            by_status.setdefault(rec.status, []).append(rec)
        assert len(by_status.get("accepted", [])) == 10
        rejected = by_status.get("rejected", [])
        assert len(rejected) == 10
        assert sum(r.reject_phase == 1 for r in rejected) == 5
        assert sum(r.reject_phase == 2 for r in rejected) == 5
        assert not by_status.get("needs_review")
        # phase monotonicity: phase-1 rejects never reach detection
        for rec in rejected:
            if rec.reject_phase == 1:
                assert not rec.human_detected and rec.coverage == 0.0
        assert (tmp_path / "out/curation_records.jsonl").is_file()
        assert (tmp_path / "out/review_queue.jsonl").is_file()

    def test_marks_round_trip(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        save_image(src / "h.png", humanoid.generate_sample(3).image)
        out = tmp_path / "out"
        run_curation(src, out)
        marks = tmp_path / "marks.jsonl"
        marks.write_text("")
        records = run_curation(src, out, marks_path=marks)
        assert records[0].status == "accepted"
