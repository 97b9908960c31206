import numpy as np
import pytest

from roadctx.core import BBox, Detection, FrameRef, Source, search_area
from roadctx.flow import FlowParams
from roadctx.imaging import GrayImage
from roadctx.layout import LayoutGrid
from roadctx.synth import noise_texture
from roadctx.tracker import (
    TrackerParams,
    find_missed,
    process_sequence,
    recover,
    score_recovered,
)

W, H = 160, 120
SIDE = 24
ONES = LayoutGrid(np.ones((8, 8)))


def area(d, params=TrackerParams()):
    return search_area(d, params.area_alpha, params.area_beta, params.area_tau)


def det(cx, cy, score=0.9, label="cone", frame="s0/000000", source=Source.DETECTOR):
    return Detection(
        frame_id=frame,
        bbox=BBox(cx=cx, cy=cy, w=SIDE, h=SIDE),
        class_label=label,
        score=score,
        source=source,
    )


def frame_with_square(x, y, seed=3):
    """Flat frame with one textured square whose top-left corner is (x, y);
    gradients exist only on the object."""
    a = np.full((H, W), 0.5)
    rng = np.random.default_rng(seed)
    a[y : y + SIDE, x : x + SIDE] = noise_texture(SIDE, SIDE, rng)
    return GrayImage(a)


def moving_scene(n_frames, dx, dy, x0=40, y0=40):
    frames = [FrameRef(sequence_id="s0", index=i, image_path=f"{i}.pgm") for i in range(n_frames)]
    images = {
        f.frame_id: frame_with_square(x0 + i * dx, y0 + i * dy) for i, f in enumerate(frames)
    }
    centers = {
        f.frame_id: (x0 + i * dx + SIDE / 2, y0 + i * dy + SIDE / 2)
        for i, f in enumerate(frames)
    }
    return frames, images, centers


class TestTrackerParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"source_score_min": 1.5},
            {"recovered_score_min": -0.1},
            {"min_tracked_corners": 0},
            {"duplicate_iou": 0.0},
            {"m_floor": 0.0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrackerParams(**kwargs)


class TestFindMissed:
    def test_nearby_same_class_is_not_missed(self):
        prev = [det(72, 62)]
        nxt = [det(75, 63, frame="s0/000001")]
        assert find_missed(prev, nxt) == []

    def test_empty_next_frame_is_missed(self):
        prev = [det(72, 62)]
        missed = find_missed(prev, [])
        assert len(missed) == 1
        src, got_area = missed[0]
        assert src == prev[0]
        assert got_area == area(prev[0])

    def test_class_mismatch_is_missed(self):
        prev = [det(72, 62, label="cone")]
        nxt = [det(72, 62, label="crate", frame="s0/000001")]
        assert len(find_missed(prev, nxt)) == 1

    def test_far_same_class_is_missed(self):
        prev = [det(72, 62)]
        # search area half-extents: (2w+30)/2 = 39 in x
        nxt = [det(72 + 40, 62, frame="s0/000001")]
        assert len(find_missed(prev, nxt)) == 1

    def test_area_edge_is_inclusive(self):
        prev = [det(72, 62)]
        nxt = [det(72 + 39, 62, frame="s0/000001")]
        assert find_missed(prev, nxt) == []

    def test_weak_source_excluded(self):
        assert find_missed([det(72, 62, score=0.3)], []) == []
        assert len(find_missed([det(72, 62, score=0.31)], [])) == 1

    def test_recovered_source_excluded(self):
        prev = [det(72, 62, source=Source.FLOW_RECOVERED)]
        assert find_missed(prev, []) == []


class TestScoreRecovered:
    def test_frozen_values(self):
        assert score_recovered(0.8, 0.2) == pytest.approx(0.63905620875659, abs=1e-14)
        assert score_recovered(0.35, 1e-3) is None  # raw value clamps to 0

    def test_full_prior_keeps_source_score(self):
        assert score_recovered(0.8, 1.0) == 0.8

    def test_monotone_in_prior(self):
        scores = [score_recovered(0.9, m) for m in (0.05, 0.2, 0.5, 1.0)]
        assert all(a < b for a, b in zip(scores, scores[1:]))

    def test_never_exceeds_source(self):
        for m in (0.001, 0.3, 0.7, 1.0):
            s = score_recovered(0.85, m)
            assert s is None or s <= 0.85

    def test_floor_bounds_the_penalty(self):
        assert score_recovered(0.9, 0.0) == score_recovered(0.9, 1e-3)
        assert score_recovered(0.9, 1e-9) == score_recovered(0.9, 1e-3)

    def test_rejection_threshold(self):
        params = TrackerParams(recovered_score_min=0.9)
        assert score_recovered(0.85, 1.0, params) is None


class TestRecover:
    def test_translation_recovers_box(self):
        prev = frame_with_square(60, 50)
        nxt = frame_with_square(64, 51)
        src = det(72, 62)
        box, summary = recover(src, prev, nxt, area(src))
        assert box is not None
        assert box.cx == pytest.approx(76, abs=1.0)
        assert box.cy == pytest.approx(63, abs=1.0)
        assert (box.w, box.h) == (SIDE, SIDE)
        assert summary.corners_converged >= 3
        assert summary.offset[0] == pytest.approx(4, abs=1.0)

    def test_zero_motion_keeps_box(self):
        prev = frame_with_square(60, 50)
        src = det(72, 62)
        box, _ = recover(src, prev, prev, area(src))
        assert box is not None
        assert box.cx == pytest.approx(72, abs=0.1)
        assert box.cy == pytest.approx(62, abs=0.1)

    def test_textureless_source_fails(self):
        prev = frame_with_square(60, 50)
        nxt = frame_with_square(64, 51)
        src = det(120, 30)  # flat region, nothing to track
        box, summary = recover(src, prev, nxt, area(src))
        assert box is None
        assert summary.corners_on_object == 0

    def test_search_area_outside_image_fails(self):
        prev = frame_with_square(60, 50)
        src = det(72, 62)
        off = BBox(cx=-500, cy=-500, w=40, h=40)
        box, summary = recover(src, prev, prev, off)
        assert box is None
        assert summary.corners_found == 0

    def test_frame_size_mismatch_rejected(self):
        prev = frame_with_square(60, 50)
        small = GrayImage(np.full((H // 2, W // 2), 0.5))
        src = det(72, 62)
        with pytest.raises(ValueError):
            recover(src, prev, small, area(src))


class TestProcessSequence:
    def run(self, detections, n_frames=4, dx=3, dy=1, layout=ONES, params=TrackerParams()):
        frames, images, centers = moving_scene(n_frames, dx, dy)
        out, diags = process_sequence(
            frames, detections, layout, lambda ref: images[ref.frame_id], params=params
        )
        return frames, centers, out, diags

    def full_detections(self, n_frames=4, dx=3, dy=1, skip=()):
        _, _, centers = moving_scene(n_frames, dx, dy)
        return {
            fid: [det(cx, cy, frame=fid)]
            for fid, (cx, cy) in centers.items()
            if int(fid.split("/")[1]) not in skip
        }

    def test_gap_is_recovered(self):
        dets = self.full_detections(skip={2})
        frames, centers, out, diags = self.run(dets)
        fid = frames[2].frame_id
        assert len(out[fid]) == 1
        rec = out[fid][0]
        assert rec.source is Source.FLOW_RECOVERED
        assert rec.score >= 0.3
        cx, cy = centers[fid]
        assert rec.bbox.cx == pytest.approx(cx, abs=1.5)
        assert rec.bbox.cy == pytest.approx(cy, abs=1.5)
        assert [d.outcome for d in diags] == ["recovered"]

    def test_full_detector_passes_through(self):
        dets = self.full_detections()
        frames, _, out, diags = self.run(dets)
        assert diags == []
        for f in frames:
            assert out[f.frame_id] == list(dets[f.frame_id])

    def test_append_only(self):
        dets = self.full_detections(skip={2})
        dets["s0/000002"] = [det(120, 30, score=0.4, label="crate", frame="s0/000002")]
        frames, _, out, _ = self.run(dets)
        fid = frames[2].frame_id
        assert out[fid][0] == dets[fid][0]
        assert out[fid][1].source is Source.FLOW_RECOVERED

    def test_consecutive_gaps_recover_once(self):
        # a recovered box never seeds another recovery
        dets = self.full_detections(n_frames=5, skip={2, 3})
        frames, _, out, diags = self.run(dets, n_frames=5)
        assert len(out[frames[2].frame_id]) == 1
        assert out[frames[3].frame_id] == []
        assert [d.outcome for d in diags] == ["recovered"]

    def test_duplicate_recovery_suppressed(self):
        dets = self.full_detections(skip={2})
        fid1 = "s0/000001"
        near = dets[fid1][0]
        dets[fid1] = [near, det(near.bbox.cx + 1, near.bbox.cy, frame=fid1)]
        frames, _, out, diags = self.run(dets)
        assert len(out[frames[2].frame_id]) == 1
        assert [d.outcome for d in diags] == ["recovered", "duplicate_suppressed"]

    def test_low_prior_rejects_score(self):
        # all-zero prior floors M and the discount swallows a weak source
        dets = self.full_detections(skip={2})
        fid1 = "s0/000001"
        dets[fid1] = [det(dets[fid1][0].bbox.cx, dets[fid1][0].bbox.cy, score=0.35, frame=fid1)]
        zeros = LayoutGrid(np.zeros((8, 8)))
        frames, _, out, diags = self.run(dets, layout=zeros)
        assert out[frames[2].frame_id] == []
        assert [d.outcome for d in diags] == ["score_rejected"]

    def test_textureless_source_reports_flow_failed(self):
        dets = self.full_detections(skip={2})
        fid1 = "s0/000001"
        dets[fid1].append(det(120, 30, label="crate", frame=fid1))
        frames, _, out, diags = self.run(dets)
        assert sorted(d.outcome for d in diags) == ["flow_failed", "recovered"]
        assert len(out[frames[2].frame_id]) == 1

    def test_deterministic(self):
        dets = self.full_detections(skip={2})
        _, _, out1, diags1 = self.run(dets)
        _, _, out2, diags2 = self.run(dets)
        assert out1 == out2
        assert diags1 == diags2

    def test_mixed_sequences_rejected(self):
        frames = [FrameRef("s0", 0, "a.pgm"), FrameRef("s1", 1, "b.pgm")]
        with pytest.raises(ValueError):
            process_sequence(frames, {}, ONES, lambda ref: frame_with_square(40, 40))

    def test_non_increasing_index_rejected(self):
        frames = [FrameRef("s0", 1, "a.pgm"), FrameRef("s0", 1, "b.pgm")]
        with pytest.raises(ValueError):
            process_sequence(frames, {}, ONES, lambda ref: frame_with_square(40, 40))

    def test_missing_image_names_frame(self):
        dets = self.full_detections(skip={2})
        frames, _, _ = moving_scene(4, 3, 1)

        def loader(ref):
            raise FileNotFoundError(ref.image_path)

        with pytest.raises(FileNotFoundError, match="s0/000001"):
            process_sequence(frames, dets, ONES, loader)

    def test_no_detections_at_all(self):
        frames, _, _ = moving_scene(3, 3, 1)
        out, diags = process_sequence(
            frames, {}, ONES, lambda ref: frame_with_square(40, 40)
        )
        assert all(v == [] for v in out.values())
        assert diags == []
