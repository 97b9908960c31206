import pytest

from roadctx.core import BBox, Detection, FrameRef, Source
from roadctx.evaluation import GroundTruth
from roadctx.records import (
    Corpus,
    DetectionRecord,
    FrameEntry,
    RecordFormatError,
    atomic_write_text,
    format_detections,
    load_corpus,
    parse_frame_id,
    read_detections,
    write_corpus,
    write_detections,
)

HEADER = "frame_id\tclass\tcx\tcy\tw\th\tscore\tsource"


def rec(frame="s0/000003", label="cone", cx=50.0, cy=60.0, w=10.0, h=12.0,
        score=0.9, source=Source.DETECTOR, extras=()):
    return DetectionRecord(
        detection=Detection(
            frame_id=frame,
            bbox=BBox(cx=cx, cy=cy, w=w, h=h),
            class_label=label,
            score=score,
            source=source,
        ),
        extras=tuple(extras),
    )


class TestParseFrameId:
    def test_round_trip(self):
        assert parse_frame_id("s3/000017") == ("s3", 17)

    def test_slash_in_sequence(self):
        assert parse_frame_id("run/a/000002") == ("run/a", 2)

    @pytest.mark.parametrize("bad", ["noslash", "/7", "s/", "s/x7", ""])
    def test_malformed_rejected(self, bad):
        with pytest.raises(ValueError):
            parse_frame_id(bad)


class TestDetectionFiles:
    def test_round_trip(self, tmp_path):
        records = [rec(), rec(frame="s0/000004", score=0.5, source=Source.FLOW_RECOVERED)]
        path = tmp_path / "dets.tsv"
        write_detections(path, records)
        assert read_detections(path) == records

    def test_float_repr_survives(self, tmp_path):
        r = rec(cx=1 / 3, cy=0.1 + 0.2, score=0.123456789012345)
        path = tmp_path / "dets.tsv"
        write_detections(path, [r])
        back = read_detections(path)[0].detection
        assert back.bbox.cx == 1 / 3
        assert back.bbox.cy == 0.1 + 0.2
        assert back.score == 0.123456789012345

    def test_extras_carried_through(self, tmp_path):
        records = [
            rec(extras=(("track_id", "7"), ("note", "edge case"))),
            rec(frame="s0/000005", extras=(("track_id", "9"), ("note", ""))),
        ]
        path = tmp_path / "dets.tsv"
        write_detections(path, records)
        back = read_detections(path)
        assert back[0].extras == (("track_id", "7"), ("note", "edge case"))
        assert back[1].extras == (("track_id", "9"), ("note", ""))

    def test_sorted_by_sequence_then_index(self):
        records = [rec(frame="s1/000002"), rec(frame="s0/000010"), rec(frame="s0/000002")]
        lines = format_detections(records).splitlines()
        assert [l.split("\t")[0] for l in lines[1:]] == ["s0/000002", "s0/000010", "s1/000002"]

    def test_within_frame_order_stable(self):
        records = [rec(label="first", score=0.1), rec(label="second", score=0.9)]
        lines = format_detections(records).splitlines()
        assert [l.split("\t")[1] for l in lines[1:]] == ["first", "second"]

    def test_empty_file_gives_no_records(self, tmp_path):
        path = tmp_path / "dets.tsv"
        path.write_text("")
        assert read_detections(path) == []

    def test_header_only_round_trip(self, tmp_path):
        path = tmp_path / "dets.tsv"
        write_detections(path, [])
        assert path.read_text() == HEADER + "\n"
        assert read_detections(path) == []

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "dets.tsv"
        path.write_text(HEADER + "\n\ns0/000001\tcone\t5.0\t5.0\t2.0\t2.0\t0.5\tdetector\n")
        assert len(read_detections(path)) == 1

    def test_error_names_line(self, tmp_path):
        rows = [HEADER]
        rows += [f"s0/{i:06d}\tcone\t5.0\t5.0\t2.0\t2.0\t0.5\tdetector" for i in range(15)]
        rows.append("s0/000015\tcone\tnot_a_number\t5.0\t2.0\t2.0\t0.5\tdetector")
        path = tmp_path / "dets.tsv"
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(RecordFormatError, match="line 17"):
            read_detections(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "dets.tsv"
        path.write_text("frame\tclass\n")
        with pytest.raises(RecordFormatError, match="line 1"):
            read_detections(path)

    def test_unknown_source_rejected(self, tmp_path):
        path = tmp_path / "dets.tsv"
        path.write_text(HEADER + "\ns0/000001\tcone\t5.0\t5.0\t2.0\t2.0\t0.5\toracle\n")
        with pytest.raises(RecordFormatError, match="line 2"):
            read_detections(path)

    def test_field_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "dets.tsv"
        path.write_text(HEADER + "\ns0/000001\tcone\t5.0\n")
        with pytest.raises(RecordFormatError, match="line 2"):
            read_detections(path)

    def test_out_of_range_score_rejected(self, tmp_path):
        path = tmp_path / "dets.tsv"
        path.write_text(HEADER + "\ns0/000001\tcone\t5.0\t5.0\t2.0\t2.0\t1.5\tdetector\n")
        with pytest.raises(RecordFormatError, match="line 2"):
            read_detections(path)


class TestCorpus:
    def make(self, tmp_path, frames=None):
        if frames is None:
            frames = [
                FrameEntry(
                    ref=FrameRef(sequence_id="s0", index=i, image_path=f"img/s0_{i:06d}.pgm"),
                    width=320,
                    height=180,
                    boxes=(
                        GroundTruth(
                            frame_id=f"s0/{i:06d}",
                            class_label="cone",
                            bbox=BBox(cx=100 + i, cy=120.0, w=24.0, h=24.0),
                        ),
                    ),
                )
                for i in range(3)
            ]
        corpus = Corpus(frames=tuple(frames), root=tmp_path)
        path = tmp_path / "corpus.json"
        write_corpus(path, corpus)
        return path, corpus

    def test_round_trip(self, tmp_path):
        path, corpus = self.make(tmp_path)
        loaded = load_corpus(path)
        assert loaded.frames == corpus.frames
        assert loaded.root == tmp_path

    def test_image_paths_resolve_against_document(self, tmp_path):
        path, _ = self.make(tmp_path)
        loaded = load_corpus(path)
        ref = loaded.frames[0].ref
        assert loaded.image_path(ref) == tmp_path / "img" / "s0_000000.pgm"

    def test_corner_format_converted(self, tmp_path):
        doc = {
            "box_format": "corner",
            "frames": [
                {
                    "sequence": "s0",
                    "index": 0,
                    "image": "a.pgm",
                    "width": 100,
                    "height": 100,
                    "boxes": [{"class": "cone", "x1": 10, "y1": 20, "x2": 30, "y2": 60}],
                }
            ],
        }
        path = tmp_path / "corpus.json"
        import json

        path.write_text(json.dumps(doc))
        box = load_corpus(path).frames[0].boxes[0].bbox
        assert (box.cx, box.cy, box.w, box.h) == (20, 40, 20, 40)

    def test_frames_sorted_on_load(self, tmp_path):
        frames = [
            FrameEntry(ref=FrameRef("s1", 0, "b.pgm"), width=10, height=10),
            FrameEntry(ref=FrameRef("s0", 1, "a1.pgm"), width=10, height=10),
            FrameEntry(ref=FrameRef("s0", 0, "a0.pgm"), width=10, height=10),
        ]
        path, _ = self.make(tmp_path, frames)
        loaded = load_corpus(path)
        assert [f.ref.frame_id for f in loaded.frames] == ["s0/000000", "s0/000001", "s1/000000"]

    def test_duplicate_index_rejected(self, tmp_path):
        frames = [
            FrameEntry(ref=FrameRef("s0", 1, "a.pgm"), width=10, height=10),
            FrameEntry(ref=FrameRef("s0", 1, "b.pgm"), width=10, height=10),
        ]
        path, _ = self.make(tmp_path, frames)
        with pytest.raises(ValueError, match="duplicate frame index"):
            load_corpus(path)

    def test_unknown_box_format_rejected(self, tmp_path):
        path = tmp_path / "corpus.json"
        path.write_text('{"box_format": "yolo", "frames": []}')
        with pytest.raises(ValueError, match="box_format"):
            load_corpus(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "corpus.json"
        path.write_text('{"frames": [{"sequence": "s0"}]}')
        with pytest.raises(ValueError, match="malformed corpus"):
            load_corpus(path)

    def test_ground_truth_flattens_frames(self, tmp_path):
        path, _ = self.make(tmp_path)
        gts = load_corpus(path).ground_truth()
        assert len(gts) == 3
        assert {g.frame_id for g in gts} == {"s0/000000", "s0/000001", "s0/000002"}

    def test_sequences_grouping(self, tmp_path):
        frames = [
            FrameEntry(ref=FrameRef("s0", 0, "a.pgm"), width=10, height=10),
            FrameEntry(ref=FrameRef("s1", 0, "b.pgm"), width=10, height=10),
            FrameEntry(ref=FrameRef("s0", 1, "c.pgm"), width=10, height=10),
        ]
        path, _ = self.make(tmp_path, frames)
        seqs = load_corpus(path).sequences()
        assert sorted(seqs) == ["s0", "s1"]
        assert [f.ref.index for f in seqs["s0"]] == [0, 1]


class TestAtomicWrite:
    def test_writes_and_replaces(self, tmp_path):
        path = tmp_path / "out" / "file.txt"
        atomic_write_text(path, "first\n")
        atomic_write_text(path, "second\n")
        assert path.read_text() == "second\n"

    def test_no_temp_litter(self, tmp_path):
        path = tmp_path / "file.txt"
        atomic_write_text(path, "data\n")
        assert [p.name for p in tmp_path.iterdir()] == ["file.txt"]
