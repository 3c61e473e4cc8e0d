import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from vcmbench.datamodel import (
    DataError,
    Detection,
    DetectionSet,
    EvalRecord,
    FrameRef,
    GtMode,
    InstanceSet,
    LabelMap,
    RleMask,
    clamp_bbox,
    load_annotations,
    load_detections,
    load_label_map,
    save_annotations,
    save_detections,
    save_label_map,
)


def _write_png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)
    return path


class TestLabelMap:
    def test_constant_raster(self, tmp_path):
        path = _write_png(tmp_path / "m.png", np.zeros((4, 4)))
        lm = load_label_map(path, class_count=19)
        assert lm.width == 4 and lm.height == 4
        assert int((lm.labels == 0).sum()) == 16

    def test_out_of_range_class_reports_value_and_pixel(self, tmp_path):
        arr = np.zeros((3, 3))
        arr[1, 2] = 21  # flat index 5
        path = _write_png(tmp_path / "m.png", arr)
        with pytest.raises(DataError, match=r"class ID 21 >= 19 at pixel 5"):
            load_label_map(path, class_count=19, ignore_id=255)

    def test_ignore_passthrough(self, tmp_path):
        path = _write_png(tmp_path / "m.png", np.full((4, 4), 255))
        lm = load_label_map(path, class_count=19, ignore_id=255)
        assert (lm.labels == 255).all()

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_label_map(tmp_path / "nope.png", class_count=19)

    def test_multichannel_rejected(self, tmp_path):
        path = tmp_path / "rgb.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(path)
        with pytest.raises(DataError, match="single-channel"):
            load_label_map(path, class_count=19)

    def test_every_pixel_validated_after_load(self, tmp_path):
        rng = np.random.default_rng(7)
        arr = rng.integers(0, 19, size=(16, 16)).astype(np.uint8)
        arr[rng.random((16, 16)) < 0.2] = 255
        path = _write_png(tmp_path / "m.png", arr)
        lm = load_label_map(path, class_count=19)
        assert bool(np.all((lm.labels == 255) | (lm.labels < 19)))

    def test_labels_are_immutable(self):
        lm = LabelMap(np.zeros((2, 2), dtype=np.uint8), class_count=2)
        with pytest.raises(ValueError):
            lm.labels[0, 0] = 1

    def test_ignore_id_inside_class_range_rejected(self):
        with pytest.raises(DataError, match="collides"):
            LabelMap(np.zeros((2, 2), dtype=np.uint8), class_count=19, ignore_id=5)

    def test_save_load_round_trip_bytes(self, tmp_path):
        rng = np.random.default_rng(3)
        lm = LabelMap(rng.integers(0, 5, size=(8, 8)).astype(np.uint8), class_count=5)
        p1 = save_label_map(lm, tmp_path / "a.png")
        reloaded = load_label_map(p1, class_count=5)
        p2 = save_label_map(reloaded, tmp_path / "b.png")
        assert p1.read_bytes() == p2.read_bytes()
        assert reloaded == lm


class TestRleMask:
    def test_round_trip_simple(self):
        mask = np.array([[1, 0], [1, 1]], dtype=bool)
        rle = RleMask.from_array(mask)
        assert np.array_equal(rle.decode(), mask)
        assert rle.area == 3

    def test_counts_start_with_zero_run(self):
        mask = np.ones((2, 2), dtype=bool)
        rle = RleMask.from_array(mask)
        assert rle.counts[0] == 0 and sum(rle.counts) == 4

    def test_column_major_order(self):
        # pixel (row 1, col 0) set => column-major flat position 1
        mask = np.zeros((2, 2), dtype=bool)
        mask[1, 0] = True
        rle = RleMask.from_array(mask)
        assert rle.counts == (1, 1, 2)

    def test_json_round_trip_string_counts(self):
        rng = np.random.default_rng(11)
        mask = rng.random((7, 5)) < 0.4
        rle = RleMask.from_array(mask)
        obj = rle.to_json_obj()
        assert isinstance(obj["counts"], str)
        assert RleMask.from_json_obj(obj) == rle

    def test_list_counts_accepted(self):
        rle = RleMask.from_json_obj({"size": [2, 2], "counts": [1, 1, 2]})
        assert rle.counts == (1, 1, 2)

    def test_bad_total_rejected(self):
        with pytest.raises(DataError, match="sum"):
            RleMask(height=2, width=2, counts=(1, 1))

    @given(st.integers(0, 2**30 - 1), st.integers(2, 6), st.integers(2, 6))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_random(self, seed, h, w):
        rng = np.random.default_rng(seed)
        mask = rng.random((h, w)) < 0.5
        assert np.array_equal(RleMask.from_array(mask).decode(), mask)


class TestDetections:
    def test_empty_list(self, make_frame, write_json):
        ds = load_detections(write_json([]), make_frame())
        assert len(ds) == 0

    def test_single_record(self, make_frame, write_json):
        path = write_json([{"class_id": 0, "score": 0.9, "bbox": [0, 0, 10, 10]}])
        ds = load_detections(path, make_frame())
        assert len(ds) == 1
        assert ds.detections[0].score == 0.9
        assert ds.detections[0].bbox == (0.0, 0.0, 10.0, 10.0)

    def test_score_out_of_range(self, make_frame, write_json):
        path = write_json([{"class_id": 0, "score": 1.5, "bbox": [0, 0, 1, 1]}])
        with pytest.raises(DataError, match="score out of range"):
            load_detections(path, make_frame())

    def test_missing_score(self, make_frame, write_json):
        path = write_json([{"class_id": 0, "bbox": [0, 0, 1, 1]}])
        with pytest.raises(DataError, match="no score"):
            load_detections(path, make_frame())

    def test_negative_extent(self, make_frame, write_json):
        path = write_json([{"class_id": 0, "score": 0.5, "bbox": [0, 0, -2, 1]}])
        with pytest.raises(DataError, match="negative extent"):
            load_detections(path, make_frame())

    def test_malformed_json(self, make_frame, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(DataError, match="malformed JSON"):
            load_detections(path, make_frame())

    def test_mask_dimension_checked(self, make_frame, write_json):
        path = write_json(
            [
                {
                    "class_id": 0,
                    "score": 0.5,
                    "bbox": [0, 0, 1, 1],
                    "mask": {"size": [2, 2], "counts": "0 4"},
                }
            ]
        )
        with pytest.raises(DataError, match="does not match frame"):
            load_detections(path, make_frame(width=32, height=24))

    @given(
        st.lists(
            st.tuples(
                st.integers(0, 7),
                st.floats(0.0, 1.0, allow_nan=False),
                st.integers(0, 20),
                st.integers(0, 14),
                st.integers(1, 10),
                st.integers(1, 8),
            ),
            max_size=12,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_order_and_multiplicity_preserved(self, tmp_path_factory, records):
        tmp = tmp_path_factory.mktemp("order")
        objs = [
            {"class_id": c, "score": round(s, 6), "bbox": [x, y, w, h]}
            for c, s, x, y, w, h in records
        ]
        path = tmp / "dets.json"
        path.write_text(json.dumps(objs))
        frame = FrameRef("d", "s", 0, tmp / "img.png", 32, 24)
        ds = load_detections(path, frame)
        assert len(ds) == len(objs)
        for det, obj in zip(ds.detections, objs):
            assert det.class_id == obj["class_id"]
            assert det.score == obj["score"]


class TestAnnotations:
    def test_empty(self, make_frame, write_json):
        refs = load_annotations(write_json([]), make_frame())
        assert len(refs) == 0

    def test_two_instances_order_preserved(self, make_frame, write_json):
        path = write_json(
            [
                {"class_id": 1, "bbox": [0, 0, 4, 4]},
                {"class_id": 0, "bbox": [5, 5, 3, 3]},
            ]
        )
        refs = load_annotations(path, make_frame())
        assert [i.class_id for i in refs.instances] == [1, 0]

    def test_clamp_to_frame_with_warning(self, make_frame, write_json):
        # frame is 32x24; bbox spills 8 px right and 4 px down
        path = write_json([{"class_id": 0, "bbox": [28, 20, 12, 8]}])
        frame = make_frame(width=32, height=24)
        with pytest.warns(UserWarning, match="clamped"):
            refs = load_annotations(path, frame)
        x, y, w, h = refs.instances[0].bbox
        # clamped area equals the intersection with the frame rectangle
        inter_w = min(28 + 12, 32) - 28
        inter_h = min(20 + 8, 24) - 20
        assert (x, y) == (28.0, 20.0)
        assert w * h == inter_w * inter_h

    def test_fully_outside_box_clamps_to_zero_area(self):
        assert clamp_bbox((40, 30, 5, 5), 32, 24) == (32.0, 24.0, 0.0, 0.0)

    def test_round_trip_canonical_bytes(self, make_frame, write_json, tmp_path):
        path = write_json(
            [
                {"class_id": 1, "bbox": [1, 2, 3, 4]},
                {
                    "class_id": 0,
                    "bbox": [5, 5, 3, 3],
                    "mask": {"size": [24, 32], "counts": " ".join(["0", "3", str(24 * 32 - 3)])},
                },
            ]
        )
        frame = make_frame(width=32, height=24)
        refs = load_annotations(path, frame)
        p1 = save_annotations(refs, tmp_path / "a.json")
        reloaded = load_annotations(p1, frame)
        p2 = save_annotations(reloaded, tmp_path / "b.json")
        assert p1.read_bytes() == p2.read_bytes()
        assert reloaded.instances == refs.instances

    def test_detection_round_trip_canonical_bytes(self, make_frame, tmp_path):
        frame = make_frame()
        ds = DetectionSet(
            frame=frame,
            detections=(
                Detection(class_id=0, score=0.875, bbox=(1, 1, 4, 4)),
                Detection(class_id=1, score=0.5, bbox=(2, 3, 5, 6)),
            ),
        )
        p1 = save_detections(ds, tmp_path / "a.json")
        reloaded = load_detections(p1, frame)
        p2 = save_detections(reloaded, tmp_path / "b.json")
        assert p1.read_bytes() == p2.read_bytes()


class TestEvalRecord:
    def test_json_round_trip(self, make_frame):
        rec = EvalRecord(
            codec_id="hm",
            qp=27,
            frame=make_frame(),
            metric_id="miou:seg",
            gt_mode=GtMode.PSEUDO_GT,
            value=0.75,
            rate_bits=1234,
            aux={"counts": [[1, 0], [0, 1]]},
        )
        assert EvalRecord.from_json_obj(rec.to_json_obj()) == rec

    def test_negative_rate_rejected(self, make_frame):
        with pytest.raises(DataError):
            EvalRecord("c", 1, make_frame(), "psnr", GtMode.TRUE_GT, 1.0, rate_bits=-1)

    def test_frame_invariants(self, tmp_path):
        with pytest.raises(DataError):
            FrameRef("d", "s", -1, tmp_path / "x.png", 4, 4)
        with pytest.raises(DataError):
            FrameRef("d", "s", 0, tmp_path / "x.png", 0, 4)
