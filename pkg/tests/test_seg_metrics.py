import numpy as np
import pytest

from vcmbench.datamodel import DataError, LabelMap
from vcmbench.seg_metrics import (
    ConfusionMatrix,
    UndefinedMetricError,
    accumulate,
    frwacc,
    merge,
    miou,
    oacc,
    per_class_iou,
    write_csv,
)

IGNORE = 255


def lm(arr, c):
    return LabelMap(np.asarray(arr, dtype=np.uint8), class_count=c, ignore_id=IGNORE)


def brute_force_scores(gt, pred, class_count, ignore=IGNORE):
    """Per-pixel set construction, independent of the accumulation path.

    Integer tallies throughout; division only at the end. Prediction
    pixels equal to the ignore ID count as a miss (FN) for the GT class.
    """
    tp = dict.fromkeys(range(class_count), 0)
    fp = dict.fromkeys(range(class_count), 0)
    fn = dict.fromkeys(range(class_count), 0)
    freq = dict.fromkeys(range(class_count), 0)
    correct = 0
    valid = 0
    for g, p in zip(np.asarray(gt).ravel().tolist(), np.asarray(pred).ravel().tolist()):
        if g == ignore:
            continue
        valid += 1
        freq[g] += 1
        if p == g:
            tp[g] += 1
            correct += 1
        else:
            fn[g] += 1
            if p != ignore:
                fp[p] += 1
    ious = {}
    for c in range(class_count):
        denom = tp[c] + fp[c] + fn[c]
        if denom > 0:
            ious[c] = tp[c] / denom
    result = {
        "miou": sum(ious.values()) / len(ious) if ious else None,
        "oacc": correct / valid if valid else None,
        "frwacc": sum((freq[c] / valid) * ious[c] for c in ious if freq[c] > 0) if valid else None,
    }
    return result


# hand enumeration of the 4 pixels: gt=[0,0,1,1], pred=[0,1,1,1]
HAND_GT = [[0, 0], [1, 1]]
HAND_PRED = [[0, 1], [1, 1]]


class TestAccumulate:
    def test_identity_only_diagonal(self):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 3, size=(8, 8)).astype(np.uint8)
        cm = accumulate(ConfusionMatrix(3), lm(arr, 3), lm(arr, 3))
        off_diag = cm.counts - np.diag(np.diag(cm.counts))
        assert (off_diag == 0).all()
        assert cm.counts.sum() == 64

    def test_hand_case_counts(self):
        cm = accumulate(ConfusionMatrix(2), lm(HAND_GT, 2), lm(HAND_PRED, 2))
        assert cm.counts[0, 0] == 1
        assert cm.counts[0, 1] == 1
        assert cm.counts[1, 1] == 2
        assert cm.counts[1, 0] == 0

    def test_all_ignore_gt(self):
        gt = lm(np.full((4, 4), IGNORE), 3)
        pred = lm(np.zeros((4, 4)), 3)
        cm = accumulate(ConfusionMatrix(3), gt, pred)
        assert cm.counts.sum() == 0
        assert cm.ignored_pixels == 16

    def test_void_prediction_counts_as_fn(self):
        gt = lm([[0, 0]], 2)
        pred = lm([[IGNORE, 0]], 2)
        cm = accumulate(ConfusionMatrix(2), gt, pred)
        assert cm.void_fn[0] == 1
        assert cm.counts[0, 0] == 1
        # the class-0 IoU sees the void pixel as FN
        assert per_class_iou(cm)[0] == pytest.approx(1 / 2)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError, match="dimension"):
            accumulate(ConfusionMatrix(2), lm(np.zeros((2, 2)), 2), lm(np.zeros((2, 3)), 2))

    def test_class_count_mismatch(self):
        with pytest.raises(DataError, match="class_count"):
            accumulate(ConfusionMatrix(3), lm(np.zeros((2, 2)), 2), lm(np.zeros((2, 2)), 2))

    def test_total_pixels_invariant(self):
        rng = np.random.default_rng(5)
        cm = ConfusionMatrix(4)
        total = 0
        for _ in range(5):
            gt = rng.integers(0, 4, size=(6, 7)).astype(np.uint8)
            gt[rng.random((6, 7)) < 0.2] = IGNORE
            pred = rng.integers(0, 4, size=(6, 7)).astype(np.uint8)
            pred[rng.random((6, 7)) < 0.1] = IGNORE
            accumulate(cm, lm(gt, 4), lm(pred, 4))
            total += 42
        assert cm.total_pixels == total


class TestMerge:
    def _random_cm(self, seed):
        rng = np.random.default_rng(seed)
        cm = ConfusionMatrix(3)
        gt = rng.integers(0, 3, size=(5, 5)).astype(np.uint8)
        pred = rng.integers(0, 3, size=(5, 5)).astype(np.uint8)
        return accumulate(cm, lm(gt, 3), lm(pred, 3))

    def test_identity_element(self):
        x = self._random_cm(1)
        merged = merge(x, ConfusionMatrix(3))
        assert np.array_equal(merged.counts, x.counts)
        assert merged.ignored_pixels == x.ignored_pixels

    def test_commutative(self):
        a, b = self._random_cm(2), self._random_cm(3)
        ab, ba = merge(a, b), merge(b, a)
        assert np.array_equal(ab.counts, ba.counts)
        assert np.array_equal(ab.void_fn, ba.void_fn)

    def test_associative(self):
        a, b, c = self._random_cm(4), self._random_cm(5), self._random_cm(6)
        left = merge(merge(a, b), c)
        right = merge(a, merge(b, c))
        assert np.array_equal(left.counts, right.counts)

    def test_merge_equals_sequential_accumulation(self):
        rng = np.random.default_rng(9)
        frames = []
        for _ in range(4):
            gt = rng.integers(0, 3, size=(6, 6)).astype(np.uint8)
            pred = rng.integers(0, 3, size=(6, 6)).astype(np.uint8)
            frames.append((lm(gt, 3), lm(pred, 3)))
        sequential = ConfusionMatrix(3)
        for gt, pred in frames:
            accumulate(sequential, gt, pred)
        merged = ConfusionMatrix(3)
        for gt, pred in frames:
            merged = merge(merged, accumulate(ConfusionMatrix(3), gt, pred))
        assert np.array_equal(sequential.counts, merged.counts)
        assert sequential.ignored_pixels == merged.ignored_pixels

    def test_class_count_mismatch(self):
        with pytest.raises(DataError):
            merge(ConfusionMatrix(2), ConfusionMatrix(3))


class TestScores:
    def test_perfect_diagonal(self):
        cm = ConfusionMatrix(3, counts=np.diag([5, 2, 7]))
        assert miou(cm) == 1.0
        assert oacc(cm) == 1.0
        assert frwacc(cm) == 1.0

    def test_hand_case_scores(self):
        cm = accumulate(ConfusionMatrix(2), lm(HAND_GT, 2), lm(HAND_PRED, 2))
        # class 0: 1/(1+0+1) = 1/2; class 1: 2/(2+1+0) = 2/3
        assert miou(cm) == pytest.approx(7 / 12, abs=1e-15)
        assert oacc(cm) == pytest.approx(3 / 4, abs=1e-15)
        # (2/4)*(1/2) + (2/4)*(2/3)
        assert frwacc(cm) == pytest.approx(7 / 12, abs=1e-15)

    def test_total_miss(self):
        cm = accumulate(ConfusionMatrix(2), lm(np.zeros((3, 3)), 2), lm(np.ones((3, 3)), 2))
        assert miou(cm) == 0.0
        assert oacc(cm) == 0.0

    def test_all_off_diagonal_oacc_zero(self):
        cm = ConfusionMatrix(2, counts=np.array([[0, 3], [4, 0]]))
        assert oacc(cm) == 0.0

    def test_single_class_gt_frwacc_equals_its_iou(self):
        cm = ConfusionMatrix(3, counts=np.array([[4, 2, 0], [0, 0, 0], [0, 0, 0]]))
        ious = per_class_iou(cm)
        assert frwacc(cm) == pytest.approx(ious[0])

    def test_absent_classes_excluded_from_miou(self):
        # class 2 appears nowhere; mean over classes 0 and 1 only
        cm = ConfusionMatrix(3, counts=np.array([[2, 0, 0], [2, 2, 0], [0, 0, 0]]))
        # class 0: 2/(2+2+0)=1/2, class 1: 2/(2+0+2)=1/2
        assert miou(cm) == pytest.approx(0.5)

    def test_empty_matrix_undefined(self):
        with pytest.raises(UndefinedMetricError):
            miou(ConfusionMatrix(3))
        with pytest.raises(UndefinedMetricError):
            oacc(ConfusionMatrix(3))
        with pytest.raises(UndefinedMetricError):
            frwacc(ConfusionMatrix(3))

    def test_scores_within_unit_interval(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            c = int(rng.integers(2, 6))
            gt = rng.integers(0, c, size=(10, 10)).astype(np.uint8)
            pred = rng.integers(0, c, size=(10, 10)).astype(np.uint8)
            cm = accumulate(ConfusionMatrix(c), lm(gt, c), lm(pred, c))
            for fn in (miou, oacc, frwacc):
                assert 0.0 <= fn(cm) <= 1.0

    def test_oacc_is_one_iff_off_diagonal_zero(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            gt = rng.integers(0, 3, size=(6, 6)).astype(np.uint8)
            pred = gt.copy()
            if rng.random() < 0.5:
                pred[0, 0] = (pred[0, 0] + 1) % 3
            cm = accumulate(ConfusionMatrix(3), lm(gt, 3), lm(pred, 3))
            off = cm.counts - np.diag(np.diag(cm.counts))
            assert (oacc(cm) == 1.0) == bool((off == 0).all() and cm.void_fn.sum() == 0)


class TestBruteForceOracle:
    def test_matches_brute_force_with_ignore_and_void(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            c = int(rng.integers(2, 6))
            h, w = (int(v) for v in rng.integers(2, 33, size=2))
            gt = rng.integers(0, c, size=(h, w)).astype(np.uint8)
            gt[rng.random((h, w)) < 0.15] = IGNORE
            gt[0, 0] = 0  # keep at least one valid pixel
            pred = rng.integers(0, c, size=(h, w)).astype(np.uint8)
            pred[rng.random((h, w)) < 0.1] = IGNORE
            cm = accumulate(ConfusionMatrix(c), lm(gt, c), lm(pred, c))
            expected = brute_force_scores(gt, pred, c)
            assert miou(cm) == pytest.approx(expected["miou"], abs=1e-12)
            assert oacc(cm) == pytest.approx(expected["oacc"], abs=1e-12)
            assert frwacc(cm) == pytest.approx(expected["frwacc"], abs=1e-12)


def test_csv_export_shape(tmp_path):
    cm = accumulate(ConfusionMatrix(2), lm(HAND_GT, 2), lm(HAND_PRED, 2))
    path = write_csv(cm, tmp_path / "cm.csv")
    rows = [line.split(",") for line in path.read_text().strip().splitlines()]
    assert len(rows) == 2 and all(len(r) == 2 for r in rows)
    assert [[int(v) for v in r] for r in rows] == [[1, 1], [0, 2]]
