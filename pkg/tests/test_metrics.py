import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlpl.harness import Dataset, confusion_matrix, evaluate, metrics_from_confusion


def _miou(pred, labels, k):
    return metrics_from_confusion(confusion_matrix(pred, labels, k)).miou


def _brute_iou(pred, labels, k):
    out = []
    for c in range(k):
        inter = np.sum((pred == c) & (labels == c))
        union = np.sum((pred == c) | (labels == c))
        if union:
            out.append(inter / union)
    return 100.0 * np.mean(out)


def test_perfect_prediction_is_100(rng):
    labels = rng.integers(0, 4, size=(3, 8, 8))
    assert _miou(labels, labels, 4) == 100.0


def test_constant_prediction_on_balanced_two_class_split():
    labels = np.array([0] * 50 + [1] * 50)
    pred = np.zeros(100, dtype=int)
    m = metrics_from_confusion(confusion_matrix(pred, labels, 2))
    # predicted class: tp 50, union 100; other class: tp 0
    np.testing.assert_allclose(m.iou, [0.5, 0.0])
    assert m.miou == pytest.approx(25.0)


def test_confusion_rows_are_ground_truth():
    conf = confusion_matrix(np.array([1, 1, 0]), np.array([0, 1, 0]), 2)
    np.testing.assert_array_equal(conf, [[1, 1], [0, 1]])


@given(st.integers(0, 10 ** 6))
def test_matches_brute_force_and_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    labels = rng.integers(0, k, size=200)
    pred = np.where(rng.random(200) < 0.6, labels, rng.integers(0, k, size=200))
    base = _miou(pred, labels, k)
    assert base == pytest.approx(_brute_iou(pred, labels, k), abs=1e-10)
    perm = rng.permutation(k)
    assert _miou(perm[pred], perm[labels], k) == pytest.approx(base, abs=1e-10)


def test_absent_classes_skipped():
    m = metrics_from_confusion(confusion_matrix(np.array([0, 0]), np.array([0, 0]), 3))
    assert np.isnan(m.iou[1]) and m.miou == 100.0


def test_empty_split_rejected(tiny_cfg):
    from dlpl.harness import build_model
    empty = Dataset(np.zeros((0, 3, 16, 16)), np.zeros((0, 16, 16), np.uint8), np.zeros((0, 3, 3)),
                    np.zeros(0, np.uint8), 3)
    with pytest.raises(ValueError):
        evaluate(build_model(tiny_cfg), empty)
