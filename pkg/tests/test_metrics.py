import numpy as np
import pytest
from sklearn import metrics as skm

from luna_eeg.metrics import (auc_pr, auroc, balanced_accuracy, classification_report, cohen_kappa,
                              confusion_matrix, weighted_f1)

from oracles import confusion_by_hand

Y_TRUE = [0, 0, 1, 1, 2, 2]
Y_PRED = [0, 1, 1, 1, 2, 0]


def test_confusion_by_hand():
    expect = np.array([[1, 1, 0], [0, 2, 0], [1, 0, 1]])
    np.testing.assert_array_equal(confusion_matrix(Y_TRUE, Y_PRED), expect)
    np.testing.assert_array_equal(confusion_by_hand(Y_TRUE, Y_PRED, 3), expect)


def test_hand_values():
    # recalls 1/2, 1, 1/2
    assert balanced_accuracy(Y_TRUE, Y_PRED) == pytest.approx(2 / 3)
    # po = 4/6, pe = (2*2 + 2*3 + 2*1) / 36 = 1/3
    assert cohen_kappa(Y_TRUE, Y_PRED) == pytest.approx((4 / 6 - 1 / 3) / (2 / 3))
    # f1 per class: 1/2, 4/5, 2/3, equal support
    assert weighted_f1(Y_TRUE, Y_PRED) == pytest.approx((0.5 + 0.8 + 2 / 3) / 3)


def test_against_sklearn(rng):
    y = rng.integers(0, 4, 300)
    s = rng.random((300, 4))
    s /= s.sum(1, keepdims=True)
    p = s.argmax(1)
    assert balanced_accuracy(y, p) == pytest.approx(skm.balanced_accuracy_score(y, p), abs=1e-12)
    assert cohen_kappa(y, p) == pytest.approx(skm.cohen_kappa_score(y, p), abs=1e-12)
    assert weighted_f1(y, p) == pytest.approx(skm.f1_score(y, p, average="weighted"), abs=1e-12)
    assert auroc(y, s) == pytest.approx(skm.roc_auc_score(y, s, multi_class="ovr"), abs=1e-12)
    yb, sb = rng.integers(0, 2, 200), np.round(rng.random(200), 2)
    assert auroc(yb, sb) == pytest.approx(skm.roc_auc_score(yb, sb), abs=1e-12)


def test_auc_pr_step_free_cases():
    assert auc_pr([0, 1, 1, 0], [0.1, 0.9, 0.8, 0.2]) == pytest.approx(1.0)
    # all scores tied: single point (recall 1, precision 1/2), trapezoid from (0, 1)
    assert auc_pr([0, 1, 1, 0], [0.5] * 4) == pytest.approx(0.75)


def test_random_auroc_half(rng):
    y = rng.integers(0, 2, 10000)
    assert abs(auroc(y, rng.random(10000)) - 0.5) <= 0.05


def test_perfect_classifier():
    y = np.array([0, 1, 2, 0, 1, 2])
    s = np.eye(3)[y] * 0.9 + 0.05
    rep = classification_report(y, s, 3)
    assert rep["accuracy"] == rep["balanced_accuracy"] == rep["auroc"] == rep["cohen_kappa"] == 1.0
    assert rep["weighted_f1"] == 1.0 and rep["auc_pr"] == pytest.approx(1.0)


def test_degenerate_cases():
    assert cohen_kappa([1, 1], [1, 1]) == 1.0
    assert np.isnan(auroc([1, 1, 1], [0.2, 0.5, 0.9]))
