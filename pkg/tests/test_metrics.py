import json
import logging

import numpy as np
import pytest

from histoxai import metrics
from histoxai.errors import DataError, ParameterError
from histoxai.metrics import ConfusionCounts, MetricsReport, auroc, confusion, evaluate

from oracles import brute_confusion, pairwise_auroc, trapezoid_auroc


def test_confusion_two_points():
    assert confusion([0.9, 0.1], [1, 0]) == ConfusionCounts(tp=1, tn=1, fp=0, fn=0)


def test_threshold_is_inclusive():
    assert confusion([0.5], [0]).fp == 1


def test_confusion_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 60))
        s = rng.random(n).round(int(rng.integers(1, 4)))
        y = rng.integers(0, 2, n)
        assert confusion(s, y) == ConfusionCounts(*brute_confusion(s, y, 0.5))


def test_perfect_counts_give_ones():
    c = ConfusionCounts(1, 1, 0, 0)
    assert [metrics.precision(c), metrics.recall(c), metrics.f1(c), metrics.accuracy(c)] == [1.0] * 4


def test_eight_two_two_eight():
    c = ConfusionCounts(tp=8, tn=8, fp=2, fn=2)
    for fn in (metrics.precision, metrics.recall, metrics.f1, metrics.accuracy):
        assert fn(c) == pytest.approx(0.8, abs=1e-15)


def test_zero_denominator_is_zero_with_warning(caplog):
    warnings = []
    with caplog.at_level(logging.WARNING):
        assert metrics.precision(ConfusionCounts(0, 3, 0, 1), warnings) == 0.0
    assert warnings and "precision" in warnings[0]
    assert "zero denominator" in caplog.text


def test_report_row_formatting_golden():
    r = MetricsReport(0.975, 0.975, 0.98, 0.98, 0.999, 0.5, 100, model="VGG16")
    assert metrics.format_row(r) == ["VGG16", "0.975", "0.975", "0.98", "0.98", "0.999"]


def test_table_header():
    r = MetricsReport(1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 4, model="TinyVGG")
    lines = metrics.format_table([r]).splitlines()
    assert lines[0].split() == ["Model", "Precision", "Recall", "F1-score", "Accuracy", "Auroc"]
    assert lines[1].split() == ["TinyVGG", "1.0", "1.0", "1.0", "1.0", "1.0"]


def test_auroc_worked_example():
    assert auroc([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0]) == 0.75


def test_auroc_perfect_and_ties():
    assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auroc([0.3] * 6, [1, 0, 1, 0, 1, 0]) == 0.5


def test_auroc_single_class():
    with pytest.raises(DataError):
        auroc([0.1, 0.2], [1, 1])


def test_auroc_agrees_with_oracles():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 80))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.random(n).round(int(rng.integers(1, 3)))
        a = auroc(s, y)
        assert abs(a - trapezoid_auroc(s, y)) < 1e-9
        assert abs(a - pairwise_auroc(s, y)) < 1e-9


def test_auroc_invariances():
    rng = np.random.default_rng(2)
    s = rng.random(50)
    y = rng.integers(0, 2, 50)
    a = auroc(s, y)
    assert auroc(np.exp(3 * s), y) == pytest.approx(a, abs=1e-12)
    assert auroc(s, 1 - y) == pytest.approx(1 - a, abs=1e-12)


def test_input_validation():
    with pytest.raises(DataError):
        confusion([], [])
    with pytest.raises(DataError):
        confusion([0.1], [2])
    with pytest.raises(DataError):
        confusion([0.1, 0.2], [1])


def test_evaluate_json_keys():
    report = evaluate([0.9, 0.2, 0.7, 0.4], [1, 0, 0, 1], model="m", task="colon")
    data = json.loads(report.to_json())
    assert list(data) == ["model", "task", "precision", "recall", "f1", "accuracy", "auroc", "threshold", "n"]
    assert data["n"] == 4 and data["accuracy"] == 0.5


def test_macro_averaging():
    s, y = [0.9, 0.8, 0.6, 0.1], [1, 1, 0, 0]
    report = evaluate(s, y, averaging="macro")
    # positive class: P=2/3, R=1; negative class: P=1, R=1/2
    assert report.precision == pytest.approx((2 / 3 + 1) / 2)
    assert report.recall == pytest.approx(0.75)
    assert json.loads(report.to_json())["averaging"] == "macro"
    with pytest.raises(ParameterError):
        evaluate(s, y, averaging="micro")
