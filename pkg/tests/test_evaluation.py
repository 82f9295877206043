import json

import numpy as np
import pytest

from phaseswap.dataset import Window
from phaseswap.errors import InsufficientDataError, ParameterError
from phaseswap.evaluation import (
    aggregate_rows,
    balanced_accuracy,
    evaluate,
    format_table,
    run_experiment_grid,
    write_report,
)
from phaseswap.nn import Classifier, FcnEncoder, SoftmaxHead


def brute_force_balanced_accuracy(y, y_pred, k):
    """Explicit confusion matrix with Python loops; absent classes skipped."""
    confusion = [[0] * k for _ in range(k)]
    for a, b in zip(y, y_pred):
        confusion[a][b] += 1
    recalls = []
    for c in range(k):
        total = sum(confusion[c])
        if total:
            recalls.append(confusion[c][c] / total)
    return sum(recalls) / len(recalls)


class TestBalancedAccuracy:
    def test_hand_example(self):
        m = balanced_accuracy([0, 0, 1, 1], [0, 1, 1, 1])
        np.testing.assert_allclose(m.per_class_recall, [0.5, 1.0])
        assert m.balanced_accuracy == 0.75

    def test_one_hot_input(self):
        y = np.eye(3)[[0, 1, 2, 2]]
        m = balanced_accuracy(y, [0, 1, 2, 0])
        assert m.balanced_accuracy == pytest.approx((1 + 1 + 0.5) / 3)
        assert m.confusion.sum() == m.n == 4

    def test_perfect(self):
        assert balanced_accuracy([0, 1, 2], [0, 1, 2]).balanced_accuracy == 1.0

    def test_constant_predictor(self):
        y = np.repeat(np.arange(5), 20)
        assert balanced_accuracy(y, np.zeros(100, dtype=int), 5).balanced_accuracy == pytest.approx(0.2)

    def test_absent_class_excluded(self):
        m = balanced_accuracy([0, 0, 2], [0, 1, 2], n_classes=3)
        assert np.isnan(m.per_class_recall[1])
        assert m.balanced_accuracy == 0.75

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        for k in (2, 5):
            for _ in range(200):
                n = int(rng.integers(1, 60))
                y, y_pred = rng.integers(k, size=n), rng.integers(k, size=n)
                m = balanced_accuracy(y, y_pred, k)
                assert m.balanced_accuracy == brute_force_balanced_accuracy(y, y_pred, k)
                assert abs(m.balanced_accuracy - np.nanmean(m.per_class_recall)) <= 1e-12

    def test_invariances(self):
        rng = np.random.default_rng(1)
        y, y_pred = rng.integers(4, size=50), rng.integers(4, size=50)
        base = balanced_accuracy(y, y_pred, 4).balanced_accuracy
        perm = rng.permutation(50)
        assert balanced_accuracy(y[perm], y_pred[perm], 4).balanced_accuracy == pytest.approx(base, abs=1e-15)
        doubled = balanced_accuracy(np.tile(y, 2), np.tile(y_pred, 2), 4).balanced_accuracy
        assert doubled == pytest.approx(base, abs=1e-15)
        relabel = np.array([2, 0, 3, 1])
        assert balanced_accuracy(relabel[y], relabel[y_pred], 4).balanced_accuracy == pytest.approx(base, abs=1e-15)

    def test_random_predictor_near_chance(self):
        rng = np.random.default_rng(2)
        y = np.repeat([0, 1], 5000)
        assert 0.47 <= balanced_accuracy(y, rng.integers(2, size=10000)).balanced_accuracy <= 0.53

    def test_errors(self):
        with pytest.raises(ParameterError):
            balanced_accuracy([], [])
        with pytest.raises(ParameterError):
            balanced_accuracy([0, 1], [0])


def small_model(seed=0):
    rng = np.random.default_rng(seed)
    return Classifier(FcnEncoder(2, rng, widths=(4, 4, 4)), SoftmaxHead(4, 3, rng))


def labelled_windows(n, seed=0):
    rng = np.random.default_rng(seed)
    return [Window(rng.normal(size=(2, 128)), "a", "1", i * 128, int(i % 3)) for i in range(n)]


class TestEvaluate:
    def test_batch_size_independent(self):
        model, windows = small_model(), labelled_windows(40)
        model(np.stack([w.data for w in windows]))  # populate running stats
        a = evaluate(model, windows, batch_size=32).balanced_accuracy
        b = evaluate(model, windows, batch_size=128).balanced_accuracy
        assert abs(a - b) < 1e-10

    def test_duplication_invariant(self):
        model, windows = small_model(), labelled_windows(30)
        a = evaluate(model, windows)
        b = evaluate(model, windows + windows)
        assert a.balanced_accuracy == b.balanced_accuracy
        np.testing.assert_array_equal(2 * a.confusion, b.confusion)

    def test_restores_training_mode(self):
        model = small_model()
        evaluate(model, labelled_windows(3))
        assert model.training

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            evaluate(small_model(), [])


class Cfg:
    def __init__(self, variant, seed=0, fail=False):
        self.variant, self.r_train, self.w_self, self.seed, self.fail = variant, 0.2, 5.0, seed, fail


def runner(cfg):
    if cfg.fail:
        raise RuntimeError("boom")
    return {"validation": 0.5 + 0.1 * cfg.seed, "test_b": 0.4}


class TestGrid:
    def test_four_variants(self):
        rows = run_experiment_grid([Cfg(v) for v in ("PhaseSwap", "Supervised", "Random", "PSFrozen")], runner)
        table = format_table(rows)
        lines = table.splitlines()
        assert len(lines) == 2 + 4
        assert "Test B" in lines[0] and "PSFrozen" in table

    def test_failed_run_recorded(self):
        rows = run_experiment_grid([Cfg("PhaseSwap", fail=True), Cfg("Random")], runner)
        failed = [r for r in rows if r["status"] == "failed"]
        assert len(failed) == 1 and "boom" in failed[0]["error"]
        assert "FAILED" in format_table(rows)

    def test_empty(self):
        assert run_experiment_grid([], runner) == []
        assert format_table([]) == ""

    def test_mean_and_range(self):
        rows = run_experiment_grid([Cfg("PhaseSwap", seed=s) for s in (0, 1, 2)], runner)
        agg = {r["split"]: r for r in aggregate_rows(rows)}
        assert agg["validation"]["mean"] == pytest.approx(0.6)
        assert agg["validation"]["min"] == pytest.approx(0.5)
        assert agg["validation"]["max"] == pytest.approx(0.7)
        assert "60.0% ±10.0" in format_table(rows)

    def test_write_report(self, tmp_path):
        rows = run_experiment_grid([Cfg("Random")], runner)
        write_report(tmp_path / "report", rows)
        assert json.loads((tmp_path / "report.json").read_text()) == rows
        assert "Random" in (tmp_path / "report.txt").read_text()
