import numpy as np
import pytest

from conftest import make_blobs
from crossview_eval.cas import (
    AdamState,
    ConfusionMatrix,
    LinearSoftmaxHead,
    adam_step,
    confusion_matrix,
    evaluate_cas,
    load_head,
    mean_cross_entropy,
    read_pred_labels,
    report_from_confusion,
    save_head,
    train_head,
    train_head_with_history,
)
from crossview_eval.dataset import SeverityLabel
from crossview_eval.errors import LabelFileError, ShapeMismatchError
from crossview_eval.fidstats import FeatureSet
from oracles import adam_scalar_oracle, perceptron_accuracy


class TestAdamStep:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.init(params, lr=0.1)
        new_params, new_state = adam_step(params, {"w": np.zeros(2)}, state)
        assert np.array_equal(new_params["w"], params["w"])
        assert new_state.step == 1

    def test_first_step_hand_value(self):
        params = {"t": np.array([0.0])}
        state = AdamState.init(params, lr=1e-4)
        new_params, _ = adam_step(params, {"t": np.array([1.0])}, state)
        assert abs(new_params["t"][0] - (-1e-4)) <= 1e-9

    def test_quadratic_convergence(self):
        params = {"t": np.array([1.0])}
        state = AdamState.init(params, lr=0.1)
        for _ in range(500):
            grads = {"t": 2.0 * params["t"]}
            params, state = adam_step(params, grads, state)
        assert abs(params["t"][0]) < 1e-3

    def test_matches_scalar_oracle(self):
        params = {"t": np.array([1.0])}
        state = AdamState.init(params, lr=0.05)
        for _ in range(100):
            params, state = adam_step(params, {"t": 2.0 * params["t"]}, state)
        assert abs(params["t"][0] - adam_scalar_oracle(1.0, 0.05, 100)) < 1e-12

    def test_errors(self):
        params = {"w": np.zeros(3)}
        state = AdamState.init(params, lr=0.1)
        with pytest.raises(ShapeMismatchError):
            adam_step(params, {"w": np.zeros(4)}, state)
        with pytest.raises(ValueError):
            adam_step(params, {"w": np.array([np.nan, 0.0, 0.0])}, state)
        with pytest.raises(ShapeMismatchError):
            adam_step(params, {"x": np.zeros(3)}, state)


class TestTrainHead:
    def test_separable_blobs_high_accuracy(self):
        rows, labels = make_blobs()
        assert perceptron_accuracy(rows, labels) == 1.0  # separability oracle
        head = train_head(FeatureSet(rows=rows), labels, epochs=10, batch=32, lr=1e-4, seed=0)
        accuracy = float(np.mean(head.predict(rows) == labels))
        assert accuracy >= 0.95

    def test_seeded_training_bitwise_reproducible(self):
        rows, labels = make_blobs(seed=5, n_per_class=40)
        fs = FeatureSet(rows=rows)
        h1 = train_head(fs, labels, seed=123)
        h2 = train_head(fs, labels, seed=123)
        assert np.array_equal(h1.weights, h2.weights)
        assert np.array_equal(h1.bias, h2.bias)
        h3 = train_head(fs, labels, seed=124)
        assert not np.array_equal(h1.weights, h3.weights)

    def test_degenerate_repeated_feature(self):
        rows = np.tile([0.5, -1.0, 2.0, 0.1], (10, 1))
        labels = np.array([0, 0, 0, 0, 0, 0, 1, 1, 2, 2])
        head, history = train_head_with_history(FeatureSet(rows=rows), labels, epochs=10, seed=1)
        assert int(head.predict(rows[:1])[0]) == 0  # majority class
        freq = np.array([0.6, 0.2, 0.2])
        entropy_bound = float(-(freq * np.log(freq)).sum())
        assert history[-1] >= entropy_bound - 1e-9

    def test_loss_nonincreasing_mostly(self):
        rows, labels = make_blobs(seed=9)
        _, history = train_head_with_history(FeatureSet(rows=rows), labels, epochs=10, seed=2)
        transitions = np.diff(history)
        frac = float(np.mean(transitions <= 1e-12))
        assert frac >= 0.9

    def test_missing_class_rejected(self):
        rows = np.random.default_rng(0).standard_normal((10, 4))
        labels = [0] * 5 + [1] * 5
        with pytest.raises(ValueError, match="severe"):
            train_head(FeatureSet(rows=rows), labels)

    def test_softmax_rows_sum_to_one(self, rng):
        head = LinearSoftmaxHead(weights=rng.standard_normal((3, 6)), bias=rng.standard_normal(3))
        probs = head.predict_proba(rng.standard_normal((40, 6)) * 50)
        assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9


class TestEvaluate:
    def test_perfect_predictions(self):
        rows, labels = make_blobs(n_per_class=10, spread=0.05)
        head = train_head(FeatureSet(rows=rows), labels, epochs=50, lr=1e-2, seed=0)
        report = evaluate_cas(head, FeatureSet(rows=rows), labels)
        assert report.accuracy == 1.0
        assert report.macro_f1 == 1.0
        assert np.array_equal(np.diag(report.matrix.counts), [10, 10, 10])
        assert report.matrix.total == 30

    def test_all_mild_collapse_pattern(self):
        y_true = [0] * 10 + [1] * 10 + [2] * 10
        y_pred = [0] * 30
        report = report_from_confusion(confusion_matrix(y_true, y_pred))
        assert abs(report.accuracy - 1.0 / 3.0) < 1e-12
        assert report.per_class_recall == (1.0, 0.0, 0.0)
        assert abs(report.per_class_f1[0] - 0.5) < 1e-12
        assert abs(report.macro_f1 - 0.5 / 3.0) < 1e-12

    def test_hand_confusion_matrix(self):
        counts = np.array([[8, 1, 1], [2, 6, 2], [0, 3, 7]])
        report = report_from_confusion(ConfusionMatrix(counts=counts))
        assert abs(report.accuracy - 0.7) < 1e-12
        assert np.allclose(report.per_class_recall, (0.8, 0.6, 0.7))

    def test_row_sums_and_trace_identity(self, rng):
        y_true = rng.integers(0, 3, 60)
        y_pred = rng.integers(0, 3, 60)
        matrix = confusion_matrix(y_true, y_pred)
        for c in range(3):
            assert matrix.counts[c].sum() == int(np.sum(y_true == c))
        report = report_from_confusion(matrix)
        assert report.accuracy == np.trace(matrix.counts) / matrix.total

    def test_macro_f1_permutation_invariant(self, rng):
        y_true = rng.integers(0, 3, 90)
        y_pred = rng.integers(0, 3, 90)
        base = report_from_confusion(confusion_matrix(y_true, y_pred)).macro_f1
        perm = np.array([2, 0, 1])
        permuted = report_from_confusion(confusion_matrix(perm[y_true], perm[y_pred])).macro_f1
        assert abs(base - permuted) < 1e-12

    def test_dimension_mismatch(self, rng):
        head = LinearSoftmaxHead(weights=np.zeros((3, 4)), bias=np.zeros(3))
        with pytest.raises(ShapeMismatchError):
            evaluate_cas(head, FeatureSet(rows=rng.standard_normal((5, 6))), [0] * 5)


class TestHeadSerialization:
    def test_round_trip_bitwise(self, tmp_path, rng):
        head = LinearSoftmaxHead(weights=rng.standard_normal((3, 7)), bias=rng.standard_normal(3))
        path = tmp_path / "head.cvh"
        save_head(head, path)
        loaded = load_head(path)
        assert np.array_equal(loaded.weights, head.weights)
        assert np.array_equal(loaded.bias, head.bias)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "head.cvh"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(LabelFileError):
            load_head(path)

    def test_truncated(self, tmp_path, rng):
        head = LinearSoftmaxHead(weights=rng.standard_normal((3, 4)), bias=rng.standard_normal(3))
        path = tmp_path / "head.cvh"
        save_head(head, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(LabelFileError):
            load_head(path)


class TestPredLabelsCsv:
    def test_parses_by_method(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text(
            "pair_id,method,predicted_label\n"
            "p1,m1,mild\np2,m1,severe\np1,m2,moderate\n"
        )
        table = read_pred_labels(path)
        assert table["m1"] == {"p1": SeverityLabel.MILD, "p2": SeverityLabel.SEVERE}
        assert table["m2"] == {"p1": SeverityLabel.MODERATE}

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("id,label\np1,mild\n")
        with pytest.raises(LabelFileError):
            read_pred_labels(path)

    def test_rejects_bad_label_with_line(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("pair_id,method,predicted_label\np1,m1,awful\n")
        with pytest.raises(LabelFileError, match=":2"):
            read_pred_labels(path)

    def test_rejects_duplicates(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("pair_id,method,predicted_label\np1,m1,mild\np1,m1,severe\n")
        with pytest.raises(LabelFileError, match="duplicate"):
            read_pred_labels(path)
