import json
import warnings

import numpy as np
import pytest

from oracles import brute_force_map, tally_confusion
from scenerec.evaluation import (DEFAULT_GAINS_DB, THRESHOLDS, average_precisions, confusion_and_accuracy, evaluate,
                                 evaluate_clips, gain_sweep_eval, mean_average_precision, pr_curves,
                                 precision_recall_at_threshold)
from scenerec.model import init_model
from scenerec.synthetic import band_noise_dataset

HAND_SCORES = np.array([.9, .8, .4, .3, .75, .2])
HAND_TRUTH = np.array([1, 1, 0, 0, 0, 1])


def hand_case():
    return np.stack([1 - HAND_SCORES, HAND_SCORES], axis=1), HAND_TRUTH


class TestThresholded:
    def test_hand_case(self):
        p, r = precision_recall_at_threshold(*hand_case(), label=1, threshold=0.5)
        assert p == pytest.approx(0.6667, abs=1e-4) and r == pytest.approx(0.6667, abs=1e-4)

    def test_all_positive(self):
        scores = np.ones((5, 2))
        for t in THRESHOLDS:
            assert precision_recall_at_threshold(scores, np.zeros(5, int), 0, t) == (1.0, 1.0)

    def test_threshold_zero_full_recall(self, rng):
        scores = rng.uniform(0, 1, (20, 3))
        truth = rng.integers(0, 3, 20)
        for label in set(truth.tolist()):
            assert precision_recall_at_threshold(scores, truth, label, 0.0)[1] == 1.0

    def test_zero_division(self):
        scores = np.zeros((4, 2))
        assert precision_recall_at_threshold(scores, np.zeros(4, int), 1, 0.5) == (1.0, 1.0)
        assert precision_recall_at_threshold(scores, np.zeros(4, int), 1, 0.5, zero_division=0.0) == (0.0, 0.0)

    def test_curves_match_single_calls(self, rng):
        scores = rng.uniform(0, 1, (30, 4))
        truth = rng.integers(0, 4, 30)
        prec, rec = pr_curves(scores, truth)
        assert prec.shape == rec.shape == (4, 11)
        for label in range(4):
            for j, t in enumerate(THRESHOLDS):
                assert (prec[label, j], rec[label, j]) == precision_recall_at_threshold(scores, truth, label, t)

    def test_errors(self):
        with pytest.raises(ValueError):
            precision_recall_at_threshold(np.zeros((0, 2)), np.zeros(0, int), 0, 0.5)
        with pytest.raises(ValueError):
            precision_recall_at_threshold(np.zeros((3, 2)), np.zeros(2, int), 0, 0.5)
        with pytest.raises(ValueError):
            precision_recall_at_threshold(np.zeros((3, 2)), np.array([0, 1, 2]), 0, 0.5)


class TestMAP:
    def test_hand_case_ap(self):
        scores, truth = hand_case()
        hand = [0.5, 0.5, 0.5, 0.4, 0.5, 2 / 3, 2 / 3, 2 / 3, 1.0, 1.0, 1.0]
        assert average_precisions(scores, truth)[1] == pytest.approx(sum(hand) / 11, abs=1e-12)

    def test_perfect(self):
        truth = np.arange(14).repeat(3)
        assert mean_average_precision(np.eye(14)[truth], truth) == 1.0
        assert confusion_and_accuracy(np.eye(14)[truth], truth)[1] == 1.0

    def test_zero_score_is_not_a_prediction(self):
        scores = np.array([[0.0], [0.0], [0.3]])
        assert precision_recall_at_threshold(scores, np.zeros(3, int), 0, 0.0) == (1.0, 1 / 3)

    def test_uniform_half_closed_form(self):
        truth = np.array([0] * 3 + [1] * 7)
        scores = np.full((10, 2), 0.5)
        prevalence = 3 / 10
        closed = (6 * prevalence + 5 * 1.0) / 11
        with pytest.warns(UserWarning):
            ap = average_precisions(scores, np.zeros(10, int))
        assert ap[0] == pytest.approx(1.0) and np.isnan(ap[1])
        aps = average_precisions(scores, truth)
        assert aps[0] == pytest.approx(closed, abs=1e-12)
        assert mean_average_precision(scores, truth) == pytest.approx(brute_force_map(scores, truth), abs=1e-12)

    def test_fuzz_against_brute_force(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            n, c = int(rng.integers(1, 30)), int(rng.integers(1, 6))
            scores = np.round(rng.uniform(0, 1, (n, c)), int(rng.integers(1, 4)))
            truth = rng.integers(0, c, n)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                got = mean_average_precision(scores, truth)
            assert abs(got - brute_force_map(scores, truth)) <= 1e-9
            assert 0.0 <= got <= 1.0

    def test_missing_label_warns_and_is_skipped(self):
        scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]])
        with pytest.warns(UserWarning, match="label 2"):
            ap = average_precisions(scores, np.array([0, 1]))
        assert np.isnan(ap[2])
        with pytest.warns(UserWarning):
            assert mean_average_precision(scores, np.array([0, 1])) == pytest.approx(np.nanmean(ap))

    def test_permutation_invariance(self, rng):
        scores = rng.uniform(0, 1, (50, 5))
        truth = rng.integers(0, 5, 50)
        perm = rng.permutation(50)
        assert mean_average_precision(scores[perm], truth[perm]) == mean_average_precision(scores, truth)
        assert confusion_and_accuracy(scores[perm], truth[perm])[1] == confusion_and_accuracy(scores, truth)[1]


class TestConfusion:
    def test_identity(self):
        truth = np.arange(14).repeat(2)
        m, acc = confusion_and_accuracy(np.eye(14)[truth], truth)
        np.testing.assert_array_equal(m, 2 * np.eye(14, dtype=int))
        assert acc == 1.0

    def test_all_label_zero(self):
        truth = np.arange(14).repeat(5)
        scores = np.zeros((70, 14))
        scores[:, 0] = 1
        assert confusion_and_accuracy(scores, truth)[1] == pytest.approx(1 / 14)

    def test_ties_go_to_lowest_index(self):
        m, _ = confusion_and_accuracy(np.full((3, 4), 0.5), np.array([1, 2, 3]))
        assert np.all(m[:, 0] == [0, 1, 1, 1])

    def test_tally_oracle(self, rng):
        scores = rng.uniform(0, 1, (1000, 14))
        truth = rng.integers(0, 14, 1000)
        m, acc = confusion_and_accuracy(scores, truth)
        np.testing.assert_array_equal(m, tally_confusion(scores, truth, 14))
        assert acc == np.trace(m) / 1000 and m.sum() == 1000
        np.testing.assert_array_equal(m.sum(axis=1), np.bincount(truth, minlength=14))

    def test_monotone_transform(self, rng):
        scores = rng.uniform(0, 1, (200, 6))
        truth = rng.integers(0, 6, 200)
        a, _ = confusion_and_accuracy(scores, truth)
        b, _ = confusion_and_accuracy(np.exp(3 * scores) - 7, truth)
        np.testing.assert_array_equal(a, b)


class TestReport:
    def test_evaluate_and_write(self, tmp_path, rng):
        labels = [f"l{i}" for i in range(3)]
        scores = rng.uniform(0, 1, (40, 3))
        truth = rng.integers(0, 3, 40)
        report = evaluate(scores, truth, labels)
        assert report.window_count == 40 and 0 <= report.mean_average_precision <= 1
        report.write(tmp_path)
        data = json.loads((tmp_path / "report.json").read_text())
        assert data["mAP"] == report.mean_average_precision and len(data["thresholds"]) == 11
        rows = (tmp_path / "confusion.csv").read_text().splitlines()
        assert rows[0] == "true\\predicted,l0,l1,l2" and len(rows) == 4
        assert len((tmp_path / "pr_curves.csv").read_text().splitlines()) == 1 + 3 * 11
        assert (tmp_path / "report.svg").read_text().lstrip().startswith("<?xml")

    def test_no_evaluable_labels(self):
        with pytest.raises(ValueError):
            evaluate(np.zeros((0, 2)), np.zeros(0, int), ["a", "b"])


@pytest.fixture(scope="module")
def setup():
    model = init_model(3, seed=1, scheme="fan_in")
    return band_noise_dataset(3, 2, duration_s=0.96, seed=5), model


class TestGainSweep:
    def test_default_grid(self, setup):
        clips, model = setup
        assert DEFAULT_GAINS_DB == (-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
        rows = gain_sweep_eval(clips, model)
        assert len(rows) == 9 and [r.gain_db for r in rows] == list(DEFAULT_GAINS_DB)
        plain = evaluate_clips(clips, model)
        zero = rows[4]
        assert zero.mean_average_precision == plain.mean_average_precision
        assert zero.accuracy == plain.accuracy

    def test_window_count(self, setup):
        clips, model = setup
        assert evaluate_clips(clips, model).confusion.sum() == len(clips)
