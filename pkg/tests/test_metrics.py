import itertools

import numpy as np
from django.test import SimpleTestCase

from trajmbm import GospaConfig, Trajectory, gospa, matched_position_rmse


def brute_force_gospa(X, Y, c=20.0, p=1.0):
    n, m = len(X), len(Y)
    best = np.inf
    for k in range(min(n, m) + 1):
        for truth_rows in itertools.combinations(range(n), k):
            for est_rows in itertools.permutations(range(m), k):
                cost = sum(min(np.linalg.norm(X[i] - Y[j]), c) ** p for i, j in zip(truth_rows, est_rows))
                best = min(best, cost + c ** p / 2 * (n + m - 2 * k))
    return best ** (1.0 / p)


def straight_line(birth, last, offset=(0.0, 0.0)):
    times = np.arange(birth, last + 1, dtype=float)
    states = np.stack([times + offset[0], np.ones_like(times), 2 * times + offset[1], np.full_like(times, 2.0)], axis=1)
    return Trajectory(birth=birth, last=last, states=states)


class TestGospa(SimpleTestCase):
    def test_both_empty(self):
        result = gospa(np.zeros((0, 2)), np.zeros((0, 2)))
        self.assertEqual(result.total, 0.0)

    def test_all_missed(self):
        result = gospa(np.array([[0.0, 0.0], [50.0, 0.0], [100.0, 0.0]]), np.zeros((0, 2)))
        self.assertAlmostEqual(result.total, 30.0)
        self.assertAlmostEqual(result.missed, 30.0)
        self.assertEqual(result.false_, 0.0)

    def test_localization_and_false(self):
        truth = np.array([[0.0, 0.0], [50.0, 0.0]])
        est = np.array([[3.0, 4.0], [50.0, 5.0], [200.0, 200.0]])
        result = gospa(truth, est)
        self.assertAlmostEqual(result.localization, 10.0, places=5)
        self.assertAlmostEqual(result.false_, 10.0)
        self.assertEqual(result.missed, 0.0)
        self.assertAlmostEqual(result.total, 20.0, places=5)

    def test_beyond_cutoff_is_missed_and_false(self):
        result = gospa(np.array([[0.0, 0.0]]), np.array([[25.0, 0.0]]))
        self.assertAlmostEqual(result.missed, 10.0)
        self.assertAlmostEqual(result.false_, 10.0)
        self.assertEqual(result.localization, 0.0)

    def test_identical_sets(self):
        X = np.random.default_rng(0).uniform(-100, 100, size=(5, 2))
        self.assertAlmostEqual(gospa(X, X).total, 0.0, places=5)

    def test_position_components(self):
        truth = np.array([[0.0, 5.0, 0.0, -5.0]])
        est = np.array([[3.0, 0.0, 4.0, 0.0]])
        self.assertAlmostEqual(gospa(truth, est, position_indices=(0, 2)).total, 5.0, places=5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            X = rng.uniform(0, 40, size=(rng.integers(0, 5), 2))
            Y = rng.uniform(0, 40, size=(rng.integers(0, 5), 2))
            for p in (1.0, 2.0):
                result = gospa(X, Y, GospaConfig(p=p))
                self.assertAlmostEqual(result.total, brute_force_gospa(X, Y, p=p), places=4)

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            X = rng.uniform(0, 40, size=(rng.integers(0, 6), 2))
            Y = rng.uniform(0, 40, size=(rng.integers(0, 6), 2))
            forward, backward = gospa(X, Y), gospa(Y, X)
            self.assertAlmostEqual(forward.total, backward.total, places=4)
            self.assertAlmostEqual(forward.missed, backward.false_)

    def test_decomposition_sums_to_total(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 60, size=(6, 2))
        Y = rng.uniform(0, 60, size=(4, 2))
        result = gospa(X, Y)
        self.assertAlmostEqual(result.total, result.localization + result.missed + result.false_)
        squared = gospa(X, Y, GospaConfig(p=2.0))
        self.assertAlmostEqual(squared.total ** 2, squared.localization + squared.missed + squared.false_)

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            gospa(np.zeros((1, 2)), np.zeros((1, 2)), GospaConfig(c=0.0))
        with self.assertRaises(ValueError):
            gospa(np.zeros((1, 2)), np.zeros((1, 2)), GospaConfig(p=0.5))
        with self.assertRaises(ValueError):
            gospa(np.zeros((1, 2)), np.zeros((1, 2)), GospaConfig(alpha=1.0))


class TestMatchedPositionRmse(SimpleTestCase):
    def test_exact(self):
        self.assertEqual(matched_position_rmse([straight_line(1, 5)], [straight_line(1, 5)]), 0.0)

    def test_constant_offset(self):
        rmse = matched_position_rmse([straight_line(1, 5)], [straight_line(2, 4, offset=(3.0, 4.0))])
        self.assertAlmostEqual(rmse, 5.0)

    def test_each_estimate_used_once(self):
        truth = [straight_line(1, 5), straight_line(1, 5, offset=(50.0, 0.0))]
        est = [straight_line(1, 5, offset=(1.0, 0.0))]
        self.assertAlmostEqual(matched_position_rmse(truth, est), 1.0)

    def test_nothing_to_match(self):
        self.assertIsNone(matched_position_rmse([straight_line(1, 3)], [straight_line(5, 8)]))
        self.assertIsNone(matched_position_rmse([], []))
