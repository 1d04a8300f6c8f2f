import itertools
from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from scipy.optimize import linear_sum_assignment

from trajmbm import (
    DualState,
    GlobalHypothesis,
    MultiFrameProblem,
    auction_solve,
    build_subproblem,
    recover_primal,
    solve,
    solve_subproblem,
    subgradient_step,
)
from trajmbm.assignment import _branch_and_bound, relative_gap, subgradient


def brute_force_total(costs):
    n_rows, n_cols = costs.shape
    return min(
        sum(costs[i, cols[i]] for i in range(n_rows)) for cols in itertools.permutations(range(n_cols), n_rows)
    )


def late_track_problem():
    """
    Track 0 detected (1, 0) and is either still detected or missed; track 1 appears at
    scan 2 and either is clutter-free or takes (2, 0).
    """
    return MultiFrameProblem(
        [
            (0, [(0, 1.0, frozenset({(1, 0)})), (1, 3.0, frozenset())]),
            (1, [(2, 0.0, frozenset()), (3, 1.0, frozenset({(2, 0)}))]),
        ],
        scans=[1, 2],
    )


def random_problem(rng, n_tracks=3, scans=(1, 2, 3), measurements_per_scan=2, extra_sths=3):
    # at most one measurement per track and scan, so measurements_per_scan <= n_tracks
    planted = [set() for _ in range(n_tracks)]
    for k in scans:
        owners = rng.permutation(n_tracks)[:measurements_per_scan]
        for j, owner in enumerate(owners):
            planted[owner].add((k, j))

    tracks, sth_id = [], 0
    for track_id in range(n_tracks):
        sets = [frozenset(planted[track_id])]
        for _ in range(extra_sths):
            chosen = [(k, int(j)) for k in scans for j in [rng.integers(-1, measurements_per_scan)] if j >= 0]
            sets.append(frozenset(chosen))
        options = []
        for meas_set in sets:
            options.append((sth_id, float(rng.normal(scale=3.0)), meas_set))
            sth_id += 1
        tracks.append((track_id, options))
    return MultiFrameProblem(tracks, scans)


def exhaustive_optimum(p):
    best = np.inf
    for selection in itertools.product(*[p.track_sths(i) for i in range(p.n_tracks)]):
        selection = np.array(selection)
        if p.is_feasible(selection):
            best = min(best, p.selection_cost(selection))
    return best


class TestAuction(SimpleTestCase):
    def test_two_by_two(self):
        costs = np.array([[1.0, 2.0], [2.0, 1.0]])
        assignment = auction_solve(costs)
        np.testing.assert_array_equal(assignment, [0, 1])
        self.assertAlmostEqual(costs[np.arange(2), assignment].sum(), 2.0)

    def test_forced_identity(self):
        costs = np.array([[5.0, np.inf, np.inf], [np.inf, 1.0, np.inf], [np.inf, np.inf, 7.0]])
        np.testing.assert_array_equal(auction_solve(costs), [0, 1, 2])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for n in range(1, 7):
            for _ in range(5):
                costs = rng.uniform(-10, 10, size=(n, n))
                assignment = auction_solve(costs)
                self.assertEqual(len(set(assignment)), n)
                self.assertAlmostEqual(
                    costs[np.arange(n), assignment].sum(), brute_force_total(costs), places=4
                )

    def test_rectangular_with_forbidden_pairs(self):
        rng = np.random.default_rng(1)
        for n_rows, n_cols in [(3, 5), (7, 8), (8, 8)]:
            costs = rng.uniform(0, 10, size=(n_rows, n_cols))
            costs[rng.uniform(size=costs.shape) < 0.3] = np.inf
            costs[np.arange(n_rows), np.arange(n_rows)] = rng.uniform(0, 10, size=n_rows)
            assignment = auction_solve(costs)
            oracle_rows, oracle_cols = linear_sum_assignment(np.where(np.isfinite(costs), costs, 1e9))
            self.assertTrue(np.isfinite(costs[np.arange(n_rows), assignment]).all())
            self.assertAlmostEqual(
                costs[np.arange(n_rows), assignment].sum(), costs[oracle_rows, oracle_cols].sum(), places=4
            )

    def test_negative_costs(self):
        costs = np.array([[-3.0, -1.0], [-2.0, -5.0]])
        np.testing.assert_array_equal(auction_solve(costs), [0, 1])

    def test_empty(self):
        self.assertEqual(len(auction_solve(np.zeros((0, 3)))), 0)

    def test_infeasible(self):
        with self.assertRaises(ValueError):
            auction_solve(np.array([[np.inf, np.inf], [1.0, 2.0]]))
        with self.assertRaises(ValueError):
            auction_solve(np.array([[1.0, np.inf], [2.0, np.inf]]))

    def test_invalid_shapes(self):
        with self.assertRaises(ValueError):
            auction_solve(np.zeros((3, 2)))
        with self.assertRaises(ValueError):
            auction_solve(np.array([[np.nan, 1.0]]))


class TestMultiFrameProblem(SimpleTestCase):
    def test_layout(self):
        p = late_track_problem()
        self.assertEqual(p.scans, (1, 2))
        self.assertEqual(p.n_tracks, 2)
        self.assertEqual(p.n_sths, 4)
        self.assertEqual(p.n_measurements, 2)
        self.assertEqual(list(p.track_sths(1)), [2, 3])

    def test_feasibility(self):
        p = late_track_problem()
        self.assertTrue(p.is_feasible(np.array([0, 3])))
        self.assertFalse(p.is_feasible(np.array([0, 2])))
        self.assertFalse(p.is_feasible(np.array([2, 3])))

    def test_hypothesis_round_trip(self):
        p = late_track_problem()
        hypothesis = p.to_hypothesis(np.array([0, 3]))
        self.assertEqual(hypothesis.choice, {0: 0, 1: 3})
        self.assertAlmostEqual(hypothesis.log_weight, -2.0)
        np.testing.assert_array_equal(p.selection_from(hypothesis), [0, 3])
        self.assertIsNone(p.selection_from(GlobalHypothesis(choice={0: 0}, log_weight=0.0)))

    def test_measurements_outside_window_ignored(self):
        p = MultiFrameProblem([(0, [(0, 1.0, frozenset({(1, 0), (2, 0)}))])], scans=[2])
        self.assertEqual(p.n_measurements, 1)
        self.assertTrue(p.is_feasible(np.array([0])))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            MultiFrameProblem([(0, [])], scans=[1])
        with self.assertRaises(ValueError):
            MultiFrameProblem([(0, [(0, np.inf, frozenset())])], scans=[1])
        with self.assertRaises(ValueError):
            MultiFrameProblem([(0, [(0, 1.0, frozenset({(1, 0), (1, 1)}))])], scans=[1])
        with self.assertRaises(ValueError):
            MultiFrameProblem([(0, [(0, 1.0, frozenset())]), (0, [(1, 1.0, frozenset())])], scans=[1])
        with self.assertRaises(ValueError):
            MultiFrameProblem([], scans=[])


class TestSubproblems(SimpleTestCase):
    def test_build_first_scan(self):
        p = late_track_problem()
        matrix = build_subproblem(p, 1, DualState.initial(p))
        # penalized costs are cost / 2: 0.5, 1.5, 0.0, 0.5
        np.testing.assert_allclose(matrix.offsets, [1.5, 0.0])
        self.assertAlmostEqual(matrix.costs[0, 0], -1.0)
        self.assertTrue(np.isinf(matrix.costs[0, 1]))
        np.testing.assert_array_equal(matrix.miss_costs, [0.0, 0.0])
        self.assertEqual(matrix.meas_choice[0, 0], 0)
        np.testing.assert_array_equal(matrix.miss_choice, [1, 2])

    def test_build_second_scan(self):
        p = late_track_problem()
        matrix = build_subproblem(p, 2, DualState.initial(p))
        self.assertTrue(np.isinf(matrix.costs[0, 0]))
        self.assertAlmostEqual(matrix.costs[0, 1], 0.5)
        np.testing.assert_array_equal(matrix.miss_choice, [0, 2])

    def test_track_that_must_detect(self):
        p = MultiFrameProblem([(0, [(0, 2.0, frozenset({(1, 0)}))])], scans=[1])
        matrix = build_subproblem(p, 1, DualState.initial(p))
        self.assertTrue(np.isinf(matrix.miss_costs[0]))
        self.assertAlmostEqual(matrix.costs[0, 0], 0.0)
        self.assertAlmostEqual(matrix.offsets[0], 2.0)

    def test_ties_go_to_lowest_id(self):
        p = MultiFrameProblem([(0, [(7, 1.0, frozenset()), (4, 1.0, frozenset())])], scans=[1])
        matrix = build_subproblem(p, 1, DualState.initial(p))
        self.assertEqual(p.sth_ids[matrix.miss_choice[0]], 4)

    def test_solve_per_scan(self):
        p = late_track_problem()
        d = DualState.initial(p)
        first = solve_subproblem(p, 1, d)
        second = solve_subproblem(p, 2, d)
        np.testing.assert_array_equal(first.choice, [0, 2])
        self.assertAlmostEqual(first.value, 0.5)
        np.testing.assert_array_equal(second.choice, [0, 3])
        self.assertAlmostEqual(second.value, 1.0)

    def test_scan_outside_window(self):
        p = late_track_problem()
        with self.assertRaises(ValueError):
            build_subproblem(p, 5, DualState.initial(p))

    def test_infeasible_subproblem(self):
        p = MultiFrameProblem(
            [(0, [(0, 1.0, frozenset({(1, 0)}))]), (1, [(1, 1.0, frozenset({(1, 0)}))])], scans=[1]
        )
        with self.assertRaises(ValueError):
            solve_subproblem(p, 1, DualState.initial(p))


class TestSubgradient(SimpleTestCase):
    def first_round(self):
        p = late_track_problem()
        d = DualState.initial(p)
        d.choices = np.array([[0, 2], [0, 3]])
        d.dual_cost = 1.5
        d.best_cost = 2.0
        d.iteration = 1
        return p, d

    def test_subgradient_values(self):
        _, d = self.first_round()
        g = subgradient(d.selections)
        np.testing.assert_allclose(g, [[0.0, 0.0, 0.5, -0.5], [0.0, 0.0, -0.5, 0.5]])

    def test_step(self):
        _, d = self.first_round()
        stepped = subgradient_step(d)
        # alpha = (2.0 - 1.5) / 1.0
        np.testing.assert_allclose(stepped.multipliers, [[0.0, 0.0, 0.25, -0.25], [0.0, 0.0, -0.25, 0.25]])
        self.assertAlmostEqual(stepped.subgradient_norm, 1.0)

    def test_multipliers_sum_to_zero(self):
        rng = np.random.default_rng(4)
        p = random_problem(rng)
        d = DualState.initial(p)
        for _ in range(5):
            d.choices = np.array([solve_subproblem(p, k, d).choice for k in p.scans])
            d.dual_cost = 0.0
            d.best_cost = 10.0
            d = subgradient_step(d)
            np.testing.assert_allclose(d.multipliers.sum(axis=0), 0.0, atol=1e-12)

    def test_relative_gap(self):
        self.assertAlmostEqual(relative_gap(10.0, 9.0), 0.1)
        self.assertAlmostEqual(relative_gap(-10.0, -11.0), 0.1)
        self.assertEqual(relative_gap(5.0, 5.0), 0.0)
        self.assertEqual(relative_gap(np.inf, 1.0), np.inf)

    def test_recover_primal(self):
        p, d = self.first_round()
        hypothesis = recover_primal(p, d)
        self.assertEqual(hypothesis.choice, {0: 0, 1: 3})

    def test_recover_needs_a_round(self):
        p = late_track_problem()
        with self.assertRaises(ValueError):
            recover_primal(p, DualState.initial(p))


class TestSolve(SimpleTestCase):
    def test_late_track(self):
        trace = []
        hypothesis, gap = solve(late_track_problem(), trace=trace)
        self.assertEqual(hypothesis.choice, {0: 0, 1: 3})
        self.assertAlmostEqual(hypothesis.log_weight, -2.0)
        self.assertLessEqual(gap, 0.01)
        self.assertAlmostEqual(trace[0].dual, 1.5)
        self.assertAlmostEqual(trace[0].gap, 0.25)
        self.assertEqual(len(trace), 2)

    def test_single_scan_is_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            p = random_problem(rng, scans=(1,), measurements_per_scan=3)
            trace = []
            hypothesis, gap = solve(p, trace=trace)
            self.assertEqual(gap, 0.0)
            self.assertEqual(len(trace), 1)
            self.assertAlmostEqual(-hypothesis.log_weight, exhaustive_optimum(p), places=4)

    def test_random_windows_against_enumeration(self):
        rng = np.random.default_rng(6)
        eps_gap = 0.01
        for _ in range(10):
            p = random_problem(rng)
            optimum = exhaustive_optimum(p)
            trace = []
            hypothesis, gap = solve(p, eps_gap=eps_gap, trace=trace)
            cost = -hypothesis.log_weight

            self.assertTrue(p.is_feasible(p.selection_from(hypothesis)))
            self.assertGreaterEqual(cost, optimum - 1e-9)
            for row in trace:
                self.assertLessEqual(row.dual, optimum + 1e-4)
                self.assertLessEqual(row.dual, row.best_primal + 1e-4)
            if gap <= eps_gap:
                self.assertLessEqual(cost, optimum + eps_gap * abs(cost) + 1e-4)

    def test_recoveries_share_one_node_budget(self):
        rng = np.random.default_rng(8)
        p = random_problem(rng, n_tracks=4, measurements_per_scan=3)
        trace = []
        with mock.patch("trajmbm.assignment._branch_and_bound", wraps=_branch_and_bound) as search:
            hypothesis, _ = solve(p, max_branch_nodes=500, trace=trace)
        self.assertTrue(p.is_feasible(p.selection_from(hypothesis)))
        self.assertTrue(search.called)
        # one search per recovery, plus the unfixed retry of the first
        self.assertLessEqual(search.call_count, len(trace) + 1)
        budgets = {id(call.args[2]) for call in search.call_args_list}
        self.assertEqual(len(budgets), 1)
        self.assertGreaterEqual(search.call_args_list[-1].args[2].remaining, 0)

    def test_warm_start_is_kept(self):
        p = late_track_problem()
        trace = []
        solve(p, initial=GlobalHypothesis(choice={0: 0, 1: 3}, log_weight=0.0), trace=trace)
        self.assertAlmostEqual(trace[0].best_primal, 2.0)

    def test_no_tracks(self):
        hypothesis, gap = solve(MultiFrameProblem([], scans=[1]))
        self.assertEqual(hypothesis.choice, {})
        self.assertEqual(gap, 0.0)

    def test_invalid_parameters(self):
        with self.assertRaises(ValueError):
            solve(late_track_problem(), eps_gap=0.0)
        with self.assertRaises(ValueError):
            solve(late_track_problem(), max_iter=0)
