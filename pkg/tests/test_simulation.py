import numpy as np
from django.test import SimpleTestCase

from trajmbm import (
    FilterConfig,
    ScenarioConfig,
    TrajectoryPMBMFilter,
    generate_scan,
    generate_truth,
    run_monte_carlo,
    run_trial,
)
from trajmbm.simulation import alive_states, trial_rng


def light_clutter_scenario(**kwargs):
    values = dict(steps=15, births=(1,), deaths=(15,), pd=0.95, clutter_rate=1.0)
    values.update(kwargs)
    return ScenarioConfig(**values)


class TestScenario(SimpleTestCase):
    def test_default_lifetimes(self):
        truth = generate_truth(ScenarioConfig(), trial_rng(0, 0))
        self.assertEqual([len(trajectory.states) for trajectory in truth], [61, 61, 61, 61, 61, 51])
        self.assertEqual([trajectory.birth for trajectory in truth], [1, 11, 21, 31, 41, 51])
        self.assertEqual([trajectory.last for trajectory in truth], [61, 71, 81, 91, 101, 101])

    def test_targets_meet_at_midpoint(self):
        cfg = ScenarioConfig()
        for trajectory in generate_truth(cfg, trial_rng(1, 0)):
            midpoint = (trajectory.birth + trajectory.last) // 2
            np.testing.assert_allclose(trajectory.state_at(midpoint), np.zeros(4), atol=0.01)

    def test_truth_follows_motion_model(self):
        cfg = ScenarioConfig(process_noise=0.0)
        F = cfg.motion_model().F
        trajectory = generate_truth(cfg, trial_rng(2, 0))[0]
        np.testing.assert_allclose(trajectory.states[1:], trajectory.states[:-1] @ F.T, atol=1e-9)

    def test_alive_states(self):
        truth = generate_truth(ScenarioConfig(), trial_rng(0, 0))
        self.assertEqual(len(alive_states(truth, 1)), 1)
        self.assertEqual(len(alive_states(truth, 55)), 6)
        self.assertEqual(len(alive_states(truth, 101)), 2)

    def test_detections_without_clutter(self):
        cfg = ScenarioConfig(pd=1.0, clutter_rate=0.0)
        rng = trial_rng(0, 0)
        truth = generate_truth(cfg, rng)
        scan = generate_scan(truth, 55, cfg, rng)
        self.assertEqual(scan.detections, 6)
        self.assertEqual(scan.clutter, 0)
        self.assertEqual(scan.measurements.shape, (6, 2))

    def test_no_detections(self):
        cfg = ScenarioConfig(pd=0.0, clutter_rate=0.0)
        rng = trial_rng(0, 0)
        scan = generate_scan(generate_truth(cfg, rng), 55, cfg, rng)
        self.assertEqual(scan.measurements.shape, (0, 2))

    def test_clutter_rate_and_region(self):
        cfg = ScenarioConfig(pd=0.0, clutter_rate=10.0)
        rng = trial_rng(3, 0)
        truth = generate_truth(cfg, rng)
        counts, points = [], []
        for k in range(1, 201):
            scan = generate_scan(truth, (k % cfg.steps) + 1, cfg, rng)
            counts.append(scan.clutter)
            points.append(scan.measurements)
        self.assertAlmostEqual(np.mean(counts), 10.0, delta=1.0)
        points = np.vstack(points)
        self.assertTrue(np.all(np.abs(points) <= 100.0))

    def test_same_seed_same_draws(self):
        cfg = ScenarioConfig()
        first = generate_truth(cfg, trial_rng(7, 3))
        second = generate_truth(cfg, trial_rng(7, 3))
        other = generate_truth(cfg, trial_rng(7, 4))
        np.testing.assert_array_equal(first[0].states, second[0].states)
        self.assertFalse(np.array_equal(first[0].states, other[0].states))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            ScenarioConfig(births=(5,), deaths=(3,)).validate()
        with self.assertRaises(ValueError):
            ScenarioConfig(births=(1,), deaths=(2, 3)).validate()
        with self.assertRaises(ValueError):
            ScenarioConfig(steps=50).validate()
        with self.assertRaises(ValueError):
            ScenarioConfig(pd=1.5).validate()
        with self.assertRaises(ValueError):
            ScenarioConfig(region=(0.0, 0.0, 0.0, 1.0)).validate()
        with self.assertRaises(ValueError):
            ScenarioConfig(seed="7").validate()
        with self.assertRaises(ValueError):
            ScenarioConfig(seed=True).validate()


class TestTrials(SimpleTestCase):
    def test_trial_is_deterministic(self):
        scenario = light_clutter_scenario(steps=8, deaths=(8,))
        first = run_trial(scenario, FilterConfig(n_scan=2), trial=1, seed=11)
        second = run_trial(scenario, FilterConfig(n_scan=2), trial=1, seed=11)
        self.assertEqual(first.per_scan, second.per_scan)
        self.assertEqual(len(first.per_scan), 8)

    def test_light_clutter_is_tracked(self):
        scenario = light_clutter_scenario()
        result = run_trial(scenario, FilterConfig(n_scan=3), seed=5)
        self.assertEqual(result.infeasible_scans, 0)
        # reporting nothing would cost 10 per alive target and scan
        missed_everything = 10.0 * np.mean([len(alive_states(result.truth, k)) for k in range(1, 16)])
        mean_total = np.mean([gospa.total for gospa in result.per_scan])
        self.assertLess(mean_total, 0.5 * missed_everything)
        self.assertTrue(result.smoothed)
        self.assertIsNotNone(result.rmse_filtered)

    def test_limited_window_has_no_smoothed_trajectories(self):
        scenario = light_clutter_scenario(steps=6, deaths=(6,))
        result = run_trial(scenario, FilterConfig(n_scan=2, window=2), seed=5)
        self.assertEqual(result.smoothed, [])
        self.assertIsNone(result.rmse_smoothed)

    def test_convergence_rows_on_request(self):
        scenario = light_clutter_scenario(steps=5, deaths=(5,))
        self.assertEqual(run_trial(scenario, FilterConfig(n_scan=2), seed=1).convergence, [])
        rows = run_trial(scenario, FilterConfig(n_scan=2), seed=1, debug_dual=True).convergence
        self.assertTrue(rows)
        self.assertLessEqual({scan for scan, _ in rows}, {1, 2, 3, 4, 5})


class TestLongRuns(SimpleTestCase):
    def test_forest_stays_bounded_in_clutter(self):
        scenario = ScenarioConfig(steps=60, births=(1,), deaths=(60,), pd=0.9, clutter_rate=10.0)
        rng = trial_rng(2, 0)
        truth = generate_truth(scenario, rng)
        measurement = scenario.measurement_model(FilterConfig().gate_quantile)
        tracker = TrajectoryPMBMFilter(
            motion=scenario.motion_model(), measurement=measurement, config=FilterConfig(n_scan=2)
        )
        track_counts, sth_counts = [], []
        for k in range(1, scenario.steps + 1):
            result = tracker.step(generate_scan(truth, k, scenario, rng, measurement).measurements)
            self.assertTrue(result.feasible)
            forest = tracker.state.forest
            window_start = max(1, k - 2)
            lingering = [
                track
                for track in forest.tracks
                if len(track.sths) == 1
                and track.sths[0].bern.r < 1e-3
                and track.sths[0].consecutive_misses > 3
                and all(scan < window_start for scan, _ in track.sths[0].meas_set)
            ]
            self.assertEqual(lingering, [])
            track_counts.append(len(forest.tracks))
            sth_counts.append(forest.sth_count)
        # about ten clutter tracks per scan, each gone a few scans after its measurement
        self.assertLess(max(track_counts), 80)
        self.assertLess(max(sth_counts), 400)
        self.assertLess(np.mean(track_counts[30:]), 1.5 * np.mean(track_counts[10:30]) + 5)

    def test_smoothing_does_not_hurt(self):
        scenario = light_clutter_scenario(steps=30, deaths=(30,), clutter_rate=2.0)
        results = [run_trial(scenario, FilterConfig(n_scan=2), seed=seed) for seed in (0, 1, 2)]
        self.assertTrue(all(result.rmse_smoothed is not None for result in results))
        self.assertLessEqual(
            np.mean([result.rmse_smoothed for result in results]),
            np.mean([result.rmse_filtered for result in results]),
        )

    def test_deeper_pruning_does_not_hurt(self):
        scenario = light_clutter_scenario(steps=30, deaths=(30,), pd=0.7, clutter_rate=5.0)

        def mean_gospa(n_scan):
            return np.mean(
                [
                    gospa.total
                    for seed in (0, 1, 2)
                    for gospa in run_trial(scenario, FilterConfig(n_scan=n_scan), seed=seed).per_scan
                ]
            )

        self.assertLessEqual(mean_gospa(3), mean_gospa(1) + 1.0)


class TestMonteCarlo(SimpleTestCase):
    def test_single_trial_report(self):
        scenario = light_clutter_scenario(steps=6, deaths=(6,))
        report = run_monte_carlo(scenario, FilterConfig(n_scan=2), trials=1, seed=3, workers=1)
        self.assertEqual(len(report.trials), 1)
        self.assertEqual(report.per_scan, report.trials[0].per_scan)
        self.assertAlmostEqual(
            report.mean.total, np.mean([result.total for result in report.trials[0].per_scan])
        )

    def test_trials_are_independent_of_run_size(self):
        scenario = light_clutter_scenario(steps=5, deaths=(5,))
        two = run_monte_carlo(scenario, FilterConfig(n_scan=2), trials=2, seed=9, workers=1)
        alone = run_trial(scenario, FilterConfig(n_scan=2), trial=1, seed=9)
        self.assertEqual(two.trials[1].per_scan, alone.per_scan)

    def test_invalid_trials(self):
        with self.assertRaises(ValueError):
            run_monte_carlo(ScenarioConfig(), FilterConfig(), trials=0)
