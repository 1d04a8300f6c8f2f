import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from time import monotonic
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .assignment import ConvergenceRow
from .densities import Trajectory
from .gaussian_models import (
    DEFAULT_GATE_QUANTILE,
    MeasurementModel,
    MotionModel,
    constant_velocity_model,
    position_measurement_model,
)
from .metrics import POSITION_INDICES, GospaConfig, GospaResult, gospa, matched_position_rmse
from .pmbm import FilterConfig, TrajectoryPMBMFilter
from .utils import worker_count

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioConfig:
    steps: int = 101
    births: Tuple[int, ...] = (1, 11, 21, 31, 41, 51)
    # last time step each target is alive
    deaths: Tuple[int, ...] = (61, 71, 81, 91, 101, 101)
    midpoint_mean: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    midpoint_cov: Tuple[Tuple[float, ...], ...] = (
        (1e-6, 0.0, 0.0, 0.0),
        (0.0, 1e-6, 0.0, 0.0),
        (0.0, 0.0, 1e-6, 0.0),
        (0.0, 0.0, 0.0, 1e-6),
    )
    # x_min, x_max, y_min, y_max
    region: Tuple[float, float, float, float] = (-100.0, 100.0, -100.0, 100.0)
    pd: float = 0.9
    ps: float = 0.99
    clutter_rate: float = 10.0
    seed: int = 0
    process_noise: float = 0.002
    measurement_noise: float = 1.0
    period: float = 1.0

    @property
    def area(self) -> float:
        x_min, x_max, y_min, y_max = self.region
        return (x_max - x_min) * (y_max - y_min)

    def motion_model(self) -> MotionModel:
        return constant_velocity_model(T=self.period, process_noise=self.process_noise, ps=self.ps)

    def measurement_model(self, gate_quantile: float) -> MeasurementModel:
        return position_measurement_model(
            pd=self.pd,
            clutter_rate=self.clutter_rate,
            region_area=self.area,
            measurement_noise=self.measurement_noise,
            gate_quantile=gate_quantile,
        )

    def validate(self):
        if self.steps < 1:
            raise ValueError(f"scenario.steps must be >= 1, got {self.steps}")
        if len(self.births) != len(self.deaths):
            raise ValueError(
                f"scenario.births has {len(self.births)} entries but scenario.deaths has {len(self.deaths)}"
            )
        for birth, death in zip(self.births, self.deaths):
            if not 1 <= birth < death <= self.steps:
                raise ValueError(
                    f"scenario target alive from {birth} to {death} is not inside 1..{self.steps} "
                    "with birth before death"
                )
        mean, cov = np.array(self.midpoint_mean, dtype=float), np.array(self.midpoint_cov, dtype=float)
        if mean.shape != (4,) or cov.shape != (4, 4):
            raise ValueError("scenario.midpoint_mean must have 4 entries and scenario.midpoint_cov be 4 x 4")
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ValueError("scenario.midpoint_cov must be symmetric positive semidefinite")
        x_min, x_max, y_min, y_max = self.region
        if x_min >= x_max or y_min >= y_max:
            raise ValueError(f"scenario.region {self.region} is empty")
        for name in ("pd", "ps"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"scenario.{name} must be in [0, 1], got {value}")
        if self.clutter_rate < 0:
            raise ValueError(f"scenario.clutter_rate must be >= 0, got {self.clutter_rate}")
        if self.process_noise < 0:
            raise ValueError(f"scenario.process_noise must be >= 0, got {self.process_noise}")
        if self.measurement_noise <= 0:
            raise ValueError(f"scenario.measurement_noise must be > 0, got {self.measurement_noise}")
        if self.period <= 0:
            raise ValueError(f"scenario.period must be > 0, got {self.period}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError(f"scenario.seed must be an integer >= 0, got {self.seed!r}")


class Scan(NamedTuple):
    time: int
    measurements: np.ndarray
    detections: int
    clutter: int


class TrialResult(NamedTuple):
    trial: int
    per_scan: List[GospaResult]
    truth: List[Trajectory]
    filtered: List[Trajectory]
    smoothed: List[Trajectory]
    rmse_filtered: Optional[float]
    rmse_smoothed: Optional[float]
    infeasible_scans: int
    seconds: float
    # (scan, iteration, dual, best primal, gap), only collected when asked for
    convergence: List[Tuple[int, ConvergenceRow]]


class MonteCarloReport(NamedTuple):
    name: str
    scenario: ScenarioConfig
    filter: FilterConfig
    trials: List[TrialResult]

    @property
    def per_scan(self) -> List[GospaResult]:
        """GOSPA decomposition at every time step averaged over the trials."""
        if not self.trials:
            return []
        values = np.mean([[list(result) for result in trial.per_scan] for trial in self.trials], axis=0)
        return [GospaResult(*map(float, row)) for row in values]

    @property
    def mean(self) -> Optional[GospaResult]:
        """GOSPA decomposition averaged over time steps and trials."""
        per_scan = self.per_scan
        if not per_scan:
            return None
        return GospaResult(*map(float, np.mean([list(result) for result in per_scan], axis=0)))

    @property
    def mean_trial_seconds(self) -> Optional[float]:
        if not self.trials:
            return None
        return float(np.mean([trial.seconds for trial in self.trials]))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream of one trial, the same whatever order trials run in."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))


def generate_truth(cfg: ScenarioConfig, rng: np.random.Generator) -> List[Trajectory]:
    """
    Ground truth trajectories. Each target's state at the midpoint of its lifetime is drawn
    from the midpoint Gaussian, then the motion model is run forward to its death and
    backward (x[k-1] = F^-1 (x[k] - w)) to its birth, with sampled process noise.
    """
    motion = cfg.motion_model()
    inverse = np.linalg.inv(motion.F)
    zero = np.zeros(motion.F.shape[0])
    mean, cov = np.array(cfg.midpoint_mean, dtype=float), np.array(cfg.midpoint_cov, dtype=float)

    trajectories = []
    for birth, death in zip(cfg.births, cfg.deaths):
        midpoint = (birth + death) // 2
        states = {midpoint: rng.multivariate_normal(mean, cov)}
        for k in range(midpoint + 1, death + 1):
            states[k] = motion.F @ states[k - 1] + rng.multivariate_normal(zero, motion.Q)
        for k in range(midpoint - 1, birth - 1, -1):
            states[k] = inverse @ (states[k + 1] - rng.multivariate_normal(zero, motion.Q))
        trajectories.append(
            Trajectory(birth=birth, last=death, states=np.array([states[k] for k in range(birth, death + 1)]))
        )
    return trajectories


def alive_states(truth: List[Trajectory], k: int) -> np.ndarray:
    states = [trajectory.state_at(k) for trajectory in truth if trajectory.birth <= k <= trajectory.last]
    return np.array(states).reshape(-1, 4)


def generate_scan(
    truth: List[Trajectory],
    k: int,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
    meas: Optional[MeasurementModel] = None,
) -> Scan:
    """
    Measurements at time k: every alive target is detected with probability pd and
    measured with noise R; a Poisson(clutter_rate) number of clutter points is spread
    uniformly over the region; the order is shuffled.
    """
    meas = meas or cfg.measurement_model(DEFAULT_GATE_QUANTILE)
    detections = []
    for state in alive_states(truth, k):
        if rng.random() < cfg.pd:
            detections.append(rng.multivariate_normal(meas.H @ state, meas.R))

    x_min, x_max, y_min, y_max = cfg.region
    clutter_count = int(rng.poisson(cfg.clutter_rate))
    clutter = rng.uniform([x_min, y_min], [x_max, y_max], size=(clutter_count, 2))

    measurements = np.vstack([np.array(detections).reshape(-1, 2), clutter])
    return Scan(
        time=k,
        measurements=measurements[rng.permutation(len(measurements))],
        detections=len(detections),
        clutter=clutter_count,
    )


def run_trial(
    scenario: ScenarioConfig,
    filter_config: FilterConfig,
    trial: int = 0,
    *,
    seed: Optional[int] = None,
    gospa_config: GospaConfig = GospaConfig(),
    debug_dual: bool = False,
) -> TrialResult:
    """
    Run the filter over one sampled scenario, scoring the current estimates against the
    alive targets with GOSPA at every scan.

    :param scenario: Scenario to sample
    :param filter_config: Filter parameters
    :param trial: Trial index, selects the random stream
    :param seed: Master seed, defaults to scenario.seed
    :param gospa_config: GOSPA parameters
    :param debug_dual: Collect the dual decomposition convergence rows of every scan
    """
    start_time = monotonic()
    scenario.validate()
    rng = trial_rng(scenario.seed if seed is None else seed, trial)
    truth = generate_truth(scenario, rng)
    motion = scenario.motion_model()
    measurement = scenario.measurement_model(filter_config.gate_quantile)
    tracker = TrajectoryPMBMFilter(motion=motion, measurement=measurement, config=filter_config)

    per_scan, convergence = [], []
    infeasible_scans = 0
    for k in range(1, scenario.steps + 1):
        scan = generate_scan(truth, k, scenario, rng, measurement)
        result = tracker.step(scan.measurements)
        estimated = np.array([trajectory.states[-1] for trajectory in result.estimates.values()])
        per_scan.append(
            gospa(alive_states(truth, k), estimated, gospa_config, position_indices=POSITION_INDICES)
        )
        infeasible_scans += 0 if result.feasible else 1
        if debug_dual:
            convergence.extend((k, row) for row in result.convergence)

    filtered = tracker.connected_trajectories()
    smoothed = tracker.smoothed_trajectories() if filter_config.window_length is None else []
    seconds = monotonic() - start_time
    logger.info(
        "Finished trial",
        extra=dict(
            trial=trial,
            duration=seconds,
            scans=scenario.steps,
            infeasible_scans=infeasible_scans,
            trajectories=len(filtered),
        ),
    )
    return TrialResult(
        trial=trial,
        per_scan=per_scan,
        truth=truth,
        filtered=filtered,
        smoothed=smoothed,
        rmse_filtered=matched_position_rmse(truth, filtered),
        rmse_smoothed=matched_position_rmse(truth, smoothed) if smoothed else None,
        infeasible_scans=infeasible_scans,
        seconds=seconds,
        convergence=convergence,
    )


def run_monte_carlo(
    scenario: ScenarioConfig,
    filter_config: FilterConfig,
    trials: int,
    *,
    seed: Optional[int] = None,
    name: str = "custom",
    debug_dual: bool = False,
    workers: Optional[int] = None,
) -> MonteCarloReport:
    """
    Run independent trials, in parallel when more than one worker is available
    (TRAJMBM_THREADS caps the pool). Results are ordered by trial index, so the report
    does not depend on completion order.

    :param scenario: Scenario to sample
    :param filter_config: Filter parameters
    :param trials: Number of trials, >= 1
    :param seed: Master seed, defaults to scenario.seed
    :param name: Name of the run in the report
    :param debug_dual: Collect dual decomposition convergence rows
    :param workers: Worker processes, defaults to worker_count()
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    scenario.validate()
    filter_config.validate()
    workers = min(workers or worker_count(), trials)

    logger.info(
        "Starting Monte Carlo run",
        extra=dict(name=name, trials=trials, workers=workers, n_scan=filter_config.n_scan),
    )
    start_time = monotonic()
    run = partial(run_trial, scenario, filter_config, seed=seed, debug_dual=debug_dual)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, range(trials)))
    else:
        results = [run(trial) for trial in range(trials)]

    report = MonteCarloReport(name=name, scenario=scenario, filter=filter_config, trials=results)
    logger.info(
        "Finished Monte Carlo run",
        extra=dict(name=name, trials=trials, duration=monotonic() - start_time, mean_gospa=report.mean.total),
    )
    return report
