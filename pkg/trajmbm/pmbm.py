import logging
from dataclasses import dataclass, field, replace
from time import monotonic
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .assignment import (
    DEFAULT_EPS_GAP,
    DEFAULT_MAX_BRANCH_NODES,
    DEFAULT_MAX_ITER,
    ConvergenceRow,
    MultiFrameProblem,
    solve,
)
from .densities import (
    PoissonComponent,
    PoissonIntensity,
    Trajectory,
    TrajectoryBernoulli,
    moment_match,
    non_existent_bernoulli,
    retain,
    single_component_intensity,
)
from .gaussian_models import (
    DEFAULT_GATE_QUANTILE,
    MeasurementModel,
    MotionModel,
    gate_many,
    kf_predict,
    kf_update,
    rts_smooth,
)
from .hypotheses import (
    DEFAULT_MAX_CONSECUTIVE_MISSES,
    DEFAULT_R_THRESHOLD,
    GlobalHypothesis,
    HypothesisForest,
    MeasurementIndex,
    SingleTrajectoryHypothesis,
    Track,
    apply_miss_only_policy,
    is_feasible,
    n_scan_prune,
)

logger = logging.getLogger(__name__)

FULL_WINDOW = "full"
FILTERED = "filtered"
SMOOTHED = "smoothed"


@dataclass(frozen=True)
class FilterConfig:
    n_scan: int = 5
    window: Union[str, int] = FULL_WINDOW
    r_threshold: float = DEFAULT_R_THRESHOLD
    max_consecutive_misses: int = DEFAULT_MAX_CONSECUTIVE_MISSES
    eps_gap: float = DEFAULT_EPS_GAP
    max_iter: int = DEFAULT_MAX_ITER
    ppp_prune: float = 1e-4
    gate_quantile: float = DEFAULT_GATE_QUANTILE
    birth_weight: float = 0.05
    birth_mean: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    birth_cov: Tuple[Tuple[float, ...], ...] = (
        (100.0 ** 2, 0.0, 0.0, 0.0),
        (0.0, 1.0, 0.0, 0.0),
        (0.0, 0.0, 100.0 ** 2, 0.0),
        (0.0, 0.0, 0.0, 1.0),
    )
    max_branch_nodes: int = DEFAULT_MAX_BRANCH_NODES

    @property
    def window_length(self) -> Optional[int]:
        """Number of retained steps, None for the full trajectory."""
        return None if self.window == FULL_WINDOW else int(self.window)

    def birth_intensity(self) -> PoissonIntensity:
        return single_component_intensity(
            self.birth_weight, np.array(self.birth_mean, dtype=float), np.array(self.birth_cov, dtype=float)
        )

    def validate(self):
        if self.n_scan < 1:
            raise ValueError(f"filter.n_scan must be >= 1, got {self.n_scan}")
        if self.window != FULL_WINDOW:
            if isinstance(self.window, bool) or not isinstance(self.window, int) or self.window < 1:
                raise ValueError(f"filter.window must be '{FULL_WINDOW}' or an integer >= 1, got {self.window!r}")
        if not 0 <= self.r_threshold <= 1:
            raise ValueError(f"filter.r_threshold must be in [0, 1], got {self.r_threshold}")
        if self.max_consecutive_misses < 0:
            raise ValueError(f"filter.max_consecutive_misses must be >= 0, got {self.max_consecutive_misses}")
        if self.eps_gap <= 0:
            raise ValueError(f"filter.eps_gap must be > 0, got {self.eps_gap}")
        if self.max_iter < 1:
            raise ValueError(f"filter.max_iter must be >= 1, got {self.max_iter}")
        if self.ppp_prune < 0:
            raise ValueError(f"filter.ppp_prune must be >= 0, got {self.ppp_prune}")
        if not 0 < self.gate_quantile < 1:
            raise ValueError(f"filter.gate_quantile must be in (0, 1), got {self.gate_quantile}")
        if self.birth_weight < 0:
            raise ValueError(f"filter.birth_weight must be >= 0, got {self.birth_weight}")
        mean, cov = np.array(self.birth_mean, dtype=float), np.array(self.birth_cov, dtype=float)
        if cov.shape != (len(mean), len(mean)):
            raise ValueError(f"filter.birth_cov shape {cov.shape} does not match birth_mean length {len(mean)}")
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("filter.birth_cov must be symmetric positive definite")
        if self.max_branch_nodes < 1:
            raise ValueError(f"filter.max_branch_nodes must be >= 1, got {self.max_branch_nodes}")


@dataclass
class FilterState:
    undetected: PoissonIntensity = field(default_factory=PoissonIntensity)
    forest: HypothesisForest = field(default_factory=HypothesisForest)
    time: int = 0


def predict(
    s: FilterState, motion: MotionModel, birth: PoissonIntensity, window: Optional[int] = None
) -> FilterState:
    """
    Predict the filter to the next time step. Surviving PPP components are Kalman
    predicted with weights scaled by ps and the birth components are appended. Every STH
    keeps its weight; its Bernoulli has r scaled by ps and its trajectory extended by one
    predicted step.

    :param s: State at time k
    :param motion: Motion model
    :param birth: Birth intensity; its components are born at time k + 1
    :param window: Number of retained steps, None for the full trajectory
    """
    time = s.time + 1
    survived = tuple(
        PoissonComponent(
            weight=component.weight * motion.ps,
            density=kf_predict(component.density, motion),
            birth=component.birth,
            history=retain(component.moments, None if window is None else window - 1),
        )
        for component in s.undetected.components
    )
    born = tuple(
        PoissonComponent(weight=component.weight, density=component.density, birth=time)
        for component in birth.components
    )

    for track in s.forest.tracks:
        track.sths = [_predict_sth(sth, motion) for sth in track.sths]

    return FilterState(
        undetected=PoissonIntensity(components=survived + born), forest=s.forest, time=time
    )


def _predict_sth(sth: SingleTrajectoryHypothesis, motion: MotionModel) -> SingleTrajectoryHypothesis:
    bern = sth.bern
    r = bern.r * motion.ps
    if bern.density is None:
        predicted = replace(bern, r=r, last=bern.last + 1)
    else:
        predicted = bern.extended(kf_predict(bern.density, motion), r)
    return replace(sth, bern=predicted)


def sth_miss_update(
    h: SingleTrajectoryHypothesis,
    meas: MeasurementModel,
    *,
    scan: Optional[int] = None,
    sth_id: Optional[int] = None,
) -> Optional[SingleTrajectoryHypothesis]:
    """
    Missed-detection child of `h`: weight times L = 1 - r + r (1 - pd) and existence
    r (1 - pd) / L. Returns None when L is 0.
    """
    r = h.bern.r
    likelihood = 1.0 - r + r * (1.0 - meas.pd)
    if likelihood <= 0:
        return None

    bern = h.bern if r == 0 else replace(h.bern, r=r * (1.0 - meas.pd) / likelihood)
    return SingleTrajectoryHypothesis(
        id=h.id if sth_id is None else sth_id,
        log_weight=h.log_weight + np.log(likelihood),
        bern=bern,
        meas_set=h.meas_set,
        scan=h.scan + 1 if scan is None else scan,
        parent=h,
        consecutive_misses=h.consecutive_misses + 1 if r > 0 else h.consecutive_misses,
        miss_only=h.miss_only,
    )


def sth_meas_update(
    h: SingleTrajectoryHypothesis,
    z: np.ndarray,
    index: MeasurementIndex,
    meas: MeasurementModel,
    *,
    sth_id: Optional[int] = None,
) -> Optional[SingleTrajectoryHypothesis]:
    """
    Child of `h` updated by measurement `z` with index (k, j): weight times
    r pd N(z; H m, H P H^T + R), existence 1. Returns None when r or pd is 0.
    """
    r = h.bern.r
    if r == 0 or meas.pd == 0 or h.bern.density is None:
        return None

    posterior, log_likelihood = kf_update(h.bern.density, z, meas)
    return SingleTrajectoryHypothesis(
        id=h.id if sth_id is None else sth_id,
        log_weight=h.log_weight + np.log(r) + np.log(meas.pd) + log_likelihood,
        bern=h.bern.with_current(posterior, 1.0),
        meas_set=h.meas_set | {index},
        scan=index[0],
        parent=h,
        consecutive_misses=0,
    )


def new_track(
    z: np.ndarray,
    index: MeasurementIndex,
    undetected: PoissonIntensity,
    meas: MeasurementModel,
    forest: Optional[HypothesisForest] = None,
    window: Optional[int] = None,
) -> Optional[Track]:
    """
    Track started by measurement `z` with index (k, j). It holds a non-existence STH
    (weight 1, r = 0) and a first-detection STH with weight clutter + rho and existence
    rho / (clutter + rho), where rho is the pd-weighted likelihood of `z` under the
    undetected intensity. The first-detection density moment-matches the updated
    components born at the same time as the heaviest one.

    :param forest: Source of track and STH ids, ids start at 0 when omitted
    :param window: Number of retained steps, None for the full trajectory
    :return: The track, or None when clutter and rho are both 0
    """
    k = index[0]
    z = np.asarray(z, dtype=float)
    weights, densities, components = [], [], []
    for component in undetected.components:
        if component.weight <= 0 or not gate_many(component.density, z[np.newaxis, :], meas)[0]:
            continue
        posterior, log_likelihood = kf_update(component.density, z, meas)
        weights.append(component.weight * meas.pd * np.exp(log_likelihood))
        densities.append(posterior)
        components.append(component)

    rho = float(sum(weights))
    total = meas.clutter_intensity + rho
    if total <= 0:
        return None

    if rho > 0:
        birth = components[int(np.argmax(weights))].birth
        group = [i for i, component in enumerate(components) if component.birth == birth]
        group_weights = [weights[i] for i in group]
        current = moment_match(group_weights, [densities[i] for i in group])
        depth = min(len(components[i].history) for i in group)
        history = tuple(
            moment_match(group_weights, [components[i].history[step - depth] for i in group])
            for step in range(depth)
        )
        bern = TrajectoryBernoulli(
            r=rho / total, birth=birth, last=k, moments=retain(history + (current,), window), window=window
        )
    else:
        bern = non_existent_bernoulli(k, window)

    if forest is not None:
        track_id, absent_id, detected_id = forest.new_track_id(), forest.new_sth_id(), forest.new_sth_id()
    else:
        track_id, absent_id, detected_id = 0, 0, 1
    absent = SingleTrajectoryHypothesis(
        id=absent_id, log_weight=0.0, bern=non_existent_bernoulli(k, window), meas_set=frozenset(), scan=k
    )
    detected = SingleTrajectoryHypothesis(
        id=detected_id, log_weight=float(np.log(total)), bern=bern, meas_set=frozenset({index}), scan=k
    )
    return Track(id=track_id, created_at=k, sths=[absent, detected])


def update(
    s: FilterState, measurements: np.ndarray, meas: MeasurementModel, window: Optional[int] = None
) -> FilterState:
    """
    Measurement update at scan s.time. Every STH spawns a missed-detection child and,
    unless it is flagged miss-only, one child per gated measurement. Every measurement
    starts a new track and the undetected intensity is thinned by 1 - pd. STH log-weights
    are normalized within each track.
    """
    k = s.time
    zs = np.asarray(measurements, dtype=float).reshape(-1, meas.H.shape[0])
    forest = s.forest
    start_time = monotonic()

    tracks = []
    for track in forest.tracks:
        children = []
        for sth in track.sths:
            missed = sth_miss_update(sth, meas, scan=k, sth_id=forest.new_sth_id())
            if missed is not None:
                children.append(missed)
            if sth.miss_only or sth.bern.r == 0 or not len(zs):
                continue
            for j in np.flatnonzero(gate_many(sth.bern.density, zs, meas)):
                child = sth_meas_update(sth, zs[j], (k, int(j)), meas, sth_id=forest.new_sth_id())
                if child is not None:
                    children.append(child)
        track.sths = children
        tracks.append(track)

    for j, z in enumerate(zs):
        track = new_track(z, (k, j), s.undetected, meas, forest=forest, window=window)
        if track is not None:
            tracks.append(track)

    for track in tracks:
        track.normalize()
    forest.tracks = [track for track in tracks if track.sths]

    undetected = PoissonIntensity(
        components=tuple(
            component._replace(weight=component.weight * (1.0 - meas.pd))
            for component in s.undetected.components
        )
    )
    logger.debug(
        "Finished measurement update",
        extra=dict(
            duration=monotonic() - start_time,
            time=k,
            measurements=len(zs),
            tracks=len(forest.tracks),
            sths=forest.sth_count,
        ),
    )
    return FilterState(undetected=undetected, forest=forest, time=k)


def prune_ppp(p: PoissonIntensity, threshold: float) -> PoissonIntensity:
    if threshold < 0:
        raise ValueError(f"PPP pruning threshold must be >= 0, got {threshold}")
    return PoissonIntensity(
        components=tuple(component for component in p.components if component.weight >= threshold)
    )


def map_cardinality(existence: Sequence[float]) -> int:
    """Maximum a posteriori cardinality of independent Bernoullis with the given r."""
    pmf = np.ones(1)
    for r in existence:
        pmf = np.convolve(pmf, [1.0 - r, r])
    return int(np.argmax(pmf))


def _as_trajectory(bern: TrajectoryBernoulli, states: Sequence[np.ndarray]) -> Trajectory:
    return Trajectory(birth=bern.last - len(states) + 1, last=bern.last, states=np.array(states))


def extract_estimates(
    s: FilterState,
    best: GlobalHypothesis,
    mode: str = FILTERED,
    motion: Optional[MotionModel] = None,
) -> Dict[int, Trajectory]:
    """
    Trajectory estimates of the most likely global hypothesis: the n* Bernoullis with the
    highest existence probability, n* being the MAP cardinality of the hypothesis.

    :param s: Filter state
    :param best: Feasible global hypothesis of `s`
    :param mode: "filtered" reports the retained filtered means, "smoothed" runs the RTS
        smoother over the whole trajectory, which needs the full history
    :param motion: Motion model, required for "smoothed"
    :return: Estimated trajectory by track id
    """
    if mode not in (FILTERED, SMOOTHED):
        raise ValueError(f"mode must be '{FILTERED}' or '{SMOOTHED}', got {mode!r}")
    if mode == SMOOTHED and motion is None:
        raise ValueError("Smoothed estimates need the motion model")

    chosen = [
        (track.id, track.sth(best.choice[track.id]).bern)
        for track in s.forest.tracks
        if track.id in best.choice
    ]
    cardinality = map_cardinality([bern.r for _, bern in chosen])
    ranked = sorted(
        (item for item in chosen if item[1].r > 0 and item[1].density is not None),
        key=lambda item: -item[1].r,
    )

    estimates = {}
    for track_id, bern in ranked[:cardinality]:
        if mode == SMOOTHED:
            if not bern.has_full_history:
                raise ValueError(
                    f"Track {track_id} retains {len(bern.moments)} of {bern.length} steps, "
                    "smoothing needs the full trajectory history"
                )
            states = [density.mean for density in rts_smooth(bern.moments, motion)]
        else:
            states = [density.mean for density in bern.moments]
        estimates[track_id] = _as_trajectory(bern, states)
    return estimates


def warm_start(forest: HypothesisForest, previous: Optional[GlobalHypothesis], k: int) -> Optional[GlobalHypothesis]:
    """
    The previous best hypothesis carried through the update at scan k: missed-detection
    children for old tracks and first-detection STHs for new ones.
    """
    if previous is None:
        return None
    choice = {}
    for track in forest.tracks:
        if track.created_at == k:
            detected = [sth for sth in track.sths if sth.meas_set]
            if not detected:
                return None
            choice[track.id] = detected[0].id
            continue
        parent_id = previous.choice.get(track.id)
        missed = [
            sth
            for sth in track.sths
            if sth.parent_id == parent_id and not any(scan == k for scan, _ in sth.meas_set)
        ]
        if parent_id is None or not missed:
            return None
        choice[track.id] = missed[0].id
    return GlobalHypothesis(choice=choice, log_weight=0.0)


class ScanResult(NamedTuple):
    time: int
    best: GlobalHypothesis
    gap: float
    feasible: bool
    estimates: Dict[int, Trajectory]
    convergence: List[ConvergenceRow]


class TrajectoryPMBMFilter:
    """
    PMBM filter for the set of trajectories of the targets currently alive, with
    multi-frame data association by dual decomposition and track-oriented N-scan pruning.
    """

    def __init__(self, *, motion: MotionModel, measurement: MeasurementModel, config: FilterConfig):
        config.validate()
        self.motion = motion
        self.measurement = measurement
        self.config = config
        self.birth = config.birth_intensity()
        self.state = FilterState()
        self._connected: Dict[int, List[Tuple[int, np.ndarray]]] = {}
        self._last_reported: Dict[int, TrajectoryBernoulli] = {}

    def step(self, measurements: np.ndarray) -> ScanResult:
        start_time = monotonic()
        window = self.config.window_length
        previous = self.state.forest.best

        predicted = predict(self.state, self.motion, self.birth, window)
        updated = update(predicted, measurements, self.measurement, window)
        tau = updated.time
        forest = updated.forest

        scans = range(max(1, tau - self.config.n_scan), tau + 1)
        convergence: List[ConvergenceRow] = []
        best, gap = solve(
            MultiFrameProblem.from_forest(forest, scans),
            self.config.eps_gap,
            self.config.max_iter,
            initial=warm_start(forest, previous, tau),
            max_branch_nodes=self.config.max_branch_nodes,
            trace=convergence,
        )
        feasible = is_feasible(forest, best, scans=scans)
        if not feasible:
            logger.warning("Best global hypothesis violates the partition constraint", extra=dict(time=tau))

        forest = n_scan_prune(forest, best, self.config.n_scan, tau)
        forest = apply_miss_only_policy(
            forest, self.config.r_threshold, self.config.max_consecutive_misses, window_start=scans.start
        )
        self.state = FilterState(
            undetected=prune_ppp(updated.undetected, self.config.ppp_prune), forest=forest, time=tau
        )

        estimates = extract_estimates(self.state, forest.best, FILTERED)
        for track_id, trajectory in estimates.items():
            self._connected.setdefault(track_id, []).append((tau, trajectory.states[-1]))
            self._last_reported[track_id] = forest.track(track_id).sth(forest.best.choice[track_id]).bern

        logger.debug(
            "Finished filter step",
            extra=dict(
                duration=monotonic() - start_time,
                time=tau,
                tracks=len(forest.tracks),
                sths=forest.sth_count,
                ppp_components=len(self.state.undetected),
                estimates=len(estimates),
                gap=gap,
                iterations=len(convergence),
            ),
        )
        return ScanResult(
            time=tau, best=best, gap=gap, feasible=feasible, estimates=estimates, convergence=convergence
        )

    def connected_trajectories(self) -> List[Trajectory]:
        """
        Trajectories built by connecting the current estimates reported for the same track,
        one per run of consecutive reports.
        """
        trajectories = []
        for track_id in sorted(self._connected):
            reports = self._connected[track_id]
            start = 0
            for i in range(1, len(reports) + 1):
                if i == len(reports) or reports[i][0] != reports[i - 1][0] + 1:
                    trajectories.append(
                        Trajectory(
                            birth=reports[start][0],
                            last=reports[i - 1][0],
                            states=np.array([state for _, state in reports[start:i]]),
                        )
                    )
                    start = i
        return trajectories

    def smoothed_trajectories(self) -> List[Trajectory]:
        """RTS-smoothed history of the Bernoulli each track was last reported with."""
        if self.config.window_length is not None:
            raise ValueError("Smoothed trajectories need the full window")
        return [
            _as_trajectory(bern, [density.mean for density in rts_smooth(bern.moments, self.motion)])
            for _, bern in sorted(self._last_reported.items())
        ]
