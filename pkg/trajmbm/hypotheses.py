import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Set, Tuple

import numpy as np
from scipy.special import logsumexp

from .densities import TrajectoryBernoulli

logger = logging.getLogger(__name__)

MeasurementIndex = Tuple[int, int]

DEFAULT_R_THRESHOLD = 0.1
DEFAULT_MAX_CONSECUTIVE_MISSES = 3
DEFAULT_ENUMERATION_CAP = 100000


@dataclass(eq=False)
class SingleTrajectoryHypothesis:
    """
    One measurement-assignment history of a track. `scan` is the scan at which this node
    of the track's hypothesis tree was created and `parent` links to the node it was
    updated from.
    """

    id: int
    log_weight: float
    bern: TrajectoryBernoulli
    meas_set: FrozenSet[MeasurementIndex]
    scan: int
    parent: Optional["SingleTrajectoryHypothesis"] = None
    consecutive_misses: int = 0
    miss_only: bool = False

    @property
    def parent_id(self) -> Optional[int]:
        return self.parent.id if self.parent is not None else None

    @property
    def cost(self) -> float:
        return -self.log_weight

    @property
    def is_non_existence(self) -> bool:
        return self.bern.r == 0 and not self.meas_set

    def ancestor_at(self, scan: int) -> Optional["SingleTrajectoryHypothesis"]:
        node = self
        while node is not None and node.scan > scan:
            node = node.parent
        return node

    def measurements_in(self, scans: Iterable[int]) -> FrozenSet[MeasurementIndex]:
        scans = set(scans)
        return frozenset(index for index in self.meas_set if index[0] in scans)


@dataclass(eq=False)
class Track:
    id: int
    created_at: int
    sths: List[SingleTrajectoryHypothesis] = field(default_factory=list)

    def sth(self, sth_id: int) -> SingleTrajectoryHypothesis:
        for hypothesis in self.sths:
            if hypothesis.id == sth_id:
                return hypothesis
        raise ValueError(f"Track {self.id} has no single trajectory hypothesis {sth_id}")

    def normalize(self):
        """Shift the log-weights of the track so that they log-sum-exp to zero."""
        if not self.sths:
            return
        shift = logsumexp([hypothesis.log_weight for hypothesis in self.sths])
        for hypothesis in self.sths:
            hypothesis.log_weight -= shift


class GlobalHypothesis(NamedTuple):
    # track id -> single trajectory hypothesis id
    choice: Dict[int, int]
    log_weight: float


@dataclass
class HypothesisForest:
    tracks: List[Track] = field(default_factory=list)
    best: Optional[GlobalHypothesis] = None
    next_track_id: int = 0
    next_sth_id: int = 0

    def new_track_id(self) -> int:
        self.next_track_id += 1
        return self.next_track_id - 1

    def new_sth_id(self) -> int:
        self.next_sth_id += 1
        return self.next_sth_id - 1

    def track(self, track_id: int) -> Track:
        for track in self.tracks:
            if track.id == track_id:
                return track
        raise ValueError(f"No track with id {track_id}")

    def chosen(self, hypothesis: GlobalHypothesis) -> List[Tuple[Track, SingleTrajectoryHypothesis]]:
        return [(track, track.sth(hypothesis.choice[track.id])) for track in self.tracks]

    def measurements(self, scans: Optional[Iterable[int]] = None) -> Set[MeasurementIndex]:
        """Union of the measurement sets of every hypothesis, optionally restricted to `scans`."""
        scans = set(scans) if scans is not None else None
        union = set()
        for track in self.tracks:
            for hypothesis in track.sths:
                union.update(
                    index for index in hypothesis.meas_set if scans is None or index[0] in scans
                )
        return union

    @property
    def sth_count(self) -> int:
        return sum(len(track.sths) for track in self.tracks)


def hypothesis_log_weight(forest: HypothesisForest, choice: Dict[int, int]) -> float:
    return float(sum(forest.track(track_id).sth(sth_id).log_weight for track_id, sth_id in choice.items()))


def is_partition(
    meas_sets: Iterable[FrozenSet[MeasurementIndex]], measurements: Set[MeasurementIndex]
) -> bool:
    covered = set()
    for meas_set in meas_sets:
        if covered & meas_set:
            return False
        covered |= meas_set
    return covered == set(measurements)


def is_feasible(
    forest: HypothesisForest,
    hypothesis: GlobalHypothesis,
    measurements: Optional[Set[MeasurementIndex]] = None,
    scans: Optional[Iterable[int]] = None,
) -> bool:
    """
    Check that the hypothesis picks one STH per track and that their measurement sets
    partition `measurements` (all measurements the forest explains by default). With
    `scans`, only measurements of those scans are checked.
    """
    if set(hypothesis.choice) != {track.id for track in forest.tracks}:
        return False
    scans = list(scans) if scans is not None else None
    if measurements is None:
        measurements = forest.measurements(scans)
    chosen = [sth for _, sth in forest.chosen(hypothesis)]
    if scans is not None:
        meas_sets = [sth.measurements_in(scans) for sth in chosen]
    else:
        meas_sets = [sth.meas_set for sth in chosen]
    return is_partition(meas_sets, measurements)


def n_scan_prune(
    forest: HypothesisForest, best: GlobalHypothesis, n_scan: int, tau: int
) -> HypothesisForest:
    """
    Track-oriented N-scan pruning. Every STH whose ancestor at scan tau-N+1 differs from
    the ancestor of the STH chosen by `best` is removed, then tracks left with only their
    non-existence hypothesis are deleted.

    :param forest: Forest after the update at scan tau
    :param best: Most likely global hypothesis at scan tau
    :param n_scan: Pruning depth N
    :param tau: Current scan
    :return: The pruned forest (best is kept as forest.best)
    """
    if n_scan < 1:
        raise ValueError(f"n_scan must be >= 1, got {n_scan}")

    if n_scan >= tau:
        return HypothesisForest(
            tracks=forest.tracks,
            best=best,
            next_track_id=forest.next_track_id,
            next_sth_id=forest.next_sth_id,
        )

    horizon = tau - n_scan + 1
    tracks = []
    removed_sths = 0
    for track in forest.tracks:
        best_sth = track.sth(best.choice[track.id])
        anchor = best_sth.ancestor_at(horizon)
        if anchor is None:
            # track created after the horizon: nothing is resolved yet
            tracks.append(track)
            continue

        survivors = [sth for sth in track.sths if sth.ancestor_at(horizon) is anchor]
        removed_sths += len(track.sths) - len(survivors)
        # decisions up to the horizon are final
        anchor.parent = None
        if len(survivors) == 1 and survivors[0].is_non_existence:
            removed_sths += 1
            continue
        tracks.append(Track(id=track.id, created_at=track.created_at, sths=survivors))

    kept_ids = {track.id for track in tracks}
    pruned_best = GlobalHypothesis(
        choice={track_id: sth_id for track_id, sth_id in best.choice.items() if track_id in kept_ids},
        log_weight=best.log_weight,
    )
    logger.debug(
        "Finished n-scan pruning",
        extra=dict(
            tau=tau,
            horizon=horizon,
            removed_sths=removed_sths,
            removed_tracks=len(forest.tracks) - len(tracks),
            remaining_tracks=len(tracks),
        ),
    )
    return HypothesisForest(
        tracks=tracks,
        best=pruned_best,
        next_track_id=forest.next_track_id,
        next_sth_id=forest.next_sth_id,
    )


def apply_miss_only_policy(
    forest: HypothesisForest,
    r_threshold: float = DEFAULT_R_THRESHOLD,
    max_consecutive_misses: int = DEFAULT_MAX_CONSECUTIVE_MISSES,
    window_start: Optional[int] = None,
) -> HypothesisForest:
    """
    Flag STHs with existence probability below `r_threshold` so the next update only
    miss-updates them, and remove STHs with more than `max_consecutive_misses` consecutive
    missed detections unless the best global hypothesis uses them. A first-detection STH is
    not flagged at the scan that created its track.

    With `window_start`, a track reduced to a single flagged STH with too many consecutive
    misses and no measurement from `window_start` on is deleted, even when the best global
    hypothesis uses it. Its measurements are all frozen, so the remaining tracks still
    partition the measurements of the assignment window.

    :param forest: Forest after N-scan pruning
    :param r_threshold: Existence probability below which an STH is miss-only
    :param max_consecutive_misses: Consecutive missed detections an STH may accumulate
    :param window_start: First scan of the assignment window
    :return: The same forest, updated in place
    """
    if r_threshold < 0 or max_consecutive_misses < 0:
        raise ValueError("r_threshold and max_consecutive_misses must be >= 0")

    protected = set(forest.best.choice.items()) if forest.best is not None else set()
    tracks = []
    for track in forest.tracks:
        kept = []
        for sth in track.sths:
            first_detection = sth.scan == track.created_at and bool(sth.meas_set)
            sth.miss_only = sth.bern.r < r_threshold and not first_detection
            if sth.consecutive_misses > max_consecutive_misses and (track.id, sth.id) not in protected:
                continue
            kept.append(sth)
        track.sths = kept
        if window_start is not None and _is_stale(track, max_consecutive_misses, window_start):
            continue
        tracks.append(track)

    if len(tracks) < len(forest.tracks):
        kept_ids = {track.id for track in tracks}
        logger.debug(
            "Deleted stale tracks",
            extra=dict(deleted_tracks=len(forest.tracks) - len(tracks), remaining_tracks=len(tracks)),
        )
        forest.tracks = tracks
        if forest.best is not None:
            forest.best = GlobalHypothesis(
                choice={track_id: sth_id for track_id, sth_id in forest.best.choice.items() if track_id in kept_ids},
                log_weight=forest.best.log_weight,
            )
    return forest


def _is_stale(track: Track, max_consecutive_misses: int, window_start: int) -> bool:
    if len(track.sths) != 1:
        return False
    sth = track.sths[0]
    return (
        sth.miss_only
        and sth.consecutive_misses > max_consecutive_misses
        and all(scan < window_start for scan, _ in sth.meas_set)
    )


def enumerate_global_hypotheses(
    forest: HypothesisForest,
    cap: int = DEFAULT_ENUMERATION_CAP,
    measurements: Optional[Set[MeasurementIndex]] = None,
) -> List[GlobalHypothesis]:
    """
    Enumerate every feasible global hypothesis of a small forest, with normalized weights
    (log_weight is the log of the normalized weight). Sorted from most to least likely.
    """
    combinations = int(np.prod([len(track.sths) for track in forest.tracks])) if forest.tracks else 1
    if combinations > cap:
        raise ValueError(f"Forest has {combinations} STH combinations, more than the cap of {cap}")

    if measurements is None:
        measurements = forest.measurements()

    feasible = []
    for selection in itertools.product(*[track.sths for track in forest.tracks]):
        if is_partition([sth.meas_set for sth in selection], measurements):
            feasible.append(
                (
                    {track.id: sth.id for track, sth in zip(forest.tracks, selection)},
                    sum(sth.log_weight for sth in selection),
                )
            )

    if not feasible:
        return []
    normalizer = logsumexp([log_weight for _, log_weight in feasible])
    hypotheses = [
        GlobalHypothesis(choice=choice, log_weight=float(log_weight - normalizer))
        for choice, log_weight in feasible
    ]
    return sorted(hypotheses, key=lambda hypothesis: -hypothesis.log_weight)
