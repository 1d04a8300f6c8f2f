from typing import NamedTuple, Optional, Sequence

import numpy as np

from .assignment import auction_solve
from .densities import Trajectory

POSITION_INDICES = (0, 2)


class GospaConfig(NamedTuple):
    c: float = 20.0
    p: float = 1.0
    alpha: float = 2.0


class GospaResult(NamedTuple):
    total: float
    localization: float
    missed: float
    false_: float


def validate_gospa_config(cfg: GospaConfig):
    if cfg.c <= 0:
        raise ValueError(f"GOSPA cutoff c must be > 0, got {cfg.c}")
    if cfg.p < 1:
        raise ValueError(f"GOSPA order p must be >= 1, got {cfg.p}")
    if cfg.alpha != 2:
        raise ValueError(f"Only alpha = 2 is supported, got {cfg.alpha}")


def _as_points(points, position_indices: Optional[Sequence[int]]) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return np.zeros((0, len(position_indices) if position_indices is not None else 0))
    points = np.atleast_2d(points)
    if position_indices is not None:
        points = points[:, list(position_indices)]
    return points


def gospa(
    truth, est, cfg: GospaConfig = GospaConfig(), *, position_indices: Optional[Sequence[int]] = None
) -> GospaResult:
    """
    GOSPA distance with alpha = 2 between two sets of points, decomposed into
    localization, missed and false target errors (each reported to the power p, so
    total = localization + missed + false_ for p = 1).

    :param truth: n x d array of true states
    :param est: m x d array of estimated states
    :param cfg: Cutoff c, order p and alpha
    :param position_indices: Components used for the distance, all of them when None
    """
    validate_gospa_config(cfg)
    X = _as_points(truth, position_indices)
    Y = _as_points(est, position_indices)
    n, m = len(X), len(Y)
    penalty = cfg.c ** cfg.p / 2.0

    if n == 0 or m == 0:
        missed, false_ = penalty * n, penalty * m
        return GospaResult(
            total=(missed + false_) ** (1.0 / cfg.p), localization=0.0, missed=missed, false_=false_
        )

    distances = np.linalg.norm(X[:, np.newaxis, :] - Y[np.newaxis, :, :], axis=2)
    # truth i either takes an estimate or its own dummy column, which leaves both unassigned
    costs = np.full((n, m + n), np.inf)
    matchable = distances < cfg.c
    costs[:, :m] = np.where(matchable, distances ** cfg.p - cfg.c ** cfg.p, np.inf)
    costs[np.arange(n), m + np.arange(n)] = 0.0

    assignment = auction_solve(costs)
    matched = assignment < m
    localization = float(np.sum(distances[np.flatnonzero(matched), assignment[matched]] ** cfg.p))
    pairs = int(matched.sum())
    missed = penalty * (n - pairs)
    false_ = penalty * (m - pairs)
    return GospaResult(
        total=(localization + missed + false_) ** (1.0 / cfg.p),
        localization=localization,
        missed=missed,
        false_=false_,
    )


def _overlap(first: Trajectory, second: Trajectory) -> range:
    return range(max(first.birth, second.birth), min(first.last, second.last) + 1)


def matched_position_rmse(
    truth_traj: Sequence[Trajectory],
    est_traj: Sequence[Trajectory],
    position_indices: Sequence[int] = POSITION_INDICES,
) -> Optional[float]:
    """
    Coarse trajectory diagnostic: estimated and true trajectories that overlap in time are
    matched greedily by mean position distance over the overlap, and the RMSE over every
    matched (time, position) pair is returned. None when nothing can be matched.
    """
    indices = list(position_indices)
    candidates = []
    for i, truth in enumerate(truth_traj):
        for j, est in enumerate(est_traj):
            times = _overlap(truth, est)
            if not len(times):
                continue
            errors = np.array(
                [
                    np.sum((truth.state_at(k)[indices] - est.state_at(k)[indices]) ** 2)
                    for k in times
                ]
            )
            candidates.append((float(np.mean(np.sqrt(errors))), -len(times), i, j, errors))

    squared_sum, count = 0.0, 0
    used_truth, used_est = set(), set()
    for _, _, i, j, errors in sorted(candidates, key=lambda candidate: candidate[:4]):
        if i in used_truth or j in used_est:
            continue
        used_truth.add(i)
        used_est.add(j)
        squared_sum += float(errors.sum())
        count += len(errors)

    if not count:
        return None
    return float(np.sqrt(squared_sum / count))
