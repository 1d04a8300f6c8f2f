import logging
from collections import deque
from dataclasses import dataclass, replace
from time import monotonic
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, maximum_bipartite_matching

from .hypotheses import GlobalHypothesis, HypothesisForest, MeasurementIndex

logger = logging.getLogger(__name__)

DEFAULT_EPS_GAP = 0.01
DEFAULT_MAX_ITER = 200
DEFAULT_MAX_BRANCH_NODES = 20000
AUCTION_RESOLUTION = 1e-6
# epsilon is divided by this factor between auction phases
AUCTION_SCALING_FACTOR = 4.0
ABSOLUTE_GAP_TOLERANCE = 1e-9

SthOption = Tuple[int, float, FrozenSet[MeasurementIndex]]


def auction_solve(costs: np.ndarray, eps: float = None) -> np.ndarray:
    """
    Minimum cost assignment of every row to a distinct column with the forward auction
    algorithm and epsilon-scaling. Costs are quantized to AUCTION_RESOLUTION, which makes
    the result optimal for the quantized costs with the default final epsilon.

    :param costs: rows x cols cost matrix (rows <= cols), np.inf marks forbidden pairs
    :param eps: Final bid increment in cost units. Defaults to AUCTION_RESOLUTION / (n + 1)
    :return: Column index assigned to each row
    """
    costs = np.asarray(costs, dtype=float)
    if costs.ndim != 2:
        raise ValueError(f"Cost matrix must be 2-D, got shape {costs.shape}")
    n_rows, n_cols = costs.shape
    if n_rows > n_cols:
        raise ValueError(f"Cost matrix has more rows ({n_rows}) than columns ({n_cols})")
    if np.isnan(costs).any() or np.isneginf(costs).any():
        raise ValueError("Cost matrix contains NaN or -inf")
    if n_rows == 0:
        return np.zeros(0, dtype=int)

    allowed = np.isfinite(costs)
    matching = maximum_bipartite_matching(csr_matrix(allowed.astype(np.int8)), perm_type="column")
    if (matching < 0).any():
        raise ValueError(
            f"Cost matrix is infeasible: rows {np.flatnonzero(matching < 0).tolist()} cannot be assigned"
        )

    # dummy rows make the problem square; they accept any column at zero cost
    n = n_cols
    scale = n + 1
    quantized = np.round(np.where(allowed, costs, 0.0) / AUCTION_RESOLUTION)
    benefits = np.zeros((n, n))
    benefits[:n_rows] = -quantized * scale
    options = [np.flatnonzero(allowed[i]) for i in range(n_rows)]
    options += [np.arange(n)] * (n - n_rows)

    finite_benefits = benefits[:n_rows][allowed]
    spread = float(finite_benefits.max() - finite_benefits.min()) if finite_benefits.size else 0.0
    final_eps = 1.0 if eps is None else max(eps * scale / AUCTION_RESOLUTION, 1e-12)
    current_eps = max(final_eps, spread / AUCTION_SCALING_FACTOR)

    prices = np.zeros(n)
    while True:
        row_to_col = _auction_phase(benefits, options, prices, current_eps, spread)
        if current_eps <= final_eps:
            break
        current_eps = max(final_eps, current_eps / AUCTION_SCALING_FACTOR)

    return row_to_col[:n_rows]


def _auction_phase(
    benefits: np.ndarray,
    options: Sequence[np.ndarray],
    prices: np.ndarray,
    eps: float,
    spread: float,
) -> np.ndarray:
    n = benefits.shape[0]
    row_to_col = np.full(n, -1)
    col_to_row = np.full(n, -1)
    unassigned = deque(range(n))

    while unassigned:
        row = unassigned.popleft()
        cols = options[row]
        values = benefits[row, cols] - prices[cols]
        best = int(np.argmax(values))
        if len(cols) == 1:
            increment = spread + eps
        else:
            second = np.max(np.delete(values, best))
            increment = values[best] - second + eps
        col = cols[best]
        prices[col] += increment

        previous = col_to_row[col]
        if previous >= 0:
            row_to_col[previous] = -1
            unassigned.append(previous)
        col_to_row[col] = row
        row_to_col[row] = col

    return row_to_col


class MultiFrameProblem:
    """
    Multi-frame assignment over a window of scans. Every track offers its STHs as
    (sth id, cost, measurement set); a solution picks one STH per track such that the
    measurement sets, restricted to the window, partition the window's measurements.
    STHs are stored flat, grouped by track, so per-scan work is vectorized.
    """

    def __init__(self, tracks: Sequence[Tuple[int, Sequence[SthOption]]], scans: Sequence[int]):
        self.scans = tuple(sorted(set(scans)))
        if not self.scans:
            raise ValueError("MultiFrameProblem needs at least one scan in its window")

        self.track_ids: List[int] = []
        sth_ids, sth_track, costs, window_sets = [], [], [], []
        self.track_offsets = [0]
        for track_index, (track_id, sths) in enumerate(tracks):
            if not sths:
                raise ValueError(f"Track {track_id} has no single trajectory hypotheses")
            self.track_ids.append(track_id)
            for sth_id, cost, meas_set in sths:
                if not np.isfinite(cost):
                    raise ValueError(f"STH {sth_id} of track {track_id} has non-finite cost {cost}")
                scans_used = [k for k, _ in meas_set]
                if len(scans_used) != len(set(scans_used)):
                    raise ValueError(f"STH {sth_id} of track {track_id} has two measurements in one scan")
                sth_ids.append(sth_id)
                sth_track.append(track_index)
                costs.append(float(cost))
                window_sets.append(frozenset(index for index in meas_set if index[0] in self.scans))
            self.track_offsets.append(len(sth_ids))
        if len(set(self.track_ids)) != len(self.track_ids):
            raise ValueError("Track ids must be unique")

        self.sth_ids = np.array(sth_ids, dtype=int)
        self.sth_track = np.array(sth_track, dtype=int)
        self.costs = np.array(costs, dtype=float)

        # measurement j of scan k -> local row in that scan and global row across the window
        self.scan_measurements: List[List[int]] = []
        self.row_of: Dict[MeasurementIndex, int] = {}
        for k in self.scans:
            present = sorted({j for meas_set in window_sets for scan, j in meas_set if scan == k})
            self.scan_measurements.append(present)
            for j in present:
                self.row_of[(k, j)] = len(self.row_of)

        position = {k: t for t, k in enumerate(self.scans)}
        local = [{j: row for row, j in enumerate(present)} for present in self.scan_measurements]
        self.scan_rows = np.full((len(self.scans), len(sth_ids)), -1, dtype=int)
        for a, meas_set in enumerate(window_sets):
            for scan, j in meas_set:
                t = position[scan]
                self.scan_rows[t, a] = local[t][j]
        self.window_rows: List[FrozenSet[int]] = [
            frozenset(self.row_of[index] for index in meas_set) for meas_set in window_sets
        ]

    @classmethod
    def from_forest(cls, forest: HypothesisForest, scans: Sequence[int]) -> "MultiFrameProblem":
        return cls(
            [
                (track.id, [(sth.id, sth.cost, sth.meas_set) for sth in track.sths])
                for track in forest.tracks
            ],
            scans,
        )

    @property
    def window_length(self) -> int:
        return len(self.scans)

    @property
    def n_tracks(self) -> int:
        return len(self.track_ids)

    @property
    def n_sths(self) -> int:
        return len(self.sth_ids)

    @property
    def n_measurements(self) -> int:
        return len(self.row_of)

    def track_sths(self, track_index: int) -> range:
        return range(self.track_offsets[track_index], self.track_offsets[track_index + 1])

    def selection_cost(self, selection: np.ndarray) -> float:
        return float(self.costs[selection].sum())

    def is_feasible(self, selection: np.ndarray) -> bool:
        if len(selection) != self.n_tracks:
            return False
        covered = set()
        for track_index, a in enumerate(selection):
            if a not in self.track_sths(track_index):
                return False
            rows = self.window_rows[a]
            if covered & rows:
                return False
            covered |= rows
        return len(covered) == self.n_measurements

    def to_hypothesis(self, selection: np.ndarray) -> GlobalHypothesis:
        return GlobalHypothesis(
            choice={
                track_id: int(self.sth_ids[a]) for track_id, a in zip(self.track_ids, selection)
            },
            log_weight=-self.selection_cost(selection),
        )

    def selection_from(self, hypothesis: GlobalHypothesis) -> Optional[np.ndarray]:
        """Flat STH indices of a hypothesis, or None when it does not choose from every track."""
        selection = np.full(self.n_tracks, -1, dtype=int)
        for track_index, track_id in enumerate(self.track_ids):
            sth_id = hypothesis.choice.get(track_id)
            if sth_id is None:
                return None
            candidates = self.track_sths(track_index)
            matches = np.flatnonzero(self.sth_ids[candidates.start:candidates.stop] == sth_id)
            if not len(matches):
                return None
            selection[track_index] = candidates.start + matches[0]
        return selection


@dataclass
class DualState:
    # multipliers[t, a] is delta of STH a in the subproblem of window scan t
    multipliers: np.ndarray
    # choices[t, i] is the flat STH index subproblem t selects for track i
    choices: np.ndarray
    values: np.ndarray
    dual_cost: float = -np.inf
    best_cost: float = np.inf
    best_selection: Optional[np.ndarray] = None
    iteration: int = 0
    subgradient_norm: float = np.inf

    @classmethod
    def initial(cls, p: MultiFrameProblem) -> "DualState":
        return cls(
            multipliers=np.zeros((p.window_length, p.n_sths)),
            choices=np.full((p.window_length, p.n_tracks), -1, dtype=int),
            values=np.zeros(p.window_length),
        )

    @property
    def selections(self) -> np.ndarray:
        """rho: selections[t, a] is 1 when subproblem t selects STH a."""
        rho = np.zeros(self.multipliers.shape)
        for t, choice in enumerate(self.choices):
            rho[t, choice[choice >= 0]] = 1.0
        return rho


class AssignmentMatrix(NamedTuple):
    """
    Measurement-to-track costs of one scan. costs[j, i] is the cheapest penalized cost of
    track i taking measurement j minus offsets[i]; miss_costs[i] is the cost of track i
    taking no measurement, also minus offsets[i] (0, or inf when the track must take one).
    """

    scan: int
    measurements: Tuple[int, ...]
    costs: np.ndarray
    miss_costs: np.ndarray
    offsets: np.ndarray
    meas_choice: np.ndarray
    miss_choice: np.ndarray


class SubproblemSolution(NamedTuple):
    scan: int
    choice: np.ndarray
    value: float


class ConvergenceRow(NamedTuple):
    iteration: int
    dual: float
    best_primal: float
    gap: float


def _scan_position(p: MultiFrameProblem, k: int) -> int:
    try:
        return p.scans.index(k)
    except ValueError:
        raise ValueError(f"Scan {k} is outside the problem window {p.scans[0]}..{p.scans[-1]}")


def _penalized_costs(p: MultiFrameProblem, t: int, d: DualState) -> np.ndarray:
    return p.costs / p.window_length + d.multipliers[t]


def _group_argmin(keys: np.ndarray, values: np.ndarray, ids: np.ndarray, candidates: np.ndarray):
    """For every distinct key, the candidate with the smallest value, ties to the lowest id."""
    order = np.lexsort((ids[candidates], values[candidates], keys))
    keys, candidates = keys[order], candidates[order]
    first = np.ones(len(keys), dtype=bool)
    first[1:] = keys[1:] != keys[:-1]
    return keys[first], candidates[first]


def build_subproblem(p: MultiFrameProblem, k: int, d: DualState) -> AssignmentMatrix:
    """
    Build the 2-D assignment matrix of scan `k` under the current multipliers. Each STH
    contributes cost / window_length + delta; entry (j, i) is the cheapest such cost among
    track i's STHs containing measurement j of scan k, offset by the cheapest among its STHs
    with no scan-k measurement. Pairs with no STH are +inf.
    """
    t = _scan_position(p, k)
    penalized = _penalized_costs(p, t, d)
    m, n = len(p.scan_measurements[t]), p.n_tracks

    absolute = np.full((m, n), np.inf)
    meas_choice = np.full((m, n), -1, dtype=int)
    rows = p.scan_rows[t]
    detected = np.flatnonzero(rows >= 0)
    if len(detected):
        keys, winners = _group_argmin(
            rows[detected] * n + p.sth_track[detected], penalized, p.sth_ids, detected
        )
        absolute[keys // n, keys % n] = penalized[winners]
        meas_choice[keys // n, keys % n] = winners

    miss = np.full(n, np.inf)
    miss_choice = np.full(n, -1, dtype=int)
    missed = np.flatnonzero(rows < 0)
    if len(missed):
        keys, winners = _group_argmin(p.sth_track[missed], penalized, p.sth_ids, missed)
        miss[keys] = penalized[winners]
        miss_choice[keys] = winners

    offsets = miss.copy()
    no_miss = ~np.isfinite(offsets)
    if no_miss.any():
        offsets[no_miss] = absolute[:, no_miss].min(axis=0) if m else 0.0
    with np.errstate(invalid="ignore"):
        miss_costs = np.where(no_miss, np.inf, 0.0)
        costs = absolute - offsets

    return AssignmentMatrix(
        scan=k,
        measurements=tuple(p.scan_measurements[t]),
        costs=costs,
        miss_costs=miss_costs,
        offsets=offsets,
        meas_choice=meas_choice,
        miss_choice=miss_choice,
    )


def solve_subproblem(p: MultiFrameProblem, k: int, d: DualState) -> SubproblemSolution:
    """
    Solve the 2-D subproblem of scan `k`: one STH per track, every scan-k measurement
    covered exactly once, minimum penalized cost. The matrix is split into connected
    components of the measurement-track graph and each component goes to the auction as a
    square matrix of measurement rows and track-miss rows against track columns and spare
    columns.
    """
    matrix = build_subproblem(p, k, d)
    m, n = matrix.costs.shape
    choice = matrix.miss_choice.copy()

    if m:
        finite = np.isfinite(matrix.costs)
        meas_rows, track_cols = np.nonzero(finite)
        graph = csr_matrix(
            (np.ones(len(meas_rows)), (meas_rows, m + track_cols)), shape=(m + n, m + n)
        )
        _, labels = connected_components(graph, directed=False)
        for label in np.unique(labels[:m]):
            rows = np.flatnonzero(labels[:m] == label)
            cols = np.flatnonzero(labels[m:] == label)
            if not len(cols):
                raise ValueError(
                    f"Measurement {matrix.measurements[rows[0]]} of scan {k} has no assignable track"
                )
            a, b = len(rows), len(cols)
            augmented = np.full((a + b, b + a), np.inf)
            augmented[:a, :b] = matrix.costs[np.ix_(rows, cols)]
            augmented[a + np.arange(b), np.arange(b)] = matrix.miss_costs[cols]
            augmented[a:, b:] = 0.0
            assigned = auction_solve(augmented)[:a]
            choice[cols[assigned]] = matrix.meas_choice[rows, cols[assigned]]

    if (choice < 0).any():
        raise ValueError(
            f"Track {p.track_ids[int(np.flatnonzero(choice < 0)[0])]} has no feasible option in scan {k}"
        )
    value = float(_penalized_costs(p, _scan_position(p, k), d)[choice].sum())
    return SubproblemSolution(scan=k, choice=choice, value=value)


def subgradient(selections: np.ndarray) -> np.ndarray:
    """g^k(a) = rho^k(a) - mean over window scans of rho(a)."""
    return selections - selections.mean(axis=0, keepdims=True)


def step_size(best_primal: float, dual: float, g: np.ndarray) -> float:
    norm = float(np.sum(g ** 2))
    if norm == 0 or not np.isfinite(best_primal):
        return 0.0
    return (best_primal - dual) / norm


def subgradient_step(d: DualState) -> DualState:
    """
    Move the multipliers along the projected subgradient with the step
    (BESTPRIMAL - DUAL) / ||g||^2. The subgradient sums to zero over scans, so the
    multipliers keep summing to zero for every STH.
    """
    g = subgradient(d.selections)
    norm = float(np.sum(g ** 2))
    alpha = step_size(d.best_cost, d.dual_cost, g)
    return replace(d, multipliers=d.multipliers + alpha * g, subgradient_norm=norm)


def relative_gap(best_primal: float, dual: float) -> float:
    if not np.isfinite(best_primal):
        return np.inf
    difference = best_primal - dual
    if difference < ABSOLUTE_GAP_TOLERANCE:
        return 0.0
    if best_primal == 0:
        return np.inf
    return difference / abs(best_primal)


class _NodeBudgetExceeded(Exception):
    pass


@dataclass
class _NodeBudget:
    remaining: int

    def spend(self):
        if self.remaining <= 0:
            raise _NodeBudgetExceeded()
        self.remaining -= 1


def _branch_and_bound(
    p: MultiFrameProblem, fixed: Dict[int, int], budget: _NodeBudget, bound: float
) -> Optional[Tuple[np.ndarray, float]]:
    selection = np.full(p.n_tracks, -1, dtype=int)
    covered = set()
    cost = 0.0
    for track_index, a in fixed.items():
        rows = p.window_rows[a]
        if covered & rows:
            return None
        covered |= rows
        cost += p.costs[a]
        selection[track_index] = a

    free = [i for i in range(p.n_tracks) if i not in fixed]
    options = {}
    for i in free:
        candidates = [a for a in p.track_sths(i) if not p.window_rows[a] & covered]
        if not candidates:
            return None
        options[i] = sorted(candidates, key=lambda a: (p.costs[a], p.sth_ids[a]))
    free.sort(key=lambda i: (len(options[i]), i))

    remaining_min = np.zeros(len(free) + 1)
    for position in range(len(free) - 1, -1, -1):
        remaining_min[position] = remaining_min[position + 1] + p.costs[options[free[position]][0]]

    # a measurement must be covered by the time the last track able to cover it is decided
    last_chance = {}
    for position, i in enumerate(free):
        for a in options[i]:
            for row in p.window_rows[a]:
                last_chance[row] = position
    required = set(range(p.n_measurements)) - covered
    if required - set(last_chance):
        return None
    deadlines = [set() for _ in free]
    for row in required:
        deadlines[last_chance[row]].add(row)

    best = {"cost": bound, "selection": None}

    def visit(position: int, covered: frozenset, cost: float):
        if cost + remaining_min[position] >= best["cost"] - 1e-12:
            return
        if position == len(free):
            best["cost"] = cost
            best["selection"] = selection.copy()
            return
        budget.spend()
        i = free[position]
        for a in options[i]:
            rows = p.window_rows[a]
            if rows & covered:
                continue
            now_covered = covered | rows
            if deadlines[position] - now_covered:
                continue
            selection[i] = a
            visit(position + 1, now_covered, cost + p.costs[a])
        selection[i] = -1

    try:
        visit(0, frozenset(covered), cost)
    except _NodeBudgetExceeded:
        logger.warning(
            "Branch and bound node budget exhausted",
            extra=dict(free_tracks=len(free), found=best["selection"] is not None),
        )

    if best["selection"] is None:
        return None
    return best["selection"], float(best["cost"])


def _recover(
    p: MultiFrameProblem, d: DualState, budget: _NodeBudget, incumbent: float
) -> Optional[Tuple[np.ndarray, float]]:
    agreed = np.all(d.choices == d.choices[0], axis=0)
    fixed = {int(i): int(d.choices[0, i]) for i in np.flatnonzero(agreed)}
    result = _branch_and_bound(p, fixed, budget, incumbent)
    if result is None and fixed and not np.isfinite(incumbent):
        logger.warning(
            "Agreeing tracks admit no feasible completion, searching all tracks",
            extra=dict(fixed_tracks=len(fixed), tracks=p.n_tracks),
        )
        result = _branch_and_bound(p, {}, budget, incumbent)
    return result


def recover_primal(
    p: MultiFrameProblem, d: DualState, max_nodes: int = DEFAULT_MAX_BRANCH_NODES
) -> GlobalHypothesis:
    """
    Rebuild a feasible global hypothesis from the subproblem solutions. Tracks on which
    every subproblem agrees are fixed and the others are resolved by branch and bound
    over their STHs, bounded by the partial cost plus the cheapest STH of every undecided
    track.

    :param p: The multi-frame problem
    :param d: Dual state holding at least one round of subproblem choices
    :param max_nodes: Branch and bound node budget
    :return: The cheapest feasible hypothesis found
    """
    if d.iteration < 1:
        raise ValueError("recover_primal needs at least one round of subproblem solutions")
    result = _recover(p, d, _NodeBudget(max_nodes), np.inf)
    if result is None:
        raise ValueError("No feasible global hypothesis could be recovered")
    return p.to_hypothesis(result[0])


def solve(
    p: MultiFrameProblem,
    eps_gap: float = DEFAULT_EPS_GAP,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    initial: Optional[GlobalHypothesis] = None,
    max_branch_nodes: int = DEFAULT_MAX_BRANCH_NODES,
    trace: Optional[List[ConvergenceRow]] = None,
) -> Tuple[GlobalHypothesis, float]:
    """
    Solve the multi-frame assignment problem by dual decomposition: per-scan subproblems
    solved by the auction, subgradient updates of the multipliers and branch-and-bound
    primal recovery, until the relative duality gap drops to `eps_gap`.

    :param p: The multi-frame problem
    :param eps_gap: Relative duality gap at which to stop
    :param max_iter: Maximum number of subgradient iterations
    :param initial: Optional feasible hypothesis used as the starting best primal
    :param max_branch_nodes: Branch and bound node budget shared by the primal recoveries of
        one call; a recovery runs only when the subproblem choices changed since the last one
    :param trace: If given, one ConvergenceRow per iteration is appended to it
    :return: The best feasible hypothesis found (log_weight = -cost) and the final gap
    """
    if eps_gap <= 0:
        raise ValueError(f"eps_gap must be > 0, got {eps_gap}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not p.n_tracks:
        return GlobalHypothesis(choice={}, log_weight=0.0), 0.0

    start_time = monotonic()
    d = DualState.initial(p)
    if initial is not None:
        selection = p.selection_from(initial)
        if selection is not None and p.is_feasible(selection):
            d.best_cost, d.best_selection = p.selection_cost(selection), selection

    budget = _NodeBudget(max_branch_nodes)
    recovered_choices = None
    best_dual = -np.inf
    gap = np.inf
    for iteration in range(1, max_iter + 1):
        solutions = [solve_subproblem(p, k, d) for k in p.scans]
        d.iteration = iteration
        d.choices = np.array([solution.choice for solution in solutions])
        d.values = np.array([solution.value for solution in solutions])
        d.dual_cost = float(d.values.sum())

        if d.best_selection is None and not budget.remaining:
            budget = _NodeBudget(max_branch_nodes)
        if budget.remaining and (recovered_choices is None or not np.array_equal(d.choices, recovered_choices)):
            recovered_choices = d.choices.copy()
            candidate = _recover(p, d, budget, d.best_cost)
            if candidate is not None and candidate[1] < d.best_cost:
                d.best_selection, d.best_cost = candidate

        best_dual = max(best_dual, min(d.dual_cost, d.best_cost))
        gap = relative_gap(d.best_cost, best_dual)
        if trace is not None:
            trace.append(
                ConvergenceRow(iteration=iteration, dual=d.dual_cost, best_primal=d.best_cost, gap=gap)
            )
        if gap <= eps_gap:
            break
        d = subgradient_step(d)
        if d.subgradient_norm == 0:
            break
    else:
        logger.warning(
            "Dual decomposition reached max_iter above the gap threshold",
            extra=dict(max_iter=max_iter, gap=gap, eps_gap=eps_gap),
        )

    if d.best_selection is None:
        raise ValueError("Dual decomposition found no feasible global hypothesis")

    logger.debug(
        "Finished multi-frame assignment",
        extra=dict(
            duration=monotonic() - start_time,
            iterations=d.iteration,
            gap=gap,
            tracks=p.n_tracks,
            sths=p.n_sths,
            scans=p.window_length,
        ),
    )
    return p.to_hypothesis(d.best_selection), gap
