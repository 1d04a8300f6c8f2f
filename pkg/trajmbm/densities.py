from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .gaussian_models import GaussianDensity, symmetrize


class Trajectory(NamedTuple):
    birth: int
    last: int
    states: np.ndarray

    def state_at(self, time: int) -> np.ndarray:
        return self.states[time - self.birth]

    @property
    def times(self) -> range:
        return range(self.birth, self.last + 1)


def validate_trajectory(trajectory: Trajectory):
    if trajectory.birth > trajectory.last:
        raise ValueError(
            f"Trajectory birth {trajectory.birth} is after its last time {trajectory.last}"
        )
    if len(trajectory.states) != trajectory.last - trajectory.birth + 1:
        raise ValueError(
            f"Trajectory from {trajectory.birth} to {trajectory.last} has "
            f"{len(trajectory.states)} states"
        )


def retain(moments: Sequence[GaussianDensity], window: Optional[int]) -> Tuple[GaussianDensity, ...]:
    """Keep the latest `window` moments. A window of None keeps the whole history."""
    moments = tuple(moments)
    if window is None or len(moments) <= window:
        return moments
    return moments[len(moments) - window:]


@dataclass(frozen=True)
class TrajectoryBernoulli:
    """
    Bernoulli over a single trajectory: existence probability `r` and Gaussian filtered
    moments of the latest `window` steps up to `last`. A Bernoulli with r=0 may carry no
    moments at all.
    """

    r: float
    birth: int
    last: int
    moments: Tuple[GaussianDensity, ...] = ()
    window: Optional[int] = None

    @property
    def density(self) -> Optional[GaussianDensity]:
        return self.moments[-1] if self.moments else None

    @property
    def length(self) -> int:
        return self.last - self.birth + 1

    @property
    def has_full_history(self) -> bool:
        return len(self.moments) == self.length

    def extended(self, density: GaussianDensity, r: float) -> "TrajectoryBernoulli":
        return replace(
            self,
            r=r,
            last=self.last + 1,
            moments=retain(self.moments + (density,), self.window),
        )

    def with_current(self, density: GaussianDensity, r: float) -> "TrajectoryBernoulli":
        return replace(self, r=r, moments=self.moments[:-1] + (density,))


def non_existent_bernoulli(time: int, window: Optional[int]) -> TrajectoryBernoulli:
    return TrajectoryBernoulli(r=0.0, birth=time, last=time, moments=(), window=window)


class PoissonComponent(NamedTuple):
    weight: float
    density: GaussianDensity
    birth: int
    # filtered densities before `density`, newest last, trimmed to the filter window
    history: Tuple[GaussianDensity, ...] = ()

    @property
    def moments(self) -> Tuple[GaussianDensity, ...]:
        return self.history + (self.density,)


class PoissonIntensity(NamedTuple):
    components: Tuple[PoissonComponent, ...] = ()

    def __len__(self):
        return len(self.components)

    @property
    def total_weight(self) -> float:
        return float(sum(component.weight for component in self.components))


def single_component_intensity(
    weight: float, mean: np.ndarray, cov: np.ndarray, birth: int = 0
) -> PoissonIntensity:
    if weight < 0:
        raise ValueError(f"Poisson component weight must be >= 0, got {weight}")
    density = GaussianDensity(mean=np.asarray(mean, dtype=float), cov=np.asarray(cov, dtype=float))
    return PoissonIntensity(components=(PoissonComponent(weight=weight, density=density, birth=birth),))


def moment_match(weights: Sequence[float], densities: Sequence[GaussianDensity]) -> GaussianDensity:
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        raise ValueError("Cannot moment match a mixture with zero total weight")
    weights = weights / weights.sum()
    means = np.array([density.mean for density in densities])
    mean = weights @ means
    cov = np.zeros((len(mean), len(mean)))
    for weight, density in zip(weights, densities):
        spread = density.mean - mean
        cov += weight * (density.cov + np.outer(spread, spread))
    return GaussianDensity(mean=mean, cov=symmetrize(cov))
