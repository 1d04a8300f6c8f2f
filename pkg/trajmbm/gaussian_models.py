from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import chi2

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_GATE_QUANTILE = 0.999


class GaussianDensity(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray


class MotionModel(NamedTuple):
    F: np.ndarray
    Q: np.ndarray
    ps: float
    T: float = 1.0


class MeasurementModel(NamedTuple):
    H: np.ndarray
    R: np.ndarray
    pd: float
    clutter_rate: float
    clutter_density: float
    gate_threshold: float

    @property
    def clutter_intensity(self) -> float:
        return self.clutter_rate * self.clutter_density


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2.0


def constant_velocity_model(
    T: float = 1.0, process_noise: float = 0.002, ps: float = 0.99
) -> MotionModel:
    """
    Constant velocity model for the state [px, vx, py, vy].

    :param T: Sampling period
    :param process_noise: Acceleration noise intensity scaling Q
    :param ps: Survival probability
    """
    F = np.kron(np.eye(2), np.array([[1.0, T], [0.0, 1.0]]))
    Q = process_noise * np.kron(
        np.eye(2), np.array([[T ** 3 / 3.0, T ** 2 / 2.0], [T ** 2 / 2.0, T]])
    )
    model = MotionModel(F=F, Q=Q, ps=ps, T=T)
    validate_motion_model(model)
    return model


def position_measurement_model(
    pd: float,
    clutter_rate: float,
    region_area: float,
    measurement_noise: float = 1.0,
    gate_quantile: float = DEFAULT_GATE_QUANTILE,
) -> MeasurementModel:
    """
    Position-only measurements of the constant velocity state, with uniform clutter over a
    region of the given area and a chi-square gate at `gate_quantile`.
    """
    if region_area <= 0:
        raise ValueError(f"region_area must be > 0, got {region_area}")
    if not 0 < gate_quantile < 1:
        raise ValueError(f"gate_quantile must be in (0, 1), got {gate_quantile}")

    H = np.kron(np.eye(2), np.array([[1.0, 0.0]]))
    model = MeasurementModel(
        H=H,
        R=measurement_noise * np.eye(2),
        pd=pd,
        clutter_rate=clutter_rate,
        clutter_density=1.0 / region_area,
        gate_threshold=float(chi2.ppf(gate_quantile, df=H.shape[0])),
    )
    validate_measurement_model(model)
    return model


def validate_motion_model(model: MotionModel):
    F, Q = np.asarray(model.F), np.asarray(model.Q)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError(f"F must be square, got shape {F.shape}")
    if Q.shape != F.shape:
        raise ValueError(f"Q shape {Q.shape} does not match F shape {F.shape}")
    if not np.allclose(Q, Q.T):
        raise ValueError("Q must be symmetric")
    if np.linalg.eigvalsh(Q).min() < -1e-12:
        raise ValueError("Q must be positive semidefinite")
    if not 0 <= model.ps <= 1:
        raise ValueError(f"ps must be in [0, 1], got {model.ps}")


def validate_measurement_model(model: MeasurementModel):
    H, R = np.asarray(model.H), np.asarray(model.R)
    if R.shape != (H.shape[0], H.shape[0]):
        raise ValueError(f"R shape {R.shape} does not match H rows {H.shape[0]}")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
        raise ValueError("R must be symmetric positive definite")
    if not 0 <= model.pd <= 1:
        raise ValueError(f"pd must be in [0, 1], got {model.pd}")
    if model.clutter_rate < 0:
        raise ValueError(f"clutter_rate must be >= 0, got {model.clutter_rate}")
    if model.clutter_density < 0:
        raise ValueError(f"clutter_density must be >= 0, got {model.clutter_density}")


def _check_state(d: GaussianDensity, dim: int):
    if d.mean.shape != (dim,) or d.cov.shape != (dim, dim):
        raise ValueError(
            f"Density of shape {d.mean.shape}/{d.cov.shape} does not match dimension {dim}"
        )


def kf_predict(d: GaussianDensity, m: MotionModel) -> GaussianDensity:
    _check_state(d, m.F.shape[0])
    return GaussianDensity(
        mean=m.F @ d.mean,
        cov=symmetrize(m.F @ d.cov @ m.F.T + m.Q),
    )


def _innovation(d: GaussianDensity, m: MeasurementModel):
    _check_state(d, m.H.shape[1])
    S = symmetrize(m.H @ d.cov @ m.H.T + m.R)
    try:
        factor = cho_factor(S, lower=True)
    except LinAlgError:
        raise ValueError("Innovation covariance is not positive definite")
    return S, factor


def _check_measurement(z: np.ndarray, m: MeasurementModel) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != m.H.shape[0]:
        raise ValueError(
            f"Measurement dimension {z.shape[-1]} does not match H rows {m.H.shape[0]}"
        )
    return z


def kf_update(
    d: GaussianDensity, z: np.ndarray, m: MeasurementModel
) -> Tuple[GaussianDensity, float]:
    """
    Kalman update in Joseph form.

    :return: posterior density and log N(z; H mean, H cov H^T + R)
    """
    z = _check_measurement(z, m)
    S, factor = _innovation(d, m)
    innovation = z - m.H @ d.mean
    # K = P H^T S^-1, obtained from the Cholesky factor of S
    gain = cho_solve(factor, m.H @ d.cov).T
    identity = np.eye(d.cov.shape[0])
    joseph = identity - gain @ m.H
    cov = joseph @ d.cov @ joseph.T + gain @ m.R @ gain.T

    maha = float(innovation @ cho_solve(factor, innovation))
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    log_likelihood = -0.5 * (maha + log_det + len(z) * LOG_2PI)

    return GaussianDensity(mean=d.mean + gain @ innovation, cov=symmetrize(cov)), log_likelihood


def rts_smooth(
    filtered: Sequence[GaussianDensity], m: MotionModel
) -> List[GaussianDensity]:
    """
    Rauch-Tung-Striebel backward pass over contiguous filtered densities. The last
    element is returned unchanged.
    """
    if not filtered:
        raise ValueError("rts_smooth needs at least one filtered density")

    smoothed = list(filtered)
    for k in range(len(filtered) - 2, -1, -1):
        current = filtered[k]
        predicted_cov = symmetrize(m.F @ current.cov @ m.F.T + m.Q)
        try:
            # G = P F^T (F P F^T + Q)^-1
            smoother_gain = np.linalg.solve(predicted_cov, m.F @ current.cov).T
        except np.linalg.LinAlgError:
            raise ValueError(f"Predicted covariance at step {k} is singular")

        following = smoothed[k + 1]
        mean = current.mean + smoother_gain @ (following.mean - m.F @ current.mean)
        cov = current.cov + smoother_gain @ (following.cov - predicted_cov) @ smoother_gain.T
        smoothed[k] = GaussianDensity(mean=mean, cov=symmetrize(cov))

    return smoothed


def mahalanobis_many(d: GaussianDensity, zs: np.ndarray, m: MeasurementModel) -> np.ndarray:
    """Squared Mahalanobis distances of the innovations of every row of `zs`."""
    zs = _check_measurement(np.atleast_2d(zs), m)
    _, factor = _innovation(d, m)
    innovations = zs - m.H @ d.mean
    return np.einsum("ij,ji->i", innovations, cho_solve(factor, innovations.T))


def gate_many(d: GaussianDensity, zs: np.ndarray, m: MeasurementModel) -> np.ndarray:
    if len(zs) == 0:
        return np.zeros(0, dtype=bool)
    return mahalanobis_many(d, zs, m) <= m.gate_threshold


def gate(d: GaussianDensity, z: np.ndarray, m: MeasurementModel) -> bool:
    return bool(gate_many(d, np.asarray(z, dtype=float)[np.newaxis, :], m)[0])
