"""Gaussian pose beliefs and the EKF machinery used by planning and simulation.

State is the planar pose ``[x, y, theta]``. Controls follow the odometry
decomposition: turn by ``rot1``, drive ``trans`` meters, turn by ``rot2``.
Observations are range and bearing to known point landmarks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from beltmp.world import Pose, wrap_angle

PSD_TOL = 1e-9


class BeliefError(ValueError):
    pass


class DegenerateObservationError(BeliefError):
    pass


class SingularInnovationError(BeliefError):
    pass


@dataclass(frozen=True)
class Control:
    trans: float
    rot1: float = 0.0
    rot2: float = 0.0

    def inverse(self) -> "Control":
        """Control that undoes this one exactly (drive back the way we came)."""
        return Control(self.trans, math.pi - self.rot2, -self.rot1 - math.pi)


@dataclass(frozen=True)
class Observation:
    landmark_id: int
    range: float
    bearing: float


@dataclass(frozen=True)
class NoiseModel:
    """Process and measurement noise.

    ``sigma_trans`` is the positional standard deviation per meter of
    commanded translation, ``sigma_rot`` the heading standard deviation per
    control step (radians). With ``proportional`` off, the process covariance
    is the constant one obtained for a nominal ``step``-meter control.
    """

    sigma_trans: float = 0.05
    sigma_rot: float = math.radians(1.0)
    step: float = 0.5
    proportional: bool = False
    range_var: float = 0.1
    bearing_var: float = math.radians(2.0) ** 2
    sensor_range: float = 5.0

    def process_cov(self, u: Optional[Control] = None) -> np.ndarray:
        dist = self.step if (u is None or not self.proportional) else abs(u.trans)
        pos_var = (self.sigma_trans * dist) ** 2
        return np.diag([pos_var, pos_var, self.sigma_rot**2])

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.range_var, self.bearing_var])

    @property
    def R(self) -> np.ndarray:
        return self.process_cov()


class GaussianBelief:
    """b ~ N(mean, cov) over ``[x, y, theta]``."""

    __slots__ = ("mean", "cov")

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float).reshape(3)
        self.cov = np.asarray(cov, dtype=float).reshape(3, 3)

    @classmethod
    def at(cls, pose: Pose, cov) -> "GaussianBelief":
        return cls(pose.as_array(), cov)

    @property
    def pose(self) -> Pose:
        return Pose(*self.mean)

    @property
    def trace(self) -> float:
        return float(self.cov[0, 0] + self.cov[1, 1] + self.cov[2, 2])

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy())

    def __eq__(self, other):
        if not isinstance(other, GaussianBelief):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    def __repr__(self):
        return f"GaussianBelief(mean={self.mean.tolist()}, trace={self.trace:.6g})"


def is_symmetric_psd(cov: np.ndarray, tol: float = PSD_TOL) -> bool:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=0.0):
        return False
    return bool(np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T))) >= -tol)


def _as_array(pose) -> np.ndarray:
    if isinstance(pose, Pose):
        return pose.as_array()
    return np.asarray(pose, dtype=float).reshape(3)


def motion_mean(pose, u: Control) -> Pose:
    """Deterministic odometry composition: turn, drive, turn."""
    x, y, th = _as_array(pose)
    heading = th + u.rot1
    return Pose(
        x + u.trans * math.cos(heading),
        y + u.trans * math.sin(heading),
        wrap_angle(heading + u.rot2),
    )


def motion_jacobian(pose, u: Control) -> np.ndarray:
    """Jacobian of :func:`motion_mean` with respect to the pose."""
    th = _as_array(pose)[2]
    heading = th + u.rot1
    return np.array(
        [
            [1.0, 0.0, -u.trans * math.sin(heading)],
            [0.0, 1.0, u.trans * math.cos(heading)],
            [0.0, 0.0, 1.0],
        ]
    )


def ekf_predict(b: GaussianBelief, u: Control, noise: NoiseModel) -> GaussianBelief:
    F = motion_jacobian(b.mean, u)
    mean = motion_mean(b.mean, u).as_array()
    cov = F @ b.cov @ F.T + noise.process_cov(u)
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def observation_mean(pose, landmark) -> np.ndarray:
    """Nominal ``[range, bearing]`` of a landmark ``(x, y)`` seen from ``pose``."""
    x, y, th = _as_array(pose)
    lx, ly = float(landmark[0]), float(landmark[1])
    dx, dy = lx - x, ly - y
    r = math.hypot(dx, dy)
    if r < 1e-9:
        raise DegenerateObservationError("landmark coincides with the robot position")
    return np.array([r, wrap_angle(math.atan2(dy, dx) - th)])


def observation_jacobian(pose, landmark) -> np.ndarray:
    x, y, _ = _as_array(pose)
    dx, dy = float(landmark[0]) - x, float(landmark[1]) - y
    q = dx * dx + dy * dy
    if q < 1e-18:
        raise DegenerateObservationError("landmark coincides with the robot position")
    r = math.sqrt(q)
    return np.array([[-dx / r, -dy / r, 0.0], [dy / q, -dx / q, -1.0]])


def kalman_update(mean: np.ndarray, cov: np.ndarray, innovation: np.ndarray, H: np.ndarray, Q: np.ndarray):
    """Linearized Kalman correction; returns the corrected ``(mean, cov)``."""
    S = H @ cov @ H.T + Q
    if np.linalg.cond(S) > 1e12:
        raise SingularInnovationError("innovation covariance is numerically singular")
    K = np.linalg.solve(S, H @ cov).T  # cov H^T S^-1, using symmetry of cov and S
    mean = mean + K @ innovation
    cov = (np.eye(len(mean)) - K @ H) @ cov
    return mean, 0.5 * (cov + cov.T)


def ekf_update(b: GaussianBelief, z: Observation, landmark, noise: NoiseModel) -> GaussianBelief:
    z_hat = observation_mean(b.mean, landmark)
    H = observation_jacobian(b.mean, landmark)
    innovation = np.array([z.range - z_hat[0], wrap_angle(z.bearing - z_hat[1])])
    mean, cov = kalman_update(b.mean, b.cov, innovation, H, noise.Q)
    mean[2] = wrap_angle(mean[2])
    return GaussianBelief(mean, cov)


def simulate_observation(
    pose,
    landmark,
    noise: NoiseModel,
    rng: Union[np.random.Generator, int, None] = None,
    landmark_id: int = -1,
) -> Optional[Observation]:
    """Noisy range-bearing reading, or None if the landmark is out of range."""
    z_hat = observation_mean(pose, landmark)
    if z_hat[0] > noise.sensor_range:
        return None
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    draw = rng.standard_normal(2)
    return perturb_observation(z_hat, draw, noise, landmark_id)


def perturb_observation(z_hat: np.ndarray, draw: np.ndarray, noise: NoiseModel, landmark_id: int = -1) -> Observation:
    """Corrupt a nominal reading with a given standard-normal ``draw``."""
    # Q is diagonal, so its Cholesky factor is elementwise sqrt.
    r = z_hat[0] + math.sqrt(noise.range_var) * draw[0]
    bearing = wrap_angle(z_hat[1] + math.sqrt(noise.bearing_var) * draw[1])
    return Observation(landmark_id, float(r), bearing)


def landmarks_in_range(landmark_xy: np.ndarray, x: float, y: float, sensor_range: float) -> np.ndarray:
    """Indices (in id order of ``landmark_xy`` rows) of landmarks within range."""
    if len(landmark_xy) == 0:
        return np.zeros(0, dtype=int)
    d = np.hypot(landmark_xy[:, 0] - x, landmark_xy[:, 1] - y)
    return np.flatnonzero(d <= sensor_range)


def nees(true_pose, b: GaussianBelief) -> float:
    err = _as_array(true_pose) - b.mean
    err[2] = wrap_angle(err[2])
    return float(err @ np.linalg.solve(b.cov, err))
