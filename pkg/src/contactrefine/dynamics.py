"""Object velocities, accelerations and driving torque from three trailing rigid poses."""

from dataclasses import dataclass

import numpy as np

from .rotations import log_so3
from .validation import check_positive

DEFAULT_DT = 1.0 / 30.0


@dataclass(frozen=True)
class DynamicsState:
    v: np.ndarray
    omega: np.ndarray
    v_dot: np.ndarray
    omega_dot: np.ndarray
    tau: np.ndarray
    com_live: np.ndarray
    inertia_world: np.ndarray

    @classmethod
    def at_rest(cls, props, pose):
        z = np.zeros(3)
        R = pose.rotation
        return cls(z, z, z, z, z, pose.apply(props.center_of_mass), R @ props.inertia @ R.T)


def rotation_log(R):
    """Axis-angle vector of ``R`` with angle in ``[0, pi]``."""
    return log_so3(R)


def driving_torque(inertia_world, omega, omega_dot):
    """Euler's equation: ``I @ omega_dot + omega x (I @ omega)``."""
    I = np.asarray(inertia_world, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return I @ np.asarray(omega_dot, dtype=float) + np.cross(omega, I @ omega)


def finite_difference_dynamics(W_tm2, W_tm1, W_t, dt, props, dt_prev=None):
    """Backward finite differences over the poses at ``t-2, t-1, t``.

    ``dt`` is the step from ``t-1`` to ``t``; ``dt_prev`` (defaults to ``dt``)
    the step from ``t-2`` to ``t-1``. Angular velocity is expressed in the
    world frame and the inertia tensor is rotated into it before the torque.
    """
    dt = check_positive(dt, "dt")
    dt_prev = dt if dt_prev is None else check_positive(dt_prev, "dt_prev")
    c = props.center_of_mass
    c2, c1, c0 = W_tm2.apply(c), W_tm1.apply(c), W_t.apply(c)
    v = (c0 - c1) / dt
    v_prev = (c1 - c2) / dt_prev
    v_dot = (v - v_prev) / dt

    omega = rotation_log(W_t.rotation @ W_tm1.rotation.T) / dt
    omega_prev = rotation_log(W_tm1.rotation @ W_tm2.rotation.T) / dt_prev
    omega_dot = (omega - omega_prev) / dt

    R = W_t.rotation
    inertia_world = R @ props.inertia @ R.T
    inertia_world = 0.5 * (inertia_world + inertia_world.T)
    tau = driving_torque(inertia_world, omega, omega_dot)
    return DynamicsState(v, omega, v_dot, omega_dot, tau, c0, inertia_world)
