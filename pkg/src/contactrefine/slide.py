"""Confidence-gated slide prevention for fingertips in contact (Stage III)."""

from dataclasses import dataclass

import numpy as np

from .validation import check_points, check_positive, check_unit

BRANCH_FREE = 1
BRANCH_STICK = 2
BRANCH_BLEND = 3
_ZERO_SLIP = 1e-9


@dataclass(frozen=True)
class SlideParams:
    alpha: float = 0.3
    beta: float = 0.005
    gamma: float = 0.5
    n_s: int = 75
    near_threshold: float = 0.003

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        check_positive(self.beta, "beta")
        check_positive(self.near_threshold, "near_threshold")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if int(self.n_s) <= 0:
            raise ValueError("n_s must be a positive integer")


def count_nearby_points(cloud, tip, threshold=0.003):
    """Number of cloud points within ``threshold`` of the tip sphere surface."""
    check_positive(threshold, "threshold")
    if len(cloud) == 0:
        return 0
    cloud = check_points(cloud, "cloud")
    dist = np.abs(np.linalg.norm(cloud - tip.center, axis=1) - tip.radius)
    return int(np.sum(dist < threshold))


def compute_confidence(N, n_s=75):
    if N < 0 or n_s <= 0:
        raise ValueError("need N >= 0 and N_s > 0")
    return min(1.0, N / n_s)


def no_slide_position(T_r, T_prev_final, W_t, W_tm1, n):
    """Current tip with its tangential drift from the carried-along previous tip removed."""
    n = check_unit(n, "n")
    T_r = np.asarray(T_r, dtype=float)
    carried = W_t.apply(W_tm1.inverse().apply(np.asarray(T_prev_final, dtype=float)))
    delta = T_r - carried
    return T_r - (delta - n * (n @ delta))


def slide_branch(pressure, confidence, slip, threshold, beta):
    if pressure < threshold or slip < _ZERO_SLIP:
        return BRANCH_FREE
    if confidence <= beta / slip:
        return BRANCH_STICK
    return BRANCH_BLEND


def refine_tip_positions(T_r, sol, confidences, prev_final, W_t, W_tm1, cs, params, props, gravity=(0.0, 0.0, -9.81)):
    """Slide-corrected tip targets.

    Returns ``(T_s, T_ps, branches)``. Invalid tips pass ``T_r`` through.
    """
    T_r = check_points(T_r, "T_r")
    prev_final = check_points(prev_final, "prev_final", n=len(T_r))
    threshold = params.alpha * props.mass * float(np.linalg.norm(gravity))
    T_s = T_r.copy()
    T_ps = T_r.copy()
    branches = np.full(len(T_r), BRANCH_FREE, dtype=int)
    for i in range(len(T_r)):
        if not cs.valid[i]:
            continue
        T_ps[i] = no_slide_position(T_r[i], prev_final[i], W_t, W_tm1, cs.n[i])
        slip = float(np.linalg.norm(T_r[i] - T_ps[i]))
        b = slide_branch(float(sol.pressure[i]), float(confidences[i]), slip, threshold, params.beta)
        branches[i] = b
        if b == BRANCH_STICK:
            T_s[i] = T_ps[i]
        elif b == BRANCH_BLEND:
            T_s[i] = params.gamma * T_r[i] + (1.0 - params.gamma) * T_ps[i]
    return T_s, T_ps, branches
