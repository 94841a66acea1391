"""Initial per-fingertip contact status from kinematic tips and the object SDF."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .object_model import sample_sdf
from .validation import check_points, check_positive, check_vector3

N_TIPS = 5
TIP_NAMES = ("thumb", "index", "middle", "ring", "little")
DEFAULT_SAMPLE_COUNT = 32
DEFAULT_PROJECTION_ITERATIONS = 3
DEFAULT_CANDIDATE_REFINEMENTS = 1
_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


class DegenerateGradientError(ValueError):
    pass


@dataclass(frozen=True)
class TipState:
    index: int
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not 0 <= int(self.index) < N_TIPS:
            raise ValueError(f"tip index must be in 0..4, got {self.index}")
        object.__setattr__(self, "center", check_vector3(self.center, "center"))
        object.__setattr__(self, "radius", check_positive(self.radius, "radius"))


@dataclass
class ContactStatus:
    """Per-tip arrays (live frame): projection point, outward normal, distance.

    ``sample`` is the tip-surface point the distance was measured from and
    ``d_refined`` is overwritten by the force solver.
    """

    p: np.ndarray
    n: np.ndarray
    d: np.ndarray
    d_refined: np.ndarray
    valid: np.ndarray
    sample: np.ndarray
    centers: np.ndarray

    @classmethod
    def empty(cls, centers):
        centers = np.asarray(centers, dtype=float)
        k = len(centers)
        return cls(
            p=centers.copy(),
            n=np.tile([0.0, 0.0, 1.0], (k, 1)),
            d=np.zeros(k),
            d_refined=np.zeros(k),
            valid=np.zeros(k, dtype=bool),
            sample=centers.copy(),
            centers=centers.copy(),
        )

    def refined_tip_centers(self, d_refined=None):
        """Tip centers after moving each tip so its contact sample sits at ``p + d~ n``.

        Invalid tips keep their kinematic centers.
        """
        d_ref = self.d_refined if d_refined is None else np.asarray(d_refined, dtype=float)
        target = self.p + d_ref[:, None] * self.n
        out = self.centers + (target - self.sample)
        out[~self.valid] = self.centers[~self.valid]
        return out

    def contact_count(self, epsilon, refined=True):
        d = self.d_refined if refined else self.d
        return int(np.sum(self.valid & (d < epsilon)))


def fibonacci_sphere(count):
    """Deterministic near-uniform unit directions; the first is +z, the last -z."""
    return _fibonacci(int(count)).copy()


@lru_cache(maxsize=8)
def _fibonacci(count):
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return np.array([[0.0, 0.0, 1.0]])
    k = np.arange(count)
    z = 1.0 - 2.0 * k / (count - 1)
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = k * _GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sample_tip_points(tip, count=DEFAULT_SAMPLE_COUNT):
    dirs = fibonacci_sphere(count)
    return tip.center + tip.radius * dirs


def project_to_surface(x, grid, iterations=DEFAULT_PROJECTION_ITERATIONS):
    """Project canonical point(s) onto the zero level set along the SDF gradient.

    Returns ``(p, n, d, ok)`` with ``d`` the signed distance at ``x`` clamped
    to ``>= 0``. For a single point a vanishing gradient raises
    :class:`DegenerateGradientError`; batches report it through ``ok``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    d0, _, _ = sample_sdf(grid, pts)
    p = pts.copy()
    ok = np.ones(len(pts), dtype=bool)
    for _ in range(iterations):
        d, g, _ = sample_sdf(grid, p)
        gn = np.linalg.norm(g, axis=1)
        bad = gn < 1e-6
        ok &= ~bad
        unit = g / np.where(bad, 1.0, gn)[:, None]
        p = p - np.where(bad, 0.0, d)[:, None] * unit
    _, g, _ = sample_sdf(grid, p)
    gn = np.linalg.norm(g, axis=1)
    ok &= gn >= 1e-6
    n = np.where(ok[:, None], g / np.where(gn < 1e-6, 1.0, gn)[:, None], np.array([0.0, 0.0, 1.0]))
    d_rep = np.maximum(d0, 0.0)
    if single:
        if not ok[0]:
            raise DegenerateGradientError("degenerate gradient")
        return p[0], n[0], float(d_rep[0]), True
    return p, n, d_rep, ok


def extract_contact_status(
    tips, object_pose, grid, count=DEFAULT_SAMPLE_COUNT, iterations=DEFAULT_PROJECTION_ITERATIONS
):
    """Contact status for each tip (``TipState`` list or ``(centers, radii)`` pair)."""
    if isinstance(tips, tuple) and len(tips) == 2:
        centers = check_points(tips[0], "tip centers")
        radii = np.broadcast_to(np.asarray(tips[1], dtype=float), (len(centers),))
    else:
        centers = np.array([t.center for t in tips], dtype=float).reshape(-1, 3)
        radii = np.array([t.radius for t in tips], dtype=float)
    k = len(centers)
    dirs = _fibonacci(int(count))
    # the sample pattern is laid out in object coordinates so that moving the
    # tips and the object together leaves the selected sample unchanged
    centers_can = (centers - object_pose.translation) @ object_pose.rotation
    samples_can = (centers_can[:, None, :] + radii[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    d_all, _, clamped = sample_sdf(grid, samples_can)
    d_all = d_all.reshape(k, count)
    clamped = clamped.reshape(k, count)
    d_masked = np.where(clamped, np.inf, d_all)
    # argmin returns the first index on ties
    best = np.argmin(d_masked, axis=1)
    rows = np.arange(k)
    min_d = d_masked[rows, best]
    sel_can = samples_can.reshape(k, count, 3)[rows, best]

    p_can, n_can, d_rep, ok = project_to_surface(sel_can, grid, iterations)
    # the sample grid is coarse (about 5 mm apart on an 8 mm tip); the closest
    # point of the tip sphere faces against the surface normal, so re-aim there
    # and keep the new candidate only where it is at least as close
    for _ in range(DEFAULT_CANDIDATE_REFINEMENTS):
        cand = centers_can - radii[:, None] * n_can
        d_c, _, clamped_c = sample_sdf(grid, cand)
        p_c, n_c, d_rep_c, ok_c = project_to_surface(cand, grid, iterations)
        take = ok & ok_c & ~clamped_c & np.isfinite(min_d) & (d_c <= min_d)
        if not take.any():
            break
        sel_can[take], p_can[take], n_can[take] = cand[take], p_c[take], n_c[take]
        d_rep[take], min_d[take] = d_rep_c[take], d_c[take]
    far = ~np.isfinite(min_d) | (min_d >= grid.truncation * (1.0 - 1e-9))
    valid = ok & ~far

    cs = ContactStatus.empty(centers)
    cs.p = object_pose.apply(p_can)
    cs.n = object_pose.apply_direction(n_can)
    cs.d = np.where(valid, d_rep, np.where(np.isfinite(min_d), np.maximum(min_d, 0.0), grid.truncation))
    cs.d_refined = cs.d.copy()
    cs.valid = valid
    cs.sample = object_pose.apply(sel_can)
    cs.p[~valid] = centers[~valid]
    cs.sample[~valid] = centers[~valid]
    cs.n[~valid] = np.array([0.0, 0.0, 1.0])
    return cs
