"""Simplified articulated hand: forward kinematics and damped least-squares IK.

Pose layout (28 entries): ``[0:3]`` wrist translation (m), ``[3:6]`` wrist
rotation vector (rad), then four angles per finger in thumb..little order
(abduction, MCP flexion, PIP flexion, DIP flexion) at ``6 + 4 * finger``.
Entries 26 and 27 are unused and stay at zero.

Finger frames: bones extend along local +y, flexion curls toward local -z
(the palm side), abduction rotates about local z.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .lm import projected_lm
from .rotations import cross, exp_so3, left_jacobian, log_so3, orthonormalize
from .validation import check_points, check_positive

N_FINGERS = 5
POSE_SIZE = 28
ACTIVE_SIZE = 26
FINGER_NAMES = ("thumb", "index", "middle", "ring", "little")
_DEG = np.pi / 180.0

DEFAULT_LIMITS = np.array(
    [
        [-25.0 * _DEG, 25.0 * _DEG],  # abduction
        [-15.0 * _DEG, 100.0 * _DEG],  # MCP flexion
        [0.0, 110.0 * _DEG],  # PIP
        [0.0, 80.0 * _DEG],  # DIP
    ]
)
INDEX_BONES = np.array([0.045, 0.028, 0.018])


@dataclass(frozen=True)
class Finger:
    name: str
    base: np.ndarray
    base_rotation: np.ndarray
    bones: np.ndarray
    limits: np.ndarray
    tip_radius: float = 0.008

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float).reshape(3))
        R = np.asarray(self.base_rotation, dtype=float)
        if R.shape == (3,):
            R = exp_so3(R)
        object.__setattr__(self, "base_rotation", orthonormalize(R))
        bones = np.asarray(self.bones, dtype=float).reshape(3)
        if np.any(bones <= 0):
            raise ValueError(f"{self.name}: bone lengths must be > 0")
        object.__setattr__(self, "bones", bones)
        limits = np.asarray(self.limits, dtype=float).reshape(4, 2)
        if np.any(limits[:, 0] >= limits[:, 1]):
            raise ValueError(f"{self.name}: joint limits need lower < upper")
        object.__setattr__(self, "limits", limits)
        check_positive(self.tip_radius, "tip_radius")


@dataclass(frozen=True)
class HandSkeleton:
    fingers: tuple

    def __post_init__(self):
        if len(self.fingers) != N_FINGERS:
            raise ValueError("a hand skeleton needs exactly five fingers")
        object.__setattr__(self, "fingers", tuple(self.fingers))

    @classmethod
    def default(cls, tip_radius=0.008):
        # thumb sits on the radial side, angled forward and rotated to oppose the fingers
        specs = [
            ("thumb", (0.030, 0.020, -0.015), (0.0, 0.0, -0.9), 0.85),
            ("index", (0.025, 0.085, 0.0), (0.0, 0.0, 0.0), 1.0),
            ("middle", (0.003, 0.090, 0.0), (0.0, 0.0, 0.0), 1.08),
            ("ring", (-0.018, 0.085, 0.0), (0.0, 0.0, 0.0), 1.0),
            ("little", (-0.037, 0.075, 0.0), (0.0, 0.0, 0.0), 0.8),
        ]
        fingers = []
        for name, base, rot, scale in specs:
            R = exp_so3(rot)
            if name == "thumb":
                R = R @ exp_so3((0.0, 0.6, 0.0))
            fingers.append(Finger(name, base, R, INDEX_BONES * scale, DEFAULT_LIMITS.copy(), tip_radius))
        return cls(tuple(fingers))

    @cached_property
    def bases(self):
        return np.stack([f.base for f in self.fingers])

    @cached_property
    def base_rotations(self):
        return np.stack([f.base_rotation for f in self.fingers])

    @cached_property
    def bone_lengths(self):
        return np.stack([f.bones for f in self.fingers])

    @property
    def tip_radii(self):
        return np.array([f.tip_radius for f in self.fingers])

    @property
    def lower(self):
        lo = np.full(POSE_SIZE, -np.inf)
        for i, f in enumerate(self.fingers):
            lo[6 + 4 * i : 10 + 4 * i] = f.limits[:, 0]
        lo[ACTIVE_SIZE:] = 0.0
        return lo

    @property
    def upper(self):
        hi = np.full(POSE_SIZE, np.inf)
        for i, f in enumerate(self.fingers):
            hi[6 + 4 * i : 10 + 4 * i] = f.limits[:, 1]
        hi[ACTIVE_SIZE:] = 0.0
        return hi

    def rest_pose(self):
        theta = np.zeros(POSE_SIZE)
        for i in range(N_FINGERS):
            theta[6 + 4 * i : 10 + 4 * i] = (0.0, 0.3, 0.4, 0.2)
        return HandPose(np.clip(theta, self.lower, self.upper))


@dataclass(frozen=True)
class HandPose:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(POSE_SIZE))

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.shape != (POSE_SIZE,):
            raise ValueError(f"hand pose must have {POSE_SIZE} entries, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("hand pose contains non-finite values")
        object.__setattr__(self, "theta", theta)

    @property
    def wrist_translation(self):
        return self.theta[0:3]

    @property
    def wrist_rotation(self):
        return exp_so3(self.theta[3:6])

    def finger_angles(self, i):
        return self.theta[6 + 4 * i : 10 + 4 * i]

    def with_wrist(self, rotation, translation):
        theta = self.theta.copy()
        theta[0:3] = translation
        theta[3:6] = log_so3(rotation)
        return HandPose(theta)


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def clamp_to_limits(skeleton, pose):
    """Return ``(clamped_pose, was_clamped)``."""
    theta = np.clip(pose.theta, skeleton.lower, skeleton.upper)
    return HandPose(theta), bool(np.any(theta != pose.theta))


def _chain(skeleton, theta):
    """Tip centers plus per-finger joint positions and flexion/abduction axes (world)."""
    Rw = exp_so3(theta[3:6])
    tw = theta[0:3]
    base_rot = skeleton.base_rotations
    R0 = Rw @ base_rot
    pos = skeleton.bases @ Rw.T + tw
    ang = theta[6:ACTIVE_SIZE].reshape(N_FINGERS, 4)
    ca, sa = np.cos(ang[:, 0:1]), np.sin(ang[:, 0:1])
    x0, y0, z0 = R0[:, :, 0], R0[:, :, 1], R0[:, :, 2]
    x1 = ca * x0 + sa * y0
    y1 = -sa * x0 + ca * y0
    # flexions share one axis, so each bone direction depends on the cumulative angle
    cum = np.cumsum(ang[:, 1:4], axis=1)
    dirs = np.cos(cum)[:, :, None] * y1[:, None, :] - np.sin(cum)[:, :, None] * z0[:, None, :]
    steps = dirs * skeleton.bone_lengths[:, :, None]
    joints = np.empty((N_FINGERS, 4, 3))
    joints[:, 0] = pos
    joints[:, 1] = pos
    joints[:, 2] = pos + steps[:, 0]
    joints[:, 3] = joints[:, 2] + steps[:, 1]
    tips = joints[:, 3] + steps[:, 2]
    axes = np.empty((N_FINGERS, 4, 3))
    axes[:, 0] = z0
    axes[:, 1:] = -x1[:, None, :]
    return tips, joints, axes


def forward_kinematics(skeleton, pose):
    """Five tip centers (world, meters). Out-of-limit angles are clamped first."""
    pose, _ = clamp_to_limits(skeleton, pose)
    tips, _, _ = _chain(skeleton, pose.theta)
    return tips


# finger i owns pose columns 6+4i .. 9+4i
_FINGER_ROWS = np.repeat(np.arange(N_FINGERS), 4)
_FINGER_COLS = 6 + np.arange(4 * N_FINGERS)


def _jacobian_from_chain(theta, tips, joints, axes):
    J = np.zeros((N_FINGERS, 3, POSE_SIZE))
    J[:, :, 0:3] = np.eye(3)
    r = tips - theta[0:3]
    # d(R x)/d(rotvec) = -[R x]_x J_l(rotvec)
    Jl = left_jacobian(theta[3:6])
    J[:, :, 3:6] = -cross(r[:, None, :], Jl.T[None, :, :]).transpose(0, 2, 1)
    cols = cross(axes, tips[:, None, :] - joints)
    J[_FINGER_ROWS, :, _FINGER_COLS] = cols.reshape(4 * N_FINGERS, 3)
    return J.reshape(3 * N_FINGERS, POSE_SIZE)


def tip_jacobian(skeleton, pose):
    """``d tips / d theta`` as a ``(15, 28)`` matrix (rows: tip-major xyz)."""
    theta = pose.theta
    tips, joints, axes = _chain(skeleton, theta)
    return _jacobian_from_chain(theta, tips, joints, axes)


@dataclass(frozen=True)
class IKConfig:
    """IK regularization. Tip residuals are divided by ``length_scale`` before
    being weighed against ``lambda_pose * |theta - theta_init|^2``."""

    lambda_pose: float = 1e-2
    length_scale: float = 0.01
    max_iterations: int = 50
    gradient_tolerance: float = 1e-6
    cost_tolerance: float = 1e-4
    reach_tolerance: float = 1e-3


@dataclass(frozen=True)
class IKResult:
    pose: HandPose
    tips: np.ndarray
    residuals: np.ndarray
    reachable: np.ndarray
    converged: bool
    iterations: int


def solve_ik(skeleton, theta_init, targets, target_weights=None, config=None, active=None):
    """Fit tip centers to ``targets`` by damped least squares with pose regularization.

    ``active`` optionally masks which of the 28 pose entries may move (e.g.
    lock the wrist). Joint limits are enforced by projection.
    """
    config = IKConfig() if config is None else config
    targets = check_points(targets, "targets", n=N_FINGERS)
    w = np.ones(N_FINGERS) if target_weights is None else np.asarray(target_weights, dtype=float)
    if w.shape != (N_FINGERS,) or np.any(w < 0):
        raise ValueError("target_weights must be 5 non-negative numbers")
    init, _ = clamp_to_limits(skeleton, theta_init)
    theta0 = init.theta
    sw = np.repeat(np.sqrt(w), 3) / config.length_scale
    sp = np.sqrt(config.lambda_pose)
    mask = np.zeros(POSE_SIZE, dtype=bool)
    mask[:ACTIVE_SIZE] = True
    if active is not None:
        mask &= np.asarray(active, dtype=bool)
    flat_targets = targets.ravel()

    reg_rows = sp * np.eye(POSE_SIZE)[mask]
    cache = {}

    def chain(theta):
        key = theta.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = _chain(skeleton, theta)
        return cache[key]

    def residual(theta):
        tips, _, _ = chain(theta)
        return np.concatenate([sw * (tips.ravel() - flat_targets), sp * (theta - theta0)[mask]])

    def jacobian(theta):
        Jt = _jacobian_from_chain(theta, *chain(theta))
        return np.vstack([sw[:, None] * Jt, reg_rows])

    res = projected_lm(
        residual,
        jacobian,
        theta0,
        skeleton.lower,
        skeleton.upper,
        fixed=~mask,
        max_iterations=config.max_iterations,
        gradient_tolerance=config.gradient_tolerance,
        cost_tolerance=config.cost_tolerance,
    )
    pose = HandPose(res.x)
    tips = forward_kinematics(skeleton, pose)
    err = np.linalg.norm(tips - targets, axis=1)
    reachable = (err < config.reach_tolerance) | (w == 0)
    return IKResult(pose, tips, err, reachable, res.converged, res.iterations)


def kabsch(source, target):
    """Rotation ``R`` and translation ``t`` minimizing ``|R source + t - target|``."""
    cs, ct = source.mean(axis=0), target.mean(axis=0)
    H = (source - cs).T @ (target - ct)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ D @ U.T
    return R, ct - R @ cs


def initial_pose_from_tips(skeleton, tips, weights=None):
    """Rest-pose fingers with the wrist rigidly aligned to the given tip centers."""
    rest = skeleton.rest_pose()
    local = forward_kinematics(skeleton, rest)
    tips = check_points(tips, "tips", n=N_FINGERS)
    sel = np.ones(N_FINGERS, dtype=bool) if weights is None else np.asarray(weights) > 0
    if sel.sum() >= 3:
        R, t = kabsch(local[sel], tips[sel])
    else:
        R, t = np.eye(3), tips[sel].mean(axis=0) - local[sel].mean(axis=0)
    return rest.with_wrist(R, t)


# --- skeleton file ----------------------------------------------------------


def skeleton_to_dict(skeleton):
    out = {}
    for f in skeleton.fingers:
        out[f"{f.name}.base"] = " ".join(repr(float(v)) for v in f.base)
        out[f"{f.name}.base_rotation"] = " ".join(repr(float(v)) for v in log_so3(f.base_rotation))
        out[f"{f.name}.bones"] = " ".join(repr(float(v)) for v in f.bones)
        for j, joint in enumerate(("abduction", "mcp", "pip", "dip")):
            out[f"{f.name}.limits.{joint}"] = " ".join(repr(float(v)) for v in f.limits[j])
        out[f"{f.name}.tip_radius"] = repr(float(f.tip_radius))
    return out


def skeleton_from_dict(values, base=None):
    """Apply ``finger.field`` keys (plus a global ``tip_radius``) on top of ``base``.

    Returns ``(skeleton, unknown_keys)``.
    """
    skeleton = HandSkeleton.default() if base is None else base
    fingers = {f.name: f for f in skeleton.fingers}
    unknown = []
    if "tip_radius" in values:
        r = float(values["tip_radius"])
        fingers = {k: replace(f, tip_radius=r) for k, f in fingers.items()}
    for key, raw in values.items():
        if key == "tip_radius":
            continue
        parts = key.split(".")
        if parts[0] not in fingers or len(parts) < 2:
            unknown.append(key)
            continue
        f = fingers[parts[0]]
        nums = [float(v) for v in str(raw).split()]
        field_name = parts[1]
        if field_name == "base" and len(nums) == 3:
            f = replace(f, base=np.array(nums))
        elif field_name == "base_rotation" and len(nums) == 3:
            f = replace(f, base_rotation=exp_so3(nums))
        elif field_name == "bones" and len(nums) == 3:
            f = replace(f, bones=np.array(nums))
        elif field_name == "tip_radius" and len(nums) == 1:
            f = replace(f, tip_radius=nums[0])
        elif field_name == "limits" and len(parts) == 3 and len(nums) == 2:
            joints = ("abduction", "mcp", "pip", "dip")
            if parts[2] not in joints:
                unknown.append(key)
                continue
            limits = f.limits.copy()
            limits[joints.index(parts[2])] = nums
            f = replace(f, limits=limits)
        else:
            unknown.append(key)
            continue
        fingers[parts[0]] = f
    return HandSkeleton(tuple(fingers[name] for name in FINGER_NAMES)), unknown


def write_skeleton(skeleton, path):
    lines = ["# hand skeleton: meters / radians; rotations are axis-angle vectors"]
    lines += [f"{k} = {v}" for k, v in skeleton_to_dict(skeleton).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
