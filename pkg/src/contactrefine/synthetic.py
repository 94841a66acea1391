"""Synthetic ground-truth sequences and a brute-force force oracle."""

import csv
import itertools
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from . import io
from .contact import N_TIPS, TIP_NAMES, ContactStatus
from .dynamics import finite_difference_dynamics
from .forces import SolverConfig, friction_cone_basis
from .hand import HandPose, HandSkeleton, IKConfig, forward_kinematics, solve_ik, write_skeleton
from .object_model import (
    RigidPose,
    analytic_grid,
    box_sdf,
    compute_physical_properties,
    extract_surface,
    sphere_sdf,
    write_sdf,
)
from .rotations import exp_so3

log = logging.getLogger(__name__)

INFEASIBLE_MESSAGE = "statically infeasible scenario"
ENUMERATION_LIMIT = 12
KKT_TOLERANCE = 1e-8
CONTACT_TOLERANCE = 1e-4
MOTIONS = ("static", "constant_velocity", "sinusoidal_rotation", "free_fall")

# thumb/index pinch with the remaining fingers curled into the palm
PINCH_ANGLES = (
    (0.0, 0.5, 0.5, 0.3),
    (0.0, 0.6, 0.6, 0.3),
    (0.0, 1.4, 1.6, 1.0),
    (0.0, 1.4, 1.6, 1.0),
    (0.0, 1.4, 1.6, 1.0),
)


class InfeasibleScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Object, grasp, motion and perturbation description of one synthetic sequence.

    Per-tip dictionaries are keyed by finger name. Offsets and slips are in the
    object's canonical frame; a slip is the displacement reached on the last
    frame (linear ramp from zero).
    """

    name: str = "scenario"
    object: str = "box"
    size: tuple = (0.05, 0.04, 0.04)
    radius: float = 0.03
    mass: float = 0.2
    mu: float = 0.7
    contacts: tuple = ("thumb", "index")
    motion: str = "static"
    velocity: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    amplitude: float = 0.0
    frequency: float = 0.0
    position: tuple = (0.0, 0.0, 0.4)
    hand_offset: tuple = (0.0, 0.0, 0.0)
    frames: int = 100
    dt: float = 1.0 / 30.0
    noise: float = 0.0
    seed: int = 0
    offsets: dict = field(default_factory=dict)
    slips: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    dropout: dict = field(default_factory=dict)
    voxel_size: float = 0.002
    truncation: float = 0.010
    padding: float = 0.020

    def __post_init__(self):
        if int(self.frames) < 3:
            raise ValueError("a scenario needs at least 3 frames")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.object not in ("box", "sphere"):
            raise ValueError(f"unknown object primitive {self.object!r}")
        if self.motion not in MOTIONS:
            raise ValueError(f"unknown motion {self.motion!r}")
        for name in list(self.contacts) + list(self.offsets) + list(self.slips) + list(self.counts) + list(self.dropout):
            if name not in TIP_NAMES:
                raise ValueError(f"unknown finger {name!r}")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    @property
    def tip_mask(self):
        return np.array([n in self.contacts for n in TIP_NAMES])

    def sdf_function(self):
        if self.object == "box":
            return box_sdf(self.size)
        return sphere_sdf(self.radius)

    def half_extent(self):
        if self.object == "box":
            return np.asarray(self.size, dtype=float) / 2.0
        return np.full(3, float(self.radius))

    def pose_at(self, t):
        """Object pose at time ``t`` (may be negative for history padding)."""
        p0 = np.asarray(self.position, dtype=float)
        if self.motion == "static":
            return RigidPose(np.eye(3), p0)
        if self.motion == "constant_velocity":
            return RigidPose(np.eye(3), p0 + np.asarray(self.velocity, dtype=float) * t)
        if self.motion == "free_fall":
            g = np.array([0.0, 0.0, -9.81])
            return RigidPose(np.eye(3), p0 + np.asarray(self.velocity, dtype=float) * t + 0.5 * g * t * t)
        axis = np.asarray(self.axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        angle = self.amplitude * np.sin(2.0 * np.pi * self.frequency * t)
        return RigidPose(exp_so3(axis * angle), p0)


_VECTOR_KEYS = {"size", "velocity", "axis", "position", "hand_offset"}
_PER_TIP = {"offset": "offsets", "slip": "slips", "counts": "counts", "dropout": "dropout"}


def scenario_from_dict(values, source="<scenario>"):
    kw = {"offsets": {}, "slips": {}, "counts": {}, "dropout": {}}
    names = {f.name: f for f in fields(Scenario)}
    for key, raw in values.items():
        try:
            prefix, _, finger = key.partition(".")
            if finger and prefix in _PER_TIP:
                nums = raw.split()
                if prefix == "counts":
                    val = int(raw)
                elif prefix == "dropout":
                    val = tuple(int(v) for v in nums)
                    if len(val) != 2:
                        raise ValueError("dropout needs 'first last'")
                else:
                    val = tuple(float(v) for v in nums)
                    if len(val) != 3:
                        raise ValueError("expected three numbers")
                kw[_PER_TIP[prefix]][finger] = val
            elif key == "contacts":
                kw["contacts"] = tuple(raw.split()) if raw.strip().lower() != "none" else ()
            elif key in _VECTOR_KEYS:
                kw[key] = tuple(float(v) for v in raw.split())
            elif key in ("name", "object", "motion"):
                kw[key] = raw
            elif key in ("frames", "seed"):
                kw[key] = int(raw)
            elif key in names:
                kw[key] = float(raw)
            else:
                log.warning("%s: unknown scenario key %r ignored", source, key)
        except ValueError as exc:
            raise io.DataError(f"{source}: bad value for {key!r}: {exc}") from None
    try:
        return Scenario(**kw)
    except (TypeError, ValueError) as exc:
        raise io.DataError(f"{source}: {exc}") from None


def scenario_to_text(sc):
    lines = []
    for f in fields(Scenario):
        v = getattr(sc, f.name)
        if f.name in ("offsets", "slips", "counts", "dropout"):
            prefix = {v2: k for k, v2 in _PER_TIP.items()}[f.name]
            for finger, val in sorted(v.items()):
                text = " ".join(repr(x) for x in val) if isinstance(val, tuple) else str(val)
                lines.append(f"{prefix}.{finger} = {text}")
        elif f.name == "contacts":
            lines.append(f"contacts = {' '.join(v) if v else 'none'}")
        elif isinstance(v, tuple):
            lines.append(f"{f.name} = {' '.join(repr(float(x)) for x in v)}")
        else:
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_scenario(spec):
    """Builtin scenario name or path to a key-value scenario file."""
    if spec in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[spec]
    path = Path(spec)
    if not path.exists():
        raise io.DataError(f"unknown scenario {spec!r} (not a builtin and no such file)")
    return scenario_from_dict(io.read_keyvalue(path), str(path))


_SLIP = (0.0, 0.010, 0.0)

BUILTIN_SCENARIOS = {
    "static_grasp": Scenario(name="static_grasp"),
    "contact_recovery": Scenario(name="contact_recovery", offsets={"index": (0.008, 0.0, 0.0)}),
    "translating_grasp": Scenario(name="translating_grasp", motion="constant_velocity", velocity=(0.1, 0.0, 0.0)),
    "rotating_grasp": Scenario(
        name="rotating_grasp", motion="sinusoidal_rotation", axis=(0.0, 0.0, 1.0), amplitude=0.3, frequency=0.5
    ),
    "free_fall": Scenario(
        name="free_fall", motion="free_fall", contacts=(), frames=10, hand_offset=(0.3, 0.0, 0.0)
    ),
    "noisy_static": Scenario(
        name="noisy_static", noise=0.003, seed=1, slips={"thumb": _SLIP}, counts={"thumb": 0}
    ),
    "noisy_translating": Scenario(
        name="noisy_translating",
        motion="constant_velocity",
        velocity=(0.05, 0.0, 0.0),
        noise=0.003,
        seed=2,
        slips={"index": (0.0, -0.010, 0.0)},
        counts={"index": 0},
    ),
    "noisy_rotating": Scenario(
        name="noisy_rotating",
        motion="sinusoidal_rotation",
        amplitude=0.3,
        frequency=0.5,
        noise=0.003,
        seed=3,
        slips={"thumb": (0.0, 0.0, 0.010)},
        counts={"thumb": 0},
    ),
}

PERTURBED_SCENARIOS = ("noisy_static", "noisy_translating", "noisy_rotating")


# --- oracle -------------------------------------------------------------------


@dataclass
class OracleResult:
    f: np.ndarray
    F: np.ndarray
    pressure: np.ndarray
    objective: float
    force_residual: np.ndarray
    moment_residual: np.ndarray
    kkt_ok: bool
    gradient: np.ndarray


def _oracle_system(cs, dyn, props, mu, cfg):
    """Stacked least-squares system ``|M z - b|^2`` over scaled cone coefficients."""
    cfg = SolverConfig(mass=props.mass, mu=mu) if cfg is None else cfg
    Fs = cfg.resolved_force_scale
    L = cfg.length_scale
    valid = np.flatnonzero(np.asarray(cs.valid, dtype=bool))
    bases = [friction_cone_basis(cs.p[i], cs.n[i], mu).basis for i in valid]
    c = np.asarray(dyn.com_live, dtype=float)
    g = np.asarray(cfg.gravity, dtype=float)
    m = props.mass
    cols_force = np.hstack(bases) if bases else np.zeros((3, 0))
    cols_moment = (
        np.hstack([np.cross(cs.p[i] - c, B.T).T for i, B in zip(valid, bases)]) if bases else np.zeros((3, 0))
    )
    n = 4 * len(valid)
    M = np.vstack(
        [
            np.sqrt(cfg.lambda_f) * cols_force,
            np.sqrt(cfg.lambda_m) * cols_moment / L,
            np.sqrt(cfg.lambda_reg) * np.eye(n),
        ]
    )
    b = np.concatenate(
        [
            -np.sqrt(cfg.lambda_f) * (m * g - m * np.asarray(dyn.v_dot, dtype=float)) / Fs,
            np.sqrt(cfg.lambda_m) * np.asarray(dyn.tau, dtype=float) / (Fs * L),
            np.zeros(n),
        ]
    )
    return M, b, valid, bases, Fs, cfg


def _enumerate_active_sets(M, b):
    n = M.shape[1]
    best, best_obj = np.zeros(n), float(b @ b)
    for size in range(1, n + 1):
        for free in itertools.combinations(range(n), size):
            cols = list(free)
            sol, *_ = np.linalg.lstsq(M[:, cols], b, rcond=None)
            if np.any(sol < 0):
                continue
            z = np.zeros(n)
            z[cols] = sol
            r = M @ z - b
            obj = float(r @ r)
            if obj < best_obj:
                best, best_obj = z, obj
    return best


def kkt_certificate(M, b, z, tol=KKT_TOLERANCE):
    """Gradient of ``|M z - b|^2`` and whether ``z >= 0`` satisfies the KKT conditions."""
    grad = 2.0 * M.T @ (M @ z - b)
    active = z <= 0.0
    ok = bool(np.all(z >= 0.0) and np.all(grad[active] >= -tol) and np.all(np.abs(grad[~active]) <= tol))
    return grad, ok


def qp_oracle(cs, dyn, props, mu=0.7, cfg=None):
    """Exact minimizer of the weighted force, moment and regularization energy over ``f >= 0``.

    The refined distances are held at their extracted values, so contact and
    smoothness terms drop out. Small problems (up to 12 coefficients) are
    solved by enumerating every active set; larger ones by NNLS.
    """
    M, b, valid, bases, Fs, cfg = _oracle_system(cs, dyn, props, mu, cfg)
    k = len(cs.d)
    n = M.shape[1]
    if n == 0:
        z = np.zeros(0)
    elif n <= ENUMERATION_LIMIT:
        z = _enumerate_active_sets(M, b)
    else:
        z, _ = nnls(M, b, maxiter=50 * n)
    # one polishing solve on the detected free set tightens the certificate
    free = z > 0
    if np.any(free):
        sol, *_ = np.linalg.lstsq(M[:, free], b, rcond=None)
        if np.all(sol >= 0):
            z = np.where(free, 0.0, z)
            z[free] = sol
    grad, ok = kkt_certificate(M, b, z)
    f = np.zeros((k, 4))
    F = np.zeros((k, 3))
    pressure = np.zeros(k)
    for j, (i, B) in enumerate(zip(valid, bases)):
        f[i] = z[4 * j : 4 * j + 4] * Fs
        F[i] = B @ f[i]
        pressure[i] = -np.asarray(cs.n[i]) @ F[i]
    r = M @ z - b
    c = np.asarray(dyn.com_live, dtype=float)
    m = props.mass
    g = np.asarray(cfg.gravity, dtype=float)
    force_res = F.sum(axis=0) + m * g - m * np.asarray(dyn.v_dot, dtype=float)
    moment_res = sum((np.cross(cs.p[i] - c, F[i]) for i in valid), np.zeros(3)) - np.asarray(dyn.tau, dtype=float)
    return OracleResult(f, F, pressure, float(r @ r), force_res, moment_res, ok, grad)


def oracle_objective(f, cs, dyn, props, mu=0.7, cfg=None):
    """Oracle objective evaluated at arbitrary coefficients ``f`` (k x 4, newtons)."""
    M, b, valid, _, Fs, _ = _oracle_system(cs, dyn, props, mu, cfg)
    z = np.concatenate([np.asarray(f, dtype=float)[i] / Fs for i in valid]) if len(valid) else np.zeros(0)
    r = M @ z - b
    return float(r @ r)


def check_static_feasibility(result, props, cfg):
    weight = cfg.weight if cfg.weight > 0 else 1.0
    eps_force = 1e-2 * weight
    eps_moment = 1e-2 * weight * cfg.length_scale
    return np.linalg.norm(result.force_residual) <= eps_force and np.linalg.norm(result.moment_residual) <= eps_moment


# --- counts ---------------------------------------------------------------------


def render_counts(scenario, frame, n_s=75):
    """Observed point count per tip: ``n_s`` unless overridden or inside a dropout window."""
    out = np.full(N_TIPS, int(n_s), dtype=int)
    for i, name in enumerate(TIP_NAMES):
        if name in scenario.counts:
            out[i] = int(scenario.counts[name])
        if name in scenario.dropout:
            first, last = scenario.dropout[name]
            if first <= frame <= last:
                out[i] = 0
    return out


# --- generation -----------------------------------------------------------------


@dataclass
class SyntheticSequence:
    scenario: Scenario
    records: list
    grid: object
    surface: object
    properties: object
    skeleton: HandSkeleton
    hand_poses: list
    oracle: list = field(default_factory=list)


def _pose_roundtrip(pose):
    # the sequence file stores quaternions; ground truth must see the same pose
    return RigidPose.from_quaternion(pose.as_quaternion(), pose.translation)


def _pinch_pose(skeleton):
    theta = np.zeros(28)
    for i, angles in enumerate(PINCH_ANGLES):
        theta[6 + 4 * i : 10 + 4 * i] = angles
    return HandPose(np.clip(theta, skeleton.lower, skeleton.upper))


def _grasp_frame(tips):
    """Rigid frame with origin between thumb and index and +x pointing at the index tip."""
    x = tips[1] - tips[0]
    x = x / np.linalg.norm(x)
    y = np.cross([0.0, 0.0, 1.0], x)
    if np.linalg.norm(y) < 1e-9:
        y = np.cross([0.0, 1.0, 0.0], x)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    return RigidPose(np.stack([x, y, z], axis=1), 0.5 * (tips[0] + tips[1]))


def _surface_target(sc, local_center, radius):
    """Nearest surface point of the primitive plus a tip radius along its outward normal."""
    if sc.object == "sphere":
        n = local_center / np.linalg.norm(local_center)
        return n * (sc.radius + radius)
    h = sc.half_extent()
    axis = int(np.argmax(np.abs(local_center) / h))
    n = np.zeros(3)
    n[axis] = np.sign(local_center[axis])
    target = np.clip(local_center, -h, h)
    target[axis] = n[axis] * (h[axis] + radius)
    return target


def analytic_contact_status(sc, tips_world, radii, pose):
    """Exact contact status of the primitive for true tip centers."""
    sdf = sc.sdf_function()
    cs = ContactStatus.empty(tips_world)
    inv = pose.inverse()
    local = inv.apply(tips_world)
    h = 1e-7
    for i in range(N_TIPS):
        c = local[i]
        grad = np.array([(sdf(c + h * e) - sdf(c - h * e)) / (2 * h) for e in np.eye(3)])
        n = grad / np.linalg.norm(grad)
        dist = float(sdf(c))
        p = c - dist * n
        gap = dist - radii[i]
        cs.p[i] = pose.apply(p)
        cs.n[i] = pose.apply_direction(n)
        cs.d[i] = max(gap, 0.0)
        cs.d_refined[i] = cs.d[i]
        cs.sample[i] = tips_world[i] - radii[i] * cs.n[i]
        cs.valid[i] = gap < CONTACT_TOLERANCE
    return cs


def build_grasp(sc, skeleton):
    """Ground-truth hand pose at the scenario's initial object pose."""
    pose0 = _pose_roundtrip(sc.pose_at(0.0))
    pinch = _pinch_pose(skeleton)
    frame = _grasp_frame(forward_kinematics(skeleton, pinch))
    # hand placed so the pinch frame coincides with the object's canonical frame
    wrist = pose0 @ frame.inverse()
    theta = pinch.with_wrist(wrist.rotation, wrist.translation)
    mask = sc.tip_mask
    if mask.any():
        radii = skeleton.tip_radii
        tips = forward_kinematics(skeleton, theta)
        local = pose0.inverse().apply(tips)
        targets = tips.copy()
        for i in np.flatnonzero(mask):
            targets[i] = pose0.apply(_surface_target(sc, local[i], radii[i]))
        cfg = IKConfig(lambda_pose=1e-8, max_iterations=200, gradient_tolerance=1e-14)
        res = solve_ik(skeleton, theta, targets, target_weights=mask.astype(float), config=cfg)
        if np.any(res.residuals[mask] > CONTACT_TOLERANCE):
            raise InfeasibleScenarioError(f"{INFEASIBLE_MESSAGE}: grasp not reachable by the skeleton")
        theta = res.pose
    offset = np.asarray(sc.hand_offset, dtype=float)
    if np.any(offset):
        t = theta.theta.copy()
        t[0:3] += offset
        theta = HandPose(t)
    return theta


def _moved_hand(theta0, pose0, pose_t, follows):
    if not follows:
        return theta0
    delta = pose_t @ pose0.inverse()
    R = delta.rotation @ exp_so3(theta0.theta[3:6])
    t = delta.apply(theta0.theta[0:3])
    return theta0.with_wrist(R, t)


def generate(scenario, skeleton=None, solver_config=None):
    """Build a synthetic sequence with ground-truth tips, contacts and oracle forces.

    Object grids are rounded to 32-bit floats so that the in-memory grid equals
    the one read back from disk. ``scenario`` may also be a builtin name or a
    scenario file path.
    """
    sc = load_scenario(scenario) if isinstance(scenario, (str, Path)) else scenario
    skeleton = HandSkeleton.default() if skeleton is None else skeleton
    h = sc.half_extent()
    # flat faces sitting exactly on grid nodes make marching cubes lopsided
    # (and bias the vertex-mean center of mass); keep them mid-cell instead
    margin = sc.voxel_size * (np.ceil(sc.padding / sc.voxel_size - 1e-9) + 0.5)
    grid = analytic_grid(sc.sdf_function(), -h - margin, h + margin, sc.voxel_size, sc.truncation)
    grid = replace(grid, values=grid.values.astype(np.float32).astype(float))
    surface = extract_surface(grid)
    props = compute_physical_properties(surface, sc.mass)
    cfg = SolverConfig(mass=sc.mass, mu=sc.mu) if solver_config is None else solver_config

    theta0 = build_grasp(sc, skeleton)
    pose0 = _pose_roundtrip(sc.pose_at(0.0))
    follows = sc.motion != "free_fall"
    rng = np.random.default_rng(sc.seed)
    noise = rng.normal(0.0, sc.noise, size=(sc.frames, N_TIPS, 3)) if sc.noise > 0 else np.zeros((sc.frames, N_TIPS, 3))
    radii = skeleton.tip_radii

    records, hands, oracles = [], [], []
    for k in range(sc.frames):
        t = k * sc.dt
        poses = [_pose_roundtrip(sc.pose_at(t - j * sc.dt)) for j in (2, 1, 0)]
        pose = poses[2]
        theta = _moved_hand(theta0, pose0, pose, follows)
        tips_gt = forward_kinematics(skeleton, theta)
        cs = analytic_contact_status(sc, tips_gt, radii, pose)
        dyn = finite_difference_dynamics(poses[0], poses[1], poses[2], sc.dt, props)
        orc = qp_oracle(cs, dyn, props, sc.mu, cfg)
        if not check_static_feasibility(orc, props, cfg):
            raise InfeasibleScenarioError(
                f"{INFEASIBLE_MESSAGE} (frame {k}: force residual {np.linalg.norm(orc.force_residual):.3g} N, "
                f"moment residual {np.linalg.norm(orc.moment_residual):.3g} N m)"
            )
        ramp = k / (sc.frames - 1)
        tips_kin = tips_gt + noise[k]
        for i, name in enumerate(TIP_NAMES):
            local = np.zeros(3)
            if name in sc.offsets:
                local += np.asarray(sc.offsets[name], dtype=float)
            if name in sc.slips:
                local += ramp * np.asarray(sc.slips[name], dtype=float)
            tips_kin[i] += pose.apply_direction(local)
        gt = io.GroundTruth(tips=tips_gt, forces=orc.F, contact_flags=cs.valid.copy())
        records.append(
            io.FrameRecord(
                frame_index=k,
                timestamp=t,
                object_pose=pose,
                tips=tips_kin,
                tip_radii=radii.copy(),
                observed_counts=render_counts(sc, k),
                ground_truth=gt,
            )
        )
        hands.append(theta)
        oracles.append(orc)
    return SyntheticSequence(sc, records, grid, surface, props, skeleton, hands, oracles)


GROUND_TRUTH_FIELDS = ["frame_index", "tip", "x", "y", "z", "fx", "fy", "fz", "pressure", "contact"]


def write_synthetic(seq, out_dir):
    """Write ``sequence.jsonl``, ``object.sdf``, ``skeleton.txt``, ``scenario.txt`` and ``ground_truth.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_sequence(seq.records, out / "sequence.jsonl")
    write_sdf(seq.grid, out / "object.sdf")
    write_skeleton(seq.skeleton, out / "skeleton.txt")
    (out / "scenario.txt").write_text(scenario_to_text(seq.scenario), encoding="utf-8")
    with open(out / "ground_truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GROUND_TRUTH_FIELDS)
        for rec, orc in zip(seq.records, seq.oracle):
            gt = rec.ground_truth
            for i, name in enumerate(TIP_NAMES):
                w.writerow(
                    [rec.frame_index, name]
                    + [repr(float(v)) for v in gt.tips[i]]
                    + [repr(float(v)) for v in gt.forces[i]]
                    + [repr(float(orc.pressure[i])), int(gt.contact_flags[i])]
                )
    return out
