"""Per-frame orchestration of contact refinement, plus the estimator front end and reports."""

import csv
import io as _io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import io
from .contact import N_TIPS, ContactStatus, TipState, extract_contact_status
from .dynamics import DynamicsState, finite_difference_dynamics
from .forces import ENERGY_TERMS, ForceSolution, cone_angles, solve_contact_forces
from .hand import HandPose, HandSkeleton, forward_kinematics, initial_pose_from_tips, skeleton_from_dict, solve_ik
from .lm import NonFiniteEnergyError
from .object_model import (
    SdfGrid,
    SurfaceMesh,
    bake_sdf,
    compute_physical_properties,
    extract_surface,
    read_obj,
    read_sdf,
)
from .slide import BRANCH_FREE, compute_confidence, count_nearby_points, refine_tip_positions

log = logging.getLogger(__name__)

WARMUP_FRAMES = 2
FIRST_FRAME_IK_ITERATIONS = 200


@dataclass
class RefinedFrame:
    frame_index: int
    timestamp: float
    object_pose: object
    physics: bool
    contact_status: ContactStatus
    force_solution: ForceSolution
    observed_counts: np.ndarray
    confidences: np.ndarray
    tips_kinematic: np.ndarray
    T_r: np.ndarray
    T_ps: np.ndarray
    T_s: np.ndarray
    branches: np.ndarray
    theta: object
    T_f: np.ndarray
    ik_residuals: np.ndarray
    timings: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    ground_truth: object = None

    def contact_count(self, epsilon, refined=True):
        return self.contact_status.contact_count(epsilon, refined)

    def to_json(self):
        """Deterministic record for the refined sequence file (timings excluded)."""
        cs = self.contact_status
        sol = self.force_solution
        out = {
            "frame_index": int(self.frame_index),
            "timestamp": float(self.timestamp),
            "object_pose": io.pose_to_json(self.object_pose),
            "physics": bool(self.physics),
            "flags": list(self.flags),
            "tips_kinematic": io._list(self.tips_kinematic),
            "tips_contact_refined": io._list(self.T_r),
            "tips_no_slide": io._list(self.T_ps),
            "tips_slide_corrected": io._list(self.T_s),
            "tips_final": io._list(self.T_f),
            "theta": io._list(self.theta.theta),
            "ik_residuals": io._list(self.ik_residuals),
            "contact": {
                "p": io._list(cs.p),
                "n": io._list(cs.n),
                "d": io._list(cs.d),
                "d_refined": io._list(cs.d_refined),
                "valid": [bool(v) for v in cs.valid],
            },
            "forces": {
                "f": io._list(sol.f),
                "F": io._list(sol.F),
                "pressure": io._list(sol.pressure),
            },
            "solver": {
                "energies": {k: float(v) for k, v in sol.energies.items()},
                "iterations": int(sol.iterations),
                "converged": bool(sol.converged),
            },
            "observed_counts": None if self.observed_counts is None else [int(c) for c in self.observed_counts],
            "confidences": io._list(self.confidences),
            "branches": [int(b) for b in self.branches],
        }
        if self.ground_truth is not None:
            out["ground_truth"] = io.ground_truth_to_json(self.ground_truth)
        return out


class RefinementSession:
    """Temporal state for one sequence: pose history, previous final tips, warm start."""

    def __init__(self, grid, props, skeleton=None, config=None, base_dir=None):
        self.grid = grid
        self.props = props
        self.config = io.RunConfig() if config is None else config
        self.skeleton = HandSkeleton.default() if skeleton is None else skeleton
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self.history = []
        self.prev_final = None
        self.prev_theta = None
        self.warm_start = None
        self.physics_frames = 0

    def _confidences(self, rec):
        n_s = self.config.slide.n_s
        counts = rec.observed_counts
        if counts is None and rec.point_cloud_path is not None:
            path = Path(rec.point_cloud_path)
            if self.base_dir is not None and not path.is_absolute():
                path = self.base_dir / path
            cloud = io.read_point_cloud(path)
            counts = np.array(
                [
                    count_nearby_points(cloud, TipState(i, rec.tips[i], rec.tip_radii[i]), self.config.slide.near_threshold)
                    for i in range(N_TIPS)
                ]
            )
        if counts is None:
            return None, np.ones(N_TIPS)
        return counts, np.array([compute_confidence(int(c), n_s) for c in counts])

    def _step(self, rec):
        if len(self.history) < 2:
            return self.config.dt, self.config.dt
        (_, t2), (_, t1) = self.history
        dt = rec.timestamp - t1
        dt_prev = t1 - t2
        if dt <= 0 or dt_prev <= 0:
            return self.config.dt, self.config.dt
        return dt, dt_prev

    def process(self, rec):
        cfg = self.config
        t_start = time.perf_counter()
        pose = rec.object_pose
        cs = extract_contact_status(
            (rec.tips, rec.tip_radii), pose, self.grid, cfg.sample_count, cfg.projection_iterations
        )
        counts, conf = self._confidences(rec)
        flags = []
        physics = len(self.history) >= WARMUP_FRAMES
        T_r = rec.tips.copy()
        T_ps = rec.tips.copy()
        T_s = rec.tips.copy()
        branches = np.full(N_TIPS, BRANCH_FREE, dtype=int)
        sol = ForceSolution.zeros(cs.d)
        t_stage2 = t_start
        if physics:
            (W2, _), (W1, _) = self.history
            dt, dt_prev = self._step(rec)
            dyn = finite_difference_dynamics(W2, W1, pose, dt, self.props, dt_prev)
            try:
                sol = solve_contact_forces(cs, dyn, self.props, cfg.solver, self.warm_start)
            except NonFiniteEnergyError:
                log.warning("frame %d: non-finite energy, passing through", rec.frame_index)
                flags.append("non_finite_energy")
                cs.d_refined = cs.d.copy()
                sol = ForceSolution.zeros(cs.d)
                physics = False
            t_stage2 = time.perf_counter()
        if physics:
            T_r = cs.refined_tip_centers()
            prev = T_r if self.physics_frames == 0 or self.prev_final is None else self.prev_final
            T_s, T_ps, branches = refine_tip_positions(
                T_r, sol, conf, prev, pose, W1, cs, cfg.slide, self.props, cfg.solver.gravity
            )

        if rec.theta_kinematic is not None:
            theta_init, max_it = HandPose(rec.theta_kinematic), cfg.ik.max_iterations
        elif self.prev_theta is not None:
            theta_init, max_it = self.prev_theta, cfg.ik.max_iterations
        else:
            theta_init, max_it = initial_pose_from_tips(self.skeleton, rec.tips), FIRST_FRAME_IK_ITERATIONS
        ik_cfg = replace(cfg.ik, max_iterations=max_it)
        ik = solve_ik(self.skeleton, theta_init, T_s, config=ik_cfg)
        T_f = forward_kinematics(self.skeleton, ik.pose)
        t_end = time.perf_counter()

        if not np.all(ik.reachable):
            flags.append("ik_unreachable")
        self.history = (self.history + [(pose, rec.timestamp)])[-2:]
        self.prev_final = T_f
        self.prev_theta = ik.pose
        if physics:
            self.warm_start = sol
            self.physics_frames += 1
        timings = {
            "stage2_ms": (t_stage2 - t_start) * 1e3 if physics else 0.0,
            "stage3_ms": (t_end - t_stage2) * 1e3 if physics else 0.0,
            "total_ms": (t_end - t_start) * 1e3,
        }
        return RefinedFrame(
            frame_index=rec.frame_index,
            timestamp=rec.timestamp,
            object_pose=pose,
            physics=physics,
            contact_status=cs,
            force_solution=sol,
            observed_counts=counts,
            confidences=conf,
            tips_kinematic=rec.tips.copy(),
            T_r=T_r,
            T_ps=T_ps,
            T_s=T_s,
            branches=branches,
            theta=ik.pose,
            T_f=T_f,
            ik_residuals=ik.residuals,
            timings=timings,
            flags=flags,
            ground_truth=rec.ground_truth,
        )


def process_frame(state, rec):
    return state.process(rec)


def load_object(path, config=None, mass=None):
    """Read an SDF grid (``SDF1`` file) or bake one from a triangle OBJ.

    Returns ``(grid, surface, properties)``.
    """
    config = io.RunConfig() if config is None else config
    path = Path(path)
    if path.suffix.lower() == ".obj":
        mesh = read_obj(path)
        grid = bake_sdf(mesh, config.voxel_size, config.truncation, config.padding)
    else:
        grid = read_sdf(path)
    surface = extract_surface(grid)
    props = compute_physical_properties(surface, config.solver.mass if mass is None else mass)
    return grid, surface, props


class ContactRefiner(TransformerMixin, BaseEstimator):
    """Physics-based refinement of tracked fingertip sequences.

    ``fit`` takes the object model (an :class:`SdfGrid`, a closed
    :class:`SurfaceMesh`, or a path to either) and derives its surface and
    physical properties. ``transform`` refines a list of frame records from
    scratch and returns one :class:`RefinedFrame` per record.
    """

    def __init__(self, config=None, skeleton=None):
        self.config = config
        self.skeleton = skeleton

    def _run_config(self):
        return io.RunConfig() if self.config is None else self.config

    def fit(self, X, y=None):
        cfg = self._run_config()
        if isinstance(X, (str, Path)):
            grid, surface, props = load_object(X, cfg)
        else:
            if isinstance(X, SurfaceMesh):
                grid = bake_sdf(X, cfg.voxel_size, cfg.truncation, cfg.padding)
            elif isinstance(X, SdfGrid):
                grid = X
            else:
                raise TypeError(f"expected an SdfGrid, SurfaceMesh or path, got {type(X).__name__}")
            surface = extract_surface(grid)
            props = compute_physical_properties(surface, cfg.solver.mass)
        self.grid_ = grid
        self.surface_ = surface
        self.properties_ = props
        skeleton = HandSkeleton.default() if self.skeleton is None else self.skeleton
        if cfg.skeleton_overrides:
            skeleton, unknown = skeleton_from_dict(dict(cfg.skeleton_overrides), skeleton)
            for key in unknown:
                log.warning("unknown skeleton key %r ignored", key)
        self.skeleton_ = skeleton
        return self

    def new_session(self, base_dir=None):
        check_is_fitted(self, "grid_")
        return RefinementSession(self.grid_, self.properties_, self.skeleton_, self._run_config(), base_dir)

    def transform(self, X, base_dir=None):
        session = self.new_session(base_dir)
        return [session.process(rec) for rec in X]


# --- metrics & reports ------------------------------------------------------


def compute_plausibility(frames, contact_epsilon=0.002, refined=True):
    """Fraction of frames with fewer than two tips in contact."""
    if not frames:
        return 0.0
    bad = sum(1 for fr in frames if _contacts(fr, contact_epsilon, refined) < 2)
    return bad / len(frames)


def _contacts(frame, eps, refined):
    if isinstance(frame, RefinedFrame):
        return frame.contact_count(eps, refined)
    c = frame["contact"]
    d = np.asarray(c["d_refined"] if refined else c["d"])
    return int(np.sum(np.asarray(c["valid"]) & (d < eps)))


REPORT_FIELDS = (
    ["frame_index", "physics", "contacts_before", "contacts_after", "implausible_before", "implausible_after"]
    + ["tip_error_before_mm", "tip_error_after_mm", "occluded_tips", "occluded_error_before_mm", "occluded_error_after_mm"]
    + [f"force_{i}" for i in range(N_TIPS)]
    + [f"pressure_{i}" for i in range(N_TIPS)]
    + ["max_cone_angle", "iterations", "converged", "energy"]
)


@dataclass
class RefinementReport:
    rows: list
    summary: dict
    timing: dict = field(default_factory=dict)

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.csv").write_text(rows_to_csv(self.rows, REPORT_FIELDS), encoding="utf-8")
        (directory / "summary.txt").write_text(format_summary(self.summary), encoding="utf-8")


def rows_to_csv(rows, fieldnames):
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _mean_err(a, b, mask=None):
    e = np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), axis=1) * 1e3
    if mask is not None:
        e = e[mask]
    return float(e.mean()) if len(e) else None


def report_row(row, contact_epsilon=0.002, occluded_confidence=0.5):
    """Per-frame metrics from a refined-sequence record."""
    c_before = _contacts(row, contact_epsilon, False)
    c_after = _contacts(row, contact_epsilon, True)
    F = np.asarray(row["forces"]["F"])
    n = np.asarray(row["contact"]["n"])
    norms = np.linalg.norm(F, axis=1)
    cosang = np.einsum("ki,ki->k", -n, F) / np.where(norms > 0, norms, 1.0)
    angles = np.where(norms > 0, np.arccos(np.clip(cosang, -1.0, 1.0)), 0.0)
    out = {
        "frame_index": row["frame_index"],
        "physics": bool(row["physics"]),
        "contacts_before": c_before,
        "contacts_after": c_after,
        "implausible_before": c_before < 2,
        "implausible_after": c_after < 2,
        "max_cone_angle": float(angles.max()),
        "iterations": row["solver"]["iterations"],
        "converged": bool(row["solver"]["converged"]),
        "energy": float(sum(row["solver"]["energies"][k] for k in ENERGY_TERMS)),
    }
    for i in range(N_TIPS):
        out[f"force_{i}"] = float(norms[i])
        out[f"pressure_{i}"] = float(row["forces"]["pressure"][i])
    gt = row.get("ground_truth") or {}
    if gt.get("tips") is not None:
        occ = np.asarray(row["confidences"]) < occluded_confidence
        out["tip_error_before_mm"] = _mean_err(row["tips_kinematic"], gt["tips"])
        out["tip_error_after_mm"] = _mean_err(row["tips_final"], gt["tips"])
        out["occluded_tips"] = int(occ.sum())
        out["occluded_error_before_mm"] = _mean_err(row["tips_kinematic"], gt["tips"], occ)
        out["occluded_error_after_mm"] = _mean_err(row["tips_final"], gt["tips"], occ)
    return out


def summarize(report_rows):
    """Aggregates over per-frame report rows."""
    n = len(report_rows)
    s = {"frames": n, "physics_frames": sum(1 for r in report_rows if r["physics"])}
    if n == 0:
        s.update(implausible_ratio_before=0.0, implausible_ratio_after=0.0)
        return s
    s["implausible_ratio_before"] = sum(bool(r["implausible_before"]) for r in report_rows) / n
    s["implausible_ratio_after"] = sum(bool(r["implausible_after"]) for r in report_rows) / n
    s["mean_contacts_before"] = sum(r["contacts_before"] for r in report_rows) / n
    s["mean_contacts_after"] = sum(r["contacts_after"] for r in report_rows) / n
    gt_rows = [r for r in report_rows if r.get("tip_error_before_mm") is not None]
    if gt_rows:
        s["mean_tip_error_before_mm"] = sum(r["tip_error_before_mm"] for r in gt_rows) / len(gt_rows)
        s["mean_tip_error_after_mm"] = sum(r["tip_error_after_mm"] for r in gt_rows) / len(gt_rows)
        occ_rows = [r for r in gt_rows if r["occluded_tips"]]
        n_occ = sum(r["occluded_tips"] for r in occ_rows)
        if n_occ:
            s["occluded_tip_samples"] = n_occ
            s["mean_occluded_error_before_mm"] = (
                sum(r["occluded_error_before_mm"] * r["occluded_tips"] for r in occ_rows) / n_occ
            )
            s["mean_occluded_error_after_mm"] = (
                sum(r["occluded_error_after_mm"] * r["occluded_tips"] for r in occ_rows) / n_occ
            )
    s["max_cone_angle"] = max(r["max_cone_angle"] for r in report_rows)
    return s


def format_summary(summary):
    lines = ["contact refinement report"]
    for k, v in summary.items():
        lines.append(f"{k}: {v!r}" if isinstance(v, float) else f"{k}: {v}")
    return "\n".join(lines) + "\n"


def timing_summary(frames):
    phys = [fr.timings["stage2_ms"] + fr.timings["stage3_ms"] for fr in frames if fr.physics]
    if not phys:
        return {"physics_frames": 0}
    a = np.asarray(phys)
    return {
        "physics_frames": len(a),
        "mean_ms": float(a.mean()),
        "median_ms": float(np.median(a)),
        "p95_ms": float(np.percentile(a, 95)),
        "max_ms": float(a.max()),
    }


def build_report(refined_rows, contact_epsilon=0.002, frames=None):
    rows = [report_row(r, contact_epsilon) for r in refined_rows]
    return RefinementReport(rows, summarize(rows), timing_summary(frames) if frames else {})


def run_sequence(sequence_path, object_path, skeleton_path=None, config_path=None, output_path="refined_out"):
    """Refine a sequence file end to end and write outputs into ``output_path``.

    Writes ``refined.jsonl``, ``report.csv``, ``summary.txt``,
    ``diagnostics.csv`` (deterministic) and ``timings.csv`` (wall-clock).
    """
    cfg = io.load_config(config_path)
    skeleton = HandSkeleton.default()
    if cfg.skeleton_overrides:
        skeleton, unknown = skeleton_from_dict(dict(cfg.skeleton_overrides), skeleton)
        for key in unknown:
            log.warning("unknown skeleton key %r ignored", key)
    if skeleton_path is not None:
        skeleton, unknown = skeleton_from_dict(io.read_keyvalue(skeleton_path), skeleton)
        for key in unknown:
            log.warning("%s: unknown skeleton key %r ignored", skeleton_path, key)
    refiner = ContactRefiner(config=replace(cfg, skeleton_overrides=()), skeleton=skeleton).fit(object_path)
    session = refiner.new_session(base_dir=Path(sequence_path).parent)
    frames = []
    for _, rec in io.iter_sequence(sequence_path, strict=False):
        frames.append(session.process(rec))

    out = Path(output_path)
    out.mkdir(parents=True, exist_ok=True)
    refined_rows = [fr.to_json() for fr in frames]
    io.write_refined(refined_rows, out / "refined.jsonl")
    report = build_report(refined_rows, cfg.contact_epsilon, frames)
    report.write(out)
    diag_fields = ["frame_index", "physics", "E_force", "E_moment", "E_reg", "E_tac", "E_smo", "E_total", "iterations", "converged"]
    diag = [dict(frame_index=fr.frame_index, physics=fr.physics, **fr.force_solution.diagnostics_row()) for fr in frames]
    (out / "diagnostics.csv").write_text(rows_to_csv(diag, diag_fields), encoding="utf-8")
    timing_rows = [dict(frame_index=fr.frame_index, physics=fr.physics, **fr.timings) for fr in frames]
    (out / "timings.csv").write_text(
        rows_to_csv(timing_rows, ["frame_index", "physics", "stage2_ms", "stage3_ms", "total_ms"]), encoding="utf-8"
    )
    return report


def max_cone_violation(frames, mu):
    """Largest amount by which any emitted force exceeds the friction-cone half angle."""
    worst = -np.inf
    for fr in frames:
        ang = cone_angles(fr.force_solution, fr.contact_status)
        worst = max(worst, float(np.max(ang)) - float(np.arctan(mu)))
    return worst
