"""File formats: key-value configs, line-delimited sequence files, point clouds."""

import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .contact import N_TIPS
from .forces import SolverConfig
from .hand import IKConfig
from .object_model import RigidPose
from .slide import SlideParams

log = logging.getLogger(__name__)

SEQUENCE_FORMAT = "contactrefine.sequence"
REFINED_FORMAT = "contactrefine.refined"
FORMAT_VERSION = 1


class DataError(ValueError):
    """Malformed input data (reported with file and line)."""


# --- key-value text ---------------------------------------------------------


def parse_keyvalue(text, source="<string>"):
    """``key = value`` lines; ``#`` starts a comment. Later keys win."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise DataError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_keyvalue(path):
    return parse_keyvalue(Path(path).read_text(encoding="utf-8"), str(path))


@dataclass(frozen=True)
class RunConfig:
    """Everything a refinement run can be configured with."""

    solver: SolverConfig = SolverConfig()
    slide: SlideParams = SlideParams()
    ik: IKConfig = IKConfig()
    sample_count: int = 32
    projection_iterations: int = 3
    dt: float = 1.0 / 30.0
    contact_epsilon: float = 0.002
    voxel_size: float = 0.002
    truncation: float = 0.010
    padding: float = 0.020
    skeleton_overrides: tuple = ()


_IK_KEYS = {"ik_" + f.name: f.name for f in fields(IKConfig)}
_TOP_KEYS = ("sample_count", "projection_iterations", "dt", "contact_epsilon", "voxel_size", "truncation", "padding")


def _convert(raw, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, tuple):
        return tuple(float(v) for v in raw.split())
    return float(raw)


def config_from_dict(values, source="<config>"):
    """Build a :class:`RunConfig`; unknown keys are logged as warnings."""
    solver_kw, slide_kw, ik_kw, top_kw, skel = {}, {}, {}, {}, []
    solver_defaults = SolverConfig()
    slide_defaults = SlideParams()
    ik_defaults = IKConfig()
    for key, raw in values.items():
        try:
            if key in SolverConfig.field_names():
                like = getattr(solver_defaults, key)
                solver_kw[key] = None if raw.lower() in ("auto", "none") else _convert(raw, 1.0 if like is None else like)
            elif key in {f.name for f in fields(SlideParams)}:
                slide_kw[key] = _convert(raw, getattr(slide_defaults, key))
            elif key in _IK_KEYS:
                ik_kw[_IK_KEYS[key]] = _convert(raw, getattr(ik_defaults, _IK_KEYS[key]))
            elif key in _TOP_KEYS:
                top_kw[key] = _convert(raw, getattr(RunConfig, key))
            elif key == "tip_radius" or key.split(".")[0] in ("thumb", "index", "middle", "ring", "little"):
                skel.append((key, raw))
            else:
                log.warning("%s: unknown config key %r ignored", source, key)
        except ValueError as exc:
            raise DataError(f"{source}: bad value for {key!r}: {exc}") from None
    try:
        return RunConfig(
            solver=SolverConfig(**solver_kw),
            slide=SlideParams(**slide_kw),
            ik=IKConfig(**ik_kw),
            skeleton_overrides=tuple(skel),
            **top_kw,
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"{source}: {exc}") from None


def load_config(path):
    if path is None:
        return RunConfig()
    return config_from_dict(read_keyvalue(path), str(path))


def config_to_text(cfg):
    lines = ["# contact refinement configuration"]
    for f in fields(SolverConfig):
        v = getattr(cfg.solver, f.name)
        if v is None:
            v = "auto"
        elif isinstance(v, tuple):
            v = " ".join(repr(x) for x in v)
        lines.append(f"{f.name} = {v}")
    for f in fields(SlideParams):
        lines.append(f"{f.name} = {getattr(cfg.slide, f.name)}")
    for f in fields(IKConfig):
        lines.append(f"ik_{f.name} = {getattr(cfg.ik, f.name)}")
    for key in _TOP_KEYS:
        lines.append(f"{key} = {getattr(cfg, key)!r}")
    return "\n".join(lines) + "\n"


# --- sequence records -------------------------------------------------------


@dataclass
class GroundTruth:
    tips: np.ndarray = None
    forces: np.ndarray = None
    contact_flags: np.ndarray = None


@dataclass
class FrameRecord:
    frame_index: int
    timestamp: float
    object_pose: RigidPose
    tips: np.ndarray
    tip_radii: np.ndarray
    observed_counts: np.ndarray = None
    point_cloud_path: str = None
    ground_truth: GroundTruth = None
    theta_kinematic: np.ndarray = None

    def to_json(self):
        out = {
            "frame_index": int(self.frame_index),
            "timestamp": float(self.timestamp),
            "object_pose": pose_to_json(self.object_pose),
            "tips": _list(self.tips),
            "tip_radii": _list(self.tip_radii),
        }
        if self.observed_counts is not None:
            out["observed_counts"] = [int(c) for c in self.observed_counts]
        if self.point_cloud_path is not None:
            out["point_cloud"] = str(self.point_cloud_path)
        if self.theta_kinematic is not None:
            out["theta_kinematic"] = _list(self.theta_kinematic)
        if self.ground_truth is not None:
            out["ground_truth"] = ground_truth_to_json(self.ground_truth)
        return out

    @classmethod
    def from_json(cls, obj):
        radii = obj.get("tip_radii", 0.008)
        tips = np.asarray(obj["tips"], dtype=float)
        if tips.shape != (N_TIPS, 3):
            raise ValueError(f"'tips' must be 5 triples, got shape {tips.shape}")
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (N_TIPS,)).copy()
        if np.any(radii <= 0):
            raise ValueError("tip radii must be > 0")
        counts = obj.get("observed_counts")
        if counts is not None:
            counts = np.asarray(counts, dtype=int)
            if counts.shape != (N_TIPS,) or np.any(counts < 0):
                raise ValueError("'observed_counts' must be 5 non-negative integers")
        theta = obj.get("theta_kinematic")
        return cls(
            frame_index=int(obj["frame_index"]),
            timestamp=float(obj.get("timestamp", 0.0)),
            object_pose=pose_from_json(obj["object_pose"]),
            tips=tips,
            tip_radii=radii,
            observed_counts=counts,
            point_cloud_path=obj.get("point_cloud"),
            ground_truth=ground_truth_from_json(obj.get("ground_truth")),
            theta_kinematic=None if theta is None else np.asarray(theta, dtype=float),
        )


def _list(a):
    return np.asarray(a, dtype=float).tolist()


def pose_to_json(pose):
    q = getattr(pose, "source_quaternion", None)
    q = pose.as_quaternion() if q is None else q
    return {"quaternion_wxyz": _list(q), "translation": _list(pose.translation)}


def pose_from_json(obj):
    q = np.asarray(obj["quaternion_wxyz"], dtype=float)
    if q.shape != (4,):
        raise ValueError("'quaternion_wxyz' must have 4 entries")
    return RigidPose.from_quaternion(q, obj["translation"])


def ground_truth_to_json(gt):
    out = {}
    if gt.tips is not None:
        out["tips"] = _list(gt.tips)
    if gt.forces is not None:
        out["forces"] = _list(gt.forces)
    if gt.contact_flags is not None:
        out["contact_flags"] = [bool(c) for c in gt.contact_flags]
    return out


def ground_truth_from_json(obj):
    if obj is None:
        return None
    return GroundTruth(
        tips=None if obj.get("tips") is None else np.asarray(obj["tips"], dtype=float).reshape(N_TIPS, 3),
        forces=None if obj.get("forces") is None else np.asarray(obj["forces"], dtype=float).reshape(N_TIPS, 3),
        contact_flags=None if obj.get("contact_flags") is None else np.asarray(obj["contact_flags"], dtype=bool),
    )


def _dumps(obj):
    return json.dumps(obj, separators=(",", ":"), sort_keys=True, allow_nan=False)


def write_sequence(records, path):
    lines = [_dumps({"format": SEQUENCE_FORMAT, "version": FORMAT_VERSION})]
    lines += [_dumps(r.to_json()) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_header(fh, path, expected):
    first = fh.readline()
    if not first.strip():
        return False
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:1: invalid header ({exc.msg})") from None
    if header.get("format") != expected:
        raise DataError(f"{path}:1: expected format {expected!r}, got {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}:1: unsupported version {header.get('version')!r}")
    return True


def iter_sequence(path, strict=True):
    """Yield ``(line_number, FrameRecord)``.

    With ``strict=False`` malformed records are logged and skipped instead
    of raising :class:`DataError`.
    """
    last_index = None
    last_time = None
    with open(path, encoding="utf-8") as fh:
        if not _read_header(fh, path, SEQUENCE_FORMAT):
            return
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                rec = FrameRecord.from_json(json.loads(line))
                if last_index is not None and rec.frame_index <= last_index:
                    raise ValueError("frame_index must be strictly increasing")
                if last_time is not None and rec.timestamp < last_time:
                    raise ValueError("timestamps must be non-decreasing")
            except (ValueError, KeyError, TypeError) as exc:
                msg = f"{path}:{lineno}: {exc}"
                if strict:
                    raise DataError(msg) from None
                log.warning("skipping malformed record: %s", msg)
                continue
            last_index, last_time = rec.frame_index, rec.timestamp
            yield lineno, rec


def read_sequence(path, strict=True):
    return [rec for _, rec in iter_sequence(path, strict)]


def write_refined(rows, path):
    lines = [_dumps({"format": REFINED_FORMAT, "version": FORMAT_VERSION})]
    lines += [_dumps(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_refined(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        if not _read_header(fh, path, REFINED_FORMAT):
            return rows
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc.msg}") from None
    return rows


def read_point_cloud(path):
    """Whitespace-separated ``x y z`` per line (meters)."""
    pts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 'x y z'")
            try:
                pts.append([float(p) for p in parts])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric coordinate") from None
    return np.array(pts, dtype=float).reshape(-1, 3)


def write_point_cloud(points, path):
    Path(path).write_text("".join(" ".join(repr(float(c)) for c in p) + "\n" for p in np.asarray(points)), encoding="utf-8")
