"""Physics-based refinement of hand-object contact sequences.

Given a tracked object pose and five kinematic fingertip positions per frame,
the pipeline re-extracts contacts from the object's signed distance field,
estimates contact forces and refined tip distances that explain the
object's motion, suppresses fingertip sliding where forces are large and the
kinematic evidence is weak, and fits a hand skeleton to the corrected tips.
"""

from .contact import ContactStatus, TipState, extract_contact_status
from .dynamics import DynamicsState, finite_difference_dynamics
from .forces import ForceSolution, SolverConfig, evaluate_energy, friction_cone_basis, solve_contact_forces
from .hand import HandPose, HandSkeleton, forward_kinematics, solve_ik
from .io import DataError, FrameRecord, RunConfig, load_config, read_sequence, write_sequence
from .object_model import (
    PhysicalProperties,
    RigidPose,
    SdfGrid,
    SurfaceMesh,
    bake_sdf,
    compute_physical_properties,
    extract_surface,
    sample_sdf,
)
from .pipeline import ContactRefiner, RefinedFrame, RefinementReport, compute_plausibility, run_sequence
from .slide import SlideParams, compute_confidence, refine_tip_positions
from .synthetic import Scenario, generate, qp_oracle

__version__ = "0.1.0"

__all__ = [
    "ContactRefiner",
    "ContactStatus",
    "DataError",
    "DynamicsState",
    "ForceSolution",
    "FrameRecord",
    "HandPose",
    "HandSkeleton",
    "PhysicalProperties",
    "RefinedFrame",
    "RefinementReport",
    "RigidPose",
    "RunConfig",
    "Scenario",
    "SdfGrid",
    "SlideParams",
    "SolverConfig",
    "SurfaceMesh",
    "TipState",
    "bake_sdf",
    "compute_confidence",
    "compute_physical_properties",
    "compute_plausibility",
    "evaluate_energy",
    "extract_contact_status",
    "extract_surface",
    "finite_difference_dynamics",
    "forward_kinematics",
    "friction_cone_basis",
    "generate",
    "load_config",
    "qp_oracle",
    "read_sequence",
    "refine_tip_positions",
    "run_sequence",
    "sample_sdf",
    "solve_contact_forces",
    "solve_ik",
    "write_sequence",
]
