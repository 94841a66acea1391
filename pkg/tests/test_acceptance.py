"""Acceptance criteria, one test per criterion.

Run ``pytest tests/test_acceptance.py`` for a PASS/FAIL line per criterion
in the terminal summary.
"""

import time

import numpy as np
import pytest

from contactrefine.cli import EXIT_OK, main
from contactrefine.contact import ContactStatus, extract_contact_status
from contactrefine.dynamics import DynamicsState, driving_torque, finite_difference_dynamics
from contactrefine.forces import ContactEnergy, SolverConfig, cone_angles, solve_contact_forces
from contactrefine.object_model import PhysicalProperties, RigidPose, compute_physical_properties
from contactrefine.pipeline import build_report, compute_plausibility, timing_summary
from contactrefine.slide import BRANCH_BLEND, BRANCH_FREE, BRANCH_STICK, SlideParams, refine_tip_positions, slide_branch
from contactrefine.synthetic import BUILTIN_SCENARIOS, PERTURBED_SCENARIOS, oracle_objective, qp_oracle, write_synthetic
from contactrefine.forces import ForceSolution
from contactrefine.pipeline import ContactRefiner
from tests.helpers import static_props, two_tip_status

MASS = 0.2
G = 9.81
MU = 0.7
HAND_PRESSURE = 1.4014
THRESHOLD = 0.3 * MASS * G
CONTACT_EPS = 0.002


def test_c01_static_grasp_force_oracle(synth):
    seq = synth.sequence("static_grasp")
    props = seq.properties
    t0 = time.perf_counter()
    recs = seq.records[:3]
    cs = extract_contact_status((recs[2].tips, recs[2].tip_radii), recs[2].object_pose, seq.grid)
    dyn = finite_difference_dynamics(recs[0].object_pose, recs[1].object_pose, recs[2].object_pose, 1 / 30, props)
    cfg = SolverConfig(mass=MASS, mu=MU)
    sol = solve_contact_forces(cs, dyn, props, cfg)
    elapsed = time.perf_counter() - t0
    oracle = qp_oracle(cs, dyn, props, MU, cfg)

    assert oracle.kkt_ok
    assert np.abs(sol.F.sum(axis=0) - [0.0, 0.0, MASS * G]).max() <= 1e-3
    assert np.all(np.abs(sol.pressure[:2] - oracle.pressure[:2]) <= 0.05 * oracle.pressure[:2])
    assert oracle.pressure[:2] == pytest.approx([HAND_PRESSURE] * 2, rel=0.01)
    assert oracle_objective(sol.f, cs, dyn, props, MU, cfg) <= 2.0 * oracle.objective
    assert elapsed < 1.0


def test_c02_contact_recovery(synth):
    frames = synth.refined("contact_recovery")
    assert len(frames) == 100
    first = frames[2]
    assert first.physics
    assert first.contact_status.d[1] == pytest.approx(0.008, abs=5e-4)
    assert first.contact_status.d_refined[1] < 0.0016
    assert first.contact_count(CONTACT_EPS) >= 2
    assert compute_plausibility(frames, CONTACT_EPS, refined=False) == 1.0
    assert compute_plausibility(frames, CONTACT_EPS) <= 0.05


def _slide_case(pressure, confidence, slip=0.02):
    cs = two_tip_status()
    T_r = cs.centers.copy()
    prev = T_r.copy()
    prev[0, 1] -= slip
    sol = ForceSolution.zeros(np.zeros(5))
    sol.pressure = np.array([pressure, 0.0, 0.0, 0.0, 0.0])
    ident = RigidPose.identity()
    props = PhysicalProperties(MASS, np.zeros(3), np.eye(3) * 1e-3)
    T_s, T_ps, branches = refine_tip_positions(
        T_r, sol, np.full(5, confidence), prev, ident, ident, cs, SlideParams(), props
    )
    return T_r[0], T_ps[0], T_s[0], branches[0]


def test_c03_slide_branches():
    assert THRESHOLD == pytest.approx(0.5886, abs=1e-12)
    T_r, _, T_s, b = _slide_case(0.3, 0.2)
    assert b == BRANCH_FREE and np.array_equal(T_s, T_r)
    T_r, T_ps, T_s, b = _slide_case(1.0, 0.2)
    assert b == BRANCH_STICK and np.array_equal(T_s, T_ps)
    assert np.linalg.norm(T_r - T_ps) == pytest.approx(0.02, abs=1e-15)
    T_r, T_ps, T_s, b = _slide_case(1.0, 0.5)
    assert b == BRANCH_BLEND and np.allclose(T_s, 0.5 * (T_r + T_ps), rtol=0, atol=1e-15)
    # boundaries at +-1e-9 N around the threshold
    assert slide_branch(THRESHOLD - 1e-9, 0.2, 0.02, THRESHOLD, 0.005) == BRANCH_FREE
    assert slide_branch(THRESHOLD + 1e-9, 0.2, 0.02, THRESHOLD, 0.005) == BRANCH_STICK
    assert slide_branch(THRESHOLD + 1e-9, 0.5, 0.02, THRESHOLD, 0.005) == BRANCH_BLEND
    assert _slide_case(THRESHOLD - 1e-9, 0.2)[3] == BRANCH_FREE
    assert _slide_case(THRESHOLD + 1e-9, 0.2)[3] == BRANCH_STICK


def test_c04_inertia_accuracy():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(10000, 3))
    v = 0.1 * v / np.linalg.norm(v, axis=1, keepdims=True)
    shell = compute_physical_properties(v, MASS)
    expected = 2.0 / 3.0 * MASS * 0.1**2
    assert np.abs(shell.inertia - expected * np.eye(3)).max() <= 0.01 * expected
    pair = compute_physical_properties(np.array([[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0]]), MASS)
    assert np.abs(pair.center_of_mass).max() <= 1e-12
    assert np.abs(pair.inertia - np.diag([0.0, 0.002, 0.002])).max() <= 1e-12


def test_c05_dynamics_properties():
    props = static_props()
    dt = 1.0 / 30.0
    step = np.array([0.01, -0.004, 0.002])
    base = RigidPose.from_rotvec([0.2, -0.1, 0.4], [0.1, 0.2, 0.3])
    for k in range(5):
        poses = [RigidPose(base.rotation, base.translation + (k + j) * step) for j in range(3)]
        dyn = finite_difference_dynamics(*poses, dt, props)
        assert np.abs(dyn.v_dot).max() <= 1e-9
        assert np.allclose(dyn.v, step / dt, rtol=0, atol=1e-9)
    axis = np.array([1.0, 2.0, -0.5])
    axis /= np.linalg.norm(axis)
    rate = np.deg2rad(6.0) / dt
    for k in range(5):
        poses = [RigidPose.from_rotvec(axis * np.deg2rad(6.0) * (k + j), [0.0, 0.0, 0.4]) for j in range(3)]
        dyn = finite_difference_dynamics(*poses, dt, props)
        assert np.abs(dyn.omega_dot).max() <= 1e-9
        assert abs(np.linalg.norm(dyn.omega) - rate) <= 1e-9
    assert np.array_equal(driving_torque(props.inertia, np.zeros(3), np.zeros(3)), np.zeros(3))
    rest = finite_difference_dynamics(base, base, base, dt, props)
    assert np.array_equal(rest.tau, np.zeros(3))


def test_c06_energy_gradient_check():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        cs = ContactStatus.empty(rng.normal(scale=0.05, size=(5, 3)))
        n = rng.normal(size=(5, 3))
        cs.n = n / np.linalg.norm(n, axis=1, keepdims=True)
        cs.p = rng.normal(scale=0.05, size=(5, 3))
        cs.d = rng.uniform(0.0, 0.01, size=5)
        cs.d_refined = cs.d.copy()
        cs.valid = rng.uniform(size=5) < 0.8
        props = static_props()
        dyn = DynamicsState(*(rng.normal(size=(4, 3))), rng.normal(size=3) * 1e-3, rng.normal(scale=0.01, size=3), props.inertia)
        energy = ContactEnergy(cs, dyn, props, SolverConfig())
        # feasible point: every coefficient and distance non-negative
        z = rng.uniform(0.0, 2.0, size=energy.n_vars)
        J = energy.jacobian(z)
        h = 1e-6
        fd = np.stack(
            [(energy.residual(z + h * e) - energy.residual(z - h * e)) / (2 * h) for e in np.eye(energy.n_vars)], axis=1
        )
        worst = max(worst, np.abs(J - fd).max() / np.abs(fd).max())
    assert worst < 1e-4


def test_c07_error_reduction(synth):
    rows = []
    for name in PERTURBED_SCENARIOS:
        frames = synth.refined(name)
        report = build_report([fr.to_json() for fr in frames])
        assert BUILTIN_SCENARIOS[name].noise == pytest.approx(0.003)
        rows += report.rows
    assert len(rows) >= 300
    before = np.mean([r["tip_error_before_mm"] for r in rows])
    after = np.mean([r["tip_error_after_mm"] for r in rows])
    occ = [r for r in rows if r["occluded_tips"]]
    n = sum(r["occluded_tips"] for r in occ)
    assert n > 0
    occ_before = sum(r["occluded_error_before_mm"] * r["occluded_tips"] for r in occ) / n
    occ_after = sum(r["occluded_error_after_mm"] * r["occluded_tips"] for r in occ) / n
    assert after <= before
    assert occ_after <= 0.9 * occ_before


def test_c08_runtime_budget(synth):
    frames = []
    for name in ("static_grasp", "contact_recovery") + PERTURBED_SCENARIOS:
        seq = synth.sequence(name)
        frames += ContactRefiner(skeleton=seq.skeleton).fit(seq.grid).transform(seq.records)
    timing = timing_summary(frames)
    print(f"stage II+III per frame: median {timing['median_ms']:.2f} ms, p95 {timing['p95_ms']:.2f} ms")
    assert timing["physics_frames"] >= 490
    assert timing["median_ms"] <= 8.0
    assert timing["p95_ms"] <= 20.0


def test_c09_determinism(synth, tmp_path):
    data = write_synthetic(synth.sequence("noisy_translating"), tmp_path / "data")
    for run in ("a", "b"):
        args = ["refine", "--sequence", str(data / "sequence.jsonl"), "--object", str(data / "object.sdf"),
                "--skeleton", str(data / "skeleton.txt"), "--out", str(tmp_path / run)]
        assert main(args) == EXIT_OK
    for name in ("refined.jsonl", "report.csv", "summary.txt", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_c10_friction_cone_containment(synth):
    limit = np.arctan(MU) + 1e-9
    checked = 0
    for name in BUILTIN_SCENARIOS:
        for fr in synth.refined(name):
            sol, cs = fr.force_solution, fr.contact_status
            assert cone_angles(sol, cs).max() <= limit
            assert np.all(sol.f >= 0) and np.all(sol.d_refined >= 0) and np.all(cs.d_refined >= 0)
            checked += 1
    rng = np.random.default_rng(7)
    props = static_props()
    for _ in range(50):
        cs = two_tip_status(*rng.uniform(0.0, 0.01, size=2))
        dyn = DynamicsState(*(rng.normal(scale=0.5, size=(4, 3))), rng.normal(size=3) * 1e-3, np.zeros(3), props.inertia)
        sol = solve_contact_forces(cs, dyn, props)
        assert cone_angles(sol, cs).max() <= limit
        assert np.all(sol.f >= 0) and np.all(sol.d_refined >= 0)
    assert checked == sum(sc.frames for sc in BUILTIN_SCENARIOS.values())
