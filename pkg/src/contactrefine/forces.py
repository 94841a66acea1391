"""Contact force and tip-distance estimation from object dynamics (Stage II)."""

from dataclasses import dataclass, field, fields

import numpy as np

from .lm import projected_lm
from .rotations import cross
from .validation import check_positive, check_unit

N_EDGES = 4
DEFAULT_GRAVITY = (0.0, 0.0, -9.81)


@dataclass(frozen=True)
class SolverConfig:
    """Weights and scales of the contact energy.

    Residuals are nondimensionalized by ``force_scale`` (defaults to the
    object weight ``mass * |gravity|``) and ``length_scale``. Setting every
    weight and both scales to 1 gives the plain unweighted sum.
    """

    lambda_f: float = 1.0
    lambda_m: float = 1.0
    lambda_reg: float = 1e-4
    lambda_tac: float = 1.0
    lambda_smo: float = 0.1
    force_scale: float = None
    length_scale: float = 0.01
    max_iterations: int = 50
    gradient_tolerance: float = 1e-9
    cost_tolerance: float = 1e-8
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.2
    mass: float = 0.2
    mu: float = 0.7
    gravity: tuple = DEFAULT_GRAVITY

    def __post_init__(self):
        # a term may be switched off, but the regularizer keeps the problem well posed
        for name in ("lambda_f", "lambda_m", "lambda_tac", "lambda_smo"):
            check_positive(getattr(self, name), name, strict=False)
        check_positive(self.lambda_reg, "lambda_reg")
        check_positive(self.length_scale, "length_scale")
        check_positive(self.mass, "mass")
        check_positive(self.mu, "mu")
        if self.force_scale is not None:
            check_positive(self.force_scale, "force_scale")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))

    @property
    def weight(self):
        """Object weight ``G_o = m |g|`` in newtons."""
        return self.mass * float(np.linalg.norm(self.gravity))

    @property
    def resolved_force_scale(self):
        if self.force_scale is not None:
            return float(self.force_scale)
        w = self.weight
        return w if w > 0.0 else 1.0

    @classmethod
    def unweighted(cls, **kw):
        base = dict(
            lambda_f=1.0, lambda_m=1.0, lambda_reg=1.0, lambda_tac=1.0, lambda_smo=1.0, force_scale=1.0, length_scale=1.0
        )
        base.update(kw)
        return cls(**base)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class FrictionCone:
    apex: np.ndarray
    axis: np.ndarray
    mu: float
    basis: np.ndarray


@dataclass
class ForceSolution:
    f: np.ndarray
    F: np.ndarray
    pressure: np.ndarray
    d_refined: np.ndarray
    energies: dict
    iterations: int
    converged: bool
    energy_history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, d):
        d = np.asarray(d, dtype=float)
        k = len(d)
        return cls(
            f=np.zeros((k, N_EDGES)),
            F=np.zeros((k, 3)),
            pressure=np.zeros(k),
            d_refined=d.copy(),
            energies={name: 0.0 for name in ENERGY_TERMS},
            iterations=0,
            converged=True,
        )

    @property
    def total_energy(self):
        return float(sum(self.energies[k] for k in ENERGY_TERMS))

    def diagnostics_row(self):
        row = {f"E_{k}": self.energies[k] for k in ENERGY_TERMS}
        row["E_total"] = self.total_energy
        row["iterations"] = self.iterations
        row["converged"] = int(self.converged)
        return row


ENERGY_TERMS = ("force", "moment", "reg", "tac", "smo")


def _tangent_frame(axis):
    # least-aligned global axis; argmin keeps x before y before z on ties
    e = np.zeros(3)
    e[int(np.argmin(np.abs(axis)))] = 1.0
    t1 = np.cross(axis, e)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(axis, t1)
    return t1, t2


def friction_cone_basis(p, n_outward, mu=0.7):
    """Four-edge linearized friction cone at ``p`` pointing into the object."""
    n = check_unit(n_outward, "n_outward")
    n = n / np.linalg.norm(n)
    mu = check_positive(mu, "mu")
    axis = -n
    t1, t2 = _tangent_frame(axis)
    cols = [axis + mu * t for t in (t1, t2, -t1, -t2)]
    basis = np.stack([c / np.linalg.norm(c) for c in cols], axis=1)
    return FrictionCone(np.asarray(p, dtype=float), axis, mu, basis)


def cone_bases(cs, mu):
    """Stacked ``(k, 3, 4)`` cone bases; invalid tips get a placeholder cone."""
    n = np.where(np.asarray(cs.valid, dtype=bool)[:, None], np.asarray(cs.n, dtype=float), [0.0, 0.0, 1.0])
    axis = -n
    e = np.eye(3)[np.argmin(np.abs(axis), axis=1)]
    t1 = cross(axis, e)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = cross(axis, t1)
    cols = axis[:, None, :] + mu * np.stack([t1, t2, -t1, -t2], axis=1)
    cols /= np.linalg.norm(cols, axis=2, keepdims=True)
    return cols.transpose(0, 2, 1)


class ContactEnergy:
    """Stacked weighted residuals of the contact energy and their Jacobian.

    Variables are scaled: ``z = [f / force_scale (k*4), d~ / length_scale (k)]``.
    Row blocks: force (3), moment (3), regularization (4k), contact (4k),
    smoothness (k). Invalid tips keep only their regularization rows.
    """

    def __init__(self, cs, dyn, props, cfg, A=None):
        self.cfg = cfg
        self.k = k = len(cs.d)
        self.valid = np.asarray(cs.valid, dtype=bool)
        self.d = np.asarray(cs.d, dtype=float)
        self.Fs = Fs = cfg.resolved_force_scale
        self.L = L = cfg.length_scale
        self.A = cone_bases(cs, cfg.mu) if A is None else A
        m = props.mass
        g = np.asarray(cfg.gravity)
        self.sf = np.sqrt(cfg.lambda_f)
        self.sm = np.sqrt(cfg.lambda_m)
        self.sr = np.sqrt(cfg.lambda_reg)
        self.st = np.sqrt(cfg.lambda_tac)
        self.ss = np.sqrt(cfg.lambda_smo)

        nf = 4 * k
        self.n_vars = nf + k
        self.rows = {
            "force": slice(0, 3),
            "moment": slice(3, 6),
            "reg": slice(6, 6 + nf),
            "tac": slice(6 + nf, 6 + 2 * nf),
            "smo": slice(6 + 2 * nf, 6 + 2 * nf + k),
        }
        self.n_rows = 6 + 2 * nf + k

        arms = np.asarray(cs.p, dtype=float) - np.asarray(dyn.com_live, dtype=float)
        Jf = np.zeros((3, nf))
        Jm = np.zeros((3, nf))
        moment_cols = cross(arms[:, None, :], self.A.transpose(0, 2, 1))
        for i in np.flatnonzero(self.valid):
            Jf[:, 4 * i : 4 * i + 4] = self.A[i]
            Jm[:, 4 * i : 4 * i + 4] = moment_cols[i].T
        self.Jf = Jf
        self.Jm = Jm / L
        self.b_force = (m * g - m * np.asarray(dyn.v_dot, dtype=float)) / Fs
        self.b_moment = -np.asarray(dyn.tau, dtype=float) / (Fs * L)
        self.d_hat = self.d / L
        self.tac_mask = np.repeat(self.valid, 4).astype(float)
        self.smo_mask = self.valid.astype(float)

        J = np.zeros((self.n_rows, self.n_vars))
        J[self.rows["force"], :nf] = self.sf * self.Jf
        J[self.rows["moment"], :nf] = self.sm * self.Jm
        J[self.rows["reg"], :nf] = self.sr * np.eye(nf)
        J[self.rows["smo"], nf:] = self.ss * np.diag(self.smo_mask)
        self._J_base = J
        self._tac_rows = np.arange(6 + nf, 6 + 2 * nf)
        self._tac_f_cols = np.arange(nf)
        self._tac_d_cols = nf + np.repeat(np.arange(k), 4)

    def scale(self, f, d_tilde):
        return np.concatenate([np.asarray(f, dtype=float).ravel() / self.Fs, np.asarray(d_tilde, dtype=float) / self.L])

    def unscale(self, z):
        nf = 4 * self.k
        return z[:nf].reshape(self.k, 4) * self.Fs, z[nf:] * self.L

    def residual(self, z):
        nf = 4 * self.k
        fh = z[:nf]
        dh = z[nf:]
        return np.concatenate(
            [
                self.sf * (self.Jf @ fh + self.b_force),
                self.sm * (self.Jm @ fh + self.b_moment),
                self.sr * fh,
                self.st * self.tac_mask * np.repeat(dh, 4) * fh,
                self.ss * self.smo_mask * (dh - self.d_hat),
            ]
        )

    def jacobian(self, z):
        nf = 4 * self.k
        fh = z[:nf]
        dh = z[nf:]
        J = self._J_base.copy()
        J[self._tac_rows, self._tac_f_cols] = self.st * self.tac_mask * np.repeat(dh, 4)
        J[self._tac_rows, self._tac_d_cols] = self.st * self.tac_mask * fh
        return J

    def terms(self, z):
        r = self.residual(z)
        return {name: float(r[s] @ r[s]) for name, s in self.rows.items()}


def evaluate_energy(f, d_tilde, cs, dyn, props, cfg):
    """Weighted residual vector and per-term energies at ``(f, d~)``."""
    energy = ContactEnergy(cs, dyn, props, cfg)
    z = energy.scale(f, d_tilde)
    return energy.residual(z), energy.terms(z)


def solve_contact_forces(cs, dyn, props, cfg=None, warm_start=None):
    """Jointly estimate cone coefficients and refined tip distances.

    Minimizes the contact energy over ``f >= 0``, ``d~ >= 0`` with projected
    Levenberg-Marquardt. Cone geometry is held fixed; invalid tips have their
    distance pinned and can only carry regularized (hence zero) force.
    Writes the refined distances back into ``cs.d_refined``.
    """
    cfg = SolverConfig() if cfg is None else cfg
    energy = ContactEnergy(cs, dyn, props, cfg)
    k = energy.k
    f0 = np.zeros((k, N_EDGES))
    if warm_start is not None and np.shape(warm_start.f) == (k, N_EDGES):
        f0 = np.where(cs.valid[:, None], np.maximum(warm_start.f, 0.0), 0.0)
    z0 = energy.scale(f0, cs.d)
    fixed = np.concatenate([np.zeros(4 * k, dtype=bool), ~energy.valid])
    lower = np.zeros(energy.n_vars)
    upper = np.full(energy.n_vars, np.inf)
    res = projected_lm(
        energy.residual,
        energy.jacobian,
        z0,
        lower,
        upper,
        fixed=fixed,
        max_iterations=int(cfg.max_iterations),
        gradient_tolerance=cfg.gradient_tolerance,
        cost_tolerance=cfg.cost_tolerance,
        damping=cfg.damping_init,
        damping_up=cfg.damping_up,
        damping_down=cfg.damping_down,
    )
    f, d_ref = energy.unscale(res.x)
    d_ref = np.where(energy.valid, d_ref, cs.d)
    F = np.einsum("kij,kj->ki", energy.A, f)
    axes = -np.asarray(cs.n, dtype=float)
    pressure = np.einsum("ki,ki->k", axes, F)
    cs.d_refined = d_ref.copy()
    return ForceSolution(
        f=f,
        F=F,
        pressure=pressure,
        d_refined=d_ref,
        energies=energy.terms(res.x),
        iterations=res.iterations,
        converged=res.converged,
        energy_history=res.history,
    )


def cone_angles(sol, cs):
    """Angle between each tip force and its cone axis (0 for zero forces)."""
    axes = -np.asarray(cs.n, dtype=float)
    norms = np.linalg.norm(sol.F, axis=1)
    cosang = np.einsum("ki,ki->k", axes, sol.F) / np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, np.arccos(np.clip(cosang, -1.0, 1.0)), 0.0)
