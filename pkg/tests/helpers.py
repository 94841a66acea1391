"""Hand-built scenes shared by several test modules."""

import numpy as np

from contactrefine.contact import ContactStatus
from contactrefine.dynamics import DynamicsState
from contactrefine.object_model import PhysicalProperties, RigidPose

MASS = 0.2
G = 9.81


def static_props(mass=MASS):
    """Point-symmetric object centered at the origin."""
    return PhysicalProperties(mass, np.zeros(3), np.diag([1.0, 1.0, 1.0]) * 1e-3)


def static_dynamics(props):
    return DynamicsState.at_rest(props, RigidPose.identity())


def two_tip_status(d_a=0.0, d_b=0.0, half_width=0.05):
    """Tips 0 and 1 on the -x and +x faces of a box at the origin; tips 2-4 far away."""
    centers = np.zeros((5, 3))
    centers[0] = (-half_width - 0.008 - d_a, 0.0, 0.0)
    centers[1] = (half_width + 0.008 + d_b, 0.0, 0.0)
    centers[2:] = (0.0, 0.0, 0.5)
    cs = ContactStatus.empty(centers)
    cs.p[0] = (-half_width, 0.0, 0.0)
    cs.p[1] = (half_width, 0.0, 0.0)
    cs.n[0] = (-1.0, 0.0, 0.0)
    cs.n[1] = (1.0, 0.0, 0.0)
    cs.d[:2] = (d_a, d_b)
    cs.d_refined = cs.d.copy()
    cs.valid[:2] = True
    cs.sample[0] = cs.p[0] + d_a * cs.n[0]
    cs.sample[1] = cs.p[1] + d_b * cs.n[1]
    return cs
