"""Small SO(3) toolkit: skew matrices, exponential/logarithm maps, quaternions."""

import numpy as np

_PI_BRANCH = 1e-6


def cross(a, b):
    """Broadcasting cross product; avoids ``np.cross`` overhead on tiny arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def skew(w):
    """Cross-product matrix ``[w]`` such that ``skew(w) @ x == np.cross(w, x)``."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(M):
    return np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]]) * 0.5


def exp_so3(phi):
    """Rotation matrix for the rotation vector ``phi`` (Rodrigues)."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.sqrt(phi @ phi))
    K = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R):
    """Rotation vector (axis * angle, angle in [0, pi]) of a rotation matrix.

    The angle comes from ``atan2(sin, cos)`` so it stays accurate near zero.
    Within ``1e-6`` of pi the axis is read off the symmetric part, which is
    the only part of ``R`` that still carries it reliably there.
    """
    R = np.asarray(R, dtype=float)
    s_vec = vee(R)
    s = float(np.sqrt(s_vec @ s_vec))
    c = (np.trace(R) - 1.0) * 0.5
    angle = float(np.arctan2(s, c))
    if angle < 1e-10:
        return s_vec.copy()
    if np.pi - angle > _PI_BRANCH:
        return s_vec * (angle / s)
    # aa^T = (sym(R) - cos I) / (1 - cos)
    sym = 0.5 * (R + R.T)
    outer = (sym - c * np.eye(3)) / (1.0 - c)
    k = int(np.argmax(np.diag(outer)))
    axis = outer[:, k] / np.sqrt(max(outer[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if s > 0.0 and axis @ s_vec < 0.0:
        axis = -axis
    return axis * angle


def left_jacobian(phi):
    """Left Jacobian of SO(3): ``d exp(phi) = skew(J_l(phi) dphi) exp(phi)``."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.sqrt(phi @ phi))
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        + ((1.0 - np.cos(theta)) / t2) * K
        + ((theta - np.sin(theta)) / (t2 * theta)) * (K @ K)
    )


def quat_to_matrix(q):
    """Unit quaternion in ``(w, x, y, z)`` order to a rotation matrix; normalizes first."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Rotation matrix to a ``(w, x, y, z)`` quaternion with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def orthonormalize(R):
    """Nearest rotation matrix (SVD projection)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt
