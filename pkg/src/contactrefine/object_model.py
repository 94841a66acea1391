"""Canonical object representation: SDF grid, surface mesh, rigid pose, physical properties."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage import measure

from .rotations import exp_so3, matrix_to_quat, orthonormalize, quat_to_matrix
from .validation import check_points, check_positive, check_rotation, check_vector3

DEFAULT_VOXEL_SIZE = 0.002
DEFAULT_TRUNCATION = 0.010
DEFAULT_PADDING = 0.020
DEFAULT_MASS = 0.2


class OpenSurfaceError(ValueError):
    pass


class EmptySurfaceError(ValueError):
    pass


@dataclass(frozen=True)
class SdfGrid:
    """Truncated signed distance samples on a regular grid.

    ``values`` has shape ``dims`` and is indexed ``values[ix, iy, iz]``;
    node ``(i, j, k)`` sits at ``origin + voxel_size * (i, j, k)``.
    Negative inside, positive outside.
    """

    origin: np.ndarray
    voxel_size: float
    values: np.ndarray
    truncation: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError(f"grid dims must be 3 integers >= 2, got {values.shape}")
        check_positive(self.voxel_size, "voxel_size")
        check_positive(self.truncation, "truncation")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        values = np.clip(values, -self.truncation, self.truncation)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", check_vector3(self.origin, "origin"))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "truncation", float(self.truncation))

    @property
    def dims(self):
        return self.values.shape

    @property
    def upper(self):
        return self.origin + self.voxel_size * (np.array(self.dims) - 1)

    def inverted(self):
        return SdfGrid(self.origin, self.voxel_size, -self.values, self.truncation)


@dataclass(frozen=True)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        verts = check_points(self.vertices, "vertices")
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("triangle index out of range")
        normals = self.normals
        if normals is not None:
            normals = check_points(normals, "normals", n=len(verts))
            lengths = np.linalg.norm(normals, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-6):
                raise ValueError("normals must be unit length")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "normals", normals)

    def area(self):
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())


@dataclass(frozen=True)
class PhysicalProperties:
    mass: float
    center_of_mass: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        check_positive(self.mass, "mass")
        object.__setattr__(self, "center_of_mass", check_vector3(self.center_of_mass, "center_of_mass"))
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape != (3, 3):
            raise ValueError("inertia must be 3x3")
        if np.max(np.abs(inertia - inertia.T)) > 1e-12:
            raise ValueError("inertia must be symmetric")
        object.__setattr__(self, "inertia", inertia)


@dataclass(frozen=True)
class RigidPose:
    """``x_live = rotation @ x_canonical + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        object.__setattr__(self, "translation", check_vector3(self.translation, "translation"))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_quaternion(cls, wxyz, translation):
        pose = cls(quat_to_matrix(wxyz), translation)
        # kept verbatim so that writing the pose back out reproduces the input exactly
        object.__setattr__(pose, "source_quaternion", np.array(wxyz, dtype=float))
        return pose

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls(exp_so3(rotvec), translation)

    def as_quaternion(self):
        return matrix_to_quat(self.rotation)

    def inverse(self):
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        """Composition: ``(a @ b).apply(x) == a.apply(b.apply(x))``."""
        R = orthonormalize(self.rotation @ other.rotation)
        return RigidPose(R, self.rotation @ other.translation + self.translation)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.rotation.T + self.translation

    def apply_direction(self, x):
        return np.asarray(x, dtype=float) @ self.rotation.T


def transform(pose, x, is_direction=False):
    """Map point(s) or direction(s) ``x`` (``(3,)`` or ``(N, 3)``) through ``pose``."""
    return pose.apply_direction(x) if is_direction else pose.apply(x)


# --- SDF queries ------------------------------------------------------------


def sample_sdf(grid, x):
    """Trilinear SDF value and its analytic gradient at ``x``.

    Accepts one point ``(3,)`` or a batch ``(N, 3)``. Returns
    ``(d, grad, clamped)`` where ``clamped`` flags queries that fell outside
    the grid and were evaluated at the nearest boundary point.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    h = grid.voxel_size
    dims = np.array(grid.dims)
    u = (pts - grid.origin) / h
    hi = dims - 1
    clamped = np.any((u < -1e-9) | (u > hi + 1e-9), axis=1)
    u = np.clip(u, 0.0, hi)
    i0 = np.minimum(np.floor(u).astype(np.int64), dims - 2)
    t = u - i0
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    # gather all eight cell corners with one flat index
    ny, nz = dims[1], dims[2]
    base = (i0[:, 0] * ny + i0[:, 1]) * nz + i0[:, 2]
    offsets = np.array([0, ny * nz, nz, ny * nz + nz, 1, ny * nz + 1, nz + 1, ny * nz + nz + 1])
    c = grid.values.reshape(-1)[base[:, None] + offsets]
    c000, c100, c010, c110, c001, c101, c011, c111 = c.T

    # interpolate along x, then y, then z
    c00 = c000 + tx * (c100 - c000)
    c10 = c010 + tx * (c110 - c010)
    c01 = c001 + tx * (c101 - c001)
    c11 = c011 + tx * (c111 - c011)
    c0 = c00 + ty * (c10 - c00)
    c1 = c01 + ty * (c11 - c01)
    d = c0 + tz * (c1 - c0)

    gx0 = (1 - ty) * (c100 - c000) + ty * (c110 - c010)
    gx1 = (1 - ty) * (c101 - c001) + ty * (c111 - c011)
    gx = ((1 - tz) * gx0 + tz * gx1) / h
    gy = ((1 - tz) * (c10 - c00) + tz * (c11 - c01)) / h
    gz = (c1 - c0) / h
    grad = np.stack([gx, gy, gz], axis=1)
    if single:
        return float(d[0]), grad[0], bool(clamped[0])
    return d, grad, clamped


def analytic_grid(sdf_fn, lower, upper, voxel_size=DEFAULT_VOXEL_SIZE, truncation=DEFAULT_TRUNCATION):
    """Grid filled by evaluating a closed-form signed distance function at the nodes."""
    check_positive(voxel_size, "voxel_size")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dims = _grid_dims(upper - lower, voxel_size)
    axes = [lower[k] + voxel_size * np.arange(dims[k]) for k in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    values = sdf_fn(np.stack([X, Y, Z], axis=-1).reshape(-1, 3)).reshape(dims)
    return SdfGrid(lower, voxel_size, np.clip(values, -truncation, truncation), truncation)


def _grid_dims(extent, voxel_size):
    return tuple(int(np.ceil(e / voxel_size - 1e-9)) + 1 for e in extent)


# --- mesh -> SDF ------------------------------------------------------------


def check_closed_orientable(mesh):
    """Raise unless every edge is shared by exactly two consistently wound triangles."""
    tris = mesh.triangles
    if len(tris) < 4:
        raise OpenSurfaceError("non-orientable or open surface")
    a, b, c = (mesh.vertices[tris[:, k]] for k in range(3))
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    scale = np.ptp(mesh.vertices, axis=0).max()
    if np.any(areas <= 1e-14 * scale * scale) or np.any(tris[:, 0] == tris[:, 1]) or np.any(
        tris[:, 1] == tris[:, 2]
    ) or np.any(tris[:, 0] == tris[:, 2]):
        raise OpenSurfaceError("non-orientable or open surface")
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    # each directed edge exactly once, and its reverse exactly once
    n = len(mesh.vertices)
    keys = directed[:, 0] * n + directed[:, 1]
    rev = directed[:, 1] * n + directed[:, 0]
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts != 1):
        raise OpenSurfaceError("non-orientable or open surface")
    if not np.all(np.isin(rev, uniq)):
        raise OpenSurfaceError("non-orientable or open surface")


def _point_triangle_distance(P, a, b, c):
    """Euclidean distance from each row of ``P`` to triangle ``abc`` (Ericson's region test)."""
    ab = b - a
    ac = c - a
    ap = P - a
    d1 = ap @ ab
    d2 = ap @ ac
    bp = P - b
    d3 = bp @ ab
    d4 = bp @ ac
    cp = P - c
    d5 = cp @ ab
    d6 = cp @ ac

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4
    denom = va + vb + vc
    denom = np.where(denom == 0.0, 1e-300, denom)
    v = vb / denom
    w = vc / denom
    closest = a + v[:, None] * ab + w[:, None] * ac

    def on_edge(mask, start, edge, t):
        closest[mask] = start + np.clip(t[mask], 0.0, 1.0)[:, None] * edge

    with np.errstate(divide="ignore", invalid="ignore"):
        # edge regions
        m_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        on_edge(m_ab, a, ab, d1 / (d1 - d3))
        m_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        on_edge(m_ac, a, ac, d2 / (d2 - d6))
        m_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        on_edge(m_bc, b, c - b, (d4 - d3) / ((d4 - d3) + (d5 - d6)))
    # vertex regions override
    closest[(d1 <= 0) & (d2 <= 0)] = a
    closest[(d3 >= 0) & (d4 <= d3)] = b
    closest[(d6 >= 0) & (d5 <= d6)] = c
    return np.linalg.norm(P - closest, axis=1)


def bake_sdf(mesh, voxel_size=DEFAULT_VOXEL_SIZE, truncation=DEFAULT_TRUNCATION, padding=DEFAULT_PADDING):
    """Bake a closed triangle mesh into a truncated SDF grid.

    Exact point-triangle distances are computed in a narrow band around each
    triangle; the sign comes from ray parity along +x for every (y, z) grid line.
    """
    check_positive(voxel_size, "voxel_size")
    check_positive(truncation, "truncation")
    check_positive(padding, "padding", strict=False)
    check_closed_orientable(mesh)
    V = mesh.vertices
    tris = mesh.triangles
    lower = V.min(axis=0) - padding
    upper = V.max(axis=0) + padding
    dims = _grid_dims(upper - lower, voxel_size)
    h = voxel_size
    axes = [lower[k] + h * np.arange(dims[k]) for k in range(3)]
    dist = np.full(dims, np.inf)

    band = truncation + h
    for tri in tris:
        a, b, c = V[tri]
        lo = np.minimum(np.minimum(a, b), c) - band
        hi = np.maximum(np.maximum(a, b), c) + band
        i0 = np.maximum(np.ceil((lo - lower) / h).astype(int), 0)
        i1 = np.minimum(np.floor((hi - lower) / h).astype(int), np.array(dims) - 1)
        if np.any(i1 < i0):
            continue
        X, Y, Z = np.meshgrid(
            axes[0][i0[0] : i1[0] + 1], axes[1][i0[1] : i1[1] + 1], axes[2][i0[2] : i1[2] + 1], indexing="ij"
        )
        P = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        dd = _point_triangle_distance(P, a, b, c).reshape(X.shape)
        block = dist[i0[0] : i1[0] + 1, i0[1] : i1[1] + 1, i0[2] : i1[2] + 1]
        np.minimum(block, dd, out=block)

    inside = _inside_by_ray_parity(V, tris, axes, dims)
    values = np.minimum(dist, truncation)
    values[inside] *= -1.0
    return SdfGrid(lower, voxel_size, values, truncation)


def _inside_by_ray_parity(V, tris, axes, dims):
    # rays are nudged off the grid lines by an irrational fraction of a voxel so
    # they never pass exactly through a mesh edge or vertex
    h = axes[0][1] - axes[0][0]
    jitter = np.array([0.0, 1.3247e-4, 0.7549e-4]) * h
    ys = axes[1] + jitter[1]
    zs = axes[2] + jitter[2]
    hits = [[] for _ in range(dims[1] * dims[2])]
    for tri in tris:
        a, b, c = V[tri]
        ymin, ymax = min(a[1], b[1], c[1]), max(a[1], b[1], c[1])
        zmin, zmax = min(a[2], b[2], c[2]), max(a[2], b[2], c[2])
        j = np.nonzero((ys >= ymin) & (ys <= ymax))[0]
        k = np.nonzero((zs >= zmin) & (zs <= zmax))[0]
        if len(j) == 0 or len(k) == 0:
            continue
        J, K = np.meshgrid(j, k, indexing="ij")
        py = ys[J].ravel()
        pz = zs[K].ravel()
        # barycentric coordinates in the yz projection
        det = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2])
        if det == 0.0:
            continue
        l1 = ((py - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (pz - a[2])) / det
        l2 = ((b[1] - a[1]) * (pz - a[2]) - (py - a[1]) * (b[2] - a[2])) / det
        l0 = 1.0 - l1 - l2
        ok = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not np.any(ok):
            continue
        xhit = l0[ok] * a[0] + l1[ok] * b[0] + l2[ok] * c[0]
        for line, xv in zip((J.ravel() * dims[2] + K.ravel())[ok], xhit):
            hits[line].append(xv)
    inside = np.zeros(dims, dtype=bool)
    xs = axes[0]
    for line, xv in enumerate(hits):
        if not xv:
            continue
        xv = np.sort(xv)
        above = len(xv) - np.searchsorted(xv, xs, side="right")
        inside[:, line // dims[2], line % dims[2]] = (above % 2) == 1
    return inside


# --- SDF -> mesh ------------------------------------------------------------


def extract_surface(grid):
    """Zero isosurface via marching cubes; normals are the normalized SDF gradient."""
    V = grid.values
    if V.min() >= 0.0 or V.max() <= 0.0:
        raise EmptySurfaceError("empty surface")
    h = grid.voxel_size
    verts, faces, _, _ = measure.marching_cubes(V, level=0.0, spacing=(h, h, h), allow_degenerate=False)
    verts = verts.astype(float) + grid.origin
    _, grad, _ = sample_sdf(grid, verts)
    norms = np.linalg.norm(grad, axis=1)
    bad = norms < 1e-12
    if np.any(bad):
        # vertices on a flat plateau: fall back to the face normals around them
        a, b, c = (verts[faces[:, k]] for k in range(3))
        fn = np.cross(b - a, c - a)
        acc = np.zeros_like(verts)
        for k in range(3):
            np.add.at(acc, faces[:, k], fn)
        grad[bad] = acc[bad]
        norms = np.linalg.norm(grad, axis=1)
    normals = grad / norms[:, None]
    # wind triangles so their geometric normal agrees with the SDF normal
    a, b, c = (verts[faces[:, k]] for k in range(3))
    fn = np.cross(b - a, c - a)
    agree = np.einsum("ij,ij->i", fn, normals[faces].sum(axis=1))
    if np.sum(agree < 0) > np.sum(agree > 0):
        faces = faces[:, [0, 2, 1]]
    return SurfaceMesh(verts, faces, normals)


# --- physical properties ----------------------------------------------------


def compute_physical_properties(mesh, mass=DEFAULT_MASS):
    """Hollow-object properties: mass spread evenly over the surface vertices.

    The center of mass is the plain vertex mean and the inertia tensor is
    ``(mass / N) * sum_k (|r_k|^2 I - r_k r_k^T)`` with ``r_k = v_k - c``.
    """
    check_positive(mass, "mass")
    verts = mesh.vertices if isinstance(mesh, SurfaceMesh) else check_points(mesh, "vertices")
    if len(verts) == 0:
        raise ValueError("cannot compute physical properties of an empty mesh")
    com = verts.mean(axis=0)
    r = verts - com
    sq = np.einsum("ij,ij->", r, r)
    inertia = (mass / len(verts)) * (sq * np.eye(3) - r.T @ r)
    inertia = 0.5 * (inertia + inertia.T)
    return PhysicalProperties(float(mass), com, inertia)


# --- primitive meshes -------------------------------------------------------


def box_mesh(size, center=(0.0, 0.0, 0.0)):
    """Closed, outward-wound box with side lengths ``size``."""
    hx, hy, hz = np.asarray(size, dtype=float) / 2.0
    corners = np.array(
        [[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    ) + np.asarray(center, dtype=float)
    # corner index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for q in quads:
        tris.append((q[0], q[1], q[2]))
        tris.append((q[0], q[2], q[3]))
    return SurfaceMesh(corners, np.array(tris))


def icosphere(radius, subdivisions=3, center=(0.0, 0.0, 0.0)):
    t = (1.0 + 5**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    V = np.array(verts) * radius + np.asarray(center, dtype=float)
    return SurfaceMesh(V, np.array(faces))


def sphere_sdf(radius, center=(0.0, 0.0, 0.0)):
    center = np.asarray(center, dtype=float)
    return lambda P: np.linalg.norm(np.asarray(P) - center, axis=-1) - radius


def box_sdf(size, center=(0.0, 0.0, 0.0)):
    half = np.asarray(size, dtype=float) / 2.0
    center = np.asarray(center, dtype=float)

    def fn(P):
        q = np.abs(np.asarray(P) - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    return fn


# --- file formats -----------------------------------------------------------


def write_sdf(grid, path):
    """Write ``SDF1 nx ny nz ox oy oz voxel trunc`` + float32 LE values, x fastest."""
    nx, ny, nz = grid.dims
    nums = [float(v) for v in grid.origin] + [float(grid.voxel_size), float(grid.truncation)]
    header = f"SDF1 {nx} {ny} {nz} " + " ".join(repr(v) for v in nums) + "\n"
    data = np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes()
    Path(path).write_bytes(header.encode("ascii") + data)


def read_sdf(path):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}:1: missing SDF header line")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 9 or parts[0] != "SDF1":
        raise ValueError(f"{path}:1: expected 'SDF1 nx ny nz ox oy oz voxel trunc'")
    try:
        nx, ny, nz = (int(p) for p in parts[1:4])
        ox, oy, oz, voxel, trunc = (float(p) for p in parts[4:9])
    except ValueError as exc:
        raise ValueError(f"{path}:1: malformed SDF header ({exc})") from None
    payload = raw[nl + 1 :]
    expected = nx * ny * nz * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} bytes of grid data, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").astype(float).reshape((nx, ny, nz), order="F")
    return SdfGrid(np.array([ox, oy, oz]), voxel, values, trunc)


def read_obj(path):
    """Triangle-only Wavefront OBJ reader (meters). Quads and larger faces are rejected."""
    verts, tris = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(p) for p in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    if len(idx) != 3:
                        raise ValueError(f"only triangles are supported, got a {len(idx)}-gon")
                    tris.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return SurfaceMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh, path):
    lines = ["v " + " ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
