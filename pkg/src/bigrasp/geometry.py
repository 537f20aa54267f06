"""Meshes, point clouds, rigid grasp poses and the simplified gripper model.

Conventions used throughout the package:

* Gripper frame: palm center at the origin, approach axis ``+z`` (third
  rotation column), closing axis ``x`` (first column). Finger bases sit at
  ``(+-width/2, 0, 0)`` and finger tips at ``(+-width/2, 0, finger_length)``.
* Point clouds are plain ``(N, 3)`` float64 arrays.
* Meshes are expected to be closed with outward (counter-clockwise) winding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument, InvalidMesh
from .rng import as_generator

ORTHONORMAL_TOL = 1e-9
DEGENERATE_AREA = 1e-12
# generic direction for inside/outside parity rays; avoids axis-aligned edges
_PARITY_DIR = np.array([0.5412658773652741, 0.7071067811865476, 0.4545454545454545])
_PARITY_DIR = _PARITY_DIR / np.linalg.norm(_PARITY_DIR)


def as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
        raise InvalidArgument(f"point cloud must be (N>=1, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidArgument("point cloud contains non-finite coordinates")
    return pts


class TriMesh:
    """Triangle mesh with derived mass properties.

    Triangles with area below ``1e-12`` are dropped on construction.
    ``scale`` is the largest bounding-box extent in the frame the mesh was
    built in; rigid copies made by :meth:`transformed` keep it, so anything
    normalized by it is invariant under rigid motion.
    """

    def __init__(self, vertices, triangles, scale: float | None = None):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(v) == 0 or len(f) == 0:
            raise InvalidMesh("mesh has no vertices or no triangles")
        if not np.all(np.isfinite(v)):
            raise InvalidMesh("mesh vertices must be finite")
        if f.min() < 0 or f.max() >= len(v):
            raise InvalidMesh("triangle index out of range")
        tri = v[f]
        area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        f = f[area >= DEGENERATE_AREA]
        if len(f) == 0:
            raise InvalidMesh("all triangles are degenerate")
        self.vertices = v
        self.triangles = f
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        self._scale = scale

    def __repr__(self):
        return f"TriMesh(vertices={len(self.vertices)}, triangles={len(self.triangles)})"

    @cached_property
    def corners(self) -> np.ndarray:
        """``(T, 3, 3)`` triangle vertex coordinates."""
        return self.vertices[self.triangles]

    @cached_property
    def face_areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def volume(self) -> float:
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    @cached_property
    def center_of_mass(self) -> np.ndarray:
        """Solid centroid for closed meshes, area-weighted surface centroid otherwise."""
        c = self.corners
        vol = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])) / 6.0
        total = vol.sum()
        if abs(total) > 1e-12 * self.scale ** 3:
            com = (vol[:, None] * c.sum(axis=1) / 4.0).sum(axis=0) / total
        else:
            a = self.face_areas
            com = (a[:, None] * c.mean(axis=1)).sum(axis=0) / a.sum()
        return com

    @cached_property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @cached_property
    def scale(self) -> float:
        """Largest bounding-box extent (of the original frame, see the class docstring)."""
        if self._scale is not None:
            return float(self._scale)
        lo, hi = self.bounds
        return float((hi - lo).max())

    @cached_property
    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        lo, hi = self.bounds
        center = 0.5 * (lo + hi)
        return center, float(np.linalg.norm(self.vertices - center, axis=1).max())

    def transformed(self, rotation, translation) -> "TriMesh":
        R = np.asarray(rotation, dtype=np.float64)
        return TriMesh(self.vertices @ R.T + np.asarray(translation, dtype=np.float64), self.triangles, self.scale)


def box_mesh(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box, 12 outward-facing triangles."""
    e = np.asarray(extents, dtype=np.float64) / 2.0
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    v = signs * e + np.asarray(center, dtype=np.float64)
    # vertex index = 4*ix + 2*iy + iz
    f = [
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ]
    return TriMesh(v, f)


def icosphere(radius=1.0, subdivisions=2, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Subdivided icosahedron projected onto a sphere (centrally symmetric)."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
             [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
             [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriMesh(v, faces)


# --------------------------------------------------------------------------- poses


@dataclass(frozen=True, eq=False)
class GraspPose:
    """Rigid pose of one parallel-jaw gripper plus its jaw opening (meters)."""

    rotation: np.ndarray
    translation: np.ndarray
    width: float

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidArgument("grasp pose must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHONORMAL_TOL or abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidArgument("grasp rotation must be orthonormal with det +1")
        w = float(self.width)
        if not w > 0.0:
            raise InvalidArgument(f"grasp width must be positive, got {w}")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "width", w)

    @property
    def closing_axis(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def approach_axis(self) -> np.ndarray:
        return self.rotation[:, 2]

    def transform_points(self, local) -> np.ndarray:
        return np.asarray(local, dtype=np.float64) @ self.rotation.T + self.translation

    def moved(self, rotation=np.eye(3), translation=np.zeros(3)) -> "GraspPose":
        """Pose after a world-frame rigid motion ``x -> rotation @ x + translation``."""
        R = np.asarray(rotation, dtype=np.float64)
        return GraspPose(R @ self.rotation, R @ self.translation + translation, self.width)

    def key(self) -> tuple:
        """Total order used to canonicalize unordered grasp pairs."""
        return tuple(self.rotation.ravel()) + tuple(self.translation) + (self.width,)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
            "width": float(self.width),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraspPose":
        return cls(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3), d["translation"], d["width"])


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def frame_from_axes(closing, approach) -> np.ndarray:
    """Rotation with first column ``closing`` and third column ``approach`` (Gram-Schmidt)."""
    x = np.asarray(closing, dtype=np.float64)
    x = x / np.linalg.norm(x)
    z = np.asarray(approach, dtype=np.float64)
    z = z - (z @ x) * x
    z = z / np.linalg.norm(z)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def random_rotation(rng) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# --------------------------------------------------------------------------- gripper


@dataclass(frozen=True)
class GripperSpec:
    """Box model of a parallel-jaw gripper. Defaults follow a Franka hand with 6 cm fingers."""

    max_opening: float = 0.08
    finger_length: float = 0.06
    finger_thickness: float = 0.01
    finger_width: float = 0.02
    palm_depth: float = 0.02
    palm_width: float = 0.09
    palm_thickness: float = 0.02

    def __post_init__(self):
        for name in ("max_opening", "finger_length", "finger_thickness", "finger_width",
                     "palm_depth", "palm_width", "palm_thickness"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"GripperSpec.{name} must be positive")

    @property
    def jaw_depth(self) -> float:
        """Distance from the palm center to the closing line along the approach axis."""
        return self.finger_length / 2.0

    def keypoint_offsets(self, width: float) -> np.ndarray:
        """Gripper-frame keypoints: palm center, left/right finger base, left/right tip."""
        h = width / 2.0
        L = self.finger_length
        return np.array([
            [0.0, 0.0, 0.0],
            [-h, 0.0, 0.0],
            [h, 0.0, 0.0],
            [-h, 0.0, L],
            [h, 0.0, L],
        ])


# signs/depths of the five keypoints, shared with the differentiable loss
KEYPOINT_LATERAL = np.array([0.0, -1.0, 1.0, -1.0, 1.0])
KEYPOINT_DEPTH = np.array([0.0, 0.0, 0.0, 1.0, 1.0])


def _check_width(g: GraspPose, spec: GripperSpec):
    if g.width > spec.max_opening * (1 + 1e-12):
        raise InvalidArgument(f"grasp width {g.width} exceeds max opening {spec.max_opening}")


def gripper_keypoints(g: GraspPose, spec: GripperSpec = GripperSpec()) -> np.ndarray:
    _check_width(g, spec)
    return g.transform_points(spec.keypoint_offsets(g.width))


def jaw_center(g: GraspPose, spec: GripperSpec = GripperSpec()) -> np.ndarray:
    return g.translation + spec.jaw_depth * g.approach_axis


@dataclass(frozen=True, eq=False)
class Obb:
    center: np.ndarray
    half_extents: np.ndarray
    axes: np.ndarray  # columns are the box axes

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        A = np.asarray(self.axes, dtype=np.float64).reshape(3, 3)
        if not np.all(h > 0):
            raise InvalidArgument("OBB half extents must be positive")
        if np.abs(A.T @ A - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise InvalidArgument("OBB axes must be orthonormal")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "axes", A)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        local = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center) @ self.axes
        return np.all(np.abs(local) <= self.half_extents + tol, axis=1)

    def corners(self) -> np.ndarray:
        s = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
        return (s * self.half_extents) @ self.axes.T + self.center


def gripper_obbs(g: GraspPose, spec: GripperSpec = GripperSpec(), closing_region: bool = False) -> list[Obb]:
    """Palm, left finger and right finger boxes placed by ``g``.

    Finger boxes are centered on the jaw lines at ``x = +-width/2``. With
    ``closing_region=True`` a fourth box spanning the space between the jaws is
    appended; the diversity metric counts points there as covered.
    """
    _check_width(g, spec)
    R, t = g.rotation, g.translation
    h = g.width / 2.0
    L = spec.finger_length
    palm = Obb(R @ [0.0, 0.0, -spec.palm_depth / 2.0] + t,
               [spec.palm_width / 2.0, spec.palm_thickness / 2.0, spec.palm_depth / 2.0], R)
    finger_half = [spec.finger_thickness / 2.0, spec.finger_width / 2.0, L / 2.0]
    left = Obb(R @ [-h, 0.0, L / 2.0] + t, finger_half, R)
    right = Obb(R @ [h, 0.0, L / 2.0] + t, finger_half, R)
    boxes = [palm, left, right]
    if closing_region:
        boxes.append(Obb(R @ [0.0, 0.0, L / 2.0] + t, [h, spec.finger_width / 2.0, L / 2.0], R))
    return boxes


# --------------------------------------------------------------------------- sampling


def sample_surface_points(mesh: TriMesh, n: int, seed=0) -> np.ndarray:
    """Area-uniform samples on the mesh surface, ``(n, 3)``."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    points, _ = sample_surface(mesh, n, as_generator(seed))
    return points


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Surface samples and the index of the triangle each one lies on."""
    if mesh is None or len(mesh.triangles) == 0:
        raise InvalidMesh("empty mesh")
    p = mesh.face_areas / mesh.face_areas.sum()
    tri = rng.choice(len(p), size=n, p=p)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners[tri]
    pts = ((1 - r1)[:, None] * c[:, 0] + (r1 * (1 - r2))[:, None] * c[:, 1] + (r1 * r2)[:, None] * c[:, 2])
    return pts, tri


def farthest_point_sampling(cloud, m: int) -> np.ndarray:
    """Greedy farthest-point indices starting from index 0; ties go to the lowest index."""
    pts = as_cloud(cloud)
    n = len(pts)
    if not 1 <= m <= n:
        raise InvalidArgument(f"need 1 <= m <= {n}, got {m}")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = 0
    dist = np.full(n, np.inf)
    dist[0] = -1.0
    for k in range(1, m):
        d = np.sum((pts - pts[selected[k - 1]]) ** 2, axis=1)
        dist = np.where(dist < 0, dist, np.minimum(dist, d))
        nxt = int(np.argmax(dist))
        selected[k] = nxt
        dist[nxt] = -1.0
    return selected


def ball_query(points, centers, radius: float, n_max: int, center_idx=None) -> np.ndarray:
    """Up to ``n_max`` nearest neighbours within ``radius`` of each center.

    Rows are padded with the center's own index (or, when ``center_idx`` is
    not given, with the nearest neighbour). Neighbours are ordered by distance
    with ties broken by index, which makes the result independent of the
    input point order.
    """
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    d2 = ((centers[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    order = np.lexsort((np.broadcast_to(np.arange(len(points)), d2.shape), d2), axis=-1)
    out = np.empty((len(centers), n_max), dtype=np.int64)
    r2 = radius * radius
    for i in range(len(centers)):
        row = order[i]
        inside = row[d2[i, row] <= r2][:n_max]
        pad = center_idx[i] if center_idx is not None else row[0]
        if len(inside) == 0:
            inside = np.array([pad])
        out[i, : len(inside)] = inside
        out[i, len(inside):] = pad
    return out


# --------------------------------------------------------------------------- rays


def ray_mesh_hits(origin, direction, mesh: TriMesh, t_min: float = 0.0, t_max: float = np.inf):
    """All ray/triangle hits with ``t_min <= t <= t_max`` (Moller-Trumbore).

    Returns ``(t, triangle_index)`` sorted by ``t``.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    c = mesh.corners
    e1 = c[:, 1] - c[:, 0]
    e2 = c[:, 2] - c[:, 0]
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-15
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = o - c[:, 0]
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = (q @ d) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    eps = 1e-12
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t >= t_min) & (t <= t_max)
    idx = np.nonzero(hit)[0]
    order = np.argsort(t[idx], kind="stable")
    return t[idx][order], idx[order]


def first_hit(origin, direction, mesh: TriMesh, t_min: float = 0.0, t_max: float = np.inf):
    """Nearest hit as ``(t, point, outward_normal)`` or ``None``."""
    t, idx = ray_mesh_hits(origin, direction, mesh, t_min, t_max)
    if len(t) == 0:
        return None
    point = np.asarray(origin, dtype=np.float64) + t[0] * np.asarray(direction, dtype=np.float64)
    return float(t[0]), point, mesh.face_normals[idx[0]]


def point_in_mesh(point, mesh: TriMesh) -> bool:
    """Crossing-parity inside test against a closed mesh."""
    t, _ = ray_mesh_hits(point, _PARITY_DIR, mesh, t_min=0.0)
    if len(t) > 1:
        # a ray through a shared edge reports the same crossing twice
        t = t[np.r_[True, np.diff(t) > 1e-12]]
    return bool(len(t) % 2 == 1)


# --------------------------------------------------------------------------- collision


def collide_obb_obb(a: Obb, b: Obb) -> bool:
    """Separating-axis test over the 15 candidate axes; touching counts as contact."""
    A, B = a.axes, b.axes
    R = A.T @ B
    absR = np.abs(R) + 1e-12
    t = A.T @ (b.center - a.center)
    ha, hb = a.half_extents, b.half_extents
    for i in range(3):
        if abs(t[i]) > ha[i] + hb @ absR[i]:
            return False
    for j in range(3):
        if abs(t @ R[:, j]) > ha @ absR[:, j] + hb[j]:
            return False
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            ra = ha[i1] * absR[i2, j] + ha[i2] * absR[i1, j]
            rb = hb[j1] * absR[i, j2] + hb[j2] * absR[i, j1]
            if abs(t[i2] * R[i1, j] - t[i1] * R[i2, j]) > ra + rb:
                return False
    return True


def triangles_hit_obb(box: Obb, corners: np.ndarray) -> np.ndarray:
    """Per-triangle SAT test (13 axes) of ``(T, 3, 3)`` triangles against a box."""
    v = (corners - box.center) @ box.axes  # box frame
    h = box.half_extents
    sep = np.zeros(len(v), dtype=bool)
    # box face normals
    for k in range(3):
        sep |= (v[:, :, k].min(axis=1) > h[k]) | (v[:, :, k].max(axis=1) < -h[k])
    edges = [v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]]
    normal = np.cross(edges[0], edges[1])
    axes = [normal] + [np.cross(np.eye(3)[k], e) for k in range(3) for e in edges]
    for ax in axes:
        proj = np.einsum("tij,tj->ti", v, ax)
        r = np.abs(ax) @ h
        sep |= (proj.min(axis=1) > r) | (proj.max(axis=1) < -r)
    return ~sep


def collide_obb_mesh(box: Obb, mesh: TriMesh, solid: bool = True) -> bool:
    """True if any triangle intersects the box.

    With ``solid=True`` (default) a box lying entirely inside the closed mesh
    also counts as a collision.
    """
    center, radius = mesh.bounding_sphere
    if np.linalg.norm(box.center - center) > radius + np.linalg.norm(box.half_extents):
        return False
    if triangles_hit_obb(box, mesh.corners).any():
        return True
    return bool(solid and point_in_mesh(box.center, mesh))


def points_in_obbs(cloud, boxes) -> np.ndarray:
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    mask = np.zeros(len(pts), dtype=bool)
    for b in boxes:
        mask |= b.contains(pts)
    return mask
