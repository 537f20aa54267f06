"""Contact extraction and the three-part bimanual grasp quality.

* force closure: Ferrari-Canny epsilon over linearized friction cones,
* torque balance: offset of the two jaw centers' midpoint from the center of mass,
* dexterity: isotropy (sigma_min / sigma_max) of the combined grasp map.

Wrench sets are ``(n, 6)`` arrays laid out ``[force | torque]``; torques are
divided by a length ``lam`` (the object scale) so both halves share units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateGrasp, InvalidArgument
from .geometry import GraspPose, GripperSpec, TriMesh, first_hit, jaw_center


@dataclass(frozen=True, eq=False)
class Contact:
    point: np.ndarray
    normal: np.ndarray  # unit, outward
    friction_mu: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise InvalidArgument("contact normal must be unit length")
        if not self.friction_mu > 0:
            raise InvalidArgument("friction coefficient must be positive")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class QualityConfig:
    mu: float = 0.5
    cone_edges: int = 8
    epsilon_max: float = 1.0
    lam: float | None = None  # torque normalization; None -> mesh scale


@dataclass(frozen=True)
class QualityBreakdown:
    epsilon: float
    torque_balance: float
    dexterity: float
    combined: float


def tangent_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangents; for ``n = +z`` they are ``+x`` and ``+y``."""
    n = np.asarray(normal, dtype=np.float64)
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = a - (a @ n) * n
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def friction_cone_edges(normal, mu: float, m: int = 8) -> np.ndarray:
    """``m`` unit edges of the friction cone around the inward direction ``-normal``."""
    n = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise InvalidArgument("zero contact normal")
    if not mu > 0 or m < 3:
        raise InvalidArgument("need mu > 0 and m >= 3")
    n = n / norm
    t1, t2 = tangent_basis(n)
    theta = np.arctan(mu)
    phi = 2.0 * np.pi * np.arange(m) / m
    return np.cos(theta) * (-n) + np.sin(theta) * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)


def grasp_contacts(g: GraspPose, mesh: TriMesh, spec: GripperSpec = GripperSpec(), mu: float = 0.5) -> list[Contact]:
    """The two surface points the closing jaws reach first, or ``[]``.

    Each jaw starts at ``+-width/2`` on the closing line and moves inward; its
    first hit must be an entry into the object (normal facing the jaw),
    otherwise the jaw started inside the object and the grasp is invalid.
    """
    c = jaw_center(g, spec)
    x = g.closing_axis
    h = g.width / 2.0
    left = first_hit(c - h * x, x, mesh, 0.0, g.width)
    right = first_hit(c + h * x, -x, mesh, 0.0, g.width)
    if left is None or right is None:
        return []
    (tl, pl, nl), (tr, pr, nr) = left, right
    if nl @ x >= 0 or nr @ x <= 0 or tl > g.width - tr:
        return []
    return [Contact(pl, nl, mu), Contact(pr, nr, mu)]


def contact_wrenches(contacts, com, lam: float, m: int = 8) -> np.ndarray:
    """Unit cone-edge forces and their normalized torques, ``(m * len(contacts), 6)``."""
    if len(contacts) == 0:
        raise InvalidArgument("need at least one contact")
    if not lam > 0:
        raise InvalidArgument("lam must be positive")
    com = np.asarray(com, dtype=np.float64)
    rows = []
    for c in contacts:
        f = friction_cone_edges(c.normal, c.friction_mu, m)
        tau = np.cross(c.point - com, f) / lam
        rows.append(np.hstack([f, tau]))
    return np.vstack(rows)


def epsilon_quality(wrenches) -> float:
    """Radius of the largest origin-centered ball inside the wrench hull (0 without closure).

    Exact: the minimum facet-plane distance from qhull's facet equations. A
    set whose affine hull is not 6-dimensional has empty interior, so 0.
    """
    W = np.asarray(wrenches, dtype=np.float64).reshape(-1, 6)
    if len(W) < 7 or np.linalg.matrix_rank(W - W[0], tol=1e-10 * max(1.0, np.abs(W).max())) < 6:
        return 0.0
    W = W[np.lexsort(W.T[::-1])]  # order-independent result
    try:
        hull = ConvexHull(W)
    except QhullError:
        return 0.0
    # equations: n . x + offset <= 0 inside, so the origin sits -offset from each plane
    eps = float((-hull.equations[:, -1]).min())
    return max(0.0, eps)


def _lever_and_scale(mesh: TriMesh, config: QualityConfig):
    lam = config.lam if config.lam is not None else mesh.scale
    return mesh.center_of_mass, lam


def torque_balance(g1: GraspPose, g2: GraspPose, mesh: TriMesh, spec: GripperSpec = GripperSpec()) -> float:
    mid = 0.5 * (jaw_center(g1, spec) + jaw_center(g2, spec))
    off = np.linalg.norm(mid - mesh.center_of_mass)
    return float(1.0 - min(1.0, off / (mesh.scale / 2.0)))


def grasp_map(contacts, com, lam: float) -> np.ndarray:
    """``6 x 3k`` map from contact forces to the object wrench."""
    blocks = []
    for c in contacts:
        r = (c.point - np.asarray(com)) / lam
        skew = np.array([[0, -r[2], r[1]], [r[2], 0, -r[0]], [-r[1], r[0], 0]])
        blocks.append(np.vstack([np.eye(3), skew]))
    return np.hstack(blocks)


def isotropy(G: np.ndarray) -> float:
    s = np.linalg.svd(G, compute_uv=False)
    if len(s) < 6 or s[0] <= 0 or s[5] <= 1e-10 * s[0]:
        return 0.0
    return float(s[5] / s[0])


def dexterity(g1: GraspPose, g2: GraspPose, mesh: TriMesh, spec: GripperSpec = GripperSpec(),
              config: QualityConfig = QualityConfig()) -> float:
    contacts = grasp_contacts(g1, mesh, spec, config.mu) + grasp_contacts(g2, mesh, spec, config.mu)
    if len(contacts) < 2:
        raise DegenerateGrasp("dexterity needs at least two contacts")
    com, lam = _lever_and_scale(mesh, config)
    return isotropy(grasp_map(contacts, com, lam))


def combine(epsilon: float, tb: float, dex: float, weights, epsilon_max: float) -> float:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (3,) or np.any(w < 0) or w.sum() <= 0:
        raise InvalidArgument("quality weights must be three non-negative reals with positive sum")
    comps = np.array([min(1.0, epsilon / epsilon_max), tb, dex])
    return float(min(1.0, max(0.0, (w @ comps) / w.sum())))


def pair_breakdown(contacts1, contacts2, g1: GraspPose, g2: GraspPose, mesh: TriMesh, weights,
                   spec: GripperSpec, config: QualityConfig) -> QualityBreakdown:
    """Quality of a pair given precomputed contacts. Argument order does not matter."""
    if not contacts1 or not contacts2:
        raise DegenerateGrasp("both grasps need contacts")
    if g2.key() < g1.key():
        g1, g2, contacts1, contacts2 = g2, g1, contacts2, contacts1
    com, lam = _lever_and_scale(mesh, config)
    contacts = list(contacts1) + list(contacts2)
    eps = epsilon_quality(contact_wrenches(contacts, com, lam, config.cone_edges))
    tb = torque_balance(g1, g2, mesh, spec)
    dex = isotropy(grasp_map(contacts, com, lam))
    return QualityBreakdown(eps, tb, dex, combine(eps, tb, dex, weights, config.epsilon_max))


def bimanual_quality(g1: GraspPose, g2: GraspPose, mesh: TriMesh, weights=(1.0, 1.0, 1.0),
                     spec: GripperSpec = GripperSpec(), config: QualityConfig = QualityConfig()) -> QualityBreakdown:
    c1 = grasp_contacts(g1, mesh, spec, config.mu)
    c2 = grasp_contacts(g2, mesh, spec, config.mu)
    return pair_breakdown(c1, c2, g1, g2, mesh, weights, spec, config)
