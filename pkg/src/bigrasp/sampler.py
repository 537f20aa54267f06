"""Antipodal single-grasp sampling on meshes and spatial-grid deduplication."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .geometry import (
    GraspPose,
    GripperSpec,
    TriMesh,
    collide_obb_mesh,
    first_hit,
    frame_from_axes,
    gripper_obbs,
    sample_surface,
)
from .quality import grasp_contacts, tangent_basis
from .rng import as_generator

# trials are drawn in fixed-size chunks so trial i sees the same numbers for any k
_CHUNK = 256


@dataclass
class GraspSet:
    grasps: list[GraspPose] = field(default_factory=list)
    source_mesh_id: str = ""

    def __len__(self):
        return len(self.grasps)

    def __iter__(self):
        return iter(self.grasps)

    def __getitem__(self, i):
        return self.grasps[i]


def is_antipodal(p1, n1, p2, n2, mu: float) -> bool:
    """Both inward contact lines lie inside the opposite friction cones."""
    u = p2 - p1
    d = np.linalg.norm(u)
    if d < 1e-12:
        return False
    u = u / d
    cos_cone = np.cos(np.arctan(mu))
    return bool(u @ -n1 >= cos_cone and -u @ -n2 >= cos_cone)


def sample_antipodal_grasps(mesh: TriMesh, k: int, mu: float = 0.5, seed=0,
                            spec: GripperSpec = GripperSpec(), max_trials: int | None = None,
                            reject_palm_collision: bool = True, source_mesh_id: str = "") -> GraspSet:
    """Up to ``k`` antipodal grasps with jaws fully open.

    Each trial picks an area-uniform surface point, shoots a ray into the
    object inside that point's friction cone, takes the exit point as the
    second contact, and keeps the pair if it is antipodal and fits inside the
    jaw span. The approach axis is drawn uniformly around the contact line.
    Accepted grasps are re-verified with ``grasp_contacts`` so that closing
    the jaws reproduces the sampled contacts.
    """
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    rng = as_generator(seed)
    max_trials = 40 * k if max_trials is None else max_trials
    theta = np.arctan(mu)
    grasps: list[GraspPose] = []
    tol = 1e-6 * mesh.scale
    done = 0
    while done < max_trials and len(grasps) < k:
        pts, tri = sample_surface(mesh, _CHUNK, rng)
        r_cone = rng.random((_CHUNK, 2))
        r_approach = rng.random(_CHUNK)
        for i in range(_CHUNK):
            if done >= max_trials or len(grasps) >= k:
                break
            done += 1
            g = _trial(mesh, pts[i], mesh.face_normals[tri[i]], r_cone[i], r_approach[i], theta, mu, spec, tol,
                       reject_palm_collision)
            if g is not None:
                grasps.append(g)
    return GraspSet(grasps, source_mesh_id)


def _trial(mesh, p1, n1, r_cone, r_approach, theta, mu, spec, tol, reject_palm):
    # direction uniform over the cone's solid angle around -n1
    cos_a = 1.0 - r_cone[0] * (1.0 - np.cos(theta))
    sin_a = np.sqrt(max(0.0, 1.0 - cos_a * cos_a))
    phi = 2.0 * np.pi * r_cone[1]
    t1, t2 = tangent_basis(n1)
    d = cos_a * (-n1) + sin_a * (np.cos(phi) * t1 + np.sin(phi) * t2)
    hit = first_hit(p1, d, mesh, t_min=1e-9 * mesh.scale, t_max=spec.max_opening)
    if hit is None:
        return None
    _, p2, n2 = hit
    if n2 @ d <= 0 or not is_antipodal(p1, n1, p2, n2, mu):
        return None
    span = np.linalg.norm(p2 - p1)
    if span >= spec.max_opening:
        return None
    closing = (p2 - p1) / span
    a, b = tangent_basis(closing)
    psi = 2.0 * np.pi * r_approach
    R = frame_from_axes(closing, np.cos(psi) * a + np.sin(psi) * b)
    center = 0.5 * (p1 + p2)
    g = GraspPose(R, center - spec.jaw_depth * R[:, 2], spec.max_opening)
    contacts = grasp_contacts(g, mesh, spec, mu)
    if len(contacts) != 2:
        return None
    # closing from the jaws must land on the sampled pair (not on other geometry)
    if np.linalg.norm(contacts[0].point - p1) > tol or np.linalg.norm(contacts[1].point - p2) > tol:
        return None
    if reject_palm and collide_obb_mesh(gripper_obbs(g, spec)[0], mesh):
        return None
    return g


def grid_key(g: GraspPose, cell: float, angle_bin: float) -> tuple[int, ...]:
    """Translation cell plus the polar/azimuth bin of the approach axis."""
    cell_idx = np.floor(g.translation / cell).astype(np.int64)
    z = g.approach_axis
    polar = np.arccos(np.clip(z[2], -1.0, 1.0))
    azimuth = np.arctan2(z[1], z[0]) + np.pi
    return (*(int(c) for c in cell_idx), int(np.floor(polar / angle_bin)), int(np.floor(azimuth / angle_bin)))


def grid_dedup(grasps, cell: float, angle_bin: float = np.deg2rad(30.0)) -> GraspSet:
    """Keep the first grasp of every (translation cell x approach bin) bucket."""
    if not cell > 0 or not angle_bin > 0:
        raise InvalidArgument("cell and angle_bin must be positive")
    source = getattr(grasps, "source_mesh_id", "")
    seen, kept = set(), []
    for g in grasps:
        key = grid_key(g, cell, angle_bin)
        if key not in seen:
            seen.add(key)
            kept.append(g)
    return GraspSet(kept, source)


def sample_grid_grasps(mesh: TriMesh, k: int = 128, mu: float = 0.5, seed=0, spec: GripperSpec = GripperSpec(),
                       oversample: int = 4, cell: float | None = None, angle_bin: float = np.deg2rad(30.0),
                       source_mesh_id: str = "") -> GraspSet:
    """Ground-truth set: oversampled antipodal grasps, grid-deduplicated, first ``k`` kept."""
    raw = sample_antipodal_grasps(mesh, oversample * k, mu, seed, spec, source_mesh_id=source_mesh_id)
    cell = mesh.scale / 20.0 if cell is None else cell
    dedup = grid_dedup(raw, cell, angle_bin)
    return GraspSet(dedup.grasps[:k], source_mesh_id)
