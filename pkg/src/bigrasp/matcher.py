"""Bipartite matching, set-prediction losses and bimanual pair construction.

Losses operate on gripper keypoints: a grasp is compared to another through
the mean Euclidean distance between their five corresponding keypoints.
"""
from __future__ import annotations

import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGrasp, EmptyTargets, InvalidArgument, InvalidCost
from .geometry import GraspPose, GripperSpec, TriMesh, collide_obb_mesh, collide_obb_obb, gripper_keypoints, gripper_obbs
from .quality import QualityBreakdown, QualityConfig, grasp_contacts, pair_breakdown


@dataclass(frozen=True, eq=False)
class BimanualGrasp:
    g1: GraspPose
    g2: GraspPose
    quality: float
    breakdown: QualityBreakdown | None = None

    def __post_init__(self):
        q = float(self.quality)
        if not 0.0 <= q <= 1.0:
            raise InvalidArgument(f"pair quality must lie in [0, 1], got {q}")
        object.__setattr__(self, "quality", q)

    def swapped(self) -> "BimanualGrasp":
        return BimanualGrasp(self.g2, self.g1, self.quality, self.breakdown)


@dataclass(frozen=True)
class Assignment:
    pairs: list[tuple[int, int]]  # (prediction index, ground-truth index), sorted by prediction
    total_cost: float


# --------------------------------------------------------------------------- hungarian


def _solve_square(C: np.ndarray):
    """Shortest-augmenting-path Kuhn-Munkres with potentials.

    Returns ``(row_to_col, u, v)`` where ``C - u[:, None] - v[None, :] >= 0``
    and is zero on the assignment.
    """
    n = len(C)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = C[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col, u[1:], v[1:]


def _lexicographic_min(tight: np.ndarray, match: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching inside the tight-edge graph.

    ``match`` is any perfect matching using tight edges. Rows are fixed in
    order to the smallest column reachable by an alternating path through
    still-free rows.
    """
    n = len(match)
    match = match.copy()
    owner = np.empty(n, dtype=np.int64)
    owner[match] = np.arange(n)
    adj = [np.nonzero(tight[i])[0] for i in range(n)]
    for i in range(n):
        for j in adj[i]:
            if j >= match[i]:
                break
            k = owner[j]
            if k < i:
                continue
            # need row k to move off column j, ending on the column row i frees
            path = _alternating_path(k, match[i], i, adj, match, owner)
            if path is None:
                continue
            target = match[i]
            for r, c in path:
                match[r] = c
                owner[c] = r
            match[i] = j
            owner[j] = i
            owner[target] = path[-1][0]
            break
    return match


def _alternating_path(start, target, fixed_upto, adj, match, owner):
    """BFS for row reassignments moving ``start`` off its column and ending at ``target``."""
    prev = {start: None}
    queue = deque([start])
    while queue:
        r = queue.popleft()
        for c in adj[r]:
            if c == match[r]:
                continue
            if c == target:
                steps = [(r, c)]
                while prev[r] is not None:
                    pr = prev[r]
                    steps.append((pr, match[r]))
                    r = pr
                return steps[::-1]
            nr = owner[c]
            if nr <= fixed_upto or nr in prev:
                continue
            prev[nr] = r
            queue.append(nr)
    return None


def hungarian(cost) -> Assignment:
    """Minimum-cost assignment of predictions (rows) to ground truths (columns).

    Rectangular inputs are zero-padded to square; pairs involving padding are
    dropped. Among optimal solutions the lexicographically smallest pair list
    is returned.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2:
        raise InvalidCost("cost matrix must be 2-D")
    if not np.all(np.isfinite(C)):
        raise InvalidCost("cost matrix entries must be finite")
    rows, cols = C.shape
    if rows == 0 or cols == 0:
        return Assignment([], 0.0)
    n = max(rows, cols)
    S = np.zeros((n, n))
    S[:rows, :cols] = C
    match, u, v = _solve_square(S)
    tol = 1e-11 * max(1.0, np.abs(S).max())
    tight = (S - u[:, None] - v[None, :]) <= tol
    match = _lexicographic_min(tight, match)
    pairs = [(int(r), int(match[r])) for r in range(rows) if match[r] < cols]
    total = 0.0
    for r, c in pairs:
        total += C[r, c]
    return Assignment(pairs, float(total))


# --------------------------------------------------------------------------- losses


def keypoint_distance(A, B) -> np.ndarray:
    """Mean keypoint distance between ``(P, 5, 3)`` and ``(G, 5, 3)`` stacks -> ``(P, G)``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    return np.linalg.norm(A[:, None] - B[None, :], axis=-1).mean(axis=-1)


def keypoints_of(grasps, spec: GripperSpec = GripperSpec()) -> np.ndarray:
    return np.array([gripper_keypoints(g, spec) for g in grasps]).reshape(-1, 5, 3)


def l_dist(g: GraspPose, g_hat: GraspPose, spec: GripperSpec = GripperSpec()) -> float:
    v, v_hat = gripper_keypoints(g, spec), gripper_keypoints(g_hat, spec)
    return float(np.linalg.norm(v - v_hat, axis=1).mean())


def l_bimanual(b: BimanualGrasp, b_hat: BimanualGrasp, spec: GripperSpec = GripperSpec()) -> float:
    return l_dist(b.g1, b_hat.g1, spec) + l_dist(b.g2, b_hat.g2, spec) + abs(b.quality - b_hat.quality)


def bimanual_match_cost(b: BimanualGrasp, b_hat: BimanualGrasp, spec: GripperSpec = GripperSpec()):
    """Geometric pair cost, minimized over which predicted arm plays which role.

    Returns ``(cost, ordering)`` with ordering ``(1, 2)`` (straight) or ``(2, 1)``.
    """
    straight = l_dist(b.g1, b_hat.g1, spec) + l_dist(b.g2, b_hat.g2, spec)
    crossed = l_dist(b.g1, b_hat.g2, spec) + l_dist(b.g2, b_hat.g1, spec)
    if crossed < straight:
        return crossed, (2, 1)
    return straight, (1, 2)


def pair_cost_matrices(pred1, pred2, gt1, gt2):
    """Straight and crossed pair costs for keypoint stacks; rows are predictions."""
    straight = keypoint_distance(pred1, gt1) + keypoint_distance(pred2, gt2)
    crossed = keypoint_distance(pred2, gt1) + keypoint_distance(pred1, gt2)
    return straight, crossed


class LossResult(NamedTuple):
    total: float
    single: float
    bimanual: float
    single_assignment: Assignment
    bimanual_assignment: Assignment
    orderings: list[tuple[int, int]]


def grasp_loss(pred_single, gt_single, pred_bi, gt_bi, spec: GripperSpec = GripperSpec()) -> LossResult:
    """Matched single-grasp loss plus matched bimanual loss.

    Matching minimizes keypoint distance (quality excluded for pairs); the
    bimanual loss then adds the L1 quality error under the chosen arm ordering.
    """
    gt_single, pred_single = list(gt_single), list(pred_single)
    gt_bi, pred_bi = list(gt_bi), list(pred_bi)
    if not gt_single or not gt_bi:
        raise EmptyTargets("ground-truth single and bimanual sets must be non-empty")
    single_cost = keypoint_distance(keypoints_of(pred_single, spec), keypoints_of(gt_single, spec))
    single_asg = hungarian(single_cost)
    single = sum(single_cost[p, g] for p, g in single_asg.pairs)

    p1 = keypoints_of([b.g1 for b in pred_bi], spec)
    p2 = keypoints_of([b.g2 for b in pred_bi], spec)
    t1 = keypoints_of([b.g1 for b in gt_bi], spec)
    t2 = keypoints_of([b.g2 for b in gt_bi], spec)
    straight, crossed = pair_cost_matrices(p1, p2, t1, t2)
    bi_asg = hungarian(np.minimum(straight, crossed))
    bimanual, orderings = 0.0, []
    for p, g in bi_asg.pairs:
        order = (2, 1) if crossed[p, g] < straight[p, g] else (1, 2)
        geo = crossed[p, g] if order == (2, 1) else straight[p, g]
        bimanual += geo + abs(gt_bi[g].quality - pred_bi[p].quality)
        orderings.append(order)
    return LossResult(float(single + bimanual), float(single), float(bimanual), single_asg, bi_asg, orderings)


# --------------------------------------------------------------------------- pair matcher


def _workers() -> int:
    try:
        cap = int(os.environ.get("BIGRASP_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, os.cpu_count() or 1))


class _PairContext:
    """Per-grasp contacts and boxes, computed once and shared by all pairs."""

    def __init__(self, grasps, mesh, spec, weights, config):
        self.grasps = list(grasps)
        self.mesh, self.spec, self.weights, self.config = mesh, spec, weights, config
        self.contacts = [grasp_contacts(g, mesh, spec, config.mu) for g in self.grasps]
        self.boxes = [gripper_obbs(g, spec) for g in self.grasps]
        self._palm_hit = [None] * len(self.grasps)

    def palm_hits_mesh(self, i) -> bool:
        if self._palm_hit[i] is None:
            self._palm_hit[i] = collide_obb_mesh(self.boxes[i][0], self.mesh)
        return self._palm_hit[i]

    def breakdown(self, i, j) -> QualityBreakdown | None:
        try:
            return pair_breakdown(self.contacts[i], self.contacts[j], self.grasps[i], self.grasps[j],
                                  self.mesh, self.weights, self.spec, self.config)
        except DegenerateGrasp:
            return None

    def collision_free(self, i, j) -> bool:
        if self.palm_hits_mesh(i) or self.palm_hits_mesh(j):
            return False
        return not any(collide_obb_obb(a, b) for a in self.boxes[i] for b in self.boxes[j])


def _map(fn, items):
    workers = _workers()
    if workers == 1 or len(items) < 64:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


def pair_quality_matrix(grasps, mesh: TriMesh, weights=(1.0, 1.0, 1.0), spec: GripperSpec = GripperSpec(),
                        config: QualityConfig = QualityConfig()) -> np.ndarray:
    """Symmetric combined-quality matrix with ``-inf`` on the diagonal; degenerate pairs score 0."""
    ctx = _PairContext(grasps, mesh, spec, weights, config)
    n = len(ctx.grasps)
    if n < 2:
        raise InvalidArgument("need at least two grasps")
    Q = np.full((n, n), -np.inf)
    upper = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for (i, j), bd in zip(upper, _map(lambda ij: ctx.breakdown(*ij), upper)):
        Q[i, j] = Q[j, i] = 0.0 if bd is None else bd.combined
    return Q


def collision_free_pair(g1: GraspPose, g2: GraspPose, mesh: TriMesh, spec: GripperSpec = GripperSpec()) -> bool:
    """No box of one gripper touches a box of the other, and neither palm touches the object.

    Finger boxes may overlap the object: closing fingers legitimately reach it.
    """
    b1, b2 = gripper_obbs(g1, spec), gripper_obbs(g2, spec)
    if any(collide_obb_obb(a, b) for a in b1 for b in b2):
        return False
    return not (collide_obb_mesh(b1[0], mesh) or collide_obb_mesh(b2[0], mesh))


def bpm_match(grasps, mesh: TriMesh, spec: GripperSpec = GripperSpec(), weights=(1.0, 1.0, 1.0),
              config: QualityConfig = QualityConfig()) -> list[BimanualGrasp]:
    """Best collision-free partner for every anchor grasp.

    Equivalent to a row-wise argmax of ``pair_quality_matrix`` masked by
    ``collision_free_pair`` (ties -> lowest partner index), but quality is
    only evaluated for collision-free pairs.
    """
    ctx = _PairContext(grasps, mesh, spec, weights, config)
    n = len(ctx.grasps)
    if n < 2:
        raise InvalidArgument("need at least two grasps")
    upper = [(i, j) for i in range(n) for j in range(i + 1, n)]
    free = [ij for ij, ok in zip(upper, _map(lambda ij: ctx.collision_free(*ij), upper)) if ok]
    Q = np.full((n, n), -np.inf)
    details: dict[tuple[int, int], QualityBreakdown | None] = {}
    for (i, j), bd in zip(free, _map(lambda ij: ctx.breakdown(*ij), free)):
        Q[i, j] = Q[j, i] = 0.0 if bd is None else bd.combined
        details[(i, j)] = bd
    out = []
    for i in range(n):
        if not np.isfinite(Q[i]).any():
            continue
        j = int(np.argmax(Q[i]))
        bd = details[(min(i, j), max(i, j))]
        out.append(BimanualGrasp(ctx.grasps[i], ctx.grasps[j], float(Q[i, j]), bd))
    return out
