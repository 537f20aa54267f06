"""Evaluation without a simulator: score ranking, top fractions and surface coverage."""
from __future__ import annotations

import csv
import io
import math

import numpy as np

from .errors import InvalidArgument
from .geometry import GripperSpec, as_cloud, gripper_obbs, points_in_obbs


def rank_pairs(pairs) -> list:
    """Sort by descending quality; equal qualities keep their input order."""
    return sorted(pairs, key=lambda p: -p.quality)


def top_count(n: int, f: float) -> int:
    """``ceil(f * n)``, robust to products like ``0.3 * 10`` landing a hair above an integer."""
    if not 0.0 < f <= 1.0:
        raise InvalidArgument(f"fraction must lie in (0, 1], got {f}")
    return min(n, math.ceil(round(f * n, 9)))


def top_fraction(ranked, f: float) -> list:
    """The first ``ceil(f * n)`` entries of an already ranked list."""
    ranked = list(ranked)
    return ranked[:top_count(len(ranked), f)]


def covered_mask(cloud, pairs, spec: GripperSpec = GripperSpec(), closing_region: bool = True) -> np.ndarray:
    """Points falling inside any box of either gripper of any pair.

    A gripper's bounds are its palm and finger boxes plus, when
    ``closing_region`` is set, the slab swept between the fingers.
    """
    pts = as_cloud(cloud)
    boxes = [box for p in pairs for g in (p.g1, p.g2) for box in gripper_obbs(g, spec, closing_region)]
    return points_in_obbs(pts, boxes)


def diversity(cloud, pairs, spec: GripperSpec = GripperSpec(), closing_region: bool = True) -> float:
    """Percentage of cloud points covered by the grippers, each point counted once."""
    pts = as_cloud(cloud)
    pairs = list(pairs)
    if not pairs:
        return 0.0
    return 100.0 * float(covered_mask(pts, pairs, spec, closing_region).sum()) / len(pts)


CSV_FIELDS = ("object_id", "n_pairs", "fraction", "diversity_percent")


def diversity_rows(object_id: str, cloud, pairs, fractions, spec: GripperSpec = GripperSpec()) -> list[dict]:
    """One row per fraction: diversity of the top ``fraction`` of the ranked pairs."""
    ranked = rank_pairs(pairs)
    rows = []
    for f in fractions:
        top = top_fraction(ranked, f)
        rows.append({"object_id": object_id, "n_pairs": len(top), "fraction": f,
                     "diversity_percent": diversity(cloud, top, spec)})
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({**r, "fraction": repr(float(r["fraction"])),
                         "diversity_percent": f"{r['diversity_percent']:.6f}"})
    return buf.getvalue()
