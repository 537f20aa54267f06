"""File formats: ASCII OBJ meshes, ASCII PLY clouds, grasp and pair JSON."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidMesh
from .geometry import GraspPose, TriMesh


def load_obj(path) -> TriMesh:
    """Read ``v``/``f`` records; polygons are fan-triangulated."""
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise InvalidMesh(f"cannot read {path}: {exc}") from exc
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise InvalidMesh(f"{path}:{lineno}: malformed record {line!r}") from exc
    if any(len(v) != 3 for v in verts):
        raise InvalidMesh(f"{path}: vertex records need three coordinates")
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, mesh: TriMesh):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def save_ply(path, points, edges=None):
    """ASCII PLY with float ``x y z`` vertices and an optional edge element."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    edges = np.zeros((0, 2), dtype=np.int64) if edges is None else np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    header = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
              "property float x", "property float y", "property float z"]
    if len(edges):
        header += [f"element edge {len(edges)}", "property int vertex1", "property int vertex2"]
    header.append("end_header")
    body = [f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist()]
    body += [f"{a} {b}" for a, b in edges.tolist()]
    Path(path).write_text("\n".join(header + body) + "\n")


def load_ply(path) -> np.ndarray:
    """Vertex positions of an ASCII PLY file (other elements are skipped)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InvalidMesh(f"{path}: not a PLY file")
    elements, props, i = [], {}, 1
    while i < len(lines) and lines[i].strip() != "end_header":
        tok = lines[i].split()
        if tok[0] == "format" and tok[1] != "ascii":
            raise InvalidMesh(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element":
            elements.append((tok[1], int(tok[2])))
            props[tok[1]] = []
        elif tok[0] == "property" and elements:
            props[elements[-1][0]].append(tok[-1])
        i += 1
    i += 1
    points = None
    for name, count in elements:
        rows = lines[i:i + count]
        i += count
        if name == "vertex":
            cols = [props[name].index(c) for c in ("x", "y", "z")]
            data = np.array([[float(r.split()[c]) for c in cols] for r in rows], dtype=np.float64)
            points = data.reshape(-1, 3)
    if points is None:
        raise InvalidMesh(f"{path}: no vertex element")
    return points


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def save_grasps(path, grasps, source_mesh_id: str = ""):
    _dump(path, {"source_mesh_id": source_mesh_id, "grasps": [g.to_dict() for g in grasps]})


def load_grasps(path) -> tuple[list[GraspPose], str]:
    data = json.loads(Path(path).read_text())
    return [GraspPose.from_dict(d) for d in data["grasps"]], data.get("source_mesh_id", "")


def pair_record(pair) -> dict:
    rec = {"g1": pair.g1.to_dict(), "g2": pair.g2.to_dict(), "quality": float(pair.quality)}
    if pair.breakdown is not None:
        b = pair.breakdown
        rec["breakdown"] = {"epsilon": float(b.epsilon), "torque_balance": float(b.torque_balance),
                            "dexterity": float(b.dexterity)}
    return rec


def save_pairs(path, pairs, source_mesh_id: str = ""):
    _dump(path, {"source_mesh_id": source_mesh_id, "pairs": [pair_record(p) for p in pairs]})


def load_pairs(path):
    from .matcher import BimanualGrasp
    from .quality import QualityBreakdown

    data = json.loads(Path(path).read_text())
    pairs = []
    for rec in data["pairs"]:
        bd = rec.get("breakdown")
        breakdown = None
        if bd is not None:
            breakdown = QualityBreakdown(bd["epsilon"], bd["torque_balance"], bd["dexterity"], rec["quality"])
        pairs.append(BimanualGrasp(GraspPose.from_dict(rec["g1"]), GraspPose.from_dict(rec["g2"]),
                                   rec["quality"], breakdown))
    return pairs
