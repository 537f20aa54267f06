"""``bigrasp`` command line: sample -> pair -> train-toy / infer -> diversity, plus gradcheck.

Exit codes: 0 success, 2 invalid input, 3 not enough data, 4 weights
mismatch, 5 gradient check failure, 6 training diverged.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as bio
from .errors import BigraspError, EmptyTargets, InvalidArgument, InvalidMesh, TrainingDiverged, WeightsMismatch
from .geometry import GripperSpec, gripper_keypoints, sample_surface_points
from .quality import QualityConfig
from .rng import stream

EXIT_OK, EXIT_INPUT, EXIT_DATA, EXIT_WEIGHTS, EXIT_GRADCHECK, EXIT_DIVERGED = 0, 2, 3, 4, 5, 6
DIVERSITY_POINTS = 2048


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------- argument helpers


def _floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(EXIT_INPUT, f"{what}: expected comma-separated numbers, got {text!r}")
    if not vals or not all(np.isfinite(vals)):
        raise CliError(EXIT_INPUT, f"{what}: expected finite numbers, got {text!r}")
    return vals


def _quality_weights(text: str) -> tuple[float, float, float]:
    w = _floats(text, "--quality-weights")
    if len(w) != 3 or min(w) < 0 or sum(w) <= 0:
        raise CliError(EXIT_INPUT, "--quality-weights needs three non-negative values with a positive sum")
    return tuple(w)


def _cfg_overrides(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise CliError(EXIT_INPUT, f"--cfg expects KEY=VAL, got {item!r}")
        out[key.strip()] = val.strip()
    return out


def _model_config(base, overrides: dict):
    from .net import ModelConfig

    cfg = base or ModelConfig.toy()
    try:
        return cfg.with_overrides(overrides)
    except (InvalidArgument, ValueError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"--cfg: {exc}")


def _require_file(path, flag: str) -> Path:
    if path is None:
        raise CliError(EXIT_INPUT, f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_INPUT, f"{flag}: no such file {p}")
    return p


def _load_mesh(path):
    return bio.load_obj(_require_file(path, "--mesh"))


def _mesh_files(path) -> list[Path]:
    if path is None:
        raise CliError(EXIT_INPUT, "--mesh is required")
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.obj"))
        if not files:
            raise CliError(EXIT_DATA, f"--mesh: no .obj files in {p}")
        return files
    return [_require_file(p, "--mesh")]


def _check_mu(mu: float):
    if not mu > 0:
        raise CliError(EXIT_INPUT, "--mu must be positive")


# --------------------------------------------------------------------------- commands


def cmd_sample(args) -> int:
    from .sampler import sample_grid_grasps

    if args.k is None or args.k < 1:
        raise CliError(EXIT_INPUT, "--k must be at least 1")
    _check_mu(args.mu)
    mesh_path = Path(args.mesh) if args.mesh else None
    mesh = _load_mesh(args.mesh)
    gs = sample_grid_grasps(mesh, k=args.k, mu=args.mu, seed=stream(args.seed, "sampler"), source_mesh_id=mesh_path.stem)
    out = Path(args.out or "grasps.json")
    bio.save_grasps(out, gs.grasps, gs.source_mesh_id)
    print(f"sampled {len(gs)} grasps (requested {args.k}) -> {out}")
    return EXIT_OK


def cmd_pair(args) -> int:
    from .matcher import bpm_match

    _check_mu(args.mu)
    mesh = _load_mesh(args.mesh)
    grasps, source = bio.load_grasps(_require_file(args.grasps, "--grasps"))
    if len(grasps) < 2:
        raise CliError(EXIT_DATA, f"pairing needs at least 2 grasps, got {len(grasps)}")
    weights = _quality_weights(args.quality_weights)
    pairs = bpm_match(grasps, mesh, weights=weights, config=QualityConfig(mu=args.mu))
    out = Path(args.out or "pairs.json")
    bio.save_pairs(out, pairs, source)
    print(f"matched {len(pairs)} pairs from {len(grasps)} grasps -> {out}")
    return EXIT_OK


def _load_model(path, overrides):
    from .net import check_weights, load_weights

    if path is None or not Path(path).is_file():
        raise CliError(EXIT_WEIGHTS, f"--weights: no such weights manifest {path}")
    weights, stored = load_weights(path)
    cfg = _model_config(stored, overrides)
    check_weights(weights, cfg)
    return weights, cfg


def _skeleton(pairs, spec: GripperSpec, offset: int):
    """Keypoints of every gripper plus line segments base-base and base-tip."""
    pts, edges = [], []
    for p in pairs:
        for g in (p.g1, p.g2):
            base = offset + len(pts)
            pts.extend(gripper_keypoints(g, spec))
            edges += [(base + 1, base + 2), (base + 1, base + 3), (base + 2, base + 4)]
    return np.array(pts).reshape(-1, 3), edges


def cmd_infer(args) -> int:
    from .metrics import rank_pairs
    from .net import model_forward

    weights, cfg = _load_model(args.weights, _cfg_overrides(args.cfg))
    mesh_path = _require_file(args.mesh, "--mesh")
    mesh = bio.load_obj(mesh_path)
    spec = GripperSpec()
    cloud = sample_surface_points(mesh, cfg.n_points, stream(args.seed, "cloud"))
    _, pairs = model_forward(cloud, cfg, weights, spec)
    ranked = rank_pairs(pairs)
    out = Path(args.out or "predicted_pairs.json")
    bio.save_pairs(out, ranked, mesh_path.stem)
    kp, edges = _skeleton(ranked, spec, len(cloud))
    ply = out.with_suffix(".ply")
    bio.save_ply(ply, np.vstack([cloud, kp]), edges)
    print(f"predicted {len(ranked)} pairs -> {out} (visualization {ply})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .net.gradcheck import TOLERANCE, run_gradcheck

    results = run_gradcheck(args.seed, corrupt=args.corrupt)
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:<22} rel_error={r.rel_error:.3e} entries={r.checked}")
    worst = max(results, key=lambda r: r.rel_error)
    print(f"worst: {worst.name} rel_error={worst.rel_error:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if all(r.ok for r in results) else EXIT_GRADCHECK


def training_samples(mesh_paths, cfg, k: int, seed: int, mu: float, weights=(1.0, 1.0, 1.0)):
    """Ground truth per mesh: grid-sampled singles, paired by the pair matcher."""
    from .matcher import bpm_match
    from .net import TrainSample
    from .sampler import sample_grid_grasps

    samples = []
    for i, path in enumerate(mesh_paths):
        mesh = bio.load_obj(path)
        gs = sample_grid_grasps(mesh, k=k, mu=mu, seed=stream(seed, f"gt.{i}"), source_mesh_id=path.stem)
        if len(gs) < 2:
            raise CliError(EXIT_DATA, f"{path}: only {len(gs)} ground-truth grasps, need 2")
        pairs = bpm_match(gs, mesh, weights=weights, config=QualityConfig(mu=mu))
        if not pairs:
            raise CliError(EXIT_DATA, f"{path}: no collision-free ground-truth pairs")
        cloud = sample_surface_points(mesh, cfg.n_points, stream(seed, f"cloud.{i}"))
        samples.append(TrainSample.from_grasps(cloud, gs.grasps, pairs))
    return samples


def cmd_train_toy(args) -> int:
    from .net import AdamW, init_weights, save_weights, train_step

    if args.steps is None or args.steps < 0:
        raise CliError(EXIT_INPUT, "--steps must be non-negative")
    if not args.lr >= 0:
        raise CliError(EXIT_INPUT, "--lr must be non-negative")
    _check_mu(args.mu)
    k = 8 if args.k is None else args.k
    if k < 2:
        raise CliError(EXIT_INPUT, "--k must be at least 2 for training")
    cfg = _model_config(None, {"seed": args.seed, **_cfg_overrides(args.cfg)})
    samples = training_samples(_mesh_files(args.mesh), cfg, k, args.seed, args.mu,
                               _quality_weights(args.quality_weights))
    weights = init_weights(cfg)
    optimizer = AdamW()
    out = Path(args.out or "toy_weights.txt")
    losses = []
    try:
        for _ in range(args.steps):
            losses.append(train_step(samples, cfg, weights, optimizer, args.lr))
    finally:
        csv_path = out.with_suffix(".loss.csv")
        csv_path.write_text("step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)))
    save_weights(out, weights, cfg)
    if losses:
        print(f"trained {args.steps} steps: loss {losses[0]:.6f} -> {losses[-1]:.6f} "
              f"({losses[-1] / losses[0]:.1%} of initial) -> {out}")
    else:
        print(f"wrote initial weights -> {out}")
    return EXIT_OK


def _cloud_for_metrics(path, seed: int) -> np.ndarray:
    p = _require_file(path, "--mesh")
    if p.suffix.lower() == ".ply":
        return bio.load_ply(p)
    return sample_surface_points(bio.load_obj(p), DIVERSITY_POINTS, stream(seed, "diversity"))


def cmd_diversity(args) -> int:
    from .metrics import diversity_rows, rows_to_csv

    cloud = _cloud_for_metrics(args.mesh, args.seed)
    pairs_path = _require_file(args.pairs, "--pairs")
    pairs = bio.load_pairs(pairs_path)
    fractions = _floats(args.fractions, "--fractions")
    try:
        rows = diversity_rows(Path(args.mesh).stem, cloud, pairs, fractions)
    except InvalidArgument as exc:
        raise CliError(EXIT_INPUT, f"--fractions: {exc}")
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "pair": cmd_pair, "infer": cmd_infer, "gradcheck": cmd_gradcheck,
            "train-toy": cmd_train_toy, "diversity": cmd_diversity}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bigrasp", description="Bimanual grasp synthesis toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "sample": "sample antipodal ground-truth grasps on a mesh",
        "pair": "match grasps into collision-free bimanual pairs",
        "infer": "predict bimanual pairs with trained weights",
        "gradcheck": "finite-difference check of every network gradient",
        "train-toy": "train the toy network on one mesh or a directory of meshes",
        "diversity": "surface coverage of the top fractions of ranked pairs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
        if name != "gradcheck":
            p.add_argument("--out", help="output path")
        if name in ("sample", "pair", "infer", "train-toy", "diversity"):
            p.add_argument("--mesh", help="OBJ mesh (train-toy: also a directory; diversity: also a PLY cloud)")
        if name in ("sample", "pair", "train-toy"):
            p.add_argument("--mu", type=float, default=0.5, help="friction coefficient (default 0.5)")
        if name in ("pair", "train-toy"):
            p.add_argument("--quality-weights", default="1,1,1",
                           help="weights of force closure, torque balance, dexterity (default 1,1,1)")
        if name in ("infer", "train-toy"):
            p.add_argument("--cfg", action="append", metavar="KEY=VAL", help="model config override (repeatable)")
    sub.choices["sample"].add_argument("--k", type=int, default=128, help="grasps to sample (default 128)")
    sub.choices["pair"].add_argument("--grasps", help="grasp JSON from 'sample'")
    sub.choices["infer"].add_argument("--weights", help="weights manifest from 'train-toy'")
    tt = sub.choices["train-toy"]
    tt.add_argument("--steps", type=int, default=300, help="optimizer steps (default 300)")
    tt.add_argument("--lr", type=float, default=5e-4, help="learning rate (default 5e-4)")
    tt.add_argument("--k", type=int, default=None, help="ground-truth grasps per mesh (default 8)")
    sub.choices["diversity"].add_argument("--pairs", help="pair JSON from 'pair' or 'infer'")
    sub.choices["diversity"].add_argument("--fractions", default="0.3,0.5", help="top fractions (default 0.3,0.5)")
    sub.choices["gradcheck"].add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"bigrasp {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except WeightsMismatch as exc:
        print(f"bigrasp {args.command}: weights mismatch: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except TrainingDiverged as exc:
        print(f"bigrasp {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except EmptyTargets as exc:
        print(f"bigrasp {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvalidMesh, InvalidArgument, BigraspError, ValueError, KeyError, OSError) as exc:
        print(f"bigrasp {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
