import json
import time

import numpy as np
import pytest

from bigrasp import data_path
from bigrasp.cli import build_parser, main
from bigrasp.io import load_grasps, load_obj, load_pairs, load_ply, save_grasps
from bigrasp.matcher import collision_free_pair
from bigrasp.net import ModelConfig
from bigrasp.net.gradcheck import CHECK_NAMES

CUBE = str(data_path("cube.obj"))


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """sample -> pair -> train-toy (a few steps) -> infer on the bundled cube."""
    d = tmp_path_factory.mktemp("chain")
    assert main(["sample", "--mesh", CUBE, "--k", "12", "--out", str(d / "g.json")]) == 0
    assert main(["pair", "--mesh", CUBE, "--grasps", str(d / "g.json"), "--out", str(d / "p.json")]) == 0
    assert main(["train-toy", "--mesh", CUBE, "--steps", "3", "--out", str(d / "w.txt")]) == 0
    assert main(["infer", "--mesh", CUBE, "--weights", str(d / "w.txt"), "--out", str(d / "pred.json")]) == 0
    return d


def test_sample_contract(chain, tmp_path):
    grasps, mesh_id = load_grasps(chain / "g.json")
    assert 1 <= len(grasps) <= 12 and mesh_id == "cube"
    raw = json.loads((chain / "g.json").read_text())
    assert set(raw["grasps"][0]) == {"rotation", "translation", "width"} and len(raw["grasps"][0]["rotation"]) == 9
    assert main(["sample", "--mesh", CUBE, "--k", "12", "--out", str(tmp_path / "again.json")]) == 0
    assert (tmp_path / "again.json").read_bytes() == (chain / "g.json").read_bytes()


def test_sample_input_errors(tmp_path, capsys):
    assert main(["sample", "--mesh", CUBE, "--k", "0", "--out", str(tmp_path / "g.json")]) == 2
    (tmp_path / "bad.obj").write_text("v 0 0\n")
    assert main(["sample", "--mesh", str(tmp_path / "bad.obj")]) == 2
    assert main(["sample", "--mesh", str(tmp_path / "missing.obj")]) == 2
    assert "bigrasp sample" in capsys.readouterr().err


def test_pair_contract(chain):
    pairs = load_pairs(chain / "p.json")
    mesh = load_obj(CUBE)
    assert pairs
    for p in pairs:
        assert 0.0 <= p.quality <= 1.0 and p.breakdown is not None
        assert collision_free_pair(p.g1, p.g2, mesh)
    rec = json.loads((chain / "p.json").read_text())["pairs"][0]
    assert set(rec["breakdown"]) == {"epsilon", "torque_balance", "dexterity"}


def test_pair_data_errors_and_empty_result(chain, tmp_path):
    grasps, _ = load_grasps(chain / "g.json")
    save_grasps(tmp_path / "one.json", grasps[:1])
    assert main(["pair", "--mesh", CUBE, "--grasps", str(tmp_path / "one.json")]) == 3
    save_grasps(tmp_path / "same.json", [grasps[0], grasps[0]])
    assert main(["pair", "--mesh", CUBE, "--grasps", str(tmp_path / "same.json"), "--out", str(tmp_path / "p.json")]) == 0
    assert load_pairs(tmp_path / "p.json") == []
    assert main(["pair", "--mesh", CUBE, "--grasps", str(chain / "g.json"), "--quality-weights", "1,x,1"]) == 2


def test_infer_contract(chain, tmp_path):
    pairs = load_pairs(chain / "pred.json")
    assert len(pairs) == 16
    q = [p.quality for p in pairs]
    assert q == sorted(q, reverse=True)
    cloud = load_ply(chain / "pred.ply")
    assert len(cloud) == ModelConfig.toy().n_points + 16 * 2 * 5
    t = time.perf_counter()
    assert main(["infer", "--mesh", CUBE, "--weights", str(chain / "w.txt"), "--out", str(tmp_path / "x.json")]) == 0
    assert time.perf_counter() - t < 1.0
    assert (tmp_path / "x.json").read_bytes() == (chain / "pred.json").read_bytes()


def test_infer_weight_errors(chain, tmp_path):
    assert main(["infer", "--mesh", CUBE, "--weights", str(tmp_path / "nope.txt")]) == 4
    assert main(["infer", "--mesh", CUBE, "--weights", str(chain / "w.txt"), "--cfg", "embed_dim=16"]) == 4
    assert main(["infer", "--mesh", CUBE, "--weights", str(chain / "w.txt"), "--cfg", "embed_dim"]) == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in CHECK_NAMES) and "worst:" in out
    assert main(["gradcheck", "--corrupt", "sgb_attention"]) == 5


def test_train_toy_zero_steps_and_defaults(tmp_path):
    assert build_parser().parse_args(["train-toy"]).lr == 5e-4
    assert main(["train-toy", "--mesh", CUBE, "--steps", "0", "--out", str(tmp_path / "w.txt")]) == 0
    assert (tmp_path / "w.loss.csv").read_text() == "step,loss\n"
    assert (tmp_path / "w.txt.bin").exists()


def test_train_toy_divergence_exit(tmp_path):
    assert main(["train-toy", "--mesh", CUBE, "--steps", "4", "--lr", "1e300", "--out", str(tmp_path / "w.txt")]) == 6


def test_train_toy_accepts_directory(tmp_path):
    assert main(["train-toy", "--mesh", str(tmp_path), "--steps", "0"]) == 3


def test_diversity_command(chain, tmp_path, capsys):
    assert main(["diversity", "--mesh", CUBE, "--pairs", str(chain / "p.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "object_id,n_pairs,fraction,diversity_percent" and len(lines) == 3
    assert all(0.0 <= float(line.split(",")[3]) <= 100.0 for line in lines[1:])
    (tmp_path / "empty.json").write_text('{"pairs": []}\n')
    assert main(["diversity", "--mesh", CUBE, "--pairs", str(tmp_path / "empty.json"), "--out", str(tmp_path / "d.csv")]) == 0
    rows = (tmp_path / "d.csv").read_text().splitlines()[1:]
    assert [r.split(",")[3] for r in rows] == ["0.000000", "0.000000"]
    assert main(["diversity", "--mesh", CUBE, "--pairs", str(chain / "p.json"), "--fractions", "0"]) == 2


def test_diversity_on_ply_cloud(chain, capsys):
    assert main(["diversity", "--mesh", str(chain / "pred.ply"), "--pairs", str(chain / "pred.json"),
                 "--fractions", "1"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2


def test_unknown_command_is_usage_error():
    assert main(["frobnicate"]) == 2
