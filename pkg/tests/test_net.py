import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigrasp.errors import ShapeError, TrainingDiverged, WeightsMismatch
from bigrasp.geometry import GraspPose, box_mesh, random_rotation, sample_surface_points
from bigrasp.matcher import BimanualGrasp
from bigrasp.net import (
    AdamW,
    ModelConfig,
    Tensor,
    TrainSample,
    bgg_decode,
    encoder_forward,
    init_weights,
    linear,
    load_weights,
    model_forward,
    multi_head_attention,
    save_weights,
    set_abstraction,
    sgb_attention,
    sgp_decode,
    softmax_rows,
    train_step,
)
from bigrasp.net.tensor import parameter
from oracles import dense_attention, fd_gradient

TOY = ModelConfig.toy()


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


@pytest.fixture(scope="module")
def toy_weights():
    return init_weights(TOY)


@pytest.fixture(scope="module")
def cube_cloud():
    return sample_surface_points(box_mesh((0.05, 0.05, 0.05)), TOY.n_points, seed=0)


def mha_params(rng, C, identity=False):
    if identity:
        return {f"a.{p}.{k}": parameter(np.eye(C) if k == "w" else np.zeros(C)) for p in "qkvo" for k in "wb"}
    return {f"a.{p}.{k}": parameter(rng.uniform(-0.5, 0.5, (C, C) if k == "w" else C)) for p in "qkvo" for k in "wb"}


# ---------------------------------------------------------------- linear and softmax


def test_linear_identity_and_zero_input(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    np.testing.assert_array_equal(linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x.data)
    b = rng.standard_normal(5)
    out = linear(Tensor(np.zeros((3, 4))), Tensor(rng.standard_normal((4, 5))), Tensor(b))
    np.testing.assert_array_equal(out.data, np.tile(b, (3, 1)))
    with pytest.raises(ShapeError):
        linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))


def test_linear_gradients_match_finite_differences(rng):
    x, W, b = (parameter(rng.standard_normal(s)) for s in ((3, 4), (4, 2), (2,)))
    R = rng.standard_normal((3, 2))
    f = lambda: float((linear(x, W, b).data * R).sum())  # noqa: E731
    (linear(x, W, b) * R).sum().backward()
    for p in (x, W, b):
        assert rel_err(p.grad, fd_gradient(f, p.data)) < 1e-6


def test_softmax_rows_cases(rng):
    np.testing.assert_allclose(softmax_rows(Tensor(np.full((2, 4), 3.0))).data, 0.25)
    np.testing.assert_allclose(softmax_rows(Tensor([[1000.0, 0.0]])).data, [[1.0, 0.0]], atol=1e-300)
    s = softmax_rows(Tensor(rng.standard_normal((20, 7)) * 10)).data
    assert np.all(s >= 0) and np.abs(s.sum(axis=1) - 1).max() < 1e-12


# ---------------------------------------------------------------- attention


def test_single_key_attention_returns_projected_value(rng):
    C = 8
    P = mha_params(rng, C)
    v = Tensor(rng.standard_normal((1, C)))
    proj = (v.data @ P["a.v.w"].data + P["a.v.b"].data) @ P["a.o.w"].data + P["a.o.b"].data
    for _ in range(3):
        q = Tensor(rng.standard_normal((3, C)))
        out = multi_head_attention(q, v, v, P, "a", 2).data
        np.testing.assert_allclose(out, np.tile(proj, (3, 1)), atol=1e-14)


def test_duplicate_keys_merge(rng):
    C = 8
    P = mha_params(rng, C)
    q = Tensor(rng.standard_normal((3, C)))
    kv = Tensor(rng.standard_normal((1, C)))
    kv2 = Tensor(np.vstack([kv.data, kv.data]))
    np.testing.assert_allclose(multi_head_attention(q, kv2, kv2, P, "a", 2).data,
                               multi_head_attention(q, kv, kv, P, "a", 2).data, atol=1e-14)


def test_attention_gradcheck(rng):
    C = 8
    P = mha_params(rng, C)
    q, kv = parameter(rng.standard_normal((3, C))), parameter(rng.standard_normal((4, C)))
    R = rng.standard_normal((3, C))
    f = lambda: float((multi_head_attention(q, kv, kv, P, "a", 2).data * R).sum())  # noqa: E731
    (multi_head_attention(q, kv, kv, P, "a", 2) * R).sum().backward()
    # pooled: the key bias gradient is exactly zero (softmax ignores a constant shift)
    params = [q, kv, *P.values()]
    analytic = np.concatenate([p.grad.ravel() for p in params])
    numeric = np.concatenate([fd_gradient(f, p.data).ravel() for p in params])
    assert rel_err(analytic, numeric) < 1e-5
    assert np.abs(P["a.k.b"].grad).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 4]))
def test_attention_weights_row_stochastic(seed, heads):
    rng = np.random.default_rng(seed)
    C = 8
    q, kv = Tensor(rng.standard_normal((5, C)) * 3), Tensor(rng.standard_normal((7, C)) * 3)
    _, A = multi_head_attention(q, kv, kv, mha_params(rng, C), "a", heads, return_weights=True)
    assert np.all(A.data >= 0) and np.abs(A.data.sum(axis=-1) - 1).max() < 1e-12
    _, B = sgb_attention(q, kv, return_weights=True)
    assert np.all(B.data >= 0) and np.abs(B.data.sum(axis=-1) - 1).max() < 1e-12


def test_sgb_single_key_and_zero_query(rng):
    F1 = Tensor(rng.standard_normal((1, 8)))
    out = sgb_attention(Tensor(rng.standard_normal((4, 8))), F1).data
    np.testing.assert_array_equal(out, np.tile(F1.data, (4, 1)))
    F = Tensor(rng.standard_normal((6, 8)))
    np.testing.assert_allclose(sgb_attention(Tensor(np.zeros((4, 8))), F).data,
                               np.tile(F.data.mean(axis=0), (4, 1)), atol=1e-15)


def test_sgb_dense_equivalence_and_gradients(rng):
    Qb, F = parameter(rng.standard_normal((4, 8))), parameter(rng.standard_normal((6, 8)))
    expected, _ = dense_attention(Qb.data, F.data, F.data)
    assert np.abs(sgb_attention(Qb, F).data - expected).max() < 1e-12
    single_head = multi_head_attention(Qb, F, F, mha_params(rng, 8, identity=True), "a", 1).data
    assert np.abs(single_head - expected).max() < 1e-12
    R = rng.standard_normal((4, 8))
    f = lambda: float((sgb_attention(Qb, F).data * R).sum())  # noqa: E731
    (sgb_attention(Qb, F) * R).sum().backward()
    assert rel_err(Qb.grad, fd_gradient(f, Qb.data)) < 1e-5
    assert rel_err(F.grad, fd_gradient(f, F.data)) < 1e-5


def test_sgb_shape_errors(rng):
    with pytest.raises(ShapeError):
        sgb_attention(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 5))))


# ---------------------------------------------------------------- set abstraction


def sa_params(rng, n_in, n_out=6):
    return {"s.0.w": parameter(rng.uniform(-1, 1, (n_in, 5))), "s.0.b": parameter(rng.uniform(-1, 1, 5)),
            "s.1.w": parameter(rng.uniform(-1, 1, (5, n_out))), "s.1.b": parameter(rng.uniform(-1, 1, n_out))}


def test_identical_points_give_identical_center_features(rng):
    pts = np.tile([0.2, -0.1, 0.3], (12, 1))
    _, f = set_abstraction(pts, 4, 0.5, sa_params(rng, 3), "s")
    assert np.all(f.data == f.data[0])


def test_set_abstraction_permutation_invariant(rng):
    pts = rng.uniform(-1, 1, (30, 3))
    P = sa_params(rng, 3)
    _, base = set_abstraction(pts, 8, 0.6, P, "s", n_max=64)
    perm = np.r_[0, 1 + rng.permutation(29)]  # index 0 pinned: it seeds the sampling
    _, other = set_abstraction(pts[perm], 8, 0.6, P, "s", n_max=64)
    np.testing.assert_array_equal(base.data, other.data)


def test_max_pool_ignores_dominated_neighbor(rng):
    pts = rng.uniform(-1, 1, (20, 3))
    feats = Tensor(rng.standard_normal((20, 2)))
    P = sa_params(rng, 5)
    _, base = set_abstraction(pts, 5, 2.0, P, "s", n_max=64, features=feats)
    # a duplicate of point 7 yields exactly the same per-point feature, so it cannot raise any maximum
    pts2 = np.vstack([pts, pts[7]])
    feats2 = Tensor(np.vstack([feats.data, feats.data[7]]))
    _, with_dup = set_abstraction(pts2, 5, 2.0, P, "s", n_max=64, features=feats2)
    np.testing.assert_array_equal(base.data, with_dup.data)
    x = Tensor(rng.standard_normal((4, 3)))
    dominated = Tensor(np.vstack([x.data, x.data.min(axis=0) - 1]))
    np.testing.assert_array_equal(x.max(axis=0).data, dominated.max(axis=0).data)


# ---------------------------------------------------------------- full network


def test_encoder_shape_and_determinism(toy_weights, cube_cloud):
    F, _ = encoder_forward(cube_cloud, TOY, toy_weights)
    assert F.shape == (16, 32)
    F2, _ = encoder_forward(cube_cloud, TOY, toy_weights)
    np.testing.assert_array_equal(F.data, F2.data)
    R = random_rotation(np.random.default_rng(0))
    F3, _ = encoder_forward(cube_cloud @ R.T, TOY, toy_weights)
    assert not np.allclose(F.data, F3.data)
    with pytest.raises(ShapeError):
        encoder_forward(cube_cloud[:10], TOY, toy_weights)


def _rotations(closing, approach):
    x, z = closing.data, approach.data
    return np.stack([x, np.cross(z, x), z], axis=-1)


def test_sgp_contract(toy_weights, cube_cloud):
    F, frame = encoder_forward(cube_cloud, TOY, toy_weights)
    F_sgp, out = sgp_decode(F, TOY, toy_weights, frame)
    assert F_sgp.shape == (16, 32) and out.translation.shape == (16, 3)
    R = _rotations(out.closing, out.approach)
    assert np.abs(np.einsum("nji,njk->nik", R, R) - np.eye(3)).max() < 1e-9
    assert np.abs(np.linalg.det(R) - 1).max() < 1e-9
    other = init_weights(TOY, seed=1)
    _, out2 = sgp_decode(F, TOY, other, frame)
    assert not np.allclose(out.translation.data, out2.translation.data)


def test_bgg_contract_and_conditioning(toy_weights, cube_cloud):
    F, frame = encoder_forward(cube_cloud, TOY, toy_weights)
    F_sgp, _ = sgp_decode(F, TOY, toy_weights, frame)
    out = bgg_decode(F, F_sgp, TOY, toy_weights, frame)
    assert out.quality.shape == (16,) and np.all((out.quality.data > 0) & (out.quality.data < 1))
    for c, a in ((out.closing, out.approach), (out.closing2, out.approach2)):
        R = _rotations(c, a)
        assert np.abs(np.linalg.det(R) - 1).max() < 1e-9
    ablated = bgg_decode(F, Tensor(np.zeros(F_sgp.shape)), TOY, toy_weights, frame)
    assert not np.allclose(out.translation.data, ablated.translation.data)


def test_model_forward_contract(toy_weights, cube_cloud):
    t = time.perf_counter()
    singles, pairs = model_forward(cube_cloud, TOY, toy_weights)
    elapsed = time.perf_counter() - t
    assert len(singles) == 16 and len(pairs) == 16
    assert all(0 < p.quality < 1 for p in pairs)
    singles2, pairs2 = model_forward(cube_cloud, TOY, toy_weights)
    assert [g.to_dict() for g in singles] == [g.to_dict() for g in singles2]
    assert [(p.g1.to_dict(), p.g2.to_dict(), p.quality) for p in pairs] == \
           [(p.g1.to_dict(), p.g2.to_dict(), p.quality) for p in pairs2]
    assert elapsed < 1.0


# ---------------------------------------------------------------- training


def _sample(cloud, rng):
    singles = [GraspPose(random_rotation(rng), rng.uniform(-0.02, 0.02, 3), 0.05) for _ in range(4)]
    pairs = [BimanualGrasp(singles[0], singles[1], 0.7), BimanualGrasp(singles[2], singles[3], 0.2)]
    return TrainSample.from_grasps(cloud, singles, pairs)


def test_zero_learning_rate_is_a_no_op(cube_cloud, rng):
    w = init_weights(TOY)
    before = {k: v.data.copy() for k, v in w.items()}
    loss = train_step([_sample(cube_cloud, rng)], TOY, w, AdamW(), lr=0.0)
    assert np.isfinite(loss)
    assert all(np.array_equal(before[k], w[k].data) for k in w)


def test_nan_loss_raises(cube_cloud, rng):
    w = init_weights(TOY)
    w["sgp.head.2.b"].data[:] = np.nan
    with pytest.raises(TrainingDiverged):
        train_step([_sample(cube_cloud, rng)], TOY, w, AdamW())


def test_adamw_update_formula():
    p = parameter(np.array([1.0, -2.0]))
    p.grad = np.array([0.5, 0.25])
    opt = AdamW()
    opt.step({"p": p}, lr=0.1)
    # first step: bias-corrected moments are g and g**2; decay acts on the weights directly
    g = np.array([0.5, 0.25])
    expected = np.array([1.0, -2.0]) * (1 - 0.1 * 1e-2) - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_training_reduces_loss(cube_cloud, rng):
    w = init_weights(TOY)
    opt = AdamW()
    sample = _sample(cube_cloud, rng)
    losses = [train_step([sample], TOY, w, opt) for _ in range(15)]
    assert losses[-1] < losses[0]


# ---------------------------------------------------------------- weights container


def test_weights_round_trip(tmp_path, toy_weights):
    path = tmp_path / "w.txt"
    save_weights(path, toy_weights, TOY)
    loaded, cfg = load_weights(path)
    assert cfg == TOY and list(loaded) == list(toy_weights)
    assert all(np.array_equal(loaded[k].data, toy_weights[k].data) for k in loaded)
    header = path.read_text().splitlines()
    assert header[3].split() == ["enc.sa1.0.w", "3x16", "0"]
    assert (tmp_path / "w.txt.bin").stat().st_size == 8 * sum(v.data.size for v in toy_weights.values())


def test_weights_mismatch_detection(tmp_path, toy_weights):
    path = tmp_path / "w.txt"
    save_weights(path, toy_weights, TOY)
    with pytest.raises(WeightsMismatch):
        load_weights(path, ModelConfig.toy(embed_dim=16))
    blob = tmp_path / "w.txt.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(WeightsMismatch):
        load_weights(path)
    (tmp_path / "bad.txt").write_text("not weights\n")
    with pytest.raises(WeightsMismatch):
        load_weights(tmp_path / "bad.txt")
