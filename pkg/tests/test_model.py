import json

import numpy as np
import pytest

from jointembed import gradcheck
from jointembed.errors import DimMismatch, ParseError, SlicePlanOverflow, ValidationError
from jointembed.losses import BatchEmbeddings, LossConfig, SlicePlan, full_joint
from jointembed.model import (
    ModelConfig,
    backward,
    forward,
    identity_embedding,
    init_params,
    load_checkpoint,
    save_checkpoint,
    split_embedding,
    update_running_stats,
)
from jointembed.numerics import finite_diff_grad, max_relative_error


def test_config_validation():
    with pytest.raises(SlicePlanOverflow):
        ModelConfig(input_dim=4, embed_dim=8, n_classes=3, M=2, Q=4)
    with pytest.raises(ValidationError):
        ModelConfig(input_dim=0, embed_dim=8, n_classes=3)
    with pytest.raises(ValidationError):
        ModelConfig(input_dim=4, embed_dim=8, n_classes=1)
    cfg = ModelConfig(input_dim=4, embed_dim=8, n_classes=3, M=1, Q=4)
    assert cfg.id_dim == 4 and cfg.layer_dims == (4, 8)


def test_identity_network():
    cfg = ModelConfig(input_dim=2, embed_dim=2, n_classes=2, batch_norm_output=False)
    params = init_params(cfg, 0)
    params.weights[0] = np.eye(2)
    emb, _ = forward(params, cfg, np.array([1.0, 2.0]))
    assert emb.tolist() == [1.0, 2.0]


def test_zero_network_gives_zero_embedding():
    cfg = ModelConfig(input_dim=3, embed_dim=4, n_classes=2, hidden_dims=(5,), batch_norm_output=False)
    params = init_params(cfg, 0)
    for w in params.weights:
        w[:] = 0.0
    emb, _ = forward(params, cfg, np.ones((2, 3)))
    assert np.all(emb == 0.0)


def test_forward_rejects_wrong_width():
    cfg = ModelConfig(input_dim=3, embed_dim=4, n_classes=2)
    with pytest.raises(DimMismatch):
        forward(init_params(cfg, 0), cfg, np.ones(4))


def test_split_embedding_examples():
    cfg = ModelConfig(input_dim=2, embed_dim=8, n_classes=2, M=2, Q=2)
    e = np.arange(8.0)
    f_id, attrs = split_embedding(e, cfg)
    assert [a.tolist() for a in attrs] == [[0.0, 1.0], [2.0, 3.0]]
    assert f_id.tolist() == [4.0, 5.0, 6.0, 7.0]
    assert np.array_equal(np.concatenate(attrs + [f_id]), e)
    f_id, attrs = split_embedding(e, ModelConfig(input_dim=2, embed_dim=8, n_classes=2))
    assert attrs == [] and np.array_equal(f_id, e)
    big = ModelConfig(input_dim=2, embed_dim=2048, n_classes=2, M=27, Q=16)
    assert split_embedding(np.zeros(2048), big)[0].shape == (1616,)
    assert big.id_dim == 1616


def test_init_is_deterministic_and_heads_are_unit_norm():
    cfg = ModelConfig(input_dim=5, embed_dim=10, n_classes=7, hidden_dims=(6,), M=2, Q=3)
    a, b = init_params(cfg, 11), init_params(cfg, 11)
    for x, y in zip(a.trainable().values(), b.trainable().values()):
        assert np.array_equal(x, y)
    np.testing.assert_allclose(np.linalg.norm(a.heads.identity, axis=0), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(a.heads.attributes, axis=1), 1.0, atol=1e-9)
    c = init_params(cfg, 12)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_no_hidden_layers_is_one_affine_map():
    cfg = ModelConfig(input_dim=3, embed_dim=4, n_classes=2)
    params = init_params(cfg, 0)
    assert len(params.weights) == 1 and params.weights[0].shape == (3, 4)


def test_batch_norm_modes(rng):
    cfg = ModelConfig(input_dim=4, embed_dim=3, n_classes=2, hidden_dims=(5,))
    params = init_params(cfg, 1)
    x = rng.standard_normal((16, 4))
    emb, cache = forward(params, cfg, x, training=True)
    np.testing.assert_allclose(emb.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(emb.var(axis=0), cache["batch_var"] / (cache["batch_var"] + 1e-5), rtol=1e-10)
    update_running_stats(params, cache)
    # frozen mode is a pure function of params and input
    full, _ = forward(params, cfg, x)
    np.testing.assert_array_equal(full, forward(params, cfg, x)[0])
    rows = np.stack([forward(params, cfg, r)[0] for r in x])
    np.testing.assert_allclose(full, rows, rtol=0, atol=1e-12)
    with pytest.raises(ValidationError):
        forward(params, cfg, x[:1], training=True)


def test_running_stats_move_toward_batch_stats(rng):
    cfg = ModelConfig(input_dim=2, embed_dim=2, n_classes=2)
    params = init_params(cfg, 0)
    x = 5.0 + rng.standard_normal((32, 2))
    for _ in range(200):
        _, cache = forward(params, cfg, x, training=True)
        update_running_stats(params, cache)
    np.testing.assert_allclose(params.bn_mean, cache["batch_mean"], rtol=1e-6)
    np.testing.assert_allclose(params.bn_var, cache["batch_var"] * 32 / 31, rtol=1e-6)


@pytest.mark.parametrize("bn, training", [(False, False), (True, True), (True, False)])
def test_backward_matches_finite_differences(rng, bn, training):
    cfg = ModelConfig(input_dim=4, embed_dim=3, n_classes=2, hidden_dims=(5,), batch_norm_output=bn)
    params = init_params(cfg, 2)
    if bn:
        params.bn_gamma = rng.uniform(0.5, 1.5, 3)
        params.bn_beta = rng.standard_normal(3)
        params.bn_mean = rng.standard_normal(3)
        params.bn_var = rng.uniform(0.5, 2.0, 3)
    x = rng.standard_normal((6, 4))
    target = rng.standard_normal((6, 3))

    def loss(p):
        emb, cache = forward(p, cfg, x, training=training)
        return 0.5 * float(np.sum((emb - target) ** 2)), emb, cache

    _, emb, cache = loss(params)
    grads, grad_raw = backward(params, cfg, cache, emb - target)
    for name, arr in params.trainable().items():
        if name.startswith("head"):
            continue

        def f(v, arr=arr):
            old = arr.copy()
            arr[...] = v
            val = loss(params)[0]
            arr[...] = old
            return val

        assert max_relative_error(grads[name], finite_diff_grad(f, arr.copy())) < 1e-5, name

    def f_raw(v):
        emb, _ = forward(params, cfg, v, training=training)
        return 0.5 * float(np.sum((emb - target) ** 2))

    assert max_relative_error(grad_raw, finite_diff_grad(f_raw, x)) < 1e-5


def test_slice_gradients_assemble_full_gradient(rng):
    plan = SlicePlan(2, 2)
    x = rng.standard_normal((4, 7))
    b = BatchEmbeddings(x, [0, 0, 1, 1], rng.integers(0, 2, (4, 2)), (2, 2))
    from jointembed.losses import HeadWeights

    h = HeadWeights(rng.standard_normal((3, 2)), rng.standard_normal((2, 2, 2)))
    out = full_joint(b, h, LossConfig(s=5.0, gamma=0.5, lam=0.5), plan)
    id_only = full_joint(b, h, LossConfig(s=5.0, gamma=0.5), plan).grad_embeddings
    attr_only = full_joint(b, h, LossConfig(s=5.0, lam=0.5, use_softmax=False), plan).grad_embeddings
    np.testing.assert_allclose(out.grad_embeddings, id_only + attr_only, atol=1e-15)


def test_end_to_end_gradient():
    result = gradcheck.check_case("model_end_to_end", trials=20, seed=1)
    assert result.max_rel_err < 1e-4


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = ModelConfig(input_dim=4, embed_dim=6, n_classes=3, hidden_dims=(5,), M=1, Q=2)
    params = init_params(cfg, 3)
    params.bn_mean += 0.25
    path = tmp_path / "ck.npz"
    save_checkpoint(path, params, cfg, {"note": "x"})
    loaded, cfg2, meta = load_checkpoint(path)
    assert cfg2 == cfg and meta == {"note": "x"}
    for (k, a), (_, b) in zip(params.trainable().items(), loaded.trainable().items()):
        assert np.array_equal(a, b), k
    assert np.array_equal(loaded.bn_mean, params.bn_mean)
    x = rng.standard_normal((3, 4))
    assert np.array_equal(identity_embedding(params, cfg, x), identity_embedding(loaded, cfg2, x))


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, a=np.zeros(2))
    with pytest.raises(ParseError):
        load_checkpoint(path)
    cfg = ModelConfig(input_dim=2, embed_dim=2, n_classes=2)
    good = tmp_path / "ck.npz"
    save_checkpoint(good, init_params(cfg, 0), cfg)
    with np.load(good) as z:
        arrays = dict(z)
    arrays["version"] = np.array(99)
    bad = tmp_path / "future.npz"
    np.savez(bad, **arrays)
    with pytest.raises(ParseError):
        load_checkpoint(bad)
    assert json.loads(str(arrays["config"]))["input_dim"] == 2
