import numpy as np
import pytest

from sleepstage.autodiff import AdamHyper, Tensor, adam_step, grad_check, ops
from sleepstage.model import ModelConfig, SleepStager, causal_windows, normalized_adjacency

DEFAULT_PARAMETERS = 1_766_469
# ReLU and max-pool make the network piecewise smooth; see grad_check
# small steps dodge ReLU/max-pool kinks, large ones rounding noise on near-zero gradients
KINK_STEPS = (1e-4, 1e-5, 1e-6, 1e-3, 1e-2)


def expected_parameters(cfg: ModelConfig) -> int:
    """Hand count of every weight and bias, layer by layer."""
    d, dc, ff = cfg.d_tr, cfg.d_cnn, cfg.d_ff
    bc = cfg.cnn_branch_channels
    cnn = sum(bc * k + bc for k in cfg.kernel_sizes) + dc * bc * len(cfg.kernel_sizes) * cfg.trunk_kernel + 2 * dc
    layer = (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d) + 2 * d
    if cfg.temporal == "full":
        per = cnn + (dc * d + d) + cfg.num_tokens * d + cfg.context_window * d + 2 * cfg.transformer_layers * layer
    else:
        per = cnn + dc * d + d
    m = len(cfg.modalities)
    fusion = 2 * (d * d + d) if cfg.fusion == "gcn" else m * d * d + d
    return m * per + fusion + d * cfg.num_classes + cfg.num_classes


def tiny(**kw) -> ModelConfig:
    base = dict(d_cnn=8, d_tr=16, num_heads=2, d_ff=16, context_window=3, num_tokens=4, cnn_branch_channels=2, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def tokens_for(cfg, epochs, rng):
    return {m: rng.normal(0, 20, size=(epochs, cfg.num_tokens, cfg.token_samples)) for m in cfg.modalities}


def test_default_parameter_count():
    cfg = ModelConfig()
    assert SleepStager(cfg).num_parameters() == DEFAULT_PARAMETERS == expected_parameters(cfg)


@pytest.mark.parametrize(
    "cfg",
    [ModelConfig.desk(), ModelConfig(temporal="cnn_only"), ModelConfig(fusion="concat"), ModelConfig(modalities=("EOG",)), tiny()],
)
def test_parameter_count_formula(cfg):
    assert SleepStager(cfg, seed=3).num_parameters() == expected_parameters(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_tr=10, num_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(modalities=("EEG3",))
    with pytest.raises(ValueError):
        ModelConfig(fusion="sum")
    assert ModelConfig(modalities=("EOG", "EEG1")).modalities == ("EEG1", "EOG")
    assert ModelConfig.from_dict(ModelConfig.desk().to_dict()) == ModelConfig.desk()


def test_cnn_embedding_width(rng):
    model = SleepStager(ModelConfig(), seed=0)
    z = model.cnn_tokenize(rng.normal(size=(3, 1, 300)), "EEG1")
    assert z.shape == (3, 64)


def test_cnn_zero_input_zero_output():
    model = SleepStager(ModelConfig.desk(), seed=0)
    # biases start at zero and batch norm holds identity statistics
    z = model.cnn_tokenize(np.zeros((2, 1, 300)), "EEG1", training=False)
    np.testing.assert_array_equal(z.data, 0.0)


def test_cnn_gradient_two_tokens(rng):
    cfg = tiny()
    model = SleepStager(cfg, seed=1, dtype=np.float64)
    x = rng.normal(size=(2, 1, 300))
    params = [p for n, p in model.store.params.items() if n.startswith("cnn.EEG1.")]
    w = rng.normal(size=(2, cfg.d_cnn))
    err = grad_check(lambda *_: ops.sum(ops.mul(model.cnn_tokenize(x, "EEG1", training=True), Tensor(w))), params, eps=KINK_STEPS, max_coords=4, rng=rng)
    assert err < 1e-4


def test_fused_branches_equal_separate_convolutions(rng):
    cfg = ModelConfig.desk()
    model = SleepStager(cfg, seed=2, dtype=np.float64)
    x = rng.normal(size=(3, 1, 300))
    p = model.store.params
    branches = [
        ops.relu(ops.conv1d(Tensor(x), p[f"cnn.EEG1.branch{k}.weight"], p[f"cnn.EEG1.branch{k}.bias"], padding=ops.same_padding(k)))
        for k in cfg.kernel_sizes
    ]
    h = ops.conv1d(ops.concat(branches, axis=1), p["cnn.EEG1.trunk.weight"], padding=ops.same_padding(cfg.trunk_kernel))
    bn = model.store.buffers
    h = ops.batch_norm(h, p["cnn.EEG1.bn.gamma"], p["cnn.EEG1.bn.beta"], bn["cnn.EEG1.bn.running_mean"], bn["cnn.EEG1.bn.running_var"], False)
    ref = ops.adaptive_avg_pool1d(ops.max_pool1d(ops.relu(h), 4, 4))
    np.testing.assert_allclose(model.cnn_tokenize(x, "EEG1").data, ref.data, atol=1e-10)


def test_intra_shape_and_permutation(rng):
    cfg = ModelConfig()
    model = SleepStager(cfg, seed=0, dtype=np.float64)
    z = rng.normal(size=(1, 13, 64))
    out = model.intra_encode(Tensor(z), "EEG1")
    assert out.shape == (1, 128)
    perm = rng.permutation(13)
    np.testing.assert_allclose(model.intra_encode(Tensor(z[:, perm]), "EEG1").data, out.data, atol=1e-5)
    model.store["intra.EEG1.pos"].data[...] = rng.normal(size=(13, 128))
    a = model.intra_encode(Tensor(z), "EEG1").data
    b = model.intra_encode(Tensor(z[:, perm]), "EEG1").data
    assert np.max(np.abs(a - b)) > 1e-3


def test_wrong_token_count_rejected(rng):
    model = SleepStager(ModelConfig.desk(), seed=0)
    with pytest.raises(ValueError, match="13"):
        model.intra_encode(Tensor(rng.normal(size=(1, 12, 8))), "EEG1")


def test_inter_shape_and_window_independence(rng):
    seven = SleepStager(ModelConfig(), seed=4, dtype=np.float64)
    three = SleepStager(ModelConfig(context_window=3), seed=5, dtype=np.float64)
    three.store.load_arrays({k: v for k, v in seven.store.arrays().items() if k in three.store.params or k in three.store.buffers if not k.startswith("inter.") or not k.endswith(".pos")})
    row = rng.normal(size=128)
    a = seven.inter_encode(Tensor(np.tile(row, (1, 7, 1))), "EEG1")
    b = three.inter_encode(Tensor(np.tile(row, (1, 3, 1))), "EEG1")
    assert a.shape == (1, 128)
    np.testing.assert_allclose(a.data, b.data, atol=1e-5)


def test_inter_gradient_tiny(rng):
    cfg = tiny(d_tr=8, num_heads=2, context_window=3)
    model = SleepStager(cfg, seed=0, dtype=np.float64)
    f = rng.normal(size=(2, 3, 8))
    params = [p for n, p in model.store.params.items() if n.startswith("inter.EEG1.")]
    w = rng.normal(size=(2, 8))
    err = grad_check(lambda x, *_: ops.sum(ops.mul(model.inter_encode(x, "EEG1"), Tensor(w))), [f, *params])
    assert err < 1e-4


def test_attention_block_gradient(rng):
    from sleepstage.model import attention_block

    d, ff = 8, 12
    shapes = {
        "in_proj.weight": (d, 3 * d),
        "in_proj.bias": (3 * d,),
        "out_proj.weight": (d, d),
        "out_proj.bias": (d,),
        "ln1.gamma": (d,),
        "ln1.beta": (d,),
        "ff1.weight": (d, ff),
        "ff1.bias": (ff,),
        "ff2.weight": (ff, d),
        "ff2.bias": (d,),
        "ln2.gamma": (d,),
        "ln2.beta": (d,),
    }
    names = list(shapes)
    values = [rng.normal(scale=0.5, size=s) for s in shapes.values()]
    x = rng.normal(size=(2, 4, 8))
    w = rng.normal(size=(2, 4, 8))

    def fn(xt, *ps):
        out, weights = attention_block(xt, dict(zip(names, ps)), num_heads=2)
        return ops.sum(ops.mul(out, Tensor(w)))

    assert grad_check(fn, [x, *values]) < 1e-4
    _, weights = attention_block(Tensor(x), {n: Tensor(v) for n, v in zip(names, values)}, num_heads=2)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)


def test_adjacency_of_three_nodes():
    np.testing.assert_allclose(normalized_adjacency(3), np.full((3, 3), 1 / 3))
    np.testing.assert_array_equal(normalized_adjacency(1), [[1.0]])


def _identity_gcn(model, d):
    p = model.store.params
    for layer in ("gcn1", "gcn2"):
        p[f"{layer}.weight"].data[...] = np.eye(d)
        p[f"{layer}.bias"].data[...] = 0.0


def test_gcn_mixes_to_node_mean():
    model = SleepStager(ModelConfig(d_tr=2, num_heads=1, d_ff=4), seed=0, dtype=np.float64)
    _identity_gcn(model, 2)
    out = model.gcn_fuse(Tensor(np.array([[[3.0, 0.0], [0.0, 3.0], [0.0, 0.0]]])))
    np.testing.assert_allclose(out.data, [[1.0, 1.0]])


def test_gcn_identical_rows_are_two_affine_layers(rng):
    model = SleepStager(ModelConfig(d_tr=16, num_heads=2, d_ff=8), seed=1, dtype=np.float64)
    p = {k: v.data for k, v in model.store.params.items()}
    row = rng.normal(size=16)
    out = model.gcn_fuse(Tensor(np.tile(row, (1, 3, 1)))).data[0]
    ref = np.maximum(row @ p["gcn1.weight"] + p["gcn1.bias"], 0) @ p["gcn2.weight"] + p["gcn2.bias"]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_gcn_permutation_invariant_concat_not(rng):
    h = rng.normal(size=(2, 3, 16))
    perm = [2, 0, 1]
    g = SleepStager(ModelConfig(d_tr=16, num_heads=2, d_ff=8), seed=2, dtype=np.float64)
    np.testing.assert_allclose(g.gcn_fuse(Tensor(h)).data, g.gcn_fuse(Tensor(h[:, perm])).data, atol=1e-6)
    c = SleepStager(ModelConfig(d_tr=16, num_heads=2, d_ff=8, fusion="concat"), seed=2, dtype=np.float64)
    out = c.concat_fuse(Tensor(h))
    assert out.shape == (2, 16)
    assert np.max(np.abs(out.data - c.concat_fuse(Tensor(h[:, perm])).data)) > 1e-6
    # layout is EEG1 | EEG2 | EOG
    w = c.store["concat.weight"].data
    np.testing.assert_allclose(out.data, h.reshape(2, 48) @ w + c.store["concat.bias"].data, atol=1e-12)


def test_single_node_gcn(rng):
    model = SleepStager(ModelConfig(d_tr=16, num_heads=2, d_ff=8, modalities=("EOG",)), seed=0, dtype=np.float64)
    p = {k: v.data for k, v in model.store.params.items()}
    row = rng.normal(size=(1, 1, 16))
    ref = np.maximum(row[0, 0] @ p["gcn1.weight"] + p["gcn1.bias"], 0) @ p["gcn2.weight"] + p["gcn2.bias"]
    np.testing.assert_allclose(model.gcn_fuse(Tensor(row)).data[0], ref, atol=1e-12)


def test_classifier(rng):
    model = SleepStager(ModelConfig.desk(), seed=0, dtype=np.float64)
    model.store["classifier.weight"].data[...] = 0
    np.testing.assert_allclose(model.classify(Tensor(rng.normal(size=(3, 32)))).data, 0.2)
    logits = rng.normal(size=(4, 5))
    np.testing.assert_array_equal(ops.softmax(Tensor(logits)).data.argmax(1), ops.softmax(Tensor(logits + 7.0)).data.argmax(1))


def test_forward_full_outputs_distribution(rng):
    cfg = ModelConfig.desk()
    model = SleepStager(cfg, seed=0)
    p = model.forward_full(tokens_for(cfg, 7, rng))
    assert p.shape == (5,)
    assert abs(p.sum() - 1) < 1e-6
    np.testing.assert_array_equal(p, model.forward_full(tokens_for(cfg, 7, np.random.default_rng(1234))))


def test_forward_full_is_deterministic(rng):
    cfg = ModelConfig.desk()
    model = SleepStager(cfg, seed=0)
    w = tokens_for(cfg, 7, rng)
    np.testing.assert_array_equal(model.forward_full(w), model.forward_full(w))


@pytest.mark.parametrize("seed", range(20))
def test_end_to_end_gradient_reduced_config(seed):
    rng = np.random.default_rng(seed)
    cfg = tiny()
    model = SleepStager(cfg, seed=seed, dtype=np.float64)
    tok = tokens_for(cfg, 4, rng)
    windows = causal_windows(np.array([2, 3]), 0, 3)
    targets = np.array([1, 4])

    def loss(*_):
        return ops.cross_entropy(model.forward_chunk(tok, windows, training=True), targets)

    # alternate seeds cover alternate tensors, so every tensor is probed on 10 seeds
    params = list(model.store.params.values())[seed % 2 :: 2]
    assert grad_check(loss, params, eps=KINK_STEPS, max_coords=1, rng=rng) < 1e-4


def _perturbed_context(tokens, rng, keep_last):
    out = {}
    for m, t in tokens.items():
        t = t.copy()
        t[:-keep_last] = rng.normal(0, 50, size=t[:-keep_last].shape)
        out[m] = t
    return out


def test_cnn_only_ignores_context(rng):
    cfg = ModelConfig.desk(temporal="cnn_only")
    model = SleepStager(cfg, seed=0)
    w = tokens_for(cfg, 7, rng)
    for _ in range(5):
        np.testing.assert_array_equal(model.forward_full(w), model.forward_full(_perturbed_context(w, rng, 1)))


def test_full_mode_uses_context(rng):
    cfg = ModelConfig.desk()
    model = SleepStager(cfg, seed=0)
    tok = tokens_for(cfg, 12, rng)
    windows = causal_windows(np.arange(6, 12), 0, 7)
    for _ in range(3):
        model.store.zero_grad()
        ops.cross_entropy(model.forward_chunk(tok, windows, training=True, rng=rng), rng.integers(0, 5, 6)).backward()
        adam_step(model.store, AdamHyper())
    w = {m: t[-7:] for m, t in tok.items()}
    assert np.max(np.abs(model.forward_full(w) - model.forward_full(_perturbed_context(w, rng, 1)))) > 0


def test_causal_windows_clamp_left_edge():
    np.testing.assert_array_equal(causal_windows(np.array([0, 1, 8]), 0, 3), [[0, 0, 0], [0, 0, 1], [6, 7, 8]])
    np.testing.assert_array_equal(causal_windows(np.array([10]), 4, 7), [[0, 1, 2, 3, 4, 5, 6]])
    with pytest.raises(ValueError):
        causal_windows(np.array([5]), 3, 7)
