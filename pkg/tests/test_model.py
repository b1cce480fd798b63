import numpy as np
import pytest

from cgbert import model as M
from cgbert import numerics as nx
from cgbert.text import collate, encode_pair, intent_phrase
from helpers import make_batch, random_params, tiny_config


@pytest.fixture
def setup(small_vocab, small_corpus, float64):
    cfg = tiny_config(len(small_vocab))
    params = random_params(cfg, seed=0, scale=0.1)
    batch = make_batch(small_corpus[:3], small_vocab)
    return cfg, params, batch


def test_config_validation():
    with pytest.raises(ValueError):
        M.ModelConfig(vocab_size=10, d_h=10, n_heads=3)
    with pytest.raises(ValueError):
        M.ModelConfig(vocab_size=10, n_enc_layers=0)
    cfg = M.ModelConfig(vocab_size=10, d_h=32, n_heads=4)
    assert cfg.d_k == 8 and cfg.latent_dim == 32


def test_param_shapes_and_init(small_vocab):
    cfg = tiny_config(len(small_vocab))
    params = M.init_params(cfg, np.random.default_rng(0))
    shapes = M.param_shapes(cfg)
    assert {k: p.shape for k, p in params.items()} == shapes
    assert shapes["tok_emb"] == (len(small_vocab), 16)
    assert shapes["head.w1"] == (32, 16)
    assert "out.w" not in shapes  # output projection reuses tok_emb
    assert np.all(params["enc.0.ln1.g"].data == 1) and np.all(params["enc.0.bq"].data == 0)
    assert np.abs(params["dec.0.wq"].data).max() <= 2 * cfg.init_std + 1e-7


# ---------------------------------------------------------------- embeddings


def test_embed_zero_tables_and_shape(setup):
    cfg, params, batch = setup
    H0 = M.embed(batch, params)
    assert H0.shape == (batch.size, batch.width, cfg.d_h)
    for k in ("tok_emb", "pos_emb", "seg_emb"):
        params[k].data[:] = 0
    assert np.all(M.embed(batch, params).data == 0)


def test_embed_segment_difference(setup):
    _, params, batch = setup
    a = M.embed(batch, params).data
    batch.segment_ids[0, 1] = 1 - batch.segment_ids[0, 1]
    b = M.embed(batch, params).data
    diff = params["seg_emb"].data[batch.segment_ids[0, 1]] - params["seg_emb"].data[1 - batch.segment_ids[0, 1]]
    np.testing.assert_allclose(b[0, 1] - a[0, 1], diff, atol=1e-12)


def test_embed_rejects_overlong(small_vocab, float64):
    cfg = tiny_config(len(small_vocab), max_len=8)
    params = random_params(cfg)
    batch = collate([encode_pair("play music", "play some jazz music now", small_vocab, 12)])
    with pytest.raises(ValueError):
        M.embed(batch, params)


# ---------------------------------------------------------------- masks


def test_encoder_mask():
    assert M.build_encoder_mask(1).tolist() == [[True]]
    m = M.build_encoder_mask(3)
    assert m.all() and (m == m.T).all()


def test_decoder_mask_reference_layout():
    allow = M.build_decoder_mask(3, 2)
    rows = [set(np.flatnonzero(r)) for r in allow]
    assert rows == [{0}, {0, 1, 2}, {0, 1, 2}, {0, 1, 2, 3}, {0, 1, 2, 3, 4}]


@pytest.mark.parametrize("t1,t2", [(3, 1), (3, 5), (5, 2), (4, 8)])
@pytest.mark.parametrize("z_visible", [True, False])
def test_decoder_mask_properties(t1, t2, z_visible):
    allow = M.build_decoder_mask(t1, t2, z_visible)
    assert np.all(np.diag(allow))
    assert not allow[:t1, t1:].any()
    assert allow[0].tolist() == [True] + [False] * (t1 + t2 - 1)
    assert allow[1:, 0].all() == z_visible
    assert not allow[1:, 0].any() or z_visible


def test_padding_rows_only_see_themselves(small_vocab):
    batch = collate([encode_pair("a", "play", small_vocab, 24), encode_pair("a", "play some jazz music", small_vocab, 24)])
    allow = M.decoder_attention_mask(batch)[0, 0] == 0
    n = int(batch.lengths[0])
    for r in range(n, batch.width):
        assert np.flatnonzero(allow[r]).tolist() == [r]
    assert not allow[:n, n:].any()


# ---------------------------------------------------------------- blocks


def test_transformer_block_shape_and_diagonal_attention(setup):
    cfg, params, batch = setup
    H = M.embed(batch, params)
    W = batch.width
    diag = nx.additive_mask(np.eye(W, dtype=bool))[None, None]
    trace = []
    out = M.transformer_block(H, diag, params, "enc.0", cfg, trace=trace)
    assert out.shape == H.shape
    assert np.allclose(trace[0], np.eye(W))
    # one-hot attention: the context is each row's own value vector
    P = {k[len("enc.0."):]: v.data for k, v in params.items() if k.startswith("enc.0.")}

    def ln(x, g, b):
        return (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + cfg.ln_eps) * g + b

    v = H.data @ P["wv"] + P["bv"]
    h1 = ln(H.data + v @ P["wo"] + P["bo"], P["ln1.g"], P["ln1.b"])
    ff = nx.gelu(nx.Tensor(h1 @ P["w_ff1"] + P["b_ff1"])).data @ P["w_ff2"] + P["b_ff2"]
    ref = ln(h1 + ff, P["ln2.g"], P["ln2.b"])
    np.testing.assert_allclose(out.data, ref, atol=1e-9)


def test_transformer_block_permutation_equivariant(setup):
    cfg, params, _ = setup
    rng = np.random.default_rng(5)
    H = rng.normal(size=(1, 6, cfg.d_h))
    mask = nx.additive_mask(np.ones((6, 6), dtype=bool))[None, None]
    perm = np.array([3, 1, 0, 2, 5, 4])
    a = M.transformer_block(nx.Tensor(H), mask, params, "enc.0", cfg).data
    b = M.transformer_block(nx.Tensor(H[:, perm]), mask, params, "enc.0", cfg).data
    np.testing.assert_allclose(a[:, perm], b, atol=1e-10)


def test_encode_finite_deterministic_and_sensitive(setup, small_vocab):
    cfg, params, batch = setup
    mask = M.encoder_attention_mask(batch)
    h1, H = M.encode(M.embed(batch, params), mask, params, cfg)
    h2, _ = M.encode(M.embed(batch, params), mask, params, cfg)
    assert np.all(np.isfinite(H.data))
    np.testing.assert_array_equal(h1.data, h2.data)
    pos = int(batch.t1_lens[0])
    batch.token_ids[0, pos] = (batch.token_ids[0, pos] + 1 - 4) % (len(small_vocab) - 4) + 4
    h3, _ = M.encode(M.embed(batch, params), mask, params, cfg)
    assert not np.allclose(h1.data[0], h3.data[0])
    np.testing.assert_array_equal(h1.data[1:], h3.data[1:])


# ---------------------------------------------------------------- latent head


def test_latent_head_cases(setup):
    cfg, params, _ = setup
    rng = np.random.default_rng(0)
    h = nx.Tensor(rng.normal(size=(2, cfg.d_h)))
    e = rng.normal(size=(2, cfg.d_h))
    s = M.latent_head(h, params, e)
    np.testing.assert_allclose(s.z.data, s.mu.data + np.exp(s.log_var.data / 2) * e, atol=1e-12)
    s0 = M.latent_head(h, params, np.zeros_like(e))
    np.testing.assert_array_equal(s0.z.data, s0.mu.data)
    params["lat.w_sigma"].data[:] = 0
    params["lat.b_sigma"].data[:] = 0
    s1 = M.latent_head(h, params, e)
    np.testing.assert_allclose(s1.z.data, s1.mu.data + e, atol=1e-12)
    params["lat.w_mu"].data[:] = 0
    params["lat.b_mu"].data[:] = 0
    assert np.all(M.latent_head(h, params, e).mu.data == 0)


# ---------------------------------------------------------------- decoder


def _logits(batch, params, cfg, z, trace=None):
    return M.decode_forward(z, M.embed(batch, params), batch, params, cfg, trace=trace).data


def test_decode_shape_and_z_influence(setup, small_vocab):
    cfg, params, batch = setup
    rng = np.random.default_rng(1)
    z1, z2 = rng.normal(size=(batch.size, cfg.d_h)), rng.normal(size=(batch.size, cfg.d_h))
    a, b = _logits(batch, params, cfg, z1), _logits(batch, params, cfg, z2)
    assert a.shape == (batch.size, batch.width, len(small_vocab))
    t1 = int(batch.t1_lens[0])
    assert not np.allclose(a[0, t1 - 1 :], b[0, t1 - 1 :])


def test_decode_z_row_one_hot_in_every_block(setup):
    cfg, params, batch = setup
    cfg2 = tiny_config(cfg.vocab_size, n_dec_layers=3)
    params = random_params(cfg2, seed=3, scale=0.1)
    trace = []
    _logits(batch, params, cfg2, np.zeros((batch.size, cfg2.d_h)), trace)
    assert len(trace) == 3
    for probs in trace:
        row = probs[:, :, 0, :]
        assert np.all(row[..., 0] == 1.0)
        assert np.all(row[..., 1:] < 1e-30)


def test_decode_weight_tying(setup):
    cfg, params, batch = setup
    z = np.zeros((batch.size, cfg.d_h))
    before_h, before_l = M.embed(batch, params).data, _logits(batch, params, cfg, z)
    params["tok_emb"].data[batch.token_ids[0, 1]] += 0.5
    assert not np.allclose(M.embed(batch, params).data, before_h)
    assert not np.allclose(_logits(batch, params, cfg, z), before_l)


def test_decode_z_visible_flag(small_vocab, small_corpus, float64):
    cfg = tiny_config(len(small_vocab), z_visible=False)
    params = random_params(cfg, seed=2, scale=0.1)
    batch = make_batch(small_corpus[:1], small_vocab)
    trace = []
    _logits(batch, params, cfg, np.ones((1, cfg.d_h)), trace)
    assert np.all(trace[0][0, :, 1:, 0] < 1e-30)


def test_forward_finite_for_random_inputs(small_vocab, float64):
    cfg = tiny_config(len(small_vocab))
    params = M.init_params(cfg, np.random.default_rng(9))
    rng = np.random.default_rng(10)
    ids = rng.integers(4, len(small_vocab), size=(4, 12))
    batch = collate([encode_pair(intent_phrase("x_y"), " ".join(small_vocab.itos[i] for i in row), small_vocab, 24) for row in ids])
    logits = _logits(batch, params, cfg, rng.normal(size=(4, cfg.d_h)))
    assert np.all(np.isfinite(logits))
