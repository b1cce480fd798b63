import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cgbert import numerics as nx
from cgbert.numerics import Tensor

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def t64(x, grad=True):
    # stored in the active precision; tests needing float64 enter it explicitly
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- softmax


def test_softmax_hard_mask_splits_evenly():
    scores = t64([[0.0, 0.0, 0.0]])
    mask = nx.additive_mask(np.array([[True, True, False]]))
    out = nx.masked_softmax(scores, mask).data
    np.testing.assert_allclose(out[0, :2], [0.5, 0.5], atol=1e-12)
    assert out[0, 2] < 1e-30


def test_softmax_reference_values():
    # high-precision reference: e^k / sum e^k for k = 1, 2, 3
    expected = [0.0900305731704, 0.244728471055, 0.665240955775]
    out = nx.masked_softmax(t64([[1.0, 2.0, 3.0]])).data
    np.testing.assert_allclose(out[0], expected, atol=1e-4)


@given(st.floats(-50, 50))
def test_softmax_constant_row_is_uniform(c):
    out = nx.masked_softmax(t64([[c, c, c]])).data
    np.testing.assert_allclose(out[0], [1 / 3] * 3, atol=1e-12)


def test_softmax_fully_masked_row_errors():
    mask = nx.additive_mask(np.array([[True, False], [False, False]]))
    with pytest.raises(ValueError, match="fully masked row"):
        nx.masked_softmax(t64(np.zeros((2, 2))), mask)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=finite), arrays(bool, (4, 5)))
def test_softmax_rows_sum_to_one_and_masked_entries_vanish(scores, allow):
    allow[:, 0] = True
    out = nx.masked_softmax(t64(scores), nx.additive_mask(allow)).data
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-6)
    assert np.all(out[~allow] < 1e-30)


# ---------------------------------------------------------------- gelu


def test_gelu_values():
    out = nx.gelu(t64([0.0, 10.0, 1.0])).data
    assert out[0] == 0.0
    assert abs(out[1] - 10.0) < 1e-6
    # 1 * Phi(1) from a 30-digit erf
    assert abs(out[2] - 0.841344746069) < 1e-4


# ---------------------------------------------------------------- layer norm


def _ln(x, eps=1e-12):
    d = np.shape(x)[-1]
    return nx.layer_norm(t64(x), t64(np.ones(d)), t64(np.zeros(d)), eps).data


def test_layer_norm_constant_and_pair():
    np.testing.assert_allclose(_ln([5.0, 5.0, 5.0]), [0, 0, 0], atol=1e-5)
    np.testing.assert_allclose(_ln([1.0, 3.0]), [-1.0, 1.0], atol=1e-5)


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        _ln([1.0, 2.0], eps=0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-100, 100)), st.floats(-1e3, 1e3))
def test_layer_norm_shift_invariant_and_standardised(x, c):
    x = x + np.linspace(0, 5, 6)  # keep the variance well above eps
    with nx.precision(np.float64):
        a, b = _ln(x), _ln(x + c)
    np.testing.assert_allclose(a, b, atol=1e-6)
    assert np.all(np.abs(a.mean(-1)) < 1e-5)
    np.testing.assert_allclose(a.var(-1), 1.0, atol=1e-4)


# ---------------------------------------------------------------- backward


def test_backward_square():
    x = t64(3.0)
    y = x * x
    nx.backward(y)
    assert x.grad == pytest.approx(6.0)


def test_backward_softmax_sum_is_zero(float64):
    x = t64(np.array([[0.3, -1.2, 2.0, 0.5]]))
    nx.backward(nx.masked_softmax(x).sum())
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError):
        nx.backward(t64([1.0, 2.0]) * 2.0)


def test_backward_zero_grad_for_unreachable_params():
    a, b = t64([1.0, 2.0]), t64([3.0])
    grads = nx.backward((a * a).sum(), {"a": a, "b": b})
    np.testing.assert_array_equal(grads["b"], [0.0])
    np.testing.assert_allclose(grads["a"], [2.0, 4.0])


def test_backward_visits_shared_nodes_once():
    # h feeds y through two edges; dy/dx = 2h * 2 = 12 at x = 1.5
    x = t64(1.5)
    h = x * 2.0
    y = h * h
    nx.backward(y)
    assert x.grad == pytest.approx(12.0)


def test_backward_broadcasting_reduces_to_operand_shape():
    a = t64(np.ones((3, 4)))
    b = t64(np.ones(4))
    nx.backward((a * b).sum())
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, 3.0)


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        nx.embedding(t64(np.zeros((3, 2))), np.array([0, 3]))


def test_deep_chain_does_not_recurse():
    x = t64(1.0)
    y = x
    for _ in range(5000):
        y = y + 0.0
    nx.backward(y)
    assert x.grad == 1.0


# ---------------------------------------------------------------- gradient checking


def test_grad_check_square():
    with nx.precision(np.float64):
        x = nx.parameter(np.array([3.0]))
        err = nx.grad_check(lambda: (x * x).sum(), {"x": x}, h=1e-5, n_coords=None)
    assert err < 1e-8


def test_grad_check_requires_float64():
    x = nx.parameter(np.array([3.0]))
    with pytest.raises(RuntimeError):
        nx.grad_check(lambda: (x * x).sum(), {"x": x})


@pytest.mark.parametrize(
    "build",
    [
        lambda p: nx.gelu(p["a"] @ p["b"]).sum(),
        lambda p: nx.layer_norm(p["a"] @ p["b"], p["g"], p["c"]).sum() * 0.3 + (p["a"] * p["a"]).mean(),
        lambda p: nx.masked_softmax(p["a"] @ p["b"]).reshape(12).sum() + nx.log_softmax(p["a"])[1].sum(),
        lambda p: nx.cross_entropy(p["a"] @ p["b"], np.array([0, 2, 1]), np.array([0.2, 0.3, 0.5])),
        lambda p: (nx.exp(p["a"] * 0.1) / (nx.concat([p["a"], p["a"]], -1).sum() + 30.0)).sum(),
        lambda p: (nx.embedding(p["b"].transpose(1, 0), np.array([[0, 3], [3, 1]])) * 1.5).sum()
        + nx.log(p["g"] * p["g"] + 1.0).sum(),
    ],
    ids=["gelu-matmul", "layer-norm", "softmax", "cross-entropy", "exp-div-concat", "embedding-log"],
)
def test_grad_check_composites(build):
    rng = np.random.default_rng(0)
    with nx.precision(np.float64):
        p = {
            "a": nx.parameter(rng.normal(size=(3, 4))),
            "b": nx.parameter(rng.normal(size=(4, 4))),
            "g": nx.parameter(rng.normal(size=4)),
            "c": nx.parameter(rng.normal(size=4)),
        }
        err = nx.grad_check(lambda: build(p), p, n_coords=None)
    assert err < 1e-4


def test_grad_check_single_transformer_block(small_vocab):
    from cgbert import model as M
    from helpers import random_params, tiny_config

    with nx.precision(np.float64):
        cfg = tiny_config(len(small_vocab))
        params = random_params(cfg, seed=1, scale=0.1)
        H = nx.parameter(np.random.default_rng(2).normal(size=(2, 5, cfg.d_h)))
        mask = nx.additive_mask(np.tril(np.ones((5, 5), dtype=bool)))[None, None]
        block = {k: v for k, v in params.items() if k.startswith("enc.0.")}
        block["H"] = H
        target = np.random.default_rng(3).normal(size=(2, 5, cfg.d_h))
        f = lambda: (M.transformer_block(H, mask, params, "enc.0", cfg) * target).sum()
        err = nx.grad_check(f, block, n_coords=100, rng=np.random.default_rng(4))
    assert err < 1e-4


# ---------------------------------------------------------------- Adam


def test_adam_first_step_moves_by_lr():
    p = {"w": nx.parameter(np.array([1.0]))}
    opt = nx.Adam(p, lr=0.1)
    opt.step({"w": np.array([2.0])})
    assert p["w"].data[0] - 1.0 == pytest.approx(-0.1, abs=1e-6)
    assert opt.t == 1


def test_adam_zero_gradient_and_zero_lr_leave_params():
    data = np.random.default_rng(0).normal(size=(3, 2)).astype(np.float32)
    p = {"w": nx.parameter(data.copy())}
    opt = nx.Adam(p, lr=0.1)
    opt.step({"w": np.zeros((3, 2), dtype=np.float32)})
    np.testing.assert_array_equal(p["w"].data, data)
    opt = nx.Adam(p, lr=0.0)
    opt.step({"w": np.ones((3, 2), dtype=np.float32)})
    np.testing.assert_array_equal(p["w"].data, data)


def test_adam_step_counter_increases_and_shapes_match():
    p = {"w": nx.parameter(np.zeros(3))}
    opt = nx.Adam(p)
    for t in range(1, 4):
        opt.step({"w": np.ones(3)})
        assert opt.t == t
        assert opt.m["w"].shape == opt.v["w"].shape == (3,)


def test_adam_shape_mismatch():
    opt = nx.Adam({"w": nx.parameter(np.zeros(3))})
    with pytest.raises(ValueError):
        opt.step({"w": np.zeros(4)})
    with pytest.raises(KeyError):
        opt.step({"v": np.zeros(3)})


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(7)
        p = {"w": nx.parameter(rng.normal(size=5))}
        opt = nx.Adam(p, lr=0.01)
        for _ in range(20):
            opt.step({"w": rng.normal(size=5).astype(np.float32)})
        return p["w"].data.tobytes()

    assert run() == run()


# ---------------------------------------------------------------- precision / no_grad


def test_precision_context_restores():
    assert nx.get_dtype() == np.float32
    with nx.precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert nx.get_dtype() == np.float32
    with pytest.raises(ValueError):
        nx.set_precision(np.int32)


def test_no_grad_records_nothing():
    x = nx.parameter(np.ones(2))
    with nx.no_grad():
        y = x * 2.0
    assert not y.requires_grad
