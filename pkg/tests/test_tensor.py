"""Autodiff engine: forward values against hand oracles, gradients by finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vigt import tensor as tn
from vigt.errors import ConfigError, NumericError, ShapeError, UsageError
from vigt.tensor import Tensor


def fd_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f wrt array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_grad(build, params: dict[str, np.ndarray], tol: float = 1e-6):
    """Compare backward() grads of build(tensors) against finite differences."""
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    loss = build(tensors)
    loss.backward()
    for k, v in params.items():
        def f(arr, k=k):
            ts = {n: Tensor(p.copy()) for n, p in params.items()}
            ts[k] = Tensor(arr.copy())
            return build(ts).item()

        num = fd_grad(f, v.copy())
        got = tensors[k].grad
        assert got is not None, f"no grad for {k}"
        denom = np.maximum(np.maximum(np.abs(num), np.abs(got)), 1e-4)
        rel = np.abs(num - got) / denom
        assert rel.max() < tol, f"{k}: max rel err {rel.max():.3e}"


def test_matmul_hand_value():
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0], [4.0]])
    out = tn.matmul(a, b)
    assert out.data.shape == (1, 1)
    assert out.item() == 11.0


def test_matmul_grad_matches_fd():
    rng = np.random.default_rng(0)
    check_grad(
        lambda t: tn.mean(tn.matmul(t["a"], t["b"])),
        {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 5))},
    )


def test_matmul_batched_stacks():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 5))
    out = tn.matmul(Tensor(a), Tensor(b))
    np.testing.assert_allclose(out.data, a @ b, rtol=0, atol=1e-12)
    check_grad(lambda t: tn.mean(tn.matmul(t["a"], t["b"])), {"a": a, "b": b})


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        tn.matmul(Tensor([1.0, 2.0]), Tensor([[1.0], [2.0]]))
    with pytest.raises(ShapeError):
        tn.matmul(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]]))


def test_add_mul_broadcast_bias_row():
    rng = np.random.default_rng(2)
    check_grad(
        lambda t: tn.mean(tn.add(t["x"], t["b"])),
        {"x": rng.normal(size=(4, 3)), "b": rng.normal(size=(3,))},
    )
    check_grad(
        lambda t: tn.mean(tn.elementwise_mul(t["x"], t["y"])),
        {"x": rng.normal(size=(4, 3)), "y": rng.normal(size=(4, 3))},
    )


def test_div_and_scalar_ops():
    x = Tensor([2.0, 4.0], requires_grad=True)
    out = tn.mean(tn.div(1.0, x))
    out.backward()
    np.testing.assert_allclose(out.data, (0.5 + 0.25) / 2)
    np.testing.assert_allclose(x.grad, [-1 / 4 / 2, -1 / 16 / 2])


def test_softmax_matches_exp_normalization():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 7))
    y = tn.softmax_lastdim(Tensor(x)).data
    e = np.exp(x)
    np.testing.assert_allclose(y, e / e.sum(-1, keepdims=True), atol=1e-12)


def test_softmax_extreme_logits_stable():
    y = tn.softmax_lastdim(Tensor([1000.0, 0.0, -1000.0])).data
    assert np.isfinite(y).all()
    np.testing.assert_allclose(y.sum(), 1.0, atol=1e-12)


def test_softmax_nan_input_raises():
    with pytest.raises(NumericError):
        tn.softmax_lastdim(Tensor([np.nan, 0.0]))


def test_softmax_grad_matches_fd():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(3, 5))
    check_grad(
        lambda t: tn.mean(tn.elementwise_mul(tn.softmax_lastdim(t["x"]), w)),
        {"x": rng.normal(size=(3, 5))},
    )


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-30, 30), min_size=2, max_size=6),
        min_size=1,
        max_size=4,
    ).filter(lambda rows: len({len(r) for r in rows}) == 1)
)
def test_softmax_rows_sum_to_one(rows):
    y = tn.softmax_lastdim(Tensor(np.array(rows))).data
    assert ((y >= 0) & (y <= 1)).all()
    np.testing.assert_allclose(y.sum(-1), np.ones(len(rows)), atol=1e-9)


def test_layer_norm_zero_mean_unit_var():
    rng = np.random.default_rng(5)
    x = rng.normal(2.0, 3.0, size=(6, 16))
    y = tn.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-4)


def test_layer_norm_grad_matches_fd():
    rng = np.random.default_rng(6)
    w = rng.normal(size=(4, 8))
    check_grad(
        lambda t: tn.mean(
            tn.elementwise_mul(tn.layer_norm(t["x"], t["g"], t["b"]), w)
        ),
        {
            "x": rng.normal(size=(4, 8)),
            "g": rng.normal(1.0, 0.2, size=8),
            "b": rng.normal(size=8),
        },
    )


def test_layer_norm_shape_guard():
    with pytest.raises(ShapeError):
        tn.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))


def test_conv1d_hand_oracle_averaging_kernel():
    # K=3 averaging kernel over [1, 2, 3] with zero padding:
    # out[0] = (0 + 1 + 2)/3 = 1, out[1] = (1 + 2 + 3)/3 = 2,
    # out[2] = (2 + 3 + 0)/3 = 5/3.
    x = Tensor(np.array([[1.0], [2.0], [3.0]]))
    kernel = Tensor(np.full((3, 1, 1), 1.0 / 3.0))
    bias = Tensor(np.zeros(1))
    y = tn.conv1d(x, kernel, bias).data
    np.testing.assert_allclose(y[:, 0], [1.0, 2.0, 5.0 / 3.0], atol=1e-12)


def test_conv1d_matches_naive_loop():
    rng = np.random.default_rng(7)
    t, d_in, d_out, k = 9, 4, 6, 5
    x = rng.normal(size=(t, d_in))
    kernel = rng.normal(size=(k, d_in, d_out))
    bias = rng.normal(size=d_out)
    y = tn.conv1d(Tensor(x), Tensor(kernel), Tensor(bias)).data
    pad = k // 2
    xp = np.zeros((t + 2 * pad, d_in))
    xp[pad:pad + t] = x
    want = np.zeros((t, d_out))
    for i in range(t):
        for j in range(k):
            want[i] += xp[i + j] @ kernel[j]
    want += bias
    np.testing.assert_allclose(y, want, atol=1e-12)


def test_conv1d_grad_matches_fd():
    rng = np.random.default_rng(8)
    check_grad(
        lambda t: tn.mean(tn.conv1d(t["x"], t["k"], t["b"])),
        {
            "x": rng.normal(size=(5, 3)),
            "k": rng.normal(size=(3, 3, 4)),
            "b": rng.normal(size=4),
        },
    )


def test_conv1d_rejects_even_kernel():
    with pytest.raises(ConfigError):
        tn.conv1d(Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2, 2))), Tensor(np.zeros(2)))


def test_relu_sigmoid_log_values_and_grads():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 4)) + 0.05  # keep away from the relu kink
    x[np.abs(x) < 0.02] = 0.1
    check_grad(lambda t: tn.mean(tn.relu(t["x"])), {"x": x.copy()})
    check_grad(lambda t: tn.mean(tn.sigmoid(t["x"])), {"x": x.copy()})
    check_grad(lambda t: tn.mean(tn.log(t["x"])), {"x": np.abs(x) + 0.5})
    np.testing.assert_allclose(tn.sigmoid(Tensor(0.0)).item(), 0.5)
    np.testing.assert_allclose(tn.sigmoid(Tensor(-800.0)).item(), 0.0, atol=1e-300)
    assert np.isfinite(tn.sigmoid(Tensor(-800.0)).item())


def test_smooth_l1_values_both_branches():
    y = tn.smooth_l1(Tensor([0.5, -0.5, 2.0, -3.0])).data
    np.testing.assert_allclose(y, [0.125, 0.125, 1.5, 2.5])
    check_grad(
        lambda t: tn.mean(tn.smooth_l1(t["x"])),
        {"x": np.array([0.4, -0.7, 1.8, -2.5])},
    )


def test_maximum_minimum_tie_routes_to_first():
    a = Tensor([1.0, 5.0], requires_grad=True)
    b = Tensor([1.0, 2.0], requires_grad=True)
    tn.mean(tn.maximum(a, b)).backward()
    np.testing.assert_allclose(a.grad, [0.5, 0.5])
    np.testing.assert_allclose(b.grad, [0.0, 0.0])
    a.zero_grad(), b.zero_grad()
    tn.mean(tn.minimum(a, b)).backward()
    np.testing.assert_allclose(a.grad, [0.5, 0.0])
    np.testing.assert_allclose(b.grad, [0.0, 0.5])


def test_clamp_boundary_subgradient_zero():
    x = Tensor([-0.5, 0.0, 0.5, 1.0, 1.5], requires_grad=True)
    out = tn.clamp(x, 0.0, 1.0)
    np.testing.assert_allclose(out.data, [0.0, 0.0, 0.5, 1.0, 1.0])
    tn.mean(out).backward()
    np.testing.assert_allclose(x.grad, [0.0, 0.0, 0.2, 0.0, 0.0])


def test_reshape_transpose_concat_getitem_grads():
    rng = np.random.default_rng(10)
    check_grad(
        lambda t: tn.mean(tn.reshape(t["x"], (6, 2))),
        {"x": rng.normal(size=(3, 4))},
    )
    check_grad(
        lambda t: tn.mean(
            tn.elementwise_mul(tn.transpose(t["x"], (1, 0)), np.arange(12.0).reshape(4, 3))
        ),
        {"x": rng.normal(size=(3, 4))},
    )
    check_grad(
        lambda t: tn.mean(tn.concat_along_first_dim([t["a"], t["b"]])),
        {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(4, 3))},
    )
    check_grad(
        lambda t: tn.mean(t["x"][1:3]),
        {"x": rng.normal(size=(5, 2))},
    )


def test_concat_shape_guard():
    with pytest.raises(ShapeError):
        tn.concat_along_first_dim([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))])


def test_mean_axis_variants():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 5))
    np.testing.assert_allclose(tn.mean(Tensor(x)).item(), x.mean())
    np.testing.assert_allclose(tn.mean(Tensor(x), axis=0).data, x.mean(0))
    check_grad(lambda t: tn.mean(tn.mean(t["x"], axis=1)), {"x": x})


def test_dropout_eval_and_zero_rate_are_identity():
    x = Tensor(np.ones((4, 4)), requires_grad=True)
    assert tn.dropout(x, 0.5, training=False) is x
    assert tn.dropout(x, 0.0, training=True) is x


def test_dropout_inverted_scaling_preserves_mean():
    rng = np.random.default_rng(12)
    x = Tensor(np.ones((200, 200)))
    y = tn.dropout(x, 0.3, training=True, rng=rng).data
    kept = y != 0
    np.testing.assert_allclose(y[kept], 1.0 / 0.7)
    assert abs(kept.mean() - 0.7) < 0.01
    assert abs(y.mean() - 1.0) < 0.02


def test_dropout_grad_uses_same_mask():
    x = Tensor(np.ones(1000), requires_grad=True)
    y = tn.dropout(x, 0.5, training=True, rng=np.random.default_rng(13))
    tn.mean(y).backward()
    np.testing.assert_allclose(x.grad, (y.data != 0) * 2.0 / 1000)


def test_backward_rejects_nonscalar():
    with pytest.raises(UsageError):
        tn.backward(Tensor(np.ones(3), requires_grad=True))


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = tn.mean(tn.elementwise_mul(x, x))
    loss.backward()
    first = x.grad.copy()
    loss2 = tn.mean(tn.elementwise_mul(x, x))
    loss2.backward()
    np.testing.assert_allclose(x.grad, 2 * first)


def test_diamond_graph_grad():
    # y = x*x + x*x reuses x twice on two paths
    x = Tensor([3.0], requires_grad=True)
    y = tn.add(tn.elementwise_mul(x, x), tn.elementwise_mul(x, x))
    tn.mean(y).backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_deep_chain_no_recursion_limit():
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = tn.add(y, 0.0)
    tn.mean(y).backward()
    np.testing.assert_allclose(x.grad, [1.0])


def test_default_dtype_switch():
    tn.set_default_dtype("f32")
    try:
        assert Tensor([1.0]).data.dtype == np.float32
    finally:
        tn.set_default_dtype("f64")
    assert Tensor([1.0]).data.dtype == np.float64
    with pytest.raises(ConfigError):
        tn.set_default_dtype("f16")


def test_mha_uniform_attention_when_identical_keys():
    # All key/query projections zero -> uniform scores -> output is the mean value row.
    d, heads, lq, lk = 8, 2, 3, 5
    rng = np.random.default_rng(14)
    params = tn.AttentionParams.init(rng, d)
    params.w_q.data[:] = 0.0
    params.w_k.data[:] = 0.0
    params.w_v.data[:] = np.eye(d)
    params.w_o.data[:] = np.eye(d)
    q = Tensor(rng.normal(size=(lq, d)))
    k = Tensor(rng.normal(size=(lk, d)))
    v = Tensor(rng.normal(size=(lk, d)))
    out, attn = tn.multi_head_attention(q, k, v, params, heads)
    assert attn.shape == (heads, lq, lk)
    np.testing.assert_allclose(attn.data, 1.0 / lk, atol=1e-12)
    np.testing.assert_allclose(out.data, np.tile(v.data.mean(0), (lq, 1)), atol=1e-12)


def test_mha_attention_rows_sum_to_one():
    d, heads = 12, 3
    rng = np.random.default_rng(15)
    params = tn.AttentionParams.init(rng, d)
    q = Tensor(rng.normal(size=(4, d)))
    kv = Tensor(rng.normal(size=(6, d)))
    out, attn = tn.multi_head_attention(q, kv, kv, params, heads)
    assert out.shape == (4, d)
    np.testing.assert_allclose(attn.data.sum(-1), np.ones((heads, 4)), atol=1e-12)


def test_mha_grad_matches_fd():
    d, heads = 6, 2
    rng = np.random.default_rng(16)
    base = tn.AttentionParams.init(rng, d)
    arrays = {
        "q": rng.normal(size=(3, d)),
        "k": rng.normal(size=(4, d)),
        "v": rng.normal(size=(4, d)),
        **{name.split(".")[1]: p.data.copy() for name, p in base.named("a").items()},
    }

    def build(t):
        params = tn.AttentionParams(
            t["w_q"], t["b_q"], t["w_k"], t["b_k"], t["w_v"], t["b_v"], t["w_o"], t["b_o"]
        )
        out, _ = tn.multi_head_attention(t["q"], t["k"], t["v"], params, heads)
        return tn.mean(out)

    check_grad(build, arrays, tol=5e-6)


def test_mha_head_count_must_divide_dim():
    rng = np.random.default_rng(17)
    params = tn.AttentionParams.init(rng, 6)
    x = Tensor(np.ones((2, 6)))
    with pytest.raises(ConfigError):
        tn.multi_head_attention(x, x, x, params, 4)
