"""Prediction heads and the moment/interval map."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vigt import tensor as tn
import reference as ref
from vigt.errors import ConfigError
from vigt.heads import (
    AttentivePoolHead,
    BoundaryHead,
    ForegroundHead,
    Interval,
    Moment,
    attentive_regression_head,
    ffn_cls,
    ffn_reg,
    moment_to_interval,
)
from vigt.tensor import Tensor


def as_np(params):
    return {k: p.data.copy() for k, p in params.items()}


def test_moment_to_interval_hand_cases():
    iv = moment_to_interval(Moment(0.5, 0.2))
    assert (iv.start, iv.end) == (0.4, 0.6)
    iv = moment_to_interval(Moment(0.0, 0.5))
    assert (iv.start, iv.end) == (0.0, 0.25)
    iv = moment_to_interval(Moment(1.0, 0.5))
    assert (iv.start, iv.end) == (0.75, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_moment_to_interval_ordered_and_bounded(center, width):
    iv = moment_to_interval(Moment(center, width))
    assert 0.0 <= iv.start <= iv.end <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_interval_moment_roundtrip_when_inside(start_frac, width_frac):
    start = start_frac * (1 - 0.01)
    width = width_frac * (1 - start)
    end = start + width
    m = Moment(center=(start + end) / 2, width=end - start)
    iv = moment_to_interval(m)
    assert abs(iv.start - start) < 1e-12 and abs(iv.end - end) < 1e-12


def test_moment_to_interval_monotone_in_center():
    a = moment_to_interval(Moment(0.4, 0.2))
    b = moment_to_interval(Moment(0.5, 0.2))
    assert b.start > a.start and b.end > a.end


def test_moment_to_interval_tensor_path_matches_float_path():
    m_t = Moment(Tensor(0.3), Tensor(0.4))
    iv_t = moment_to_interval(m_t)
    iv_f = moment_to_interval(Moment(0.3, 0.4))
    np.testing.assert_allclose(iv_t.start.item(), iv_f.start)
    np.testing.assert_allclose(iv_t.end.item(), iv_f.end)


def test_boundary_head_zero_final_layer_gives_half_half():
    head = BoundaryHead.init(np.random.default_rng(0), 8)
    head.stack[2].weight.data[:] = 0.0
    head.stack[2].bias.data[:] = 0.0
    m = ffn_reg(Tensor(np.random.default_rng(1).normal(size=8)), head)
    assert m.center.item() == 0.5 and m.width.item() == 0.5


def test_boundary_head_matches_straight_line_oracle():
    rng = np.random.default_rng(2)
    head = BoundaryHead.init(rng, 8)
    x = rng.normal(size=8)
    m = head(Tensor(x))
    want = ref.ref_reg_stack(x.reshape(1, -1), {k[len("r."):]: v for k, v in as_np(head.named("r")).items()})
    np.testing.assert_allclose([m.center.item(), m.width.item()], want, atol=1e-12)
    assert 0.0 < m.center.item() < 1.0 and 0.0 < m.width.item() < 1.0


def test_boundary_head_needs_even_dim():
    with pytest.raises(ConfigError):
        BoundaryHead.init(np.random.default_rng(0), 7)


def test_boundary_head_gradient_reaches_input():
    head = BoundaryHead.init(np.random.default_rng(3), 8)
    x = Tensor(np.random.default_rng(4).normal(size=8), requires_grad=True)
    m = head(x)
    (m.center + m.width).backward()
    assert x.grad is not None and np.abs(x.grad).max() > 0


def test_foreground_head_values_and_counter():
    rng = np.random.default_rng(5)
    head = ForegroundHead.init(rng, 8)
    v = rng.normal(size=(6, 8))
    assert head.calls == 0
    scores = ffn_cls(Tensor(v), head)
    assert head.calls == 1
    assert scores.shape == (6,)
    want = ref.ref_sigmoid(v @ head.lin.weight.data + head.lin.bias.data).reshape(6)
    np.testing.assert_allclose(scores.data, want, atol=1e-12)
    assert ((scores.data > 0) & (scores.data < 1)).all()


def test_foreground_head_zero_weights_give_half():
    head = ForegroundHead.init(np.random.default_rng(6), 8)
    head.lin.weight.data[:] = 0.0
    head.lin.bias.data[:] = 0.0
    scores = head(Tensor(np.random.default_rng(7).normal(size=(4, 8))))
    np.testing.assert_allclose(scores.data, 0.5, atol=1e-15)


def test_pool_head_matches_oracle_and_weights_sum_to_one():
    rng = np.random.default_rng(8)
    head = AttentivePoolHead.init(rng, 8)
    v = rng.normal(size=(5, 8))
    m = attentive_regression_head(Tensor(v), head)
    p = {k[len("p."):]: v2 for k, v2 in as_np(head.named("p")).items()}
    want = ref.ref_pool_head(v, p)
    np.testing.assert_allclose([m.center.item(), m.width.item()], want, atol=1e-12)


def test_pool_head_single_clip_reduces_to_regression_on_it():
    rng = np.random.default_rng(9)
    head = AttentivePoolHead.init(rng, 8)
    v = rng.normal(size=(1, 8))
    m = head(Tensor(v))
    p = {k[len("p."):]: v2 for k, v2 in as_np(head.named("p")).items()}
    want = ref.ref_reg_stack(v, p)
    np.testing.assert_allclose([m.center.item(), m.width.item()], want, atol=1e-12)


def test_pool_head_gradient_reaches_score_vector():
    rng = np.random.default_rng(10)
    head = AttentivePoolHead.init(rng, 8)
    v = Tensor(rng.normal(size=(5, 8)))
    m = head(v)
    (m.center * 1.0).backward()
    assert head.score.grad is not None and np.abs(head.score.grad).max() > 0
