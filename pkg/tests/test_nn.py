import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbcs import nn
from pbcs.maze_env import FormatError

from oracles import mlp_reference
from properties import random_net as _random_net, gradient_check


def test_identity_and_zero_nets():
    p = nn.MlpParams((3, 3), np.zeros(12))
    p.weights[0][...] = np.eye(3)
    x = np.array([0.3, -1.2, 5.0])
    assert np.array_equal(nn.forward(p, x), x)
    z = nn.MlpParams((3, 4, 2), np.zeros(nn.n_params((3, 4, 2))), act="tanh")
    assert np.array_equal(nn.forward(z, x), np.zeros(2))


def test_forward_matches_reference_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = _random_net(rng)
        x = rng.normal(size=p.n_in)
        ref = mlp_reference(p.weights, p.biases, x, out_scale=p.scale if p.act == "tanh" else None)
        assert np.allclose(nn.forward(p, x), ref, atol=1e-12)


def test_forward_rejects_bad_length():
    p = nn.init_mlp((3, 4, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.forward(p, np.zeros(4))
    with pytest.raises(ValueError):
        nn.gradients(p, np.zeros(3), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2))
def test_actor_output_in_action_box(x):
    p = nn.init_mlp((2, 16, 2), np.random.default_rng(1), act="tanh", scale=0.1)
    p.flat *= 50.0
    out = nn.forward(p, np.array(x))
    assert np.all(np.abs(out) <= 0.1) and np.all(np.isfinite(out))


def test_linear_layer_gradients():
    rng = np.random.default_rng(2)
    p = nn.init_mlp((3, 2), rng)
    x, u = rng.normal(size=3), rng.normal(size=2)
    g, gx = nn.gradients(p, x, u)
    gw, gb = g[:6].reshape(2, 3), g[6:]
    assert np.allclose(gb, u)
    assert np.allclose(gw, np.outer(u, x))
    assert np.allclose(gx, p.weights[0].T @ u)


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(3)
    p = _random_net(rng)
    g, gx = nn.gradients(p, rng.normal(size=p.n_in), np.zeros(p.n_out))
    assert not g.any() and not gx.any()


def test_gradients_match_finite_differences():
    assert gradient_check(30, seed=4) < 1e-4


def test_gradient_check_catches_a_one_percent_error(monkeypatch):
    real = nn.gradients
    monkeypatch.setattr(nn, "gradients", lambda p, x, u: tuple(1.01 * g for g in real(p, x, u)))
    assert gradient_check(5, seed=4) > 1e-3


def test_batched_gradients_sum_over_batch():
    rng = np.random.default_rng(5)
    p = nn.init_mlp((4, 6, 3), rng, act="tanh", scale=0.1)
    X, U = rng.normal(size=(7, 4)), rng.normal(size=(7, 3))
    g, gX = nn.gradients(p, X, U)
    singles = [nn.gradients(p, X[i], U[i]) for i in range(7)]
    assert np.allclose(g, sum(s[0] for s in singles))
    assert np.allclose(gX, np.stack([s[1] for s in singles]))


def test_adam_zero_gradient_keeps_params():
    p = nn.init_mlp((2, 3, 1), np.random.default_rng(6))
    before = p.flat.copy()
    st_ = nn.AdamState.for_params(p)
    nn.adam_step(p, np.zeros_like(p.flat), st_)
    assert np.array_equal(p.flat, before) and st_.t == 1


def test_adam_first_step_is_sign_times_lr():
    p = nn.init_mlp((2, 3, 1), np.random.default_rng(7))
    before = p.flat.copy()
    g = np.random.default_rng(8).normal(size=p.flat.shape)
    st_ = nn.AdamState.for_params(p, lr=1e-3)
    nn.adam_step(p, g, st_)
    delta = p.flat - before
    assert np.array_equal(np.sign(delta), -np.sign(g))
    assert np.allclose(np.abs(delta), 1e-3, rtol=1e-4)


def test_adam_constant_gradient_step_approaches_lr():
    p = nn.MlpParams((1, 1), np.zeros(2))
    st_ = nn.AdamState.for_params(p, lr=0.01)
    g = np.array([3.0, -0.002])
    for _ in range(500):
        before = p.flat.copy()
        nn.adam_step(p, g, st_)
    assert np.allclose(np.abs(p.flat - before), 0.01, rtol=1e-3)


def test_adam_shape_mismatch():
    p = nn.MlpParams((1, 1), np.zeros(2))
    with pytest.raises(ValueError):
        nn.adam_step(p, np.zeros(3), nn.AdamState.for_params(p))


def test_soft_update_identities():
    rng = np.random.default_rng(9)
    src = nn.init_mlp((2, 4, 1), rng)
    tgt = nn.init_mlp((2, 4, 1), rng)
    keep = tgt.flat.copy()
    nn.soft_update(tgt, src, 0.0)
    assert np.array_equal(tgt.flat, keep)
    nn.soft_update(tgt, src, 1.0)
    assert np.array_equal(tgt.flat, src.flat)
    zero = nn.MlpParams((2, 1), np.zeros(3))
    two = nn.MlpParams((2, 1), np.full(3, 2.0))
    nn.soft_update(zero, two, 0.5)
    assert np.array_equal(zero.flat, np.ones(3))
    with pytest.raises(ValueError):
        nn.soft_update(zero, src, 0.5)
    with pytest.raises(ValueError):
        nn.soft_update(zero, two, 1.5)


def test_invalid_param_records():
    with pytest.raises(ValueError):
        nn.MlpParams((2, 3), np.zeros(5))
    with pytest.raises(ValueError):
        nn.MlpParams((2, 3), np.zeros(9), act="relu")


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_serialisation_round_trip(dtype):
    p = nn.init_mlp((2, 5, 2), np.random.default_rng(10), act="tanh", scale=0.1, dtype=dtype)
    lines = nn.mlp_to_lines(p)
    q, used = nn.mlp_from_lines(lines)
    assert used == len(lines)
    assert q.flat.dtype == p.flat.dtype and np.array_equal(q.flat, p.flat)
    assert (q.layer_sizes, q.act, q.scale) == (p.layer_sizes, p.act, p.scale)


def test_truncated_serialisation_names_line():
    lines = nn.mlp_to_lines(nn.init_mlp((2, 3, 1), np.random.default_rng(0)))
    with pytest.raises(FormatError) as info:
        nn.mlp_from_lines(lines[:5], start=3)
    assert info.value.line == 8
    bad = list(lines)
    bad[2] = "oops"
    with pytest.raises(FormatError) as info:
        nn.mlp_from_lines(bad)
    assert info.value.line == 3
