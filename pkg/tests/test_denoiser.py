import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resnoise.denoiser import (ConfigError, TimeEmbedding, embed_time, init_params, loss_and_grad,
                               param_count, predict_resnoise)
from resnoise.numerics import ShapeError
from resnoise.oracles import gradient_check
from resnoise.schedule import build_schedule

S100 = build_schedule(100)
LEVELS = np.sqrt(S100.one_minus_alpha_bar)


def small_net(rng, head="plain", x_size=4, cond=3, widths=(5, 4), emb=4, perturb=0.1):
    p = init_params(x_size, cond, widths, emb, rng, head=head, noise_levels=LEVELS, out_scale=1.0)
    return p.with_arrays([a + perturb * rng.standard_normal(a.shape) for a in p.arrays()])


def test_embedding_at_zero_is_sin0_cos1():
    e = embed_time(0, TimeEmbedding(8))
    assert np.array_equal(e[:4], np.zeros(4))
    assert np.array_equal(e[4:], np.ones(4))


def test_odd_embedding_dimension_rejected():
    with pytest.raises(ConfigError):
        TimeEmbedding(7)


def test_embeddings_distinct_and_bounded():
    emb = TimeEmbedding(2)
    E = embed_time(np.arange(1, 1001), emb)
    assert len(np.unique(E, axis=0)) == 1000
    E32 = embed_time(np.arange(1, 1001), TimeEmbedding(32))
    assert len(np.unique(E32, axis=0)) == 1000
    assert np.all(np.abs(E32) <= 1) and np.all(np.linalg.norm(E32, axis=1) <= np.sqrt(32) + 1e-12)


def test_periods_span_one_to_base():
    p = TimeEmbedding(32).periods
    assert p[0] == 1.0 and np.isclose(p[-1], 1e4)
    assert np.allclose(p[1:] / p[:-1], p[1] / p[0])


@pytest.mark.parametrize("head", ["plain", "blend"])
def test_zero_weights_give_zero_output(head, rng):
    p = small_net(rng, head)
    p = p.with_arrays([np.zeros_like(a) for a in p.arrays()])
    out = predict_resnoise(p, rng.standard_normal((3, 4)), rng.standard_normal((3, 3)), np.array([1, 50, 100]))
    assert np.array_equal(out, np.zeros((3, 4)))


@pytest.mark.parametrize("head", ["plain", "blend"])
def test_batch_permutation_equivariance(head, rng):
    p = small_net(rng, head)
    x, c, t = rng.standard_normal((6, 4)), rng.standard_normal((6, 3)), rng.integers(1, 101, 6)
    perm = rng.permutation(6)
    out = predict_resnoise(p, x, c, t)
    out_perm = predict_resnoise(p, x[perm], c[perm], t[perm])
    assert np.array_equal(out[perm], out_perm)


def test_batched_matches_single(rng):
    p = small_net(rng, "blend")
    x, c, t = rng.standard_normal((5, 4)), rng.standard_normal((5, 3)), rng.integers(1, 101, 5)
    out = predict_resnoise(p, x, c, t)
    for i in range(5):
        assert np.allclose(out[i], predict_resnoise(p, x[i], c[i], int(t[i])), rtol=1e-13, atol=1e-15)


def test_output_shape_follows_input_and_is_pure(rng):
    p = init_params(16, 16, (8,), 4, rng)
    x = rng.standard_normal((2, 4, 4))
    a = predict_resnoise(p, x, rng.standard_normal((2, 4, 4)), np.array([3, 4]))
    assert a.shape == x.shape


def test_size_mismatch(rng):
    p = small_net(rng)
    with pytest.raises(ShapeError):
        predict_resnoise(p, np.zeros(5), np.zeros(3), 1)
    with pytest.raises(ShapeError):
        loss_and_grad(p, np.zeros((2, 4)), np.zeros((2, 3)), np.array([1, 2]), np.zeros((2, 5)))


def test_huge_inputs_stay_finite(rng):
    p = small_net(rng, "blend")
    out = predict_resnoise(p, np.full((2, 4), 1e6), np.full((2, 3), -1e6), np.array([1, 100]))
    assert np.all(np.isfinite(out))


@pytest.mark.parametrize("head", ["plain", "blend"])
def test_target_equal_to_output_gives_zero_loss_and_grad(head, rng):
    p = small_net(rng, head)
    x, c, t = rng.standard_normal((3, 4)), rng.standard_normal((3, 3)), rng.integers(1, 101, 3)
    y = predict_resnoise(p, x, c, t)
    loss, g = loss_and_grad(p, x, c, t, y)
    assert loss == 0.0
    assert np.all(g.flat() == 0.0)


def test_loss_scales_quadratically(rng):
    # scaling the last layer and the target by c scales output and target, hence loss by c^2
    p = small_net(rng)
    x, c, t = rng.standard_normal((3, 4)), rng.standard_normal((3, 3)), rng.integers(1, 101, 3)
    y = rng.standard_normal((3, 4))
    loss, _ = loss_and_grad(p, x, c, t, y)
    W, b = p.layers[-1]
    scaled = p.with_arrays(p.arrays()[:-3] + [3.0 * W, 3.0 * b, p.skip])
    loss3, _ = loss_and_grad(scaled, x, c, t, 3.0 * y)
    assert np.isclose(loss3, 9.0 * loss, rtol=1e-13)


def test_ten_parameter_net_gradcheck(rng):
    # x 1, cond 1, emb 2 -> width 1 -> x 1: (4+1)*1 + (1+1)*1 + skip = 8 weights; width 2: 13
    p = init_params(1, 1, (1,), 2, rng, head="blend", noise_levels=LEVELS, out_scale=1.0)
    p = p.with_arrays([a + 0.3 * rng.standard_normal(a.shape) for a in p.arrays()])
    assert p.n_params() == param_count(1, 1, (1,), 2) == 8
    x, c, t, y = rng.standard_normal((4, 1)), rng.standard_normal((4, 1)), np.array([1, 7, 50, 100]), rng.standard_normal((4, 1))
    _, g = loss_and_grad(p, x, c, t, y)
    err = gradient_check(lambda v: loss_and_grad(p.with_flat(v), x, c, t, y)[0], p.flat(), g.flat())
    assert err <= 1e-4


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), head=st.sampled_from(["plain", "blend"]),
       widths=st.lists(st.integers(1, 6), min_size=1, max_size=3))
def test_gradcheck_random_nets(seed, head, widths):
    rng = np.random.default_rng(seed)
    x_size, cond = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    p = init_params(x_size, cond, tuple(widths), 4, rng, head=head, noise_levels=LEVELS, out_scale=1.0)
    p = p.with_arrays([a + 0.1 * rng.standard_normal(a.shape) for a in p.arrays()])
    B = 3
    x, c = rng.standard_normal((B, x_size)), rng.standard_normal((B, cond))
    t, y = rng.integers(1, 101, B), rng.standard_normal((B, x_size))
    _, g = loss_and_grad(p, x, c, t, y)
    err = gradient_check(lambda v: loss_and_grad(p.with_flat(v), x, c, t, y)[0], p.flat(), g.flat())
    assert err <= 1e-4


@pytest.mark.parametrize("widths", [(256, 256, 256), (3,), (7, 2)])
def test_param_count_is_a_function_of_shapes(widths, rng):
    p = init_params(256, 256, widths, 32, rng)
    assert p.n_params() == param_count(256, 256, widths, 32)


def test_blend_head_needs_noise_levels(rng):
    with pytest.raises(ConfigError):
        init_params(4, 4, (4,), 4, rng, head="blend")
    with pytest.raises(ConfigError):
        init_params(4, 4, (4,), 4, rng, head="unet")


def test_flat_round_trip(rng):
    p = small_net(rng, "blend")
    q = p.with_flat(p.flat())
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
