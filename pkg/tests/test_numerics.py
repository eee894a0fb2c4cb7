import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spvp360 import numerics as nx


def rand(*shape, seed=0, grad=False):
    g = torch.Generator().manual_seed(seed)
    t = torch.randn(shape, generator=g, dtype=nx.DTYPE)
    return t.requires_grad_(grad)


def test_identity_kernel_returns_input():
    x = rand(1, 3, 3)
    k = torch.zeros(1, 1, 3, 3, dtype=nx.DTYPE)
    k[0, 0, 1, 1] = 1.0
    torch.testing.assert_close(nx.conv2d(x, k, 1, "zero"), x, rtol=0, atol=0)


def test_wrap_padding_ones_sum_to_nine_inside():
    x = torch.ones(1, 4, 4, dtype=nx.DTYPE)
    y = nx.conv2d(x, torch.ones(1, 1, 3, 3, dtype=nx.DTYPE), 1, "wrap")
    # rows 1..2 see a full 3x3 neighbourhood; wrapped columns keep the edges full too
    assert torch.all(y[0, 1:3, :] == 9.0)
    assert torch.all(y[0, 0, :] == 6.0)


def test_stride_two_halves_shape():
    y = nx.conv2d(torch.ones(1, 4, 4, dtype=nx.DTYPE), torch.ones(1, 1, 3, 3, dtype=nx.DTYPE), 2)
    assert tuple(y.shape) == (1, 2, 2)


def test_conv_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        nx.conv2d(torch.ones(2, 4, 4, dtype=nx.DTYPE), torch.ones(1, 1, 3, 3, dtype=nx.DTYPE))


def test_bilinear_integer_location_exact():
    f = rand(2, 4, 6)
    out = nx.bilinear_sample(f, [(2.0, 3.0)])
    torch.testing.assert_close(out[:, 0], f[:, 2, 3], rtol=0, atol=0)


def test_bilinear_midpoint():
    f = torch.tensor([[[0.0, 1.0]]], dtype=nx.DTYPE)
    assert float(nx.bilinear_sample(f, [(0.0, 0.5)])[0, 0]) == 0.5


def test_bilinear_wraps_columns():
    f = rand(1, 3, 5, seed=3)
    out = nx.bilinear_sample(f, [(1.0, -0.5)])
    expected = 0.5 * (f[0, 1, 4] + f[0, 1, 0])
    assert float(out[0, 0]) == pytest.approx(float(expected), abs=1e-15)


def test_bilinear_empty_locations():
    assert tuple(nx.bilinear_sample(rand(2, 3, 3), []).shape) == (2, 0)


def test_unpool_restores_maxima():
    x = torch.randperm(32, generator=torch.Generator().manual_seed(1)).to(nx.DTYPE).reshape(2, 4, 4)
    pooled, sw = nx.maxpool2d(x)
    back = nx.unpool2d(pooled, sw)
    mask = back != 0
    assert int(mask.sum()) == pooled.numel()
    torch.testing.assert_close(back[mask], x[mask], rtol=0, atol=0)
    for c in range(2):
        for i in range(2):
            for j in range(2):
                block = x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert back[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max() == block.max()


def test_batchnorm_training_output_has_unit_variance():
    x = rand(3, 6, 8, seed=2) * 5 + 2
    y = nx.batchnorm(x, torch.ones(3, dtype=nx.DTYPE), torch.zeros(3, dtype=nx.DTYPE), training=True)
    var = y.var(dim=(-2, -1), unbiased=False)
    torch.testing.assert_close(var, torch.ones(3, dtype=nx.DTYPE), rtol=0, atol=1e-6)


def test_batchnorm_eval_is_affine():
    rm, rv = torch.tensor([1.0, -2.0], dtype=nx.DTYPE), torch.tensor([4.0, 0.25], dtype=nx.DTYPE)
    g, b = torch.tensor([2.0, 1.0], dtype=nx.DTYPE), torch.tensor([0.5, 0.0], dtype=nx.DTYPE)
    x = rand(2, 3, 3, seed=4)
    y = nx.batchnorm(x, g, b, rm, rv, training=False)
    expected = (x - rm[:, None, None]) / torch.sqrt(rv[:, None, None] + nx.BN_EPS) * g[:, None, None] + b[:, None, None]
    torch.testing.assert_close(y, expected, rtol=0, atol=1e-14)


def test_minmax_constant_map_is_zero():
    assert torch.all(nx.minmax_normalize(torch.full((3, 4), 7.0, dtype=nx.DTYPE)) == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_minmax_range(seed):
    y = nx.minmax_normalize(rand(5, 7, seed=seed))
    assert float(y.min()) == 0.0 and float(y.max()) == 1.0


def test_gradcheck_relu_away_from_kink():
    x = (rand(3, 4, seed=5).abs() + 0.1) * torch.sign(rand(3, 4, seed=6))
    rep = nx.grad_check(nx.relu, [x.requires_grad_()])
    assert rep.passed and rep.max_rel_error < 1e-8


def test_gradcheck_sigmoid():
    assert nx.grad_check(nx.sigmoid, [rand(4, 4, grad=True)]).max_rel_error < 1e-4


def test_gradcheck_conv2d():
    rep = nx.grad_check(lambda a, w: nx.conv2d(a, w), [rand(2, 5, 5, grad=True), rand(3, 2, 3, 3, seed=1, grad=True)])
    assert rep.passed and rep.max_rel_error < 1e-4


class _WrongSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * 3 * x  # should be 2x


def test_gradcheck_catches_wrong_backward():
    rep = nx.grad_check(_WrongSquare.apply, [rand(3, 3, grad=True)])
    assert not rep.passed and rep.max_rel_error > 0.1


def test_gradcheck_reports_non_finite_instead_of_raising():
    rep = nx.grad_check(lambda a: torch.log(a), [torch.tensor([-1.0, 2.0], dtype=nx.DTYPE, requires_grad=True)])
    assert not rep.passed


def test_gradcheck_without_differentiable_input_fails():
    assert not nx.grad_check(nx.relu, [rand(2, 2)]).passed


def test_upsample_identity_at_same_size():
    x = rand(2, 4, 8)
    assert nx.upsample(x, (4, 8)) is x


def test_upsample_constant_preserved():
    y = nx.upsample(torch.full((1, 4, 8), 3.0, dtype=nx.DTYPE), (8, 16))
    torch.testing.assert_close(y, torch.full((1, 8, 16), 3.0, dtype=nx.DTYPE))


def test_mlp_matches_manual():
    x, w1, b1, w2, b2 = rand(3), rand(2, 3, seed=1), rand(2, seed=2), rand(3, 2, seed=3), rand(3, seed=4)
    expected = w2.numpy() @ np.maximum(w1.numpy() @ x.numpy() + b1.numpy(), 0) + b2.numpy()
    np.testing.assert_allclose(nx.mlp(x, w1, b1, w2, b2).numpy(), expected, atol=1e-14)
