import numpy as np
import pytest

from vtondit.errors import ConfigError, ContractError, ShapeError
from vtondit.tensor import (Tensor, avg_pool_3d, backward, finite_diff_check,
                            gelu, layer_norm, make_rng, matmul, no_grad,
                            population_stats, rotate_pairs, softmax, take,
                            tmean, transpose, tsum)


def test_matmul_identity():
    eye = Tensor(np.eye(2, dtype=np.float32))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((eye @ m).data, m.data)


def test_matmul_hand_case():
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0], [4.0]])
    np.testing.assert_allclose((a @ b).data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError) as err:
        matmul(a, Tensor(np.zeros((2, 3))))
    assert "(2, 3)" in str(err.value)


def test_softmax_symmetry_and_hand_case():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(softmax(Tensor([0.0, np.log(3.0)])).data,
                               [0.25, 0.75], atol=1e-7)


def test_softmax_large_values_do_not_overflow():
    out = softmax(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_softmax_slices_sum_to_one_and_in_range():
    rng = make_rng(0)
    x = Tensor(rng.normal(size=(5, 7)).astype(np.float32))
    out = softmax(x, axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(5), atol=1e-6)
    assert np.all(out > 0) and np.all(out <= 1)


def test_layer_norm_hand_cases():
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    const = layer_norm(Tensor([[3.0, 3.0]]), gamma, beta).data
    np.testing.assert_allclose(const, [[0.0, 0.0]], atol=1e-3)
    two = layer_norm(Tensor([[1.0, 3.0]]), gamma, beta, eps=1e-12).data
    np.testing.assert_allclose(two, [[-1.0, 1.0]], atol=1e-5)
    shifted = layer_norm(Tensor([[1.0, 3.0]]), gamma, Tensor(np.full(2, 5.0)), eps=1e-12).data
    np.testing.assert_allclose(shifted, two + 5.0, atol=1e-5)


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ConfigError):
        layer_norm(Tensor([[1.0, 2.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)


def test_population_stats_hand_case_and_standardization():
    mean, std = population_stats(np.array([2.0, 4.0]))
    assert mean == 3.0 and std == 1.0
    c = np.full((3, 4), 7.0)
    mean, std = population_stats(c)
    assert mean == 7.0 and std == 0.0
    rng = make_rng(1)
    x = rng.normal(2.0, 3.0, size=(6, 5))
    mu, sigma = population_stats(x)
    z = (x - mu) / sigma
    zm, zs = population_stats(z)
    assert abs(zm) < 1e-6 and abs(zs - 1.0) < 1e-6


def test_avg_pool_constant_and_impulses():
    ones = np.ones((3, 4, 5), dtype=np.float32)
    np.testing.assert_allclose(avg_pool_3d(ones, (3, 3, 3)), ones)

    line = np.zeros((3, 1, 1), dtype=np.float32)
    line[1] = 1.0
    np.testing.assert_allclose(avg_pool_3d(line, (3, 1, 1)).reshape(-1),
                               [1 / 3, 1 / 3, 1 / 3], atol=1e-6)

    spot = np.zeros((1, 5, 5), dtype=np.float32)
    spot[0, 2, 2] = 1.0
    pooled = avg_pool_3d(spot, (1, 3, 3))
    np.testing.assert_allclose(pooled[0, 1:4, 1:4], np.full((3, 3), 1 / 9), atol=1e-6)
    assert pooled[0, 0, 0] == 0.0


def test_avg_pool_rejects_even_kernel():
    with pytest.raises(ConfigError):
        avg_pool_3d(np.zeros((2, 2, 2)), (2, 1, 1))


def test_avg_pool_preserves_global_mean_of_constant():
    c = np.full((4, 6, 5), 0.37, dtype=np.float64)
    pooled = avg_pool_3d(c, (3, 5, 3))
    assert abs(pooled.mean() - c.mean()) < 1e-6


def test_backward_quadratic_and_linear():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    loss = tsum(x * x)
    backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data)

    c = np.array([2.0, 0.5, -1.0])
    y = Tensor(np.array([1.0, 1.0, 1.0]), requires_grad=True)
    backward(tsum(y * Tensor(c)))
    np.testing.assert_array_equal(y.grad, c)


def test_backward_accumulates_until_cleared():
    x = Tensor(np.array([2.0]), requires_grad=True)
    loss = tsum(x * x)
    backward(loss)
    first = x.grad.copy()
    backward(tsum(x * x))
    np.testing.assert_allclose(x.grad, 2 * first)
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_nonscalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_no_grad_suppresses_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y._bw is None and not y.requires_grad


def test_finite_diff_quadratic_tight():
    x = make_rng(3).normal(size=(4,))
    report = finite_diff_check(lambda t: tsum(t * t), x, h=1e-5, tol=1e-8)
    assert report.passed, report


def test_finite_diff_linear_near_exact():
    c = np.array([1.5, -2.0, 0.25])
    report = finite_diff_check(lambda t: tsum(t * Tensor(c.astype(np.float64))),
                               np.zeros(3), h=1e-5, tol=1e-9)
    assert report.passed


@pytest.mark.parametrize("seed", range(5))
def test_finite_diff_core_ops(seed):
    rng = make_rng(seed)
    x = rng.normal(size=(3, 4))

    probe = Tensor(rng.normal(size=(3, 4)).astype(np.float64))

    def through_softmax(t):
        return tsum(softmax(t, axis=-1) * probe)

    assert finite_diff_check(through_softmax, x, h=1e-6, tol=1e-5).passed

    w = Tensor(rng.normal(size=(4, 2)).astype(np.float64))

    def through_matmul(t):
        return tsum(t @ w)

    assert finite_diff_check(through_matmul, x, h=1e-6, tol=1e-6).passed

    gamma = Tensor(rng.normal(size=(4,)).astype(np.float64))
    beta = Tensor(rng.normal(size=(4,)).astype(np.float64))

    def through_ln(t):
        return tsum(layer_norm(t, gamma, beta) ** 2.0)

    assert finite_diff_check(through_ln, x, h=1e-6, tol=1e-5).passed

    assert finite_diff_check(lambda t: tsum(gelu(t)), x, h=1e-6, tol=1e-6).passed


def test_rotate_pairs_round_trip_and_grad():
    rng = make_rng(7)
    x = rng.normal(size=(5, 6))
    rotated = rotate_pairs(Tensor(x)).data
    np.testing.assert_allclose(rotated[..., 0::2], -x[..., 1::2])
    np.testing.assert_allclose(rotated[..., 1::2], x[..., 0::2])
    assert finite_diff_check(lambda t: tsum(rotate_pairs(t) * Tensor(x)), x,
                             h=1e-6, tol=1e-6).passed


def test_take_transpose_mean_grads():
    rng = make_rng(11)
    x = rng.normal(size=(4, 3))

    def f(t):
        return tmean(take(transpose(t), (slice(None), slice(1, 3))) ** 2.0)

    assert finite_diff_check(f, x, h=1e-6, tol=1e-6).passed


def test_forward_ops_finite_on_finite_input():
    rng = make_rng(13)
    x = Tensor(rng.normal(scale=50.0, size=(6, 6)).astype(np.float32))
    for out in (softmax(x), gelu(x), layer_norm(x, Tensor(np.ones(6, np.float32)),
                                                Tensor(np.zeros(6, np.float32)))):
        assert np.all(np.isfinite(out.data))
