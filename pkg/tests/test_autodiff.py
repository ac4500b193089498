import numpy as np
import pytest

from limbpoints.autodiff import (
    Tensor,
    concat,
    finite_difference_grad,
    gelu,
    layer_norm,
    softmax,
)


def check_grads(build, *shapes, seed=0, tol=1e-6):
    """Compare tape gradients of scalar build(*tensors) with central differences."""
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(0.0, 1.0, s) for s in shapes]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for i, (arr, tensor) in enumerate(zip(arrays, tensors)):
        idx = rng.choice(arr.size, size=min(10, arr.size), replace=False)

        def f(x, _i=i):
            args = [Tensor(a.copy()) for a in arrays]
            args[_i] = Tensor(x)
            return float(build(*args).data)

        numeric = finite_difference_grad(f, arr, idx, h=1e-6)
        analytic = tensor.grad.reshape(-1)[idx]
        np.testing.assert_allclose(analytic, numeric, rtol=tol, atol=tol)


def test_add_mul_broadcast():
    check_grads(lambda a, b: ((a + b) * a).sum(), (4, 5), (5,))
    check_grads(lambda a, b: ((a - b) * 3.0).sum(), (3, 4), (3, 1))


def test_matmul_plain_and_batched():
    check_grads(lambda a, b: (a @ b).sum(), (4, 6), (6, 3))
    check_grads(lambda a, b: (a @ b).sum(), (2, 4, 6), (2, 6, 3))


def test_pow_exp():
    check_grads(lambda a: (a * a).sum(), (7,))
    check_grads(lambda a: ((a**2.0) + a.exp()).sum(), (5,))


def test_reshape_transpose_getitem_concat():
    check_grads(lambda a: a.reshape(6, 2).transpose(1, 0).sum(), (3, 4))
    check_grads(lambda a: (a[1:3] * 2.0).sum(), (5, 4))
    check_grads(lambda a: a[np.array([0, 2, 2])].sum(), (4, 3))  # repeated rows
    check_grads(lambda a, b: concat([a, b], axis=0).sum(), (2, 3), (4, 3))
    check_grads(lambda a, b: (concat([a, b], axis=1) ** 2.0).sum(), (2, 3), (2, 2))


def test_sum_mean_axes():
    check_grads(lambda a: a.sum(axis=0).sum(), (3, 4))
    check_grads(lambda a: (a.mean(axis=1) ** 2.0).sum(), (3, 4))
    check_grads(lambda a: a.mean(), (2, 3, 4))


def test_softmax_gradient():
    check_grads(lambda a: (softmax(a) * np.arange(5.0)).sum(), (3, 5), tol=1e-5)


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).normal(0, 3, (4, 6)))
    s = softmax(x)
    assert np.allclose(s.data.sum(axis=-1), 1.0)


def test_layer_norm_gradient():
    check_grads(
        lambda x, g, b: (layer_norm(x, g, b) * np.arange(6.0)).sum(),
        (4, 6),
        (6,),
        (6,),
        tol=1e-5,
    )


def test_layer_norm_normalizes():
    x = Tensor(np.random.default_rng(1).normal(5.0, 3.0, (8, 16)))
    out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    assert np.allclose(out.std(axis=-1), 1.0, atol=1e-3)


def test_gelu_values_and_gradient():
    from scipy.stats import norm as normal

    x = np.linspace(-3, 3, 13)
    out = gelu(Tensor(x)).data
    assert np.allclose(out, x * normal.cdf(x), atol=1e-12)
    check_grads(lambda a: (gelu(a) * 2.0).sum(), (9,), tol=1e-5)


def test_small_mlp_end_to_end():
    def net(w1, b1, w2, b2, x):
        h = gelu(x @ w1 + b1)
        return ((h @ w2 + b2) ** 2.0).mean()

    check_grads(net, (5, 8), (8,), (8, 2), (2,), (3, 5), tol=1e-5)


def test_backward_requires_scalar():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2.0).backward()


def test_grad_accumulates_over_reuse():
    a = Tensor(np.array([3.0]), requires_grad=True)
    out = (a * a + a).sum()  # d/da = 2a + 1 = 7
    out.backward()
    assert a.grad[0] == pytest.approx(7.0)


def test_no_grad_for_constants():
    const = Tensor(np.ones(3))
    var = Tensor(np.ones(3), requires_grad=True)
    out = (const * var).sum()
    out.backward()
    assert const.grad is None
    assert np.allclose(var.grad, 1.0)


def test_float32_stays_float32():
    a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    out = gelu(a @ a + 1.5)
    assert out.data.dtype == np.float32
    out.sum().backward()
    assert a.grad.dtype == np.float32
