import math

import numpy as np
import pytest

from classalign.autodiff import (Adam, SgdMomentum, Tensor, leaky_relu, matmul,
                                 poly_lr, softmax_t, zero_grads)
from classalign.errors import NumericError, ParameterError, ShapeError

from oracles import finite_difference_check, ref_adam, ref_sgd_momentum


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, b).values, b.values)


def test_matmul_hand_product():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.values.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert "(2, 3)" in str(exc.value)


def test_matmul_gradient_ones_times_bt():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="a")
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True, name="b")
    matmul(a, b).sum().backward()
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.values.T)
    finite_difference_check(lambda: matmul(a, b).sum(), [a, b])


def test_leaky_relu_default_slope():
    out = leaky_relu(Tensor([-1.0, 0.0, 2.0]), 0.2)
    assert out.values.tolist() == [-0.2, 0.0, 2.0]


def test_leaky_relu_zero_slope_is_relu():
    out = leaky_relu(Tensor([-3.0, 5.0]), 0.0)
    assert out.values.tolist() == [0.0, 5.0]
    with pytest.raises(ParameterError):
        leaky_relu(Tensor([1.0]), 1.0)


def test_leaky_relu_gradcheck():
    x = Tensor([-0.5, 0.7], requires_grad=True, name="x")
    finite_difference_check(lambda: leaky_relu(x, 0.2).sum(), [x], rtol=1e-6)


def test_softmax_symmetry():
    out = softmax_t(Tensor([0.0, 0.0]), 1.8)
    assert np.allclose(out.values, [0.5, 0.5], atol=1e-15)


def test_softmax_temperature_value():
    out = softmax_t(Tensor([1.8 * math.log(3.0), 0.0]), 1.8)
    assert np.allclose(out.values, [0.75, 0.25], atol=1e-12)


def test_softmax_no_overflow():
    out = softmax_t(Tensor([1000.0, 0.0]), 1.0)
    assert np.isfinite(out.values).all()
    assert np.allclose(out.values, [1.0, 0.0])


def test_softmax_rejects_bad_temperature():
    with pytest.raises(ParameterError):
        softmax_t(Tensor([1.0]), 0.0)


def test_softmax_sums_to_one_and_positive():
    rng = np.random.default_rng(7)
    for _ in range(50):
        z = Tensor(rng.normal(scale=10.0, size=(4, 5)))
        p = softmax_t(z, float(rng.uniform(0.1, 5.0))).values
        assert (p > 0).all()
        assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-12


def test_softmax_gradcheck():
    rng = np.random.default_rng(11)
    z = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="z")
    w = Tensor(rng.normal(size=(3, 4)))
    finite_difference_check(lambda: (softmax_t(z, 1.8) * w).sum(), [z])


def test_backward_linear():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x.sum().backward()
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_elementwise_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    assert x.grad.tolist() == [2.0, 4.0]


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * x).backward()


def test_backward_accumulates_until_cleared():
    x = Tensor([1.0, 2.0], requires_grad=True)
    x.sum().backward()
    x.sum().backward()
    assert x.grad.tolist() == [2.0, 2.0]
    zero_grads([x])
    assert x.grad is None


def test_detach_blocks_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x.detach() * x.detach()).sum()
    y = x.detach()
    assert not y.requires_grad
    assert np.shares_memory(y.values, x.values)


def test_log_clamps_at_epsilon():
    x = Tensor([0.0, 1.0])
    out = x.log()
    assert out.values[0] == math.log(1e-12)
    assert out.values[1] == 0.0


def test_bias_add_gradient():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True, name="x")
    b = Tensor(rng.normal(size=3), requires_grad=True, name="b")
    finite_difference_check(lambda: ((x + b) * (x + b)).sum(), [x, b])


def test_sgd_plain_step():
    p = Tensor([1.0], requires_grad=True, name="p")
    p.grad = np.array([1.0])
    SgdMomentum([p], momentum=0.0, weight_decay=0.0).step(0.1)
    assert np.allclose(p.values, [0.9])


def test_sgd_momentum_hand_update():
    p = Tensor([1.0], requires_grad=True, name="p")
    opt = SgdMomentum([p], momentum=0.9, weight_decay=0.0)
    opt.velocity[0][:] = 1.0
    p.grad = np.array([1.0])
    opt.step(0.1)
    assert np.allclose(opt.velocity[0], [1.9])
    assert np.allclose(p.values, [0.81])


def test_sgd_matches_scalar_reference():
    theta0, wd, mu = 0.7, 1e-4, 0.9
    grads = [0.3, -0.5, 1.2, 0.0, 0.05]
    lrs = [0.1, 0.05, 0.02, 0.02, 0.01]
    p = Tensor([theta0], requires_grad=True, name="p")
    opt = SgdMomentum([p], momentum=mu, weight_decay=wd)
    for g, lr in zip(grads, lrs):
        p.grad = np.array([g])
        opt.step(lr)
    expected = ref_sgd_momentum(theta0, grads, lrs, mu, wd)
    assert abs(float(p.values[0]) - expected) <= 1e-12


def test_adam_first_step_magnitude():
    p = Tensor([0.5], requires_grad=True, name="p")
    p.grad = np.array([1.0])
    Adam([p]).step(1e-4)
    assert abs(float(p.values[0]) - (0.5 - 1e-4)) <= 1e-8


def test_adam_zero_gradient_no_move():
    p = Tensor([2.0], requires_grad=True, name="p")
    p.grad = np.array([0.0])
    Adam([p]).step(1e-2)
    assert float(p.values[0]) == 2.0


def test_adam_matches_scalar_reference():
    theta0 = -0.4
    grads = [1.0, -2.0, 0.5, 0.1, -0.7]
    lrs = [1e-3, 1e-3, 5e-4, 5e-4, 1e-4]
    p = Tensor([theta0], requires_grad=True, name="p")
    opt = Adam([p], betas=(0.9, 0.99))
    for g, lr in zip(grads, lrs):
        p.grad = np.array([g])
        opt.step(lr)
    expected = ref_adam(theta0, grads, lrs, 0.9, 0.99, 1e-8)
    assert abs(float(p.values[0]) - expected) <= 1e-12


def test_optimizers_reject_nan_gradients():
    p = Tensor([1.0], requires_grad=True, name="layer.w0")
    p.grad = np.array([float("nan")])
    with pytest.raises(NumericError, match="layer.w0"):
        SgdMomentum([p]).step(0.1)
    p.grad = np.array([float("nan")])
    with pytest.raises(NumericError, match="layer.w0"):
        Adam([p]).step(0.1)


def test_optimizer_determinism():
    def run():
        p = Tensor([0.3, -0.8], requires_grad=True, name="p")
        opt = Adam([p])
        for g in [0.1, -0.2, 0.3]:
            p.grad = np.array([g, -g])
            opt.step(1e-3)
        return p.values.copy()
    assert np.array_equal(run(), run())


def test_poly_lr_endpoints_and_value():
    assert poly_lr(0, 40000, 2.5e-4, 0.9) == 2.5e-4
    assert poly_lr(40000, 40000, 2.5e-4, 0.9) == 0.0
    assert abs(poly_lr(20000, 40000, 1.0, 0.9) - 0.5 ** 0.9) <= 1e-12
    assert abs(poly_lr(20000, 40000, 1.0, 0.9) - 0.5359) <= 1e-4


def test_poly_lr_monotone_and_validated():
    prev = float("inf")
    for it in range(0, 101, 5):
        lr = poly_lr(it, 100, 1.0, 0.9)
        assert lr <= prev
        prev = lr
    with pytest.raises(ParameterError):
        poly_lr(41, 40, 1.0, 0.9)
    with pytest.raises(ParameterError):
        poly_lr(0, 0, 1.0, 0.9)


def test_gradcheck_random_compositions():
    rng = np.random.default_rng(123)
    for trial in range(10):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="x")
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True, name="w")
        b = Tensor(rng.normal(size=3), requires_grad=True, name="b")

        def build():
            h = leaky_relu(matmul(x, w) + b, 0.2)
            return (softmax_t(h, 1.8).log() * Tensor(np.ones((3, 3)))).sum() / 9.0
        finite_difference_check(build, [x, w, b])
