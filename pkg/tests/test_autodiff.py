import numpy as np
import pytest

from ssd3d import autodiff as ad


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        g.reshape(-1)[i] = (up - down) / (2 * h)
    return g


def check_op(build, x, tol=1e-6):
    p = ad.parameter(x)
    ad.backward(ad.vsum(build(p)))
    num = numeric_grad(lambda v: float(build(ad.Value(v)).data.sum()), x.copy())
    np.testing.assert_allclose(p.grad, num, atol=tol, rtol=tol)


def test_sum_of_parameters_gives_unit_gradients():
    p = ad.parameter(np.arange(6.0).reshape(2, 3))
    ad.backward(ad.vsum(p))
    assert np.array_equal(p.grad, np.ones((2, 3)))


def test_square_at_three():
    x = ad.parameter(3.0)
    ad.backward(x * x)
    assert float(x.grad) == 6.0


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError):
        ad.backward(ad.parameter(np.ones(3)))


def test_grad_shape_matches_data_and_accumulates():
    x = ad.parameter(np.ones((2, 2)))
    y = x * 2.0 + x
    ad.backward(ad.vsum(y))
    assert x.grad.shape == x.data.shape
    assert np.array_equal(x.grad, np.full((2, 2), 3.0))


def test_constants_get_no_grad():
    c = ad.Value(np.ones(3))
    p = ad.parameter(np.ones(3))
    ad.backward(ad.vsum(c * p))
    assert c.grad is None


rng = np.random.default_rng(0)
X = rng.normal(size=(3, 4))
POS = rng.uniform(0.5, 2.0, size=(3, 4))
W = rng.normal(size=(4, 2))


@pytest.mark.parametrize(
    "name,build,x",
    [
        ("add_broadcast", lambda p: p + np.arange(4.0), X),
        ("sub", lambda p: 1.0 - p, X),
        ("mul", lambda p: p * p, X),
        ("div", lambda p: 1.0 / p, POS),
        ("power", lambda p: ad.power(p, 1.5), POS),
        ("relu", lambda p: ad.relu(p), X + 0.05),
        ("sigmoid", lambda p: ad.sigmoid(p), X),
        ("log", lambda p: ad.log(p), POS),
        ("exp", lambda p: ad.exp(p), X),
        ("sin", lambda p: ad.sin(p), X),
        ("cos", lambda p: ad.cos(p), X),
        ("smooth_l1", lambda p: ad.smooth_l1(p * 2.0), X),
        ("norm", lambda p: ad.norm(p, axis=1), X),
        ("matmul", lambda p: ad.matmul(p, W), X),
        ("transpose", lambda p: ad.transpose(p) * np.arange(3.0), X),
        ("getitem", lambda p: p[1:, ::2] * 3.0, X),
        ("fancy_getitem", lambda p: p[np.array([0, 0, 2])] * np.arange(4.0), X),
        ("gather_rows", lambda p: ad.gather_rows(p, np.array([[2, 0], [2, 1]])) * 1.5, X),
        ("concat", lambda p: ad.concat([p, p * 2.0], axis=1) * np.arange(8.0), X),
        ("mean_axis", lambda p: ad.mean(p * p, axis=0), X),
        ("vmax", lambda p: ad.vmax(p, axis=1), X),
        ("log_softmax", lambda p: ad.log_softmax(p, axis=1) * np.arange(4.0), X),
        ("clip", lambda p: ad.clip(p, -0.3, 0.4), X),
    ],
)
def test_op_gradients_match_central_differences(name, build, x):
    check_op(build, x.copy())


def test_backward_is_deterministic():
    def run():
        p = ad.parameter(X)
        ad.backward(ad.vsum(ad.sigmoid(ad.matmul(p, W)) ** 2))
        return p.grad
    assert np.array_equal(run(), run())
