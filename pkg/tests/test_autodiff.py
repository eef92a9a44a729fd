import numpy as np
import pytest

from acfr import autodiff as ad


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    out = ad.matmul(np.eye(3), a)
    np.testing.assert_array_equal(out.data, a)


def test_row_softmax_uniform_on_zeros():
    out = ad.row_softmax(np.zeros(3))
    np.testing.assert_allclose(out.data, np.full(3, 1.0 / 3.0), rtol=0, atol=1e-15)


def test_mse_zero_residual():
    assert ad.mse(np.array([1.0, 2.0]), np.array([1.0, 2.0])).item() == 0.0


def test_square_gradient():
    x = ad.Tensor(3.0, requires_grad=True)
    y = ad.mul(x, x)
    y.backward()
    assert x.grad == pytest.approx(6.0, abs=1e-12)


def test_relu_gate_gradient():
    x = ad.Tensor([-1.0, 2.0], requires_grad=True)
    total = ad.mul(ad.mean(ad.relu(x)), 2.0)  # sum = mean * size
    total.backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_linear_mse_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 4))
    y = rng.normal(size=(4, 4))

    def loss(w):
        return ad.mse(ad.matmul(w, ad.Tensor(x)), ad.Tensor(y))

    err = ad.grad_check(loss, rng.normal(size=(4, 4)), step=1e-5)
    assert err < 1e-4


def test_grad_check_quadratic_is_nearly_exact():
    err = ad.grad_check(lambda t: ad.mul(t, t), np.array(3.0), step=1e-5)
    assert err < 1e-8


def test_grad_check_constant_function():
    err = ad.grad_check(lambda t: ad.mul(ad.mean(t), 0.0), np.array([1.0, -2.0]))
    assert err == 0.0


def test_grad_check_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        ad.grad_check(lambda t: ad.mean(t), np.array([1.0]), step=0.0)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ad.ShapeMismatchError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ad.ShapeMismatchError, match="add"):
        ad.add(np.zeros((2, 3)), np.zeros((4,)))


def test_softmax_empty_row_errors():
    with pytest.raises(ad.ShapeMismatchError, match="row_softmax"):
        ad.row_softmax(np.zeros((2, 0)))


def test_backward_requires_scalar_loss():
    x = ad.Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.relu(x).backward()


def _scalarize(t):
    """Mean + tanh squashing so any op output becomes a well-behaved scalar."""
    return ad.mean(ad.tanh(t))


# one entry per primitive: name -> function of a single probe tensor;
# all constants drawn once so finite differencing sees a fixed function
def _primitive_cases(rng):
    m = ad.Tensor(rng.normal(size=(4, 3)))
    m2 = ad.Tensor(rng.normal(size=(4, 3)))
    m3 = ad.Tensor(rng.normal(size=(4, 3)))
    m4 = ad.Tensor(rng.normal(size=(4, 3)))
    right = ad.Tensor(rng.normal(size=(3, 2)))
    v = ad.Tensor(rng.normal(size=3))
    batched = ad.Tensor(rng.normal(size=(2, 3, 4)))
    return {
        "matmul": lambda t: _scalarize(ad.matmul(t, right)),
        "matmul_batched": lambda t: _scalarize(ad.matmul(batched, ad.reshape(t, (4, 3)))),
        "add_bias": lambda t: _scalarize(ad.add(m, t)),
        "sub": lambda t: _scalarize(ad.sub(t, m2)),
        "mul_scalar": lambda t: _scalarize(ad.mul(t, 1.7)),
        "mul_elementwise": lambda t: _scalarize(ad.mul(t, m3)),
        "relu": lambda t: _scalarize(ad.relu(t)),
        "tanh": lambda t: _scalarize(ad.tanh(t)),
        "sigmoid": lambda t: _scalarize(ad.sigmoid(t)),
        "row_softmax": lambda t: _scalarize(ad.row_softmax(t)),
        "concat": lambda t: _scalarize(ad.concat([t, m])),
        "reshape": lambda t: _scalarize(ad.reshape(t, (3, 4))),
        "transpose": lambda t: _scalarize(ad.transpose(t)),
        "mean": lambda t: ad.mean(t),
        "mse": lambda t: ad.mse(t, m4),
        "v_bias": lambda t: _scalarize(ad.add(v, t)),
    }


def _probe_shape(name):
    if name == "matmul_batched":
        return (12,)
    if name == "v_bias":
        return (3,)
    return (4, 3)


def test_every_primitive_matches_finite_differences_100_cases():
    names = sorted(_primitive_cases(np.random.default_rng(0)))
    seeds = range(100 // len(names) + 1)
    checked = 0
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        cases = _primitive_cases(rng)
        for name in names:
            if checked >= 100:
                return
            x = np.random.default_rng(2000 + checked).normal(size=_probe_shape(name))
            err = ad.grad_check(cases[name], x, step=1e-5)
            assert err < 1e-4, f"{name} (seed {seed}): rel err {err}"
            checked += 1


def test_backward_is_bitwise_deterministic():
    rng = np.random.default_rng(42)
    w_init = rng.normal(size=(5, 5))
    x = rng.normal(size=(6, 5))
    y = rng.normal(size=(6, 5))

    def run():
        w = ad.Tensor(w_init.copy(), requires_grad=True)
        loss = ad.mse(ad.relu(ad.matmul(ad.Tensor(x), w)), ad.Tensor(y))
        loss.backward()
        return w.grad

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_composition_matches_chain_rule_on_1d():
    for seed in range(10):
        x0 = np.random.default_rng(seed).normal()
        # one graph: f(g(x)) with g = tanh, f = u * u
        x = ad.Tensor(x0, requires_grad=True)
        g = ad.tanh(x)
        f = ad.mul(g, g)
        f.backward()
        combined = float(x.grad)

        # chained: f'(g(x0)) * g'(x0), each from its own graph
        u = ad.Tensor(np.tanh(x0), requires_grad=True)
        fu = ad.mul(u, u)
        fu.backward()
        xg = ad.Tensor(x0, requires_grad=True)
        gu = ad.tanh(xg)
        gu.backward()
        chained = float(u.grad) * float(xg.grad)

        assert abs(combined - chained) < 1e-10


def test_gradient_map_returns_zeros_for_unreached_params():
    w = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    unused = ad.Tensor(np.ones(3), requires_grad=True)
    loss = ad.mean(ad.matmul(w, ad.Tensor(np.ones((2, 2)))))
    grads = ad.gradient_map(loss, [w, unused])
    assert grads[unused].shape == (3,)
    assert np.all(grads[unused] == 0.0)
    assert np.all(grads[w] != 0.0)


def test_grad_accumulates_across_shared_subexpression():
    x = ad.Tensor(2.0, requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.mul(x, 3.0))  # x^2 + 3x -> grad 2x + 3 = 7
    y.backward()
    assert x.grad == pytest.approx(7.0, abs=1e-12)
