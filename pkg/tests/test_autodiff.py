import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvqlab import autodiff as ad
from rvqlab.errors import FormatError, InvalidArgument, NonFiniteError


def test_relu_values_and_mask():
    x = ad.leaf([-1.0, 0.0, 2.0])
    y = ad.relu(x)
    assert y.data.tolist() == [0.0, 0.0, 2.0]
    (g,) = ad.backward(ad.sum_(y), [x])
    assert g.tolist() == [0.0, 0.0, 1.0]


def test_square_derivative():
    x = ad.leaf(3.0)
    (g,) = ad.backward(ad.square(x), [x])
    assert g == 6.0


def test_log_softmax_normalises():
    z = np.random.default_rng(0).normal(size=(7, 11)) * 3
    out = ad.log_softmax(ad.constant(z)).data
    assert np.allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_sum_gives_ones():
    x = ad.leaf(np.arange(5.0))
    (g,) = ad.backward(ad.sum_(x), [x])
    assert np.array_equal(g, np.ones(5))


def test_disconnected_leaf_zero_grad():
    x, y = ad.leaf(np.ones(3)), ad.leaf(np.ones(4))
    gx, gy = ad.backward(ad.sum_(ad.square(x)), [x, y])
    assert np.all(gy == 0) and gy.shape == (4,)


def test_non_scalar_loss_rejected():
    x = ad.leaf(np.ones(3))
    with pytest.raises(InvalidArgument):
        ad.backward(ad.square(x))


def test_shape_mismatch_names_shapes():
    with pytest.raises(InvalidArgument, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(ad.leaf(np.ones((2, 3))), ad.leaf(np.ones((4, 5))))
    with pytest.raises(InvalidArgument):
        ad.add(ad.leaf(np.ones(3)), ad.leaf(np.ones(4)))


def test_non_finite_is_hard_error():
    with pytest.raises(NonFiniteError):
        ad.exp(ad.leaf([1000.0]))


def test_log_clamps():
    x = ad.leaf([0.0, 1.0])
    y = ad.log(x)
    assert y.data[0] == np.log(1e-12)
    (g,) = ad.backward(ad.sum_(y), [x])
    assert g.tolist() == [0.0, 1.0]


def test_mean_relu_matches_finite_differences():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(6, 5))
    x0 = rng.normal(size=(5, 1))

    def f(x):
        return ad.mean(ad.relu(ad.matmul(ad.constant(w), x)))

    # keep away from relu kinks
    assert np.min(np.abs(w @ x0)) > 1e-3
    assert ad.grad_check(f, x0) <= 1e-6


def test_grad_check_quadratic_form():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 4))
    a = a + a.T

    def f(x):
        return ad.sum_(ad.mul(x, ad.matmul(ad.constant(a), x)))

    x0 = rng.normal(size=(4, 1))
    _, g = ad.gradient(f, x0)
    assert np.allclose(g, 2 * a @ x0, atol=1e-12)
    assert ad.grad_check(f, x0) <= 1e-9


def test_grad_check_log_softmax_pick():
    z0 = np.random.default_rng(3).normal(size=(3, 5))
    assert ad.grad_check(lambda z: ad.slice_(ad.log_softmax(z), (1, 2)), z0) <= 1e-6


def test_grad_check_constant():
    assert ad.grad_check(lambda x: ad.sum_(ad.mul(x, 0.0)), np.ones(3)) == 0.0


def _op_cases():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(4, 3))
    return {
        "matmul": (lambda x: ad.sum_(ad.matmul(x, ad.constant(m))), (2, 4)),
        "matmul_rhs": (lambda x: ad.sum_(ad.square(ad.matmul(ad.constant(m.T), x))), (4, 2)),
        "add_broadcast": (lambda x: ad.sum_(ad.square(ad.add(x, ad.constant(np.ones((3, 4)))))), (1, 4)),
        "mul": (lambda x: ad.sum_(ad.mul(x, ad.square(x))), (3, 4)),
        "relu": (lambda x: ad.sum_(ad.mul(ad.relu(x), x)), (3, 4)),
        "log": (lambda x: ad.sum_(ad.log(ad.add(ad.square(x), 0.5))), (3, 4)),
        "exp": (lambda x: ad.sum_(ad.exp(ad.mul(x, 0.3))), (3, 4)),
        "sum_axis": (lambda x: ad.sum_(ad.square(ad.sum_(x, axis=0))), (3, 4)),
        "mean": (lambda x: ad.mean(ad.square(x)), (3, 4)),
        "slice": (lambda x: ad.sum_(ad.square(ad.slice_(x, (slice(1, 3), [0, 0, 2])))), (3, 4)),
        "concat": (lambda x: ad.sum_(ad.square(ad.concat([x, ad.mul(x, 2.0)], axis=1))), (3, 4)),
        "fixed_matmul": (lambda x: ad.sum_(ad.square(ad.fixed_matmul(x, m))), (2, 4)),
        "log_softmax": (lambda x: ad.sum_(ad.mul(ad.log_softmax(x), ad.constant(np.arange(4.0)))), (3, 4)),
    }


@pytest.mark.parametrize("name", sorted(_op_cases()))
def test_op_gradients_match_central_differences(name):
    f, shape = _op_cases()[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(20):
        x0 = rng.normal(size=shape)
        if name == "relu":
            x0 = np.where(np.abs(x0) < 1e-2, 0.5, x0)
        assert ad.grad_check(f, x0) <= 1e-6, name


def test_backward_is_deterministic():
    f, shape = _op_cases()["log_softmax"]
    x0 = np.random.default_rng(0).normal(size=shape)
    assert np.array_equal(ad.gradient(f, x0)[1], ad.gradient(f, x0)[1])


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_gradient_is_linear(a, b, seed):
    x0 = np.random.default_rng(seed).normal(size=(3, 4))
    f = lambda x: ad.sum_(ad.exp(ad.mul(x, 0.2)))
    g = lambda x: ad.mean(ad.square(x))
    h = lambda x: ad.add(ad.mul(f(x), a), ad.mul(g(x), b))
    expect = a * ad.gradient(f, x0)[1] + b * ad.gradient(g, x0)[1]
    assert np.allclose(ad.gradient(h, x0)[1], expect, atol=1e-12, rtol=0)


def test_parameter_set_roundtrip(tmp_path):
    p = ad.ParameterSet()
    p.add("W1", np.arange(6.0).reshape(2, 3))
    p.add("b1", np.zeros(3))
    p.add("scalar", np.array(2.5), trainable=False)
    p.save(tmp_path / "p.bin")
    raw = (tmp_path / "p.bin").read_bytes()
    assert raw[:4] == b"CGPT"
    q = ad.ParameterSet.load(tmp_path / "p.bin")
    assert list(q) == ["W1", "b1", "scalar"]
    for n in p:
        assert np.array_equal(p[n], q[n])


def test_parameter_set_invariants():
    p = ad.ParameterSet()
    p.add("a", np.zeros(2))
    with pytest.raises(InvalidArgument):
        p.add("a", np.zeros(2))
    with pytest.raises(InvalidArgument):
        p["a"] = np.zeros(3)
    with pytest.raises(FormatError):
        ad.ParameterSet.from_bytes(b"XXXX" + bytes(8))
