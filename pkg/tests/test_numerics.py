import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from simtrack import numerics as nm
from simtrack.numerics import Tensor
from simtrack.oracle import finite_diff_grad, naive_matmul, naive_softmax, relative_errors

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def grad_check(fn, tensors, rng, n=30, h=1e-5, tol=1e-4):
    """Compare autodiff grads of scalar fn() against central differences."""
    for t in tensors.values():
        t.grad = None
    loss = fn()
    loss.backward()
    idx = []
    for key, t in tensors.items():
        for _ in range(max(1, n // len(tensors))):
            idx.append((key, tuple(int(rng.integers(s)) for s in t.shape)))
    with nm.no_grad():
        numeric = finite_diff_grad(lambda: fn().item(), tensors, idx, h)
    analytic = [tensors[k].grad[i] for k, i in idx]
    err = relative_errors(analytic, numeric)
    assert max(err) < tol, (max(err), idx[int(np.argmax(err))])


def test_matmul_identity():
    a = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([[2.0, 3.0], [4.0, 5.0]])
    assert np.array_equal((a @ b).data, b.data)


def test_matmul_zero_row():
    rng = np.random.default_rng(0)
    out = nm.matmul(Tensor(np.zeros((1, 5))), Tensor(rng.normal(size=(5, 3))))
    assert np.array_equal(out.data, np.zeros((1, 3)))


def test_matmul_vs_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(nm.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.integers(1, 32), st.integers(0, 2**31))
def test_matmul_vs_triple_loop_random_sizes(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    ref = np.array(naive_matmul(a, b))
    got = nm.matmul(Tensor(a), Tensor(b)).data
    scale = np.abs(a) @ np.abs(b) + 1e-300
    assert np.max(np.abs(got - ref) / scale) < 1e-10


def test_matmul_shape_error_names_dims():
    with pytest.raises(nm.ShapeError, match=r"3 != 4"):
        nm.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_matmul_batched_weight_gradient():
    rng = np.random.default_rng(2)
    a = nm.parameter(rng.normal(size=(2, 3, 4)))
    w = nm.parameter(rng.normal(size=(4, 5)))
    b = nm.parameter(rng.normal(size=(2, 5, 3)))
    grad_check(lambda: nm.sum_(nm.matmul(nm.matmul(a, w), b) * nm.matmul(nm.matmul(a, w), b)),
               {"a": a, "w": w, "b": b}, rng)


def test_softmax_uniform():
    np.testing.assert_allclose(nm.softmax_rows(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-15)


@pytest.mark.parametrize("x", [-50.0, 0.0, 3.5, 700.0])
def test_softmax_masked_entry_is_exact_zero(x):
    out = nm.softmax_rows(Tensor([x, -math.inf])).data
    assert out[0] == 1.0 and out[1] == 0.0


def test_softmax_additive_mask():
    mask = np.array([0.0, -np.inf, 0.0])
    out = nm.softmax_rows(Tensor([1.0, 5.0, 1.0]), mask).data
    assert out.tolist() == [0.5, 0.0, 0.5]


def test_softmax_vs_fsum_oracle():
    got = nm.softmax_rows(Tensor([1.0, 2.0, 3.0])).data
    np.testing.assert_allclose(got, naive_softmax([1.0, 2.0, 3.0]), rtol=1e-14)


def test_softmax_fully_masked_row_raises():
    with pytest.raises(ValueError, match="fully masked"):
        nm.softmax_rows(Tensor([[0.0, 1.0], [-math.inf, -math.inf]]))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=8), elements=finite))
def test_softmax_rows_sum_to_one(x):
    y = nm.softmax_rows(Tensor(x)).data
    assert np.all(np.abs(y.sum(axis=-1) - 1) < 1e-12)
    assert np.all((y >= 0) & (y <= 1))


def test_softmax_gradient():
    rng = np.random.default_rng(3)
    x = nm.parameter(rng.normal(size=(3, 5)))
    c = rng.normal(size=(3, 5))
    mask = np.where(rng.random((3, 5)) < 0.3, -np.inf, 0.0)
    mask[:, 0] = 0.0
    grad_check(lambda: nm.sum_(nm.softmax_rows(x, mask) * c), {"x": x}, rng)


def _ln(x, g, b):
    return nm.layernorm(Tensor(x), Tensor(g), Tensor(b)).data


def test_layernorm_constant_token_is_zero():
    assert np.array_equal(_ln(np.full((1, 6), 4.0), np.ones(6), np.zeros(6)), np.zeros((1, 6)))
    # 3.7 is not exactly representable, so the mean carries one rounding step
    assert np.max(np.abs(_ln(np.full((1, 6), 3.7), np.ones(6), np.zeros(6)))) < 1e-12


def test_layernorm_zero_gamma_gives_beta():
    beta = np.arange(4.0)
    out = _ln(np.random.default_rng(0).normal(size=(3, 4)), np.zeros(4), beta)
    assert np.array_equal(out, np.broadcast_to(beta, (3, 4)))


def test_layernorm_normalises():
    x = np.random.default_rng(4).normal(3.0, 5.0, size=(7, 32))
    y = _ln(x, np.ones(32), np.zeros(32))
    assert np.max(np.abs(y.mean(axis=-1))) < 1e-10
    # variance is 1 up to the eps term
    var = y.var(axis=-1)
    expected = x.var(axis=-1) / (x.var(axis=-1) + nm.LN_EPS)
    assert np.max(np.abs(var - expected)) < 1e-10


def test_layernorm_gradient():
    rng = np.random.default_rng(5)
    x = nm.parameter(rng.normal(size=(2, 3, 6)))
    g = nm.parameter(rng.normal(size=6))
    b = nm.parameter(rng.normal(size=6))
    c = rng.normal(size=(2, 3, 6))
    grad_check(lambda: nm.sum_(nm.layernorm(x, g, b) * c), {"x": x, "g": g, "b": b}, rng)


def test_gelu_zero():
    assert nm.gelu(Tensor(0.0)).data == 0.0


def test_gelu_gradient_at_half():
    x = nm.parameter(0.5)
    nm.gelu(x).backward()
    h = 1e-5
    with nm.no_grad():
        fd = (nm.gelu(Tensor(0.5 + h)).item() - nm.gelu(Tensor(0.5 - h)).item()) / (2 * h)
    assert abs(x.grad - fd) / abs(fd) < 1e-6


def test_concat_slice_round_trip_bitwise():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    cat = nm.concat([Tensor(a), Tensor(b)], axis=0)
    assert np.array_equal(nm.slice_(cat, 0, 0, 3).data, a)
    assert np.array_equal(nm.slice_(cat, 0, 3, 8).data, b)


def test_axis_bounds():
    with pytest.raises(IndexError):
        nm.slice_(Tensor(np.zeros((2, 2))), 2, 0, 1)
    with pytest.raises(IndexError):
        nm.slice_(Tensor(np.zeros((2, 2))), 0, 1, 3)
    with pytest.raises(IndexError):
        nm.concat([Tensor(np.zeros((2, 2)))], axis=-3)


def test_broadcast_only_leading_dims():
    nm.add(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros(4)))
    with pytest.raises(nm.ShapeError):
        nm.add(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 1))))


def test_backward_sum_gives_ones():
    w = nm.parameter(np.random.default_rng(0).normal(size=(3, 4)))
    nm.sum_(w).backward()
    assert np.array_equal(w.grad, np.ones((3, 4)))


def test_backward_half_square_gives_w():
    w = nm.parameter(np.random.default_rng(1).normal(size=(5,)))
    (nm.sum_(w * w) * 0.5).backward()
    np.testing.assert_allclose(w.grad, w.data, rtol=0, atol=0)


def test_backward_requires_scalar():
    w = nm.parameter(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        (w * 2.0).backward()


def test_backward_visits_shared_nodes_once():
    w = nm.parameter(np.array([2.0]))
    y = w * w
    z = nm.sum_(y + y + y)
    order = nm.topological_order(z)
    assert len(order) == len({id(n) for n in order})
    z.backward()
    np.testing.assert_allclose(w.grad, [12.0])


def test_composed_graph_gradient():
    rng = np.random.default_rng(7)
    t = {k: nm.parameter(rng.normal(size=s)) for k, s in
         {"x": (2, 4, 6), "w": (6, 6), "g": (6,), "b": (6,)}.items()}

    def f():
        h = nm.gelu(nm.matmul(nm.layernorm(t["x"], t["g"], t["b"]), t["w"]))
        p = nm.softmax_rows(h)
        parts = nm.concat([nm.slice_(p, 1, 0, 2), nm.slice_(h, 1, 2, 4)], axis=1)
        r = nm.reshape(nm.transpose(parts, (0, 2, 1)), (2, 24))
        return nm.mean(nm.abs_(r - 0.1)) + nm.sum_(nm.maximum(r, nm.minimum(r * 0.5, 0.2)))

    grad_check(f, t, rng, n=60)


def test_deterministic_forward():
    def run():
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(4, 16)))
        w = Tensor(rng.normal(size=(16, 16)))
        return nm.softmax_rows(nm.gelu(x @ w)).data

    assert np.array_equal(run(), run())


def test_no_grad_builds_no_graph():
    w = nm.parameter(np.ones(3))
    with nm.no_grad():
        y = w * 2.0
    assert not y.requires_grad and y.parents == ()
