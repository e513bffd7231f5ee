import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import special

from vaeac import autodiff as ad
from vaeac.autodiff import AdamState, Tensor


def central_diff(f, x, eps=1e-6):
    """Test-local finite-difference oracle (independent of ad.numerical_grad)."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += eps
        down[i] -= eps
        g[i] = (f(up) - f(down)) / (2 * eps)
    return g


def grad_of(fn, x):
    t = Tensor(x, requires_grad=True)
    out = fn(t)
    return ad.grad(out, [t])[0]


# --- forward examples -----------------------------------------------------------

def test_relu_forward():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])


def test_matmul_identity():
    out = ad.matmul(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, [[1.0, 0.0]])


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(Tensor(np.zeros(4))).data, [0.25] * 4)


def test_matmul_shape_error_names_operands():
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_add_broadcast_error():
    with pytest.raises(ad.ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


@pytest.mark.parametrize("fn, ref", [
    (ad.softplus, lambda x: np.logaddexp(0, x)),
    (ad.sigmoid, special.expit),
    (ad.exp, np.exp),
    (ad.square, np.square),
    (lambda t: ad.log_softmax(t, axis=-1), lambda x: special.log_softmax(x, axis=-1)),
    (lambda t: ad.softmax(t, axis=-1), lambda x: special.softmax(x, axis=-1)),
])
def test_forward_matches_scipy(fn, ref):
    x = np.random.default_rng(0).normal(size=(3, 5)) * 4
    np.testing.assert_allclose(fn(Tensor(x)).data, ref(x), rtol=1e-12, atol=1e-12)


def test_softplus_is_stable_for_large_inputs():
    out = ad.softplus(Tensor([-800.0, 800.0])).data
    np.testing.assert_allclose(out, [0.0, 800.0])


# --- backward examples -----------------------------------------------------------

def test_square_derivative():
    assert grad_of(ad.square, np.array(3.0)) == pytest.approx(6.0)


def test_unused_leaf_gets_zero_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    gx, gu = ad.grad(ad.sum_(ad.square(x)), [x, unused])
    np.testing.assert_allclose(gx, [2.0, 4.0])
    np.testing.assert_array_equal(gu, np.zeros((2, 2)))


def test_non_scalar_seed_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.square(x))


def test_backward_accumulates_into_leaf_grad():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    y = ad.sum_(x * x + x)
    ad.backward(y)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_graph_not_recorded_without_grad():
    out = ad.relu(Tensor(np.ones(3)) * 2.0)
    assert out._parents == ()


def test_shared_subexpression_gradient():
    # y = sum(h * h) with h = 3x used twice: dy/dx = 18 x
    x = Tensor(np.array([0.5, -1.0]), requires_grad=True)
    h = x * 3.0
    g = ad.grad(ad.sum_(h * h), [x])[0]
    np.testing.assert_allclose(g, 18 * x.data)


@pytest.mark.parametrize("name, fn", [
    ("relu", ad.relu),
    ("softplus", ad.softplus),
    ("sigmoid", ad.sigmoid),
    ("exp", ad.exp),
    ("log", lambda t: ad.log(ad.add(ad.square(t), 1.0))),
    ("reciprocal", lambda t: ad.reciprocal(ad.add(ad.square(t), 0.5))),
    ("log_softmax", lambda t: ad.log_softmax(t, axis=1)),
    ("softmax", lambda t: ad.softmax(t, axis=0)),
    ("sum_axis", lambda t: ad.sum_(t, axis=0)),
    ("mean", lambda t: ad.mean(t, axis=1)),
    ("slice", lambda t: ad.slice_(t, (slice(None), slice(1, 3)))),
    ("fancy_slice", lambda t: ad.slice_(t, (np.array([0, 0, 2]), np.array([1, 1, 3])))),
    ("take_columns", lambda t: ad.take_columns(t, np.array([3, 0, 3]))),
    ("reshape", lambda t: ad.reshape(t, (4, 3))),
    ("broadcast", lambda t: ad.broadcast_to(ad.sum_(t, axis=0), (2, 4))),
    ("concat", lambda t: ad.concat([t, ad.square(t)], axis=1)),
    ("maximum", lambda t: ad.maximum(t, 0.1)),
    ("clip", lambda t: ad.clip(t, -0.5, 0.5)),
    ("div", lambda t: t / ad.add(ad.square(t), 1.0)),
])
def test_op_gradients_match_finite_differences(name, fn):
    # weights make the scalar loss sensitive to every output element
    x = np.random.default_rng(1).normal(size=(3, 4))
    x[np.abs(x) < 0.05] = 0.3  # keep away from relu / clip kinks
    x[np.abs(np.abs(x) - 0.5) < 0.05] = 0.3
    x[np.abs(x - 0.1) < 0.05] = 0.3
    w_shape = fn(Tensor(x)).shape
    w = np.random.default_rng(2).normal(size=w_shape)

    def loss_np(v):
        return float(np.sum(fn(Tensor(v)).data * w))

    analytic = grad_of(lambda t: ad.sum_(fn(t) * w), x)
    numeric = central_diff(loss_np, x)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7, err_msg=name)


def test_two_layer_net_gradient_within_1e4():
    # [DERIVED] random 2-layer net vs central differences with step 1e-5
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 4))
    params = [rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=(6, 3)), rng.normal(size=3)]

    def forward(ps):
        h = ad.relu(ad.add(ad.matmul(x, ps[0]), ps[1]))
        out = ad.add(ad.matmul(h, ps[2]), ps[3])
        return ad.mean(ad.sum_(ad.log_softmax(out, axis=1) * np.eye(3)[[0, 1, 2, 0, 1]], axis=1))

    leaves = [Tensor(p, requires_grad=True) for p in params]
    analytic = ad.grad(forward(leaves), leaves)
    numeric = ad.numerical_grad(lambda: forward(params).item(), params, eps=1e-5)
    assert ad.max_relative_error(analytic, numeric) < 1e-4


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)),
       arrays(np.float64, (3,), elements=st.floats(-3, 3)))
def test_broadcast_add_mul_gradients(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ga, gb = ad.grad(ad.sum_(ad.mul(ad.add(ta, tb), tb)), [ta, tb])
    np.testing.assert_allclose(ga, np.broadcast_to(b, a.shape))
    np.testing.assert_allclose(gb, (a + 2 * b).sum(axis=0), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4,), elements=st.floats(-50, 50)))
def test_log_softmax_normalizes(x):
    out = ad.log_softmax(Tensor(x)).data
    assert np.isfinite(out).all()
    assert special.logsumexp(out) == pytest.approx(0.0, abs=1e-12)


# --- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    p = np.array([1.0, -2.0])
    state = AdamState()
    ad.adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_moves_by_lr_times_sign():
    # bias correction makes the first step exactly lr * g / (|g| + eps')
    p = np.array([0.0, 0.0, 0.0])
    g = np.array([0.5, -2.0, 1e-3])
    ad.adam_step([p], [g], AdamState(lr=0.1))
    expected = -0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p, expected, rtol=1e-6)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(4)
    p = rng.normal(size=3)
    ref = p.copy()
    m = v = np.zeros(3)
    state = AdamState(lr=0.01, beta1=0.8, beta2=0.95, eps=1e-6)
    for t in range(1, 6):
        g = rng.normal(size=3)
        ad.adam_step([p], [g], state)
        m = 0.8 * m + 0.2 * g
        v = 0.95 * v + 0.05 * g * g
        ref = ref - 0.01 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.95**t)) + 1e-6)
    np.testing.assert_allclose(p, ref, rtol=1e-12)
    assert state.t == 5


def test_adam_rejects_non_finite_gradient():
    p = np.zeros(2)
    with pytest.raises(ad.NonFiniteError):
        ad.adam_step([p], [np.array([np.nan, 0.0])], AdamState())


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


def test_adam_minimizes_quadratic():
    p = np.array([5.0, -3.0])
    state = AdamState(lr=0.1)
    for _ in range(500):
        ad.adam_step([p], [2 * p], state)
    np.testing.assert_allclose(p, 0.0, atol=1e-2)
