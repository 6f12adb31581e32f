import numpy as np
import pytest

from h2gnn import autodiff as ad
from h2gnn import lorentz as L
from h2gnn.autodiff import Adam, ParamStore, Tape


def grad_of(fn, **params):
    store = ParamStore(params)
    tape = Tape()
    out = fn(tape, *(tape.param(store, k) for k in params))
    ad.backward(out, store)
    return out.value, {k: store.grad[k] for k in params}


def central(fn, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (fn(xp) - fn(xm)) / (2 * eps)
    return g


class TestRecord:
    def test_mul_value(self):
        t = Tape()
        assert t.record("mul", [t.const(2.0), t.const(3.0)]).value == 6.0

    def test_sigmoid_zero(self):
        t = Tape()
        assert ad.sigmoid(t.const(0.0)).value == 0.5

    def test_acosh_clamp(self):
        t = Tape()
        out = ad.acosh(t.const(1.0 + 1e-15))
        assert np.isfinite(out.value)
        assert out.value == pytest.approx(np.arccosh(1.0 + 1e-12), abs=1e-18)

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(ValueError):
            t.record("add", [t.const(np.ones(3)), t.const(np.ones(4))])

    def test_unknown_primitive(self):
        t = Tape()
        with pytest.raises(ValueError):
            t.record("nope", [t.const(1.0)])

    def test_foreign_tape(self):
        a, b = Tape(), Tape()
        with pytest.raises(ValueError):
            a.record("neg", [b.const(1.0)])

    def test_ids_increase(self):
        t = Tape()
        x = t.const(1.0)
        y = ad.exp(x)
        z = y * x
        assert x.id < y.id < z.id
        assert all(i < nid for nid, n in enumerate(t.nodes) for i in n.inputs)


class TestBackward:
    def test_product_rule(self):
        _, g = grad_of(lambda t, x, y: x * y, x=2.0, y=3.0)
        assert g["x"] == 3.0 and g["y"] == 2.0

    def test_sigmoid_slope(self):
        _, g = grad_of(lambda t, x: ad.sigmoid(x), x=0.0)
        assert g["x"] == 0.25

    def test_non_scalar_rejected(self):
        store = ParamStore({"x": np.ones(3)})
        t = Tape()
        with pytest.raises(ValueError):
            ad.backward(t.param(store, "x") * 2.0, store)

    def test_accumulates(self):
        store = ParamStore({"x": 2.0})
        for _ in range(2):
            t = Tape()
            x = t.param(store, "x")
            ad.backward(x * x, store)
        assert store.grad["x"] == 8.0

    def test_reused_node(self):
        _, g = grad_of(lambda t, x: x * x * x, x=2.0)
        assert g["x"] == pytest.approx(12.0)


UNARY = {
    "sigmoid": (ad.sigmoid, lambda x: 1 / (1 + np.exp(-x)), (-3, 3)),
    "cosh": (ad.cosh, np.cosh, (-2, 2)),
    "sinh": (ad.sinh, np.sinh, (-2, 2)),
    "acosh": (ad.acosh, np.arccosh, (1.2, 4)),
    "sqrt": (ad.sqrt, np.sqrt, (0.3, 4)),
    "reciprocal": (ad.reciprocal, lambda x: 1 / x, (0.5, 3)),
    "log": (ad.log, np.log, (0.3, 4)),
    "exp": (ad.exp, np.exp, (-2, 2)),
    "relu": (ad.relu, lambda x: np.maximum(x, 0), (-2, 2)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name, rng):
    op, ref, (lo, hi) = UNARY[name]
    x = rng.uniform(lo, hi, size=7)
    if name == "relu":
        x = x[np.abs(x) > 1e-3]
    w = rng.normal(size=x.shape)
    _, g = grad_of(lambda t, p: ad.sum(op(p) * t.const(w)), p=x)
    num = central(lambda z: np.sum(ref(z) * w), x)
    np.testing.assert_allclose(g["p"], num, rtol=1e-6, atol=1e-9)


def _binary_cases(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    row = rng.normal(size=(4,))
    m = rng.normal(size=(4, 2))
    return [
        ("add-broadcast", lambda t, x, y: ad.sum(ad.exp((x + y) * 0.3)), a, row),
        ("sub", lambda t, x, y: ad.sum((x - y) * (x - y)), a, b),
        ("mul-broadcast", lambda t, x, y: ad.sum(x * y * x), a, row),
        ("matmul", lambda t, x, y: ad.sum(ad.exp(ad.matmul(x, y) * 0.1)), a, m),
        ("div", lambda t, x, y: ad.sum(x / (y * y + 1.0)), a, b),
    ]


def test_binary_primitive_gradients(rng):
    for label, fn, a, b in _binary_cases(rng):
        _, g = grad_of(fn, x=a, y=b)

        def val_x(z, fn=fn, b=b):
            t = Tape()
            return float(fn(t, t.const(z), t.const(b)).value)

        def val_y(z, fn=fn, a=a):
            t = Tape()
            return float(fn(t, t.const(a), t.const(z)).value)

        np.testing.assert_allclose(g["x"], central(val_x, a), rtol=1e-6, atol=1e-8, err_msg=label)
        np.testing.assert_allclose(g["y"], central(val_y, b), rtol=1e-6, atol=1e-8, err_msg=label)


def test_structural_primitive_gradients(rng):
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(4, 3))
    ids = np.array([0, 2, 2, 1, 0])

    def fn(t, p):
        seg = ad.segment_sum(p, ids, 3)
        cat = ad.concat([seg, p[1:2]], axis=0)
        flat = ad.reshape(cat.T, (12,))
        return ad.sum(flat * t.const(w.T.reshape(12))) + ad.dot(p[0], p[3]) + ad.sum(ad.max(p, axis=1))

    _, g = grad_of(fn, p=x)

    def val(z):
        t = Tape()
        return float(fn(t, t.const(z)).value)

    np.testing.assert_allclose(g["p"], central(val, x), rtol=1e-6, atol=1e-8)


def test_logsumexp_stable_and_differentiable(rng):
    x = np.array([[1000.0, 0.0, -5.0], [1.0, 2.0, 3.0]])
    t = Tape()
    out = ad.logsumexp(t.const(x), axis=1)
    np.testing.assert_allclose(out.value, [1000.0, np.log(np.exp(1) + np.exp(2) + np.exp(3))], rtol=1e-12)
    y = rng.normal(size=(2, 4))
    _, g = grad_of(lambda t, p: ad.sum(ad.logsumexp(p, axis=1)), p=y)
    soft = np.exp(y) / np.exp(y).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(g["p"], soft, rtol=1e-12)


def test_backward_linearity(rng):
    x = rng.normal(size=6)
    f1 = lambda t, p: ad.sum(ad.sinh(p) * p)  # noqa: E731
    f2 = lambda t, p: ad.sum(ad.sigmoid(p * 2.0))  # noqa: E731
    _, g1 = grad_of(f1, p=x)
    _, g2 = grad_of(f2, p=x)
    _, g = grad_of(lambda t, p: f1(t, p) * 3.0 - f2(t, p) * 0.5, p=x)
    np.testing.assert_allclose(g["p"], 3.0 * g1["p"] - 0.5 * g2["p"], atol=1e-10)


def test_replay_determinism(rng):
    x = rng.normal(size=(4, 3))
    fn = lambda t, p: ad.sum(ad.cosh(ad.matmul(p, p.T)))  # noqa: E731
    v1, g1 = grad_of(fn, p=x)
    v2, g2 = grad_of(fn, p=x)
    assert v1.tobytes() == v2.tobytes()
    assert g1["p"].tobytes() == g2["p"].tobytes()


class TestFiniteDiffCheck:
    def test_quadratic(self, rng):
        store = ParamStore({"theta": rng.normal(size=5)})
        err = ad.finite_diff_check(lambda t, s: ad.sum(t.param(s, "theta") * t.param(s, "theta")), store)
        assert err < 1e-9

    def test_relu_kink_excluded(self):
        store = ParamStore({"theta": np.array([0.0, 1.0, -1.0])})
        err = ad.finite_diff_check(lambda t, s: ad.sum(ad.relu(t.param(s, "theta"))), store, eps=1e-5)
        assert err < 1e-9

    def test_detects_wrong_gradient(self):
        # a clamp at a strictly interior point is excluded; a true mismatch is caught
        store = ParamStore({"theta": np.array([0.7])})

        def bad(t, s):
            p = t.param(s, "theta")
            # stop-gradient style trick: the const branch hides a dependence from backward
            return ad.sum(p * t.const(s["theta"].copy()))

        assert ad.finite_diff_check(bad, store) > 0.1

    def test_eps_range(self):
        store = ParamStore({"theta": np.zeros(1)})
        for eps in (1e-8, 1e-2):
            with pytest.raises(ValueError):
                ad.finite_diff_check(lambda t, s: ad.sum(t.param(s, "theta")), store, eps=eps)

    def test_composed_geometry_chain(self, rng):
        from h2gnn import layers

        store = ParamStore({"u": rng.normal(scale=0.5, size=(4, 3)), "q": rng.normal(size=(1, 3))})

        def loss(t, s):
            pts = layers.lift(t.param(s, "u"))
            c = layers.centroid_stack([pts[0:1], pts[1:2], pts[2:3], pts[3:4]])
            q = layers.lift(t.param(s, "q"))
            return ad.sum(-2.0 - 2.0 * layers.minkowski_inner(c, q))

        assert ad.finite_diff_check(loss, store) < 1e-4


class TestAdam:
    def test_zero_gradient_fixed_point(self, rng):
        p = rng.normal(size=4)
        store = ParamStore({"w": p})
        Adam(0.1).step(store)
        np.testing.assert_array_equal(store["w"], p)

    def test_convex_bowl(self):
        store = ParamStore({"theta": np.array(0.0)})
        opt = Adam(0.05)
        for _ in range(500):
            t = Tape()
            d = t.param(store, "theta") - 3.0
            ad.backward(d * d, store)
            opt.step(store)
        assert abs(store["theta"] - 3.0) < 1e-2
        assert opt.step_count == 500

    def test_weight_decay_shrinks(self):
        store = ParamStore({"w": np.array([2.0, -1.5])})
        before = np.abs(store["w"]).copy()
        Adam(0.01, weight_decay=5e-5).step(store)
        assert np.all(np.abs(store["w"]) < before)

    def test_step_zeroes_gradients(self):
        store = ParamStore({"w": np.ones(2)})
        store.grad["w"][:] = 1.0
        Adam(0.01).step(store)
        np.testing.assert_array_equal(store.grad["w"], 0.0)

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            Adam(0.0)
        with pytest.raises(ValueError):
            Adam(0.01, weight_decay=-1.0)


def test_tape_lift_matches_reference(rng):
    from h2gnn import layers

    u = rng.normal(size=(5, 4))
    t = Tape()
    np.testing.assert_allclose(layers.lift(t.const(u)).value, L.lift_from_euclidean(u), atol=1e-12)
    np.testing.assert_allclose(layers.to_tangent(layers.lift(t.const(u))).value, u, atol=1e-9)


def test_param_store_roundtrip(rng):
    store = ParamStore({"a": rng.normal(size=(2, 3)), "b": 1.5})
    state = store.state_dict()
    store["a"][:] = 0.0
    store.load_state_dict(state)
    np.testing.assert_array_equal(store["a"], state["a"])
    assert store.size() == 7
