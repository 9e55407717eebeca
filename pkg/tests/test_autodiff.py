import numpy as np
import pytest

from oodrec import autodiff as ad
from oodrec.numerics import grad_check


def check_op(build, x0, tol=1e-6):
    """Gradient-check a scalar expression built from a single input array."""

    def f(x):
        return ad.as_var(x) if False else build(ad.Var(x, requires_grad=True)).item()

    def g(x):
        v = ad.Var(x, requires_grad=True)
        out = build(v)
        out.backward()
        return v.grad

    rep = grad_check(f, g, x0)
    assert rep.max_rel_error < tol, rep


class TestElementwise:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 4))
        b = rng.normal(size=(4,))
        check_op(lambda v: ad.vsum(ad.mul(ad.add(v, b), v)), x)

    def test_nonlinearities(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 5))
        check_op(lambda v: ad.vsum(ad.relu(v)), x, tol=1e-5)
        check_op(lambda v: ad.vsum(ad.tanh(v)), x)
        check_op(lambda v: ad.vsum(ad.sigmoid(v)), x)
        check_op(lambda v: ad.vsum(ad.vexp(v)), x)
        check_op(lambda v: ad.vsum(ad.vlog(ad.add(ad.mul(v, v), 1.0))), x)

    def test_abs_and_sqrt(self):
        x = np.array([[1.5, -2.0], [0.3, -0.7]])
        check_op(lambda v: ad.vsum(ad.vabs(v)), x)
        check_op(lambda v: ad.vsum(ad.vsqrt(ad.add(ad.mul(v, v), 0.5))), x)

    def test_clip_gradient_mask(self):
        v = ad.Var(np.array([0.5, 2.0, -1.0]), requires_grad=True)
        out = ad.vsum(ad.clip(v, 0.0, 1.0))
        out.backward()
        assert np.array_equal(v.grad, np.array([1.0, 0.0, 0.0]))


class TestLinalg:
    def test_matmul_chain(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 2))
        check_op(lambda v: ad.vsum(ad.matmul(v, w)), x)
        check_op(lambda v: ad.vsum(ad.matmul(ad.matmul(v, w), ad.transpose(ad.matmul(v, w)))), x)

    def test_take_with_repeated_rows(self):
        v = ad.Var(np.arange(12, dtype=float).reshape(4, 3), requires_grad=True)
        idx = np.array([0, 2, 0, 0])
        out = ad.vsum(ad.take(v, idx))
        out.backward()
        expect = np.zeros((4, 3))
        expect[0] = 3.0
        expect[2] = 1.0
        assert np.array_equal(v.grad, expect)

    def test_concat_roundtrip(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 5))
        check_op(
            lambda v: ad.vsum(ad.mul(ad.concat([v, ad.mul(v, 2.0)], axis=1), 0.3)), x
        )

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(6, 4))
        s = ad.softmax(ad.Var(x * 5), axis=1)
        assert np.allclose(s.value.sum(axis=1), 1.0, atol=1e-12)
        check_op(
            lambda v: ad.vsum(ad.mul(ad.softmax(v, axis=1), np.arange(4.0))),
            x,
            tol=1e-5,
        )


class TestSpecialOps:
    def test_expm_trace_gradient(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-0.4, 0.4, size=(4, 4))
        check_op(lambda v: ad.expm_trace(v), x, tol=1e-5)

    def test_acyclicity_composite_gradient(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-0.5, 0.5, size=(4, 4))
        check_op(lambda v: ad.add(ad.expm_trace(ad.mul(v, v)), -4.0), x, tol=1e-4)

    def test_grad_reverse_forward_identity(self):
        x = np.random.default_rng(7).normal(size=(3, 3))
        v = ad.Var(x, requires_grad=True)
        out = ad.grad_reverse(v, lam=1.0)
        assert np.array_equal(out.value, x)

    def test_grad_reverse_backward_scaling(self):
        for lam in (1.0, 0.5, 2.0):
            v = ad.Var(np.ones((2, 2)), requires_grad=True)
            out = ad.vsum(ad.mul(ad.grad_reverse(v, lam=lam), 3.0))
            out.backward()
            assert np.array_equal(v.grad, -lam * 3.0 * np.ones((2, 2)))

    def test_double_reverse_restores_sign(self):
        v = ad.Var(np.ones(4), requires_grad=True)
        out = ad.vsum(ad.grad_reverse(ad.grad_reverse(v, 1.0), 1.0))
        out.backward()
        assert np.array_equal(v.grad, np.ones(4))


class TestGraphMechanics:
    def test_shared_subexpression_accumulates(self):
        v = ad.Var(np.array([2.0]), requires_grad=True)
        y = ad.mul(v, v)  # reused node
        out = ad.vsum(ad.add(y, y))
        out.backward()
        assert v.grad == pytest.approx(np.array([8.0]))

    def test_no_grad_leaf_untracked(self):
        a = ad.Var(np.ones(3))
        b = ad.Var(np.ones(3), requires_grad=True)
        out = ad.vsum(ad.mul(a, b))
        out.backward()
        assert a.grad is None
        assert np.array_equal(b.grad, np.ones(3))

    def test_operators(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 3))
        check_op(lambda v: ad.vsum((v + 1.0) * v - v / 2.0), x)


class TestParamsAndAdam:
    def test_l2_norm_is_global(self):
        ps = ad.ParamSet()
        ps.add("a", np.array([3.0]))
        ps.add("b", np.array([4.0]))
        assert ps.l2_norm().item() == pytest.approx(5.0)

    def test_adam_minimizes_quadratic(self):
        ps = ad.ParamSet()
        w = ps.add("w", np.array([5.0, -3.0]))
        opt = ad.Adam(ps, lr=0.1)
        for _ in range(400):
            ps.zero_grad()
            loss = ad.vsum(ad.mul(w, w))
            loss.backward()
            opt.step()
        assert np.all(np.abs(w.value) < 1e-3)

    def test_state_roundtrip(self):
        ps = ad.ParamSet()
        ps.add("w", np.arange(4.0))
        st = ps.state()
        ps["w"].value += 1.0
        ps.load_state(st)
        assert np.array_equal(ps["w"].value, np.arange(4.0))
