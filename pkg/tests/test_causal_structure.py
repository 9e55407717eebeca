import numpy as np
import pytest

from oodrec import autodiff as ad
from oodrec.causal_structure import (
    LOG_EPS,
    AdjacencyDag,
    CausalLossWeights,
    DagLevel,
    dual_causal_loss,
    fit_dag,
    fuse_attention,
    infer_invariant,
    init_fusion,
    level_causal_loss,
    reconstruction_loss,
    structural_hamming_distance,
    structural_losses,
)
from oodrec.numerics import acyclicity, grad_check
from oodrec.synth import make_linear_scm

TWO_COSH_1_MINUS_2 = 1.0861612696304874


def reconstruction_oracle(batch, a):
    """Naive double loop over samples and coordinates."""
    n, d = batch.shape
    total = 0.0
    for s in range(n):
        recon = np.zeros(d)
        for j in range(d):
            for i in range(d):
                recon[j] += a[i, j] * batch[s, i]
        total += ((batch[s] - recon) ** 2).sum()
    return total / n


class TestReconstruction:
    def test_zero_adjacency(self):
        rng = np.random.default_rng(0)
        b = rng.normal(size=(5, 6))
        got = reconstruction_loss(ad.Var(b), ad.Var(np.zeros((6, 6)))).item()
        assert got == pytest.approx((b**2).sum(axis=1).mean(), rel=1e-12)

    def test_identity_reconstructs_exactly(self):
        rng = np.random.default_rng(1)
        b = rng.normal(size=(4, 6))
        got = reconstruction_loss(ad.Var(b), ad.Var(np.eye(6))).item()
        assert got == pytest.approx(0.0, abs=1e-18)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        b = rng.normal(size=(2, 8))
        a = rng.normal(size=(8, 8))
        got = reconstruction_loss(ad.Var(b), ad.Var(a)).item()
        assert got == pytest.approx(reconstruction_oracle(b, a), rel=1e-12)


class TestStructuralLosses:
    def test_values_at_zero(self):
        k = 3
        a = ad.Var(np.zeros((2 * k, 2 * k)))
        l_dag, l_path, l_root, l_l1 = structural_losses(a, k)
        assert l_dag.item() == pytest.approx(0.0, abs=1e-12)
        assert l_path.item() == 0.0
        assert l_l1.item() == 0.0
        assert l_root.item() == pytest.approx(k * -np.log(LOG_EPS), rel=1e-12)

    def test_unit_preference_columns(self):
        k = 2
        a = np.zeros((4, 4))
        a[0, 2] = 1.0  # attr0 -> pref0
        a[1, 3] = -1.0  # attr1 -> pref1 (L1 norm still 1)
        _, _, l_root, _ = structural_losses(ad.Var(a), k)
        assert l_root.item() == pytest.approx(0.0, abs=1e-7)

    def test_single_forbidden_path_entry(self):
        k = 2
        a = np.zeros((4, 4))
        a[3, 1] = 0.7  # pref -> attr
        _, l_path, _, _ = structural_losses(ad.Var(a), k)
        assert l_path.item() == pytest.approx(0.7, rel=1e-15)


class TestLevelLoss:
    def test_collapses_to_reconstruction(self):
        rng = np.random.default_rng(3)
        b = rng.normal(size=(3, 6))
        a = rng.normal(size=(6, 6)) * 0.3
        w = CausalLossWeights(0.0, 0.0, 0.0, 0.0)
        got = level_causal_loss(ad.Var(b), ad.Var(a), 3, w).item()
        assert got == pytest.approx(reconstruction_loss(ad.Var(b), ad.Var(a)).item(), rel=1e-15)

    def test_two_cycle_acyclicity_only(self):
        k = 1
        a = np.array([[0.0, 1.0], [-1.0, 0.0]])
        b = np.zeros((2, 2))
        w = CausalLossWeights(1.0, 0.0, 0.0, 0.0)
        got = level_causal_loss(ad.Var(b), ad.Var(a), k, w).item()
        assert got == pytest.approx(TWO_COSH_1_MINUS_2, rel=1e-12)

    def test_dual_is_sum_and_doubles_on_identical(self):
        rng = np.random.default_rng(4)
        k = 3
        b1 = rng.normal(size=(4, 2 * k))
        a1 = rng.normal(size=(2 * k, 2 * k)) * 0.2
        b2 = rng.normal(size=(5, 2 * k))
        a2 = rng.normal(size=(2 * k, 2 * k)) * 0.2
        w = CausalLossWeights()
        dual = dual_causal_loss(ad.Var(b1), ad.Var(a1), ad.Var(b2), ad.Var(a2), k, w).item()
        lone = (level_causal_loss(ad.Var(b1), ad.Var(a1), k, w).item()
                + level_causal_loss(ad.Var(b2), ad.Var(a2), k, w).item())
        assert dual == pytest.approx(lone, rel=1e-15)
        same = dual_causal_loss(ad.Var(b1), ad.Var(a1), ad.Var(b1), ad.Var(a1), k, w).item()
        assert same == pytest.approx(2 * level_causal_loss(ad.Var(b1), ad.Var(a1), k, w).item(),
                                     rel=1e-15)

    def test_composite_gradcheck(self):
        rng = np.random.default_rng(5)
        k = 2
        b = rng.normal(size=(3, 2 * k))
        a0 = rng.uniform(-0.5, 0.5, size=(2 * k, 2 * k))
        w = CausalLossWeights(1.0, 1.0, 0.1, 0.01)

        def f(x):
            return level_causal_loss(ad.Var(b), ad.Var(x), k, w).item()

        def g(x):
            v = ad.Var(x, requires_grad=True)
            loss = level_causal_loss(ad.Var(b), v, k, w)
            loss.backward()
            return v.grad

        rep = grad_check(f, g, a0)
        assert rep.max_rel_error < 1e-4, rep

    def test_weights_validate(self):
        with pytest.raises(ValueError):
            CausalLossWeights(alpha1=-1.0)


class TestInferInvariant:
    def test_single_edge(self):
        k = 3
        a = np.zeros((6, 6))
        a[1, k + 2] = 0.8  # attr1 -> pref2
        e_att = np.random.default_rng(6).normal(size=(4, k))
        out = infer_invariant(a, ad.Var(e_att)).value
        assert np.allclose(out[:, 2], 0.8 * e_att[:, 1])
        assert np.allclose(out[:, :2], 0.0)

    def test_zero_dag(self):
        out = infer_invariant(np.zeros((6, 6)), ad.Var(np.ones((2, 3)))).value
        assert np.array_equal(out, np.zeros((2, 3)))

    def test_matches_block_product_oracle(self):
        rng = np.random.default_rng(7)
        k = 4
        a = rng.normal(size=(2 * k, 2 * k))
        e_att = rng.normal(size=(5, k))
        out = infer_invariant(a, ad.Var(e_att)).value
        oracle = np.zeros((5, k))
        for s in range(5):
            for j in range(k):
                for i in range(k):
                    oracle[s, j] += e_att[s, i] * a[i, k + j]
        assert np.allclose(out, oracle, atol=1e-12)

    def test_exact_linearity(self):
        rng = np.random.default_rng(8)
        k = 3
        a = rng.normal(size=(2 * k, 2 * k))
        x = rng.normal(size=(4, k))
        y = rng.normal(size=(4, k))
        lhs = infer_invariant(a, ad.Var(2.0 * x + 3.0 * y)).value
        rhs = 2.0 * infer_invariant(a, ad.Var(x)).value + 3.0 * infer_invariant(a, ad.Var(y)).value
        assert np.allclose(lhs, rhs, atol=1e-10)


class TestFusion:
    def make_ps(self, k=4, seed=0):
        ps = ad.ParamSet()
        init_fusion(ps, "fuse.test", k, seed)
        return ps

    def test_equal_inputs_pass_through(self):
        ps = self.make_ps()
        x = np.random.default_rng(9).normal(size=(5, 4))
        out = fuse_attention(ps, "fuse.test", ad.Var(x), ad.Var(x)).value
        assert np.allclose(out, x, atol=1e-12)

    def test_zero_scores_give_even_blend(self):
        ps = self.make_ps()  # q starts at zero
        rng = np.random.default_rng(10)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        out = fuse_attention(ps, "fuse.test", ad.Var(a), ad.Var(b)).value
        assert np.allclose(out, (a + b) / 2.0, atol=1e-12)

    def test_output_on_segment(self):
        ps = self.make_ps()
        ps["fuse.test.q"].value = np.random.default_rng(11).normal(size=4)
        rng = np.random.default_rng(12)
        a, b = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        out = fuse_attention(ps, "fuse.test", ad.Var(a), ad.Var(b)).value
        lo = np.minimum(a, b) - 1e-12
        hi = np.maximum(a, b) + 1e-12
        assert np.all(out >= lo) and np.all(out <= hi)

    def test_fusion_gradcheck(self):
        ps = self.make_ps(seed=13)
        ps["fuse.test.q"].value = np.random.default_rng(13).normal(size=4) * 0.5
        rng = np.random.default_rng(14)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        r = rng.normal(size=(3, 4))

        for name in ("fuse.test.w", "fuse.test.q"):
            def f(x, name=name):
                old = ps[name].value
                ps[name].value = x
                val = ad.vsum(ad.mul(fuse_attention(ps, "fuse.test", ad.Var(a), ad.Var(b)), r)).item()
                ps[name].value = old
                return val

            def g(x, name=name):
                old = ps[name].value
                ps[name].value = x
                ps.zero_grad()
                ad.vsum(ad.mul(fuse_attention(ps, "fuse.test", ad.Var(a), ad.Var(b)), r)).backward()
                grad = ps[name].grad.copy()
                ps[name].value = old
                return grad

            rep = grad_check(f, g, ps[name].value.copy())
            assert rep.max_rel_error < 1e-4, (name, rep)


class TestDagFit:
    def test_recovers_small_scm(self):
        scm = make_linear_scm(k=4, n_samples=2000, seed=0)
        res = fit_dag(scm.samples, k=4, epochs=300)
        assert res.h <= 1e-6
        assert structural_hamming_distance(res.dag.a, scm.a_true) <= 1

    def test_forbidden_block_suppressed(self):
        scm = make_linear_scm(k=4, n_samples=2000, seed=1)
        res = fit_dag(scm.samples, k=4, epochs=300)
        k = 4
        pref_to_attr = np.abs(res.dag.a[k:, :k]).sum()
        attr_to_pref = np.abs(res.dag.a[:k, k:]).sum()
        assert pref_to_attr < 0.01 * attr_to_pref

    def test_checkpoint_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(15)
        dag = AdjacencyDag(rng.normal(size=(8, 8)) * (1 - np.eye(8)), DagLevel.SHARED, 4)
        path = tmp_path / "dag.json"
        dag.save(path)
        back = AdjacencyDag.load(path)
        assert back.level == DagLevel.SHARED
        assert back.k == 4
        assert np.array_equal(back.a, dag.a)

    def test_shd_counts_reversals(self):
        a = np.zeros((3, 3))
        a[0, 1] = 1.0
        b = np.zeros((3, 3))
        b[1, 0] = 1.0
        assert structural_hamming_distance(a, b) == 1
        assert structural_hamming_distance(a, a) == 0
        assert structural_hamming_distance(a, np.zeros((3, 3))) == 1
