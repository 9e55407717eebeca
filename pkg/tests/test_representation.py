import numpy as np
import pytest

from oodrec import autodiff as ad
from oodrec.data import Event, InteractionCorpus, User
from oodrec.numerics import grad_check
from oodrec.representation import (
    HashingTextEncoder,
    Propagation,
    attribute_embeddings,
    build_propagation,
    disentangle,
    domain_losses,
    encode_documents,
    gcn_propagate,
    init_representation,
    initial_embeddings,
    item_documents,
    mlp2,
    user_documents,
)

K = 3


def make_params(m=4, seed=0):
    ps = ad.ParamSet()
    init_representation(ps, K, {"source": m, "target": m}, rng_seed=seed)
    return ps


def param_grad_check(ps, name, build_loss, tol=1e-4):
    """Finite-difference check of d(loss)/d(ps[name])."""

    def f(x):
        old = ps[name].value
        ps[name].value = x
        val = build_loss().item()
        ps[name].value = old
        return val

    def g(x):
        old = ps[name].value
        ps[name].value = x
        ps.zero_grad()
        build_loss().backward()
        grad = ps[name].grad
        ps[name].value = old
        return np.zeros_like(x) if grad is None else grad

    rep = grad_check(f, g, ps[name].value.copy())
    assert rep.max_rel_error < tol, (name, rep)


class TestTextEncoder:
    def test_shape_and_determinism(self):
        enc = HashingTextEncoder(seed=1)
        out1 = enc.encode(["great plot", "slow shipping", ""])
        out2 = HashingTextEncoder(seed=1).encode(["great plot", "slow shipping", ""])
        assert out1.shape == (3, 384)
        assert np.array_equal(out1, out2)

    def test_empty_text_is_zero_vector(self):
        enc = HashingTextEncoder()
        assert np.array_equal(enc.encode([""])[0], np.zeros(384))

    def test_token_order_irrelevant(self):
        enc = HashingTextEncoder()
        a = enc.encode(["fast shipping great"])[0]
        b = enc.encode(["great fast shipping"])[0]
        assert np.allclose(a, b)

    def test_documents(self):
        users = [User("u0"), User("u1")]
        items = ["i0", "i1"]
        events = [
            Event("u0", "i0", 5, "loved it"),
            Event("u1", "i0", 2, "boring"),
            Event("u0", "i1", 4, None),
        ]
        c = InteractionCorpus("books", users, items, events)
        assert user_documents(c) == ["loved it", "boring"]
        assert item_documents(c) == ["i0 loved it boring", "i1"]

    def test_encode_documents_validates_shape(self):
        class Bad:
            name = "bad"

            def encode(self, texts):
                return np.zeros((len(texts), 10))

        with pytest.raises(ValueError, match="shape"):
            encode_documents(Bad(), ["x"])

    def test_encoder_failure_names_document(self):
        class Flaky:
            name = "flaky"

            def encode(self, texts):
                if any("bomb" in t for t in texts):
                    raise RuntimeError("boom")
                return np.zeros((len(texts), 384))

        with pytest.raises(RuntimeError, match="document 1"):
            encode_documents(Flaky(), ["fine", "bomb", "fine"])


class TestAttributeEmbeddings:
    def test_one_hot_lookup(self):
        ps = make_params()
        w = ps["w_att.target"]
        e = attribute_embeddings(w, [2, 0, 2])
        assert np.array_equal(e.value[0], w.value[:, 2])
        assert np.array_equal(e.value[1], w.value[:, 0])

    def test_identity_padded_basis(self):
        w = ad.Var(np.eye(K, 4), requires_grad=True)
        e = attribute_embeddings(w, [0])
        assert np.array_equal(e.value[0], np.array([1.0, 0.0, 0.0]))

    def test_gradient_touches_only_batch_columns(self):
        ps = make_params()
        w = ps["w_att.target"]
        loss = ad.vsum(ad.mul(attribute_embeddings(w, [1, 3]), 2.0))
        loss.backward()
        assert np.allclose(w.grad[:, [0, 2]], 0.0)
        assert not np.allclose(w.grad[:, [1, 3]], 0.0)

    def test_out_of_range(self):
        ps = make_params()
        with pytest.raises(IndexError):
            attribute_embeddings(ps["w_att.target"], [99])


class TestInitialEmbeddings:
    def test_identical_documents_identical_rows(self):
        ps = make_params()
        rng = np.random.default_rng(0)
        ut = np.tile(rng.normal(size=(1, 384)), (3, 1))
        it = rng.normal(size=(2, 384))
        e_att = ad.Var(np.tile(rng.normal(size=(1, K)), (3, 1)))
        e_ui, e_vi = initial_embeddings(ps, "target", e_att, ut, it)
        assert np.allclose(e_ui.value[0], e_ui.value[1])
        assert np.all(np.isfinite(e_ui.value)) and np.all(np.isfinite(e_vi.value))

    def test_projection_gradcheck(self):
        ps = make_params(m=2, seed=3)
        rng = np.random.default_rng(1)
        ut = rng.normal(size=(2, 384))
        it = rng.normal(size=(2, 384))
        e_att = rng.normal(size=(2, K))
        r1 = rng.normal(size=(2, K))
        r2 = rng.normal(size=(2, K))

        def loss():
            e_ui, e_vi = initial_embeddings(ps, "target", ad.Var(e_att), ut, it)
            return ad.add(ad.vsum(ad.mul(e_ui, r1)), ad.vsum(ad.mul(e_vi, r2)))

        for name in ("user_proj.target.0.w", "user_proj.target.1.b", "item_proj.target.0.w"):
            param_grad_check(ps, name, loss)


class TestGcn:
    def test_no_edges_returns_input(self):
        prop = build_propagation([], {"u0": 0, "u1": 1}, {"i0": 0})
        rng = np.random.default_rng(2)
        e_u = ad.Var(rng.normal(size=(2, K)))
        e_v = ad.Var(rng.normal(size=(1, K)))
        out_u, out_v = gcn_propagate(e_u, e_v, prop, layers=2)
        assert np.allclose(out_u.value, e_u.value, atol=1e-12)
        assert np.allclose(out_v.value, e_v.value, atol=1e-12)

    def test_single_edge_hand_oracle(self):
        # one user, one item, one edge, one layer:
        # layer output swaps the normalized neighbor in, readout averages
        prop = build_propagation([("u0", "i0")], {"u0": 0}, {"i0": 0})
        e_u = ad.Var(np.array([[2.0, 0.0, 0.0]]))
        e_v = ad.Var(np.array([[0.0, 4.0, 0.0]]))
        out_u, out_v = gcn_propagate(e_u, e_v, prop, layers=1)
        assert np.allclose(out_u.value, (e_u.value + e_v.value) / 2.0)
        assert np.allclose(out_v.value, (e_v.value + e_u.value) / 2.0)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        users = {f"u{i}": i for i in range(4)}
        items = {f"i{j}": j for j in range(3)}
        pairs = [("u0", "i1"), ("u1", "i0"), ("u2", "i1"), ("u3", "i2")]
        e_u = rng.normal(size=(4, K))
        e_v = rng.normal(size=(3, K))
        out_u, _ = gcn_propagate(ad.Var(e_u), ad.Var(e_v),
                                 build_propagation(pairs, users, items))
        perm = [2, 0, 3, 1]  # new index of old user row
        users_p = {f"u{i}": perm[i] for i in range(4)}
        e_u_p = np.empty_like(e_u)
        for old, new in enumerate(perm):
            e_u_p[new] = e_u[old]
        out_u_p, _ = gcn_propagate(ad.Var(e_u_p), ad.Var(e_v),
                                   build_propagation(pairs, users_p, items))
        for old, new in enumerate(perm):
            assert np.allclose(out_u_p.value[new], out_u.value[old], atol=1e-12)

    def test_normalization(self):
        # u0 connects to i0 (degree 2) and i1 (degree 1)
        prop = build_propagation(
            [("u0", "i0"), ("u1", "i0"), ("u0", "i1")],
            {"u0": 0, "u1": 1}, {"i0": 0, "i1": 1},
        )
        assert prop.p_uv[0, 0] == pytest.approx(1.0 / np.sqrt(2 * 2))
        assert prop.p_uv[0, 1] == pytest.approx(1.0 / np.sqrt(2 * 1))


class TestDisentangle:
    def test_identical_inputs_share_output(self):
        ps = make_params()
        rng = np.random.default_rng(4)
        x = ad.Var(rng.normal(size=(5, K)))
        e_sha_s, e_sha_t, _, _ = disentangle(ps, x, x)
        assert np.array_equal(e_sha_s.value, e_sha_t.value)

    def test_zero_input_gives_bias_composition(self):
        ps = make_params()
        zero = ad.Var(np.zeros((2, K)))
        e_sha_s, _, e_spe_s, _ = disentangle(ps, zero, zero)
        b0 = ps["enc_sha.0.b"].value
        w1 = ps["enc_sha.1.w"].value
        b1 = ps["enc_sha.1.b"].value
        expect = np.maximum(b0, 0.0) @ w1 + b1
        assert np.allclose(e_sha_s.value, expect, atol=1e-12)
        assert e_spe_s.value.shape == (2, K)

    def test_encoder_gradcheck(self):
        ps = make_params(m=2, seed=5)
        rng = np.random.default_rng(5)
        xs = ad.Var(rng.normal(size=(3, K)))
        xt = ad.Var(rng.normal(size=(3, K)))
        r = rng.normal(size=(3, K))

        def loss():
            e_sha_s, e_sha_t, e_spe_s, e_spe_t = disentangle(ps, xs, xt)
            out = ad.vsum(ad.mul(e_sha_s, r))
            out = ad.add(out, ad.vsum(ad.mul(e_spe_t, r)))
            return out

        for name in ("enc_sha.0.w", "enc_sha.1.w", "enc_spe.target.0.w"):
            param_grad_check(ps, name, loss)


class TestDomainLosses:
    def test_maximally_confused_discriminator(self):
        ps = make_params()
        for name in ("disc.0.w", "disc.0.b", "disc.1.w", "disc.1.b"):
            ps[name].value = np.zeros_like(ps[name].value)  # sigmoid(0) = 0.5
        rng = np.random.default_rng(6)
        xs = [ad.Var(rng.normal(size=(4, K))) for _ in range(4)]
        dl = domain_losses(ps, *xs, gamma=0.5)
        for term in (dl.l_sha_s, dl.l_sha_t, dl.l_spe_s, dl.l_spe_t):
            assert term.item() == pytest.approx(np.log(2.0), abs=1e-12)
        assert dl.total.item() == pytest.approx(2.0 * np.log(2.0), abs=1e-12)

    def test_components_non_negative(self):
        ps = make_params()
        rng = np.random.default_rng(7)
        xs = [ad.Var(rng.normal(size=(6, K)) * 3) for _ in range(4)]
        dl = domain_losses(ps, *xs)
        for term in (dl.l_sha_s, dl.l_sha_t, dl.l_spe_s, dl.l_spe_t):
            assert term.item() >= 0.0

    def test_saturated_discriminator_clamps(self):
        ps = make_params()
        # source inputs (all negative) die at the ReLU, leaving the large
        # negative output bias; target inputs overwhelm it
        ps["disc.0.w"].value = np.ones((K, max(1, K // 2))) * 10.0
        ps["disc.1.w"].value = np.ones((max(1, K // 2), 1)) * 10.0
        ps["disc.1.b"].value = np.array([-500.0])
        big = ad.Var(np.ones((3, K)) * 10.0)
        neg = ad.Var(np.ones((3, K)) * -10.0)
        dl = domain_losses(ps, neg, big, neg, big)
        # perfect discriminator on the specific encoders: losses at clamp floor
        assert dl.l_spe_s.item() == pytest.approx(0.0, abs=1e-6)
        assert dl.l_spe_t.item() == pytest.approx(0.0, abs=1e-6)
        assert dl.n_clamped > 0

    def test_grl_flips_shared_encoder_gradient(self):
        for lam in (1.0, 0.5):
            ps = make_params(seed=8)
            rng = np.random.default_rng(8)
            raw = ad.Var(rng.normal(size=(5, K)))

            def shared_loss(use_grl):
                e = mlp2(ps, "enc_sha", raw)
                if use_grl:
                    e = ad.grad_reverse(e, lam)
                from oodrec.representation import clip_prob, discriminator

                d = discriminator(ps, e)
                return ad.mul(ad.vmean(ad.vlog(clip_prob(d))), -1.0)

            ps.zero_grad()
            shared_loss(True).backward()
            g_with = ps["enc_sha.0.w"].grad.copy()
            ps.zero_grad()
            shared_loss(False).backward()
            g_without = ps["enc_sha.0.w"].grad.copy()
            assert np.array_equal(g_with, -lam * g_without)

    def test_domain_loss_gradcheck(self):
        ps = make_params(m=2, seed=9)
        rng = np.random.default_rng(9)
        xs = [ad.Var(rng.normal(size=(3, K))) for _ in range(4)]

        def loss():
            return domain_losses(ps, *xs, gamma=0.3).total

        for name in ("disc.0.w", "disc.1.w", "disc.1.b"):
            param_grad_check(ps, name, loss)
