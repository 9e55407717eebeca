"""Embedding construction and adversarial user-preference disentanglement.

Users and items get initial embeddings from id-attribute lookups and encoded
review text, enriched by propagation over the interaction graph. A shared
encoder trained through a gradient reversal layer extracts domain-shared
preferences; per-domain encoders keep the domain-specific ones.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .data import InteractionCorpus
from .rng import child_rng

TEXT_DIM = 384
PROB_EPS = 1e-7  # probability clamp for the binary cross-entropy terms


class TextEncoderPort(Protocol):
    """Maps a list of texts to an (n, 384) float matrix, deterministically."""

    name: str

    def encode(self, texts: list[str]) -> np.ndarray: ...


class HashingTextEncoder:
    """Deterministic stand-in encoder: tokens index a fixed Gaussian table,
    and a document embeds as the mean of its token vectors."""

    def __init__(self, seed: int = 0, table_size: int = 4096):
        self.name = f"hashing-{seed}"
        rng = np.random.default_rng([seed, 0x7E47])
        self._table = rng.standard_normal((table_size, TEXT_DIM))

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), TEXT_DIM))
        for i, text in enumerate(texts):
            tokens = text.lower().split()
            if not tokens:
                continue
            rows = [self._table[zlib.crc32(t.encode("utf-8")) % len(self._table)]
                    for t in tokens]
            out[i] = np.mean(rows, axis=0)
        return out


def user_documents(corpus: InteractionCorpus) -> list[str]:
    """Concatenated review text per user, ordered like corpus.users."""
    docs = {u.id: [] for u in corpus.users}
    for ev in corpus.events:
        if ev.review:
            docs[ev.user].append(ev.review)
    return [" ".join(docs[u.id]) for u in corpus.users]


def item_documents(corpus: InteractionCorpus) -> list[str]:
    """Item id plus all review text about the item, ordered like corpus.items."""
    docs = {i: [i] for i in corpus.items}
    for ev in corpus.events:
        if ev.review:
            docs[ev.item].append(ev.review)
    return [" ".join(docs[i]) for i in corpus.items]


def encode_documents(encoder: TextEncoderPort, docs: list[str]) -> np.ndarray:
    try:
        out = np.asarray(encoder.encode(docs), dtype=np.float64)
    except Exception:
        # retry one-by-one so the failing document is identified
        for di, doc in enumerate(docs):
            try:
                encoder.encode([doc])
            except Exception as exc:
                raise RuntimeError(f"text encoder failed on document {di}") from exc
        raise
    if out.shape != (len(docs), TEXT_DIM):
        raise ValueError(f"encoder returned shape {out.shape}, "
                         f"expected {(len(docs), TEXT_DIM)}")
    return out


# -- parameter initialization -------------------------------------------------


def init_affine(ps: ad.ParamSet, name: str, d_in: int, d_out: int,
                rng: np.random.Generator) -> None:
    ps.add(f"{name}.w", rng.normal(scale=1.0 / np.sqrt(d_in), size=(d_in, d_out)))
    ps.add(f"{name}.b", np.zeros(d_out))


def affine(ps: ad.ParamSet, name: str, x: ad.Var) -> ad.Var:
    return ad.add(ad.matmul(x, ps[f"{name}.w"]), ps[f"{name}.b"])


def init_mlp2(ps: ad.ParamSet, name: str, d_in: int, d_hidden: int, d_out: int,
              rng: np.random.Generator) -> None:
    init_affine(ps, f"{name}.0", d_in, d_hidden, rng)
    init_affine(ps, f"{name}.1", d_hidden, d_out, rng)


def mlp2(ps: ad.ParamSet, name: str, x: ad.Var) -> ad.Var:
    return affine(ps, f"{name}.1", ad.relu(affine(ps, f"{name}.0", x)))


def init_representation(ps: ad.ParamSet, k: int, n_users: dict[str, int],
                        rng_seed: int) -> None:
    """Register all representation parameters for the given domains."""
    for dom, m in n_users.items():
        rng = child_rng(rng_seed, "rep", dom)
        ps.add(f"w_att.{dom}", rng.normal(scale=1.0 / np.sqrt(k), size=(k, m)))
        init_mlp2(ps, f"user_proj.{dom}", k + TEXT_DIM, k, k, rng)
        init_mlp2(ps, f"item_proj.{dom}", TEXT_DIM, k, k, rng)
        init_mlp2(ps, f"enc_spe.{dom}", k, k, k, rng)
    rng = child_rng(rng_seed, "rep", "shared")
    init_mlp2(ps, "enc_sha", k, k, k, rng)
    init_mlp2(ps, "disc", k, max(1, k // 2), 1, rng)


# -- embedding construction ---------------------------------------------------


def attribute_embeddings(w_att: ad.Var, user_indices) -> ad.Var:
    """One-hot lookup: row i of the result is column user_indices[i] of W."""
    idx = np.asarray(user_indices, dtype=np.int64)
    m = w_att.value.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise IndexError(f"user index out of range [0, {m})")
    return ad.take(ad.transpose(w_att), idx)


def initial_embeddings(ps: ad.ParamSet, dom: str, e_att: ad.Var,
                       user_text: np.ndarray, item_text: np.ndarray) -> tuple[ad.Var, ad.Var]:
    """Project combined user inputs (attributes ++ text) and item text to k dims."""
    e_uc = ad.concat([e_att, ad.Var(user_text)], axis=1)
    e_ui = mlp2(ps, f"user_proj.{dom}", e_uc)
    e_vi = mlp2(ps, f"item_proj.{dom}", ad.Var(item_text))
    return e_ui, e_vi


@dataclass
class Propagation:
    """Precomputed symmetric-normalized bipartite propagation operator."""

    p_uv: np.ndarray  # (m, n); entry 1/sqrt(d_u d_v) on train edges
    iso_u: np.ndarray  # (m,) 1.0 where the user has no train edges
    iso_v: np.ndarray  # (n,)


def build_propagation(train_pairs, user_index: dict[str, int],
                      item_index: dict[str, int]) -> Propagation:
    m, n = len(user_index), len(item_index)
    p = np.zeros((m, n))
    for u, i in train_pairs:
        p[user_index[u], item_index[i]] = 1.0
    du = p.sum(axis=1)
    dv = p.sum(axis=0)
    scale_u = np.where(du > 0, 1.0 / np.sqrt(np.maximum(du, 1.0)), 0.0)
    scale_v = np.where(dv > 0, 1.0 / np.sqrt(np.maximum(dv, 1.0)), 0.0)
    p = p * scale_u[:, None] * scale_v[None, :]
    return Propagation(p, (du == 0).astype(np.float64), (dv == 0).astype(np.float64))


def gcn_propagate(e_ui: ad.Var, e_vi: ad.Var, prop: Propagation,
                  layers: int = 2) -> tuple[ad.Var, ad.Var]:
    """Parameter-free neighborhood averaging; readout is the layer mean.

    Isolated nodes carry their previous embedding through each layer, so a
    graph with no edges returns the inputs unchanged.
    """
    us = [e_ui]
    vs = [e_vi]
    for _ in range(layers):
        nu = ad.add(ad.matmul(ad.Var(prop.p_uv), vs[-1]),
                    ad.mul(us[-1], prop.iso_u[:, None]))
        nv = ad.add(ad.matmul(ad.Var(prop.p_uv.T), us[-1]),
                    ad.mul(vs[-1], prop.iso_v[:, None]))
        us.append(nu)
        vs.append(nv)
    scale = 1.0 / (layers + 1)
    return ad.mul(_sum_vars(us), scale), ad.mul(_sum_vars(vs), scale)


def _sum_vars(vs):
    total = vs[0]
    for v in vs[1:]:
        total = ad.add(total, v)
    return total


# -- disentanglement ----------------------------------------------------------


def disentangle(ps: ad.ParamSet, e_u_source: ad.Var, e_u_target: ad.Var):
    """Shared encoder on both domains, specific encoder per domain."""
    e_sha_s = mlp2(ps, "enc_sha", e_u_source)
    e_sha_t = mlp2(ps, "enc_sha", e_u_target)
    e_spe_s = mlp2(ps, "enc_spe.source", e_u_source)
    e_spe_t = mlp2(ps, "enc_spe.target", e_u_target)
    return e_sha_s, e_sha_t, e_spe_s, e_spe_t


def discriminator(ps: ad.ParamSet, x: ad.Var) -> ad.Var:
    """Predicted probability that the preferences come from the target domain."""
    return ad.sigmoid(mlp2(ps, "disc", x))


@dataclass
class DomainLosses:
    l_sha_s: ad.Var
    l_sha_t: ad.Var
    l_spe_s: ad.Var
    l_spe_t: ad.Var
    total: ad.Var
    n_clamped: int


def domain_losses(ps: ad.ParamSet, e_sha_s: ad.Var, e_sha_t: ad.Var,
                  e_spe_s: ad.Var, e_spe_t: ad.Var, gamma: float = 0.5,
                  grl_lambda: float = 1.0) -> DomainLosses:
    """Adversarial (shared, through GRL) and cooperative (specific) BCE terms."""
    d_sha_s = discriminator(ps, ad.grad_reverse(e_sha_s, grl_lambda))
    d_sha_t = discriminator(ps, ad.grad_reverse(e_sha_t, grl_lambda))
    d_spe_s = discriminator(ps, e_spe_s)
    d_spe_t = discriminator(ps, e_spe_t)
    n_clamped = sum(
        int(((d.value <= 0.0) | (d.value >= 1.0)).sum())
        for d in (d_sha_s, d_sha_t, d_spe_s, d_spe_t)
    )

    def source_bce(d):  # true label 0: penalize mass on the target side
        return ad.mul(ad.vmean(ad.vlog(clip_prob(1.0 - d))), -1.0)

    def target_bce(d):  # true label 1
        return ad.mul(ad.vmean(ad.vlog(clip_prob(d))), -1.0)

    l_sha_s = source_bce(d_sha_s)
    l_sha_t = target_bce(d_sha_t)
    l_spe_s = source_bce(d_spe_s)
    l_spe_t = target_bce(d_spe_t)
    total = ad.add(
        ad.mul(ad.add(l_sha_s, l_spe_s), gamma),
        ad.mul(ad.add(l_sha_t, l_spe_t), 1.0 - gamma),
    )
    return DomainLosses(l_sha_s, l_sha_t, l_spe_s, l_spe_t, total, n_clamped)


def clip_prob(p) -> ad.Var:
    return ad.clip(ad.as_var(p), PROB_EPS, 1.0 - PROB_EPS)
