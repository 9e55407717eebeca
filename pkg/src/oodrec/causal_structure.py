"""Causal DAG learning between user attributes and preference dimensions.

A weighted adjacency matrix over 2k nodes (first k attribute dims, last k
preference dims) is trained so each batch row reconstructs as A^T applied
to itself, under an acyclicity penalty plus structural constraints: no
preference-to-attribute edges, no root preference nodes, and sparsity.
Self-loops are excluded structurally (the diagonal is masked to zero).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import numerics
from .rng import child_rng

LOG_EPS = 1e-8  # keeps the root-node penalty finite at A = 0


class DagLevel(str, Enum):
    SPECIFIC = "specific"
    SHARED = "shared"


@dataclass
class CausalLossWeights:
    alpha1: float = 1.0  # acyclicity
    alpha2: float = 1.0  # preference-to-attribute path penalty
    alpha3: float = 0.1  # preference root-node penalty
    alpha4: float = 0.01  # global L1 sparsity

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class AdjacencyDag:
    a: np.ndarray  # (2k, 2k) weighted adjacency, zero diagonal
    level: DagLevel
    k: int

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.shape != (2 * self.k, 2 * self.k):
            raise ValueError(f"adjacency shape {self.a.shape} != {(2*self.k, 2*self.k)}")
        if not np.all(np.isfinite(self.a)):
            raise ValueError("adjacency contains non-finite entries")

    def acyclicity(self) -> float:
        return numerics.acyclicity(self.a)

    def save(self, path) -> None:
        payload = {"level": self.level.value, "k": self.k,
                   "a": self.a.reshape(-1).tolist()}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AdjacencyDag":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        k = int(payload["k"])
        a = np.array(payload["a"], dtype=np.float64).reshape(2 * k, 2 * k)
        return cls(a, DagLevel(payload["level"]), k)


def offdiag_mask(d: int) -> np.ndarray:
    return 1.0 - np.eye(d)


# -- loss terms (autodiff graph builders) -------------------------------------


def reconstruction_loss(batch: ad.Var, a: ad.Var) -> ad.Var:
    """(1/N) sum_i ||B_i - A^T B_i||_2^2, rows of `batch` as samples."""
    residual = batch - ad.matmul(batch, a)
    return ad.vmean(ad.vsum(ad.mul(residual, residual), axis=1))


def structural_losses(a: ad.Var, k: int):
    """Acyclicity, forbidden-path, root-node, and sparsity penalties."""
    l_dag = ad.expm_trace(ad.mul(a, a)) - float(2 * k)
    pref_to_attr = ad.take(a, (slice(k, 2 * k), slice(0, k)))
    l_path = ad.vsum(ad.vabs(pref_to_attr))
    pref_cols = ad.take(a, (slice(0, 2 * k), slice(k, 2 * k)))
    col_norms = ad.vsum(ad.vabs(pref_cols), axis=0)
    l_root = ad.mul(ad.vsum(ad.vlog(col_norms + LOG_EPS)), -1.0)
    l_l1 = ad.vsum(ad.vabs(a))
    return l_dag, l_path, l_root, l_l1


def level_causal_loss(batch: ad.Var, a: ad.Var, k: int,
                      w: CausalLossWeights) -> ad.Var:
    l_rec = reconstruction_loss(batch, a)
    l_dag, l_path, l_root, l_l1 = structural_losses(a, k)
    out = l_rec
    out = out + ad.mul(l_dag, w.alpha1)
    out = out + ad.mul(l_path, w.alpha2)
    out = out + ad.mul(l_root, w.alpha3)
    out = out + ad.mul(l_l1, w.alpha4)
    return out


def dual_causal_loss(batch_spe: ad.Var, a_spe: ad.Var,
                     batch_sha: ad.Var, a_sha: ad.Var,
                     k: int, w: CausalLossWeights) -> ad.Var:
    """Sum of the specific-level and shared-level causal losses."""
    return ad.add(level_causal_loss(batch_spe, a_spe, k, w),
                  level_causal_loss(batch_sha, a_sha, k, w))


def infer_invariant(a, e_att: ad.Var) -> ad.Var:
    """Preference block of A^T (e_att ++ 0): the causal-invariant preferences.

    Equals e_att times the attribute-to-preference block of A because the
    preference half of the input is zeroed.
    """
    a = ad.as_var(a)
    d = a.value.shape[0]
    k = d // 2
    block = ad.take(a, (slice(0, k), slice(k, d)))
    return ad.matmul(e_att, block)


def init_fusion(ps: ad.ParamSet, name: str, k: int, rng_seed: int) -> None:
    rng = child_rng(rng_seed, "fusion", name)
    ps.add(f"{name}.w", rng.normal(scale=1.0 / np.sqrt(k), size=(k, k)))
    # zero score vector: training starts from an even blend
    ps.add(f"{name}.q", np.zeros(k))


def fuse_attention(ps: ad.ParamSet, name: str, e_a: ad.Var, e_b: ad.Var) -> ad.Var:
    """Convex per-user blend with weights softmax(q^T tanh(W x))."""
    q = ad.reshape(ps[f"{name}.q"], (-1, 1))
    score_a = ad.matmul(ad.tanh(ad.matmul(e_a, ps[f"{name}.w"])), q)
    score_b = ad.matmul(ad.tanh(ad.matmul(e_b, ps[f"{name}.w"])), q)
    weights = ad.softmax(ad.concat([score_a, score_b], axis=1), axis=1)
    w_a = ad.take(weights, (slice(None), slice(0, 1)))
    w_b = ad.take(weights, (slice(None), slice(1, 2)))
    return ad.add(ad.mul(e_a, w_a), ad.mul(e_b, w_b))


# -- standalone DAG fitting ----------------------------------------------------


@dataclass
class DagFitResult:
    dag: AdjacencyDag
    h: float
    escalations: int
    loss_history: list = field(default_factory=list)


def fit_dag(batch: np.ndarray, k: int, weights: CausalLossWeights | None = None,
            level: DagLevel = DagLevel.SPECIFIC, epochs: int = 400,
            stage_epochs: int = 120, lr: float = 5e-3, h_tol: float = 1e-6,
            max_stages: int = 8) -> DagFitResult:
    """Fit one adjacency matrix to fixed batch rows.

    Adam steps on the smooth terms (reconstruction, acyclicity, root) are
    followed by a proximal soft-threshold for the L1 terms, so entries with
    no support land at exactly zero. The acyclicity weight follows a staged
    penalty schedule: after the initial run it multiplies by 10 and training
    continues warm-started, until the acyclicity value drops below h_tol or
    max_stages ramps are spent. Starting stiff instead traps the solve in
    local optima, and the production doubling policy alone cannot push h
    this low.
    """
    batch = numerics.as_matrix(batch, "batch")
    if batch.shape[1] != 2 * k:
        raise ValueError(f"batch width {batch.shape[1]} != 2k = {2 * k}")
    weights = weights or CausalLossWeights()
    w = CausalLossWeights(weights.alpha1, weights.alpha2, weights.alpha3, weights.alpha4)
    smooth = CausalLossWeights(w.alpha1, 0.0, w.alpha3, 0.0)
    d = 2 * k
    ps = ad.ParamSet()
    a_free = ps.add("a", np.zeros((d, d)))
    mask = offdiag_mask(d)
    forbidden = np.zeros((d, d))
    forbidden[k:, :k] = 1.0
    opt = ad.Adam(ps, lr=lr)
    b_var = ad.Var(batch)
    history: list[float] = []

    def run_epochs(n: int, lr_now: float) -> None:
        l1_rate = lr_now * (w.alpha4 + w.alpha2 * forbidden)
        for _ in range(n):
            ps.zero_grad()
            a = ad.mul(a_free, mask)
            loss = level_causal_loss(b_var, a, k, smooth)
            loss.backward()
            opt.step(lr=lr_now)
            v = a_free.value
            a_free.value = np.sign(v) * np.maximum(np.abs(v) - l1_rate, 0.0)
            history.append(loss.item())

    # coarse-to-fine: a smaller final step lets small entries settle at zero
    run_epochs(int(epochs * 0.7), lr)
    run_epochs(epochs - int(epochs * 0.7), lr * 0.1)
    stages = 0
    a_val = a_free.value * mask
    while numerics.acyclicity(a_val) > h_tol and stages < max_stages:
        stages += 1
        smooth.alpha1 *= 10.0
        run_epochs(stage_epochs, lr)
        run_epochs(stage_epochs // 3, lr * 0.1)
        a_val = a_free.value * mask
    dag = AdjacencyDag(a_val, level, k)
    return DagFitResult(dag, dag.acyclicity(), stages, history)


def structural_hamming_distance(a_learned: np.ndarray, a_true: np.ndarray,
                                threshold: float = 0.3) -> int:
    """Edge insertions + deletions + reversals between thresholded graphs."""
    g1 = np.abs(a_learned) > threshold
    g2 = np.abs(a_true) > threshold
    np.fill_diagonal(g1, False)
    np.fill_diagonal(g2, False)
    d = g1.shape[0]
    dist = 0
    for i in range(d):
        for j in range(i + 1, d):
            pair1 = (g1[i, j], g1[j, i])
            pair2 = (g2[i, j], g2[j, i])
            if pair1 != pair2:
                dist += 1
    return dist
