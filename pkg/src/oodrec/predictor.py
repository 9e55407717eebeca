"""Backdoor-adjusted interaction prediction and the total training loss.

Confounder centroids enter the predictor through a learned selection
function: two softmax heads score each centroid against the user and item
embeddings, the weighted centroid average joins the concatenated user/item
embedding through a fully-connected layer, and a three-layer MLP outputs
the interaction probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .representation import PROB_EPS, clip_prob, init_affine, affine
from .rng import child_rng

K_IN = 128
K_HIDDEN = 64
K_OUT = 8


@dataclass
class LossWeights:
    beta1: float = 1.0  # source recommendation loss
    beta2: float = 0.5  # dual-level causal loss
    beta3: float = 1.0  # domain disentanglement loss
    beta4: float = 1e-5  # global parameter L2 norm
    gamma: float = 0.5  # source/target balance inside the domain loss

    def __post_init__(self):
        for name in ("beta1", "beta2", "beta3", "beta4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def init_predictor(ps: ad.ParamSet, dom: str, k: int, rng_seed: int,
                   k_in: int = K_IN, hidden: int = K_HIDDEN,
                   k_out: int = K_OUT) -> None:
    """Register one domain's prediction-branch parameters."""
    rng = child_rng(rng_seed, "predictor", dom)
    for name in ("w_u", "w_uc", "w_v", "w_vc"):
        ps.add(f"pred.{dom}.{name}", rng.normal(scale=1.0 / np.sqrt(k), size=(k, k)))
    init_affine(ps, f"pred.{dom}.fc", 3 * k, k_in, rng)
    init_affine(ps, f"pred.{dom}.mlp0", k_in, hidden, rng)
    init_affine(ps, f"pred.{dom}.mlp1", hidden, k_out, rng)
    init_affine(ps, f"pred.{dom}.mlp2", k_out, 1, rng)


def selection_weights(ps: ad.ParamSet, dom: str, e_u: ad.Var, e_v: ad.Var,
                      c: ad.Var) -> ad.Var:
    """Per-sample simplex weights over the J confounder centroids.

    Average of two softmax heads: transformed-user against transformed-
    centroid dot products, and the item-side analogue.
    """
    cu = ad.matmul(c, ps[f"pred.{dom}.w_uc"])  # (J, k)
    cv = ad.matmul(c, ps[f"pred.{dom}.w_vc"])
    su = ad.matmul(ad.matmul(e_u, ps[f"pred.{dom}.w_u"]), ad.transpose(cu))
    sv = ad.matmul(ad.matmul(e_v, ps[f"pred.{dom}.w_v"]), ad.transpose(cv))
    return ad.mul(ad.add(ad.softmax(su, axis=1), ad.softmax(sv, axis=1)), 0.5)


def backdoor_input(ps: ad.ParamSet, dom: str, e_u: ad.Var, e_v: ad.Var,
                   c: ad.Var | None) -> ad.Var:
    """FC-layer input: user ++ item ++ expected confounder under p(c) = 1/J.

    With c None the confounder summand is skipped entirely, which equals
    the full path with zero centroids and a zeroed confounder block in the
    FC weights.
    """
    k = e_u.value.shape[1]
    w = ps[f"pred.{dom}.fc.w"]
    b = ps[f"pred.{dom}.fc.b"]
    uv = ad.concat([e_u, e_v], axis=1)
    out = ad.matmul(uv, ad.take(w, (slice(0, 2 * k), slice(None))))
    if c is not None:
        j = c.value.shape[0]
        psi = selection_weights(ps, dom, e_u, e_v, c)
        s = ad.mul(ad.matmul(psi, c), 1.0 / j)
        out = ad.add(out, ad.matmul(s, ad.take(w, (slice(2 * k, 3 * k), slice(None)))))
    return ad.add(out, b)


def predict(ps: ad.ParamSet, dom: str, theta_in: ad.Var) -> ad.Var:
    """Interaction probability via the three-layer MLP head."""
    h = ad.relu(affine(ps, f"pred.{dom}.mlp0", theta_in))
    h = ad.relu(affine(ps, f"pred.{dom}.mlp1", h))
    logit = affine(ps, f"pred.{dom}.mlp2", h)
    return ad.reshape(ad.sigmoid(logit), (-1,))


def predict_interactions(ps: ad.ParamSet, dom: str, e_u: ad.Var, e_v: ad.Var,
                         c: ad.Var | None) -> ad.Var:
    return predict(ps, dom, backdoor_input(ps, dom, e_u, e_v, c))


def rec_loss(predictions: ad.Var, labels) -> ad.Var:
    """Summed binary cross-entropy over positives and sampled negatives."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != predictions.value.shape:
        raise ValueError(f"labels shape {y.shape} != predictions {predictions.value.shape}")
    p = clip_prob(predictions)
    terms = ad.add(ad.mul(ad.vlog(p), y), ad.mul(ad.vlog(1.0 - p), 1.0 - y))
    return ad.mul(ad.vsum(terms), -1.0)


def total_loss(l_rec_t: ad.Var, l_rec_s: ad.Var, l_cau: ad.Var, l_dom: ad.Var,
               omega_l2: ad.Var, w: LossWeights) -> ad.Var:
    out = l_rec_t
    out = ad.add(out, ad.mul(l_rec_s, w.beta1))
    out = ad.add(out, ad.mul(l_cau, w.beta2))
    out = ad.add(out, ad.mul(l_dom, w.beta3))
    out = ad.add(out, ad.mul(omega_l2, w.beta4))
    return out
