"""End-to-end training and evaluation of the cross-domain OOD recommender.

Phase 1 trains representations, disentanglement, and the deconfounded
predictors with fixed confounder centroids; phase 2 adds the dual-level
causal loss and switches the prediction path to causal-invariant
preferences inferred through the learned DAGs. Evaluation ranks each test
positive against 99 sampled negatives.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import numerics
from .causal_structure import (
    CausalLossWeights,
    dual_causal_loss,
    fuse_attention,
    infer_invariant,
    init_fusion,
    level_causal_loss,
    offdiag_mask,
)
from .data import (
    EvalCandidateSet,
    InteractionCorpus,
    OodSplit,
    SplitSetting,
    build_eval_candidates,
    check_shared_users,
    sample_negatives,
    split_iid,
    split_ood_degree,
    split_ood_region,
    to_implicit,
)
from .discovery.subspace import ConfounderSubspace
from .predictor import LossWeights, init_predictor, predict_interactions, rec_loss, total_loss
from .representation import (
    HashingTextEncoder,
    TextEncoderPort,
    attribute_embeddings,
    build_propagation,
    disentangle,
    domain_losses,
    encode_documents,
    gcn_propagate,
    init_representation,
    initial_embeddings,
    item_documents,
    user_documents,
)
from .rng import child_rng

ABLATION_VARIANTS = ("full", "wo_dual_level", "wo_specific_level",
                     "wo_shared_level", "wo_confounder", "w_direct_llm")
CHECKPOINT_VERSION = 1


@dataclass
class RunConfig:
    source_events: str = ""
    target_events: str = ""
    output_dir: str = "out"
    seed: int = 1
    k: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs_phase1: int = 60
    epochs_phase2: int = 40
    loss_weights: LossWeights = field(default_factory=LossWeights)
    causal_weights: CausalLossWeights = field(default_factory=CausalLossWeights)
    j_centroids: int = 10
    tau_max: int = 3
    setting: str = SplitSetting.USER_DEGREE_SHIFT.value
    shift_ratio: float = 1.0
    region: str | None = None
    eval_seeds: tuple = (1, 2, 3, 4, 5)
    ablation: str = "full"
    gcn_layers: int = 2
    h_tol: float = 1e-6
    escalation_epochs: int = 10
    max_escalations: int = 3
    llm_base_url: str = ""
    llm_model: str = ""
    llm_api_key_env: str = "OODREC_LLM_API_KEY"
    mock_llm: bool = False

    def __post_init__(self):
        if self.ablation not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant {self.ablation!r}; "
                             f"expected one of {ABLATION_VARIANTS}")

    def to_json(self) -> str:
        payload = asdict(self)
        payload["eval_seeds"] = list(self.eval_seeds)
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        payload = json.loads(text)
        payload["loss_weights"] = LossWeights(**payload.get("loss_weights", {}))
        payload["causal_weights"] = CausalLossWeights(**payload.get("causal_weights", {}))
        payload["eval_seeds"] = tuple(payload.get("eval_seeds", (1, 2, 3, 4, 5)))
        return cls(**payload)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


def make_split(corpus: InteractionCorpus, config: RunConfig, seed: int) -> OodSplit:
    setting = SplitSetting(config.setting)
    if setting == SplitSetting.USER_DEGREE_SHIFT:
        return split_ood_degree(corpus, config.shift_ratio, seed)
    if setting == SplitSetting.REGION_SHIFT:
        if not config.region:
            raise ValueError("region shift requires config.region")
        return split_ood_region(corpus, config.region, config.shift_ratio, seed)
    return split_iid(corpus, seed)


@dataclass
class DomainData:
    corpus: InteractionCorpus
    user_index: dict
    item_index: dict
    user_text: np.ndarray
    item_text: np.ndarray
    prop: object
    train_pairs: list


def _prepare_domain(corpus: InteractionCorpus, train_pairs: list,
                    encoder: TextEncoderPort, gcn_layers: int) -> DomainData:
    user_index = {u.id: i for i, u in enumerate(corpus.users)}
    item_index = {it: i for i, it in enumerate(corpus.items)}
    user_text = encode_documents(encoder, user_documents(corpus))
    item_text = encode_documents(encoder, item_documents(corpus))
    prop = build_propagation(train_pairs, user_index, item_index)
    return DomainData(corpus, user_index, item_index, user_text, item_text,
                      prop, train_pairs)


class Model:
    """Parameter container plus the forward graph builders."""

    def __init__(self, config: RunConfig, source: DomainData, target: DomainData,
                 subspaces: dict[str, ConfounderSubspace | None]):
        self.config = config
        self.domains = {"source": source, "target": target}
        k = config.k
        self.ps = ad.ParamSet()
        init_representation(self.ps, k, {
            "source": len(source.corpus.users),
            "target": len(target.corpus.users),
        }, config.seed)
        init_fusion(self.ps, "fuse.source", k, config.seed)
        init_fusion(self.ps, "fuse.target", k, config.seed)
        init_predictor(self.ps, "source", k, config.seed)
        init_predictor(self.ps, "target", k, config.seed)
        self.ps.add("dag.specific", np.zeros((2 * k, 2 * k)))
        self.ps.add("dag.shared", np.zeros((2 * k, 2 * k)))
        self._dag_mask = offdiag_mask(2 * k)
        self.centroids = {
            dom: (None if sub is None else ad.Var(sub.c))
            for dom, sub in subspaces.items()
        }

    def dag(self, level: str) -> ad.Var:
        return ad.mul(self.ps[f"dag.{level}"], self._dag_mask)

    def dag_value(self, level: str) -> np.ndarray:
        return self.ps[f"dag.{level}"].value * self._dag_mask

    def _embeddings(self):
        out = {}
        for dom, data in self.domains.items():
            e_att = attribute_embeddings(self.ps[f"w_att.{dom}"],
                                         np.arange(len(data.corpus.users)))
            e_ui, e_vi = initial_embeddings(self.ps, dom, e_att,
                                            data.user_text, data.item_text)
            e_u, e_v = gcn_propagate(e_ui, e_vi, data.prop,
                                     layers=self.config.gcn_layers)
            out[dom] = {"att": e_att, "u": e_u, "v": e_v}
        sha_s, sha_t, spe_s, spe_t = disentangle(
            self.ps, out["source"]["u"], out["target"]["u"])
        out["source"]["sha"], out["source"]["spe"] = sha_s, spe_s
        out["target"]["sha"], out["target"]["spe"] = sha_t, spe_t
        return out

    def _fused_preferences(self, emb, phase2: bool):
        """Comprehensive user preferences per domain for the current phase
        and ablation variant."""
        variant = self.config.ablation
        causal = phase2 and variant != "wo_dual_level"
        spe_t = emb["target"]["spe"]
        sha_t = emb["target"]["sha"]
        sha_s = emb["source"]["sha"]
        if causal and variant != "wo_specific_level":
            spe_t = infer_invariant(self.dag("specific"), emb["target"]["att"])
        if causal and variant != "wo_shared_level":
            sha_t = infer_invariant(self.dag("shared"), emb["target"]["att"])
            sha_s = infer_invariant(self.dag("shared"), emb["source"]["att"])
        u_t = fuse_attention(self.ps, "fuse.target", spe_t, sha_t)
        u_s = fuse_attention(self.ps, "fuse.source", emb["source"]["spe"], sha_s)
        return {"source": u_s, "target": u_t}

    def _centroid_var(self, dom: str):
        if self.config.ablation == "wo_confounder":
            return None
        return self.centroids.get(dom)

    def loss(self, batches: dict, phase2: bool):
        """Total loss over one step's (source, target) batches."""
        cfg = self.config
        emb = self._embeddings()
        fused = self._fused_preferences(emb, phase2)
        dl = domain_losses(self.ps, emb["source"]["sha"], emb["target"]["sha"],
                           emb["source"]["spe"], emb["target"]["spe"],
                           gamma=cfg.loss_weights.gamma)
        rec = {}
        for dom in ("source", "target"):
            u_idx, v_idx, labels = batches[dom]
            e_u = ad.take(fused[dom], u_idx)
            e_v = ad.take(emb[dom]["v"], v_idx)
            preds = predict_interactions(self.ps, dom, e_u, e_v,
                                         self._centroid_var(dom))
            rec[dom] = rec_loss(preds, labels)
        variant = cfg.ablation
        if phase2 and variant != "wo_dual_level":
            k = cfg.k
            terms = []
            if variant != "wo_specific_level":
                b_spe = ad.concat([emb["target"]["att"], emb["target"]["spe"]], axis=1)
                terms.append((b_spe, self.dag("specific")))
            if variant != "wo_shared_level":
                b_sha = ad.concat([
                    ad.concat([emb["source"]["att"], emb["source"]["sha"]], axis=1),
                    ad.concat([emb["target"]["att"], emb["target"]["sha"]], axis=1),
                ], axis=0)
                terms.append((b_sha, self.dag("shared")))
            if len(terms) == 2:
                l_cau = dual_causal_loss(terms[0][0], terms[0][1],
                                         terms[1][0], terms[1][1],
                                         k, cfg.causal_weights)
            elif terms:
                l_cau = level_causal_loss(terms[0][0], terms[0][1], k,
                                          cfg.causal_weights)
            else:
                l_cau = ad.Var(0.0)
        else:
            l_cau = ad.Var(0.0)
        total = total_loss(rec["target"], rec["source"], l_cau, dl.total,
                           self.ps.l2_norm(), cfg.loss_weights)
        parts = {"rec_t": rec["target"].item(), "rec_s": rec["source"].item(),
                 "cau": l_cau.item(), "dom": dl.total.item()}
        return total, parts

    # -- inference --------------------------------------------------------------

    def target_inference_state(self) -> dict:
        """Frozen numpy snapshot of the target-domain prediction inputs."""
        emb = self._embeddings()
        fused = self._fused_preferences(emb, phase2=True)
        return {
            "fused": fused["target"].value.copy(),
            "items": emb["target"]["v"].value.copy(),
        }

    def scores_from_state(self, state: dict, pairs: list) -> np.ndarray:
        data = self.domains["target"]
        u_idx = np.array([data.user_index[u] for u, _ in pairs])
        v_idx = np.array([data.item_index[i] for _, i in pairs])
        preds = predict_interactions(
            self.ps, "target",
            ad.Var(state["fused"][u_idx]),
            ad.Var(state["items"][v_idx]),
            self._centroid_var("target"))
        return preds.value.copy()

    def target_scores(self, pairs: list) -> np.ndarray:
        """Predicted probabilities for (user_id, item_id) pairs in the target."""
        return self.scores_from_state(self.target_inference_state(), pairs)


@dataclass
class TrainResult:
    model: Model
    loss_history: list
    dag_h: dict
    escalations: int
    h_warning: str | None
    split: OodSplit


def _epoch_batches(pairs, labels, batch_size, rng):
    order = rng.permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield [pairs[i] for i in idx], labels[idx]


def _as_training_split(corpus: InteractionCorpus) -> OodSplit:
    positives = to_implicit(corpus.events).positives
    return OodSplit(positives, [], [], SplitSetting.IID, 0.0, 0)


def train_two_phase(config: RunConfig, source: InteractionCorpus,
                    target: InteractionCorpus,
                    subspaces: dict[str, ConfounderSubspace | None],
                    encoder: TextEncoderPort | None = None,
                    split: OodSplit | None = None) -> TrainResult:
    """Train both phases; assert the DAG acyclicity budget afterwards.

    If the acyclicity value of either DAG exceeds h_tol, the acyclicity
    weight doubles and phase 2 extends by escalation_epochs, at most
    max_escalations times; a persistent violation is recorded as a warning
    rather than an error so end-to-end runs still complete.
    """
    check_shared_users(source, target)
    config = RunConfig.from_json(config.to_json())  # escalation mutates weights
    encoder = encoder or HashingTextEncoder(seed=0)
    split = split or make_split(target, config, config.seed)
    src_split = _as_training_split(source)
    source_data = _prepare_domain(source, src_split.train, encoder, config.gcn_layers)
    target_data = _prepare_domain(target, split.train, encoder, config.gcn_layers)
    model = Model(config, source_data, target_data, subspaces)
    opt = ad.Adam(model.ps, lr=config.learning_rate)
    history = []

    def run_epochs(n_epochs: int, phase2: bool, tag: str):
        for epoch in range(n_epochs):
            rng = child_rng(config.seed, "epoch", tag, epoch)
            neg_t = sample_negatives(split, target, int(rng.integers(2**31)))
            neg_s = sample_negatives(src_split, source, int(rng.integers(2**31)))
            src_batches = list(_epoch_batches(neg_s.pairs, neg_s.labels,
                                              config.batch_size, rng))
            epoch_loss = 0.0
            for bi, (pairs_t, labels_t) in enumerate(
                    _epoch_batches(neg_t.pairs, neg_t.labels, config.batch_size, rng)):
                pairs_s, labels_s = src_batches[bi % len(src_batches)]
                batches = {
                    "target": (
                        np.array([target_data.user_index[u] for u, _ in pairs_t]),
                        np.array([target_data.item_index[i] for _, i in pairs_t]),
                        labels_t,
                    ),
                    "source": (
                        np.array([source_data.user_index[u] for u, _ in pairs_s]),
                        np.array([source_data.item_index[i] for _, i in pairs_s]),
                        labels_s,
                    ),
                }
                model.ps.zero_grad()
                loss, parts = model.loss(batches, phase2)
                if not np.isfinite(loss.item()):
                    raise FloatingPointError(
                        f"loss diverged at {tag} epoch {epoch}: {parts}")
                loss.backward()
                opt.step()
                epoch_loss += loss.item()
            history.append({"phase": tag, "epoch": epoch, "loss": epoch_loss})

    run_epochs(config.epochs_phase1, phase2=False, tag="phase1")
    run_epochs(config.epochs_phase2, phase2=True, tag="phase2")

    escalations = 0
    warning = None
    if config.ablation not in ("wo_dual_level",):
        def worst_h():
            hs = {}
            if config.ablation != "wo_specific_level":
                hs["specific"] = numerics.acyclicity(model.dag_value("specific"))
            if config.ablation != "wo_shared_level":
                hs["shared"] = numerics.acyclicity(model.dag_value("shared"))
            return hs

        hs = worst_h()
        while hs and max(hs.values()) > config.h_tol and escalations < config.max_escalations:
            escalations += 1
            config.causal_weights.alpha1 *= 2.0
            run_epochs(config.escalation_epochs, phase2=True,
                       tag=f"escalation{escalations}")
            hs = worst_h()
        if hs and max(hs.values()) > config.h_tol:
            warning = (f"acyclicity above tolerance after {escalations} "
                       f"escalations: {hs}")
    else:
        hs = {}
    return TrainResult(model, history, hs, escalations, warning, split)


# -- evaluation ----------------------------------------------------------------


@dataclass
class MetricsReport:
    hr_at_10: float
    ndcg_at_10: float
    per_seed: list  # (seed, hr, ndcg) rows

    def __post_init__(self):
        if self.ndcg_at_10 > self.hr_at_10 + 1e-12:
            raise ValueError("NDCG@10 cannot exceed HR@10")


def rank_of_positive(scores: dict, positive: str) -> int:
    """1-based rank of the positive item; ties break by ascending item id."""
    ordered = sorted(scores, key=lambda item: (-scores[item], item))
    return ordered.index(positive) + 1


def evaluate_model(model: Model, candidates: list[EvalCandidateSet],
                   top_k: int = 10) -> tuple[float, float]:
    state = model.target_inference_state()
    all_pairs = [(c.user_id, item)
                 for c in candidates
                 for item in [c.positive_item] + list(c.negatives)]
    values = model.scores_from_state(state, all_pairs)
    hr = 0.0
    ndcg = 0.0
    for ci, cand in enumerate(candidates):
        items = [cand.positive_item] + list(cand.negatives)
        scores = dict(zip(items, values[ci * 100:(ci + 1) * 100]))
        rank = rank_of_positive(scores, cand.positive_item)
        if rank <= top_k:
            hr += 1.0
            ndcg += 1.0 / np.log2(rank + 1)
    n = len(candidates)
    return hr / n, ndcg / n


def evaluate_over_seeds(config: RunConfig, source: InteractionCorpus,
                        target: InteractionCorpus,
                        subspaces: dict[str, ConfounderSubspace | None],
                        encoder: TextEncoderPort | None = None,
                        seeds=None) -> MetricsReport:
    """Retrain and evaluate once per seed; report the mean metrics."""
    seeds = list(seeds if seeds is not None else config.eval_seeds)
    rows = []
    for seed in seeds:
        cfg = RunConfig.from_json(config.to_json())
        cfg.seed = seed
        result = train_two_phase(cfg, source, target, subspaces, encoder)
        cands = build_eval_candidates(result.split, target, seed)
        hr, ndcg = evaluate_model(result.model, cands)
        rows.append((seed, hr, ndcg))
    hr = float(np.mean([r[1] for r in rows]))
    ndcg = float(np.mean([r[2] for r in rows]))
    return MetricsReport(hr, ndcg, rows)


def shift_sweep(result: TrainResult, target: InteractionCorpus,
                config: RunConfig, ratios=(0.4, 0.6, 0.8, 1.0)) -> list[dict]:
    """Evaluate one trained model on regenerated test sets per shift ratio."""
    rows = []
    for ratio in ratios:
        cfg = RunConfig.from_json(config.to_json())
        cfg.shift_ratio = ratio
        split = make_split(target, cfg, cfg.seed)
        cands = build_eval_candidates(split, target, cfg.seed)
        hr, ndcg = evaluate_model(result.model, cands)
        rows.append({"setting": cfg.setting, "ratio": ratio, "seed": cfg.seed,
                     "hr10": hr, "ndcg10": ndcg})
    return rows


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["setting", "ratio", "seed",
                                             "hr10", "ndcg10"])
    writer.writeheader()
    for row in rows:
        writer.writerow({
            "setting": row["setting"], "ratio": row["ratio"],
            "seed": row["seed"],
            "hr10": f"{row['hr10']:.6f}", "ndcg10": f"{row['ndcg10']:.6f}",
        })
    return buf.getvalue()


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(result: TrainResult, config: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "params.npz", **result.model.ps.state())
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config.hash(),
        "config": json.loads(config.to_json()),
        "dag_h": result.dag_h,
        "escalations": result.escalations,
        "h_warning": result.h_warning,
        "params_file": "params.npz",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True),
                                       encoding="utf-8")
    return out


def load_checkpoint_params(path) -> tuple[dict, dict]:
    out = Path(path)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    if manifest["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest['version']}")
    with np.load(out / manifest["params_file"]) as arrays:
        state = {k: arrays[k].copy() for k in arrays.files}
    return manifest, state
