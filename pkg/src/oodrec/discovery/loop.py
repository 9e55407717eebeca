"""The iterative confounder-discovery loop.

Each round proposes candidate causal variables, annotates the review corpus
against the new ones, refines the accumulated variable set with CI tests,
FCI, and Markov-blanket extraction, extracts observed confounders from the
refined set, and builds feedback for the next round from the review cluster
the current variables explain worst. Convergence: the refined set repeats,
or the worst cluster's conditional entropy falls below a threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import InteractionCorpus
from ..numerics import conditional_entropy, kmeans
from ..rng import child_rng
from . import prompts
from .annotate import AnnotationMatrix, annotate_reviews, collect_reviews, sample_reviews
from .blanket import markov_blanket
from .citest import ci_filter
from .fci import fci_discover
from .types import CausalVariable, ConfounderRecord, ReviewRecord, normalize_name

TARGET = "Y"


class DiscoveryError(RuntimeError):
    def __init__(self, round_idx: int, step: str, pool: list[ConfounderRecord]):
        super().__init__(f"discovery aborted at round {round_idx}, step {step!r}")
        self.round = round_idx
        self.step = step
        self.pool = pool


@dataclass
class RoundSummary:
    round: int
    proposed: list[str]
    z_f: list[str]
    z_mb: list[str]
    new_confounders: list[str]
    max_entropy: float
    converged_reason: str | None = None


@dataclass
class DiscoveryResult:
    pool: list[ConfounderRecord]
    variables: list[CausalVariable]
    variable_pool: list[str]
    z_f: list[str]
    z_mb: list[str]
    matrix: AnnotationMatrix
    rounds: list[RoundSummary] = field(default_factory=list)
    converged: bool = False
    rejected: list[str] = field(default_factory=list)


def _complete_with_retry(llm, prompt: str, parser):
    reply = llm.complete(prompt, temperature=0.0)
    try:
        return parser(reply)
    except prompts.ReplyParseError:
        reply = llm.complete(prompt + prompts.FORMAT_REMINDER, temperature=0.0)
        return parser(reply)  # a second failure propagates with the raw text


def propose_variables(llm, prompt: str, known_names: set[str],
                      round_idx: int) -> list[CausalVariable]:
    """Parse proposed variables, dropping duplicates of known names."""
    pairs = _complete_with_retry(llm, prompt, prompts.parse_variables)
    out: list[CausalVariable] = []
    seen = set(known_names)
    for name, criterion in pairs:
        if name in seen:
            continue
        seen.add(name)
        out.append(CausalVariable(name, criterion, round_idx))
    return out


def extract_confounders(llm, domain: str, z_mb: list[str],
                        pool: list[ConfounderRecord], rejected: list[str],
                        rng: np.random.Generator,
                        round_idx: int) -> tuple[list[ConfounderRecord], list[str]]:
    """Zero-shot on the first round with an empty pool, few-shot afterwards."""
    if not z_mb:
        raise ValueError("refined variable set is empty")
    positive = negative = None
    if pool:
        first = pool[0]
        positive = {"name": first.name, "description": first.description,
                    "reasoning": first.reasoning}
        candidates = sorted(set(rejected) - {p.name for p in pool})
        if candidates:
            pick = candidates[int(rng.integers(len(candidates)))]
            negative = {
                "name": pick,
                "description": f"whether the review signals {pick}.",
                "reasoning": f"{pick} reflects item content or an explicit user "
                             f"preference, so it shapes interactions only through "
                             f"the preference itself and is not a confounder.",
            }
    prompt = prompts.extraction_prompt(domain, z_mb, [p.name for p in pool],
                                       positive, negative)
    parsed = _complete_with_retry(llm, prompt, prompts.parse_confounders)
    known = {p.name for p in pool}
    new = [ConfounderRecord(d["name"], d["description"], d["reasoning"], round_idx)
           for d in parsed if d["name"] not in known]
    returned = {d["name"] for d in parsed}
    newly_rejected = [n for n in z_mb if n not in returned and n not in known]
    return new, newly_rejected


def causal_feedback(matrix: AnnotationMatrix, z_mb: list[str],
                    reviews: list[ReviewRecord], prev_prompt: str,
                    rng_seed: int, n_clusters: int = 5,
                    sample_size: int = 15) -> tuple[str, list[ReviewRecord], float]:
    """Cluster reviews by their refined-variable values, pick the cluster
    with the highest conditional entropy of the label, and extend the
    proposal prompt with samples from it."""
    rng = child_rng(rng_seed, "feedback")
    n = len(reviews)
    if z_mb:
        rows = matrix.restrict(z_mb)
        j = min(n_clusters, n)
        km = kmeans(rows.astype(np.float64), j, rng)
        assignments = km.assignments
        n_eff = j
    else:
        rows = np.zeros((n, 0), dtype=np.int64)
        assignments = np.zeros(n, dtype=np.int64)
        n_eff = 1
    entropies = np.zeros(n_eff)
    for c in range(n_eff):
        mask = assignments == c
        if mask.any():
            entropies[c] = conditional_entropy(matrix.y[mask], rows[mask])
    best = int(np.argmax(entropies))
    members = np.flatnonzero(assignments == best)
    take = min(sample_size, len(members))
    picked = sorted(rng.choice(len(members), take, replace=False))
    samples = [reviews[int(members[i])] for i in picked]
    next_prompt = prompts.feedback_prompt(prev_prompt, samples, z_mb)
    return next_prompt, samples, float(entropies.max())


def _persist_pool(pool: list[ConfounderRecord], path) -> None:
    payload = [
        {"name": p.name, "description": p.description,
         "reasoning": p.reasoning, "round": p.round}
        for p in pool
    ]
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def load_pool(path) -> list[ConfounderRecord]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ConfounderRecord(d["name"], d["description"], d["reasoning"], d["round"])
            for d in payload]


def run_discovery(corpus: InteractionCorpus, llm, tau_max: int, rng_seed: int,
                  *, significance: float = 0.05, n_clusters: int = 5,
                  max_users: int = 1000, per_user: int = 5, per_group: int = 3,
                  feedback_samples: int = 15, entropy_tol: float = 0.05,
                  pool_path=None) -> DiscoveryResult:
    """Run the full discovery loop against one domain's reviews."""
    if tau_max < 1:
        raise ValueError("tau_max must be >= 1")
    domain = corpus.domain_name
    reviews = collect_reviews(corpus, rng_seed, max_users=max_users, per_user=per_user)
    matrix = AnnotationMatrix.empty(reviews)
    variables: list[CausalVariable] = []
    pool: list[ConfounderRecord] = []
    rejected: list[str] = []
    rounds: list[RoundSummary] = []
    z_f: list[str] = []
    z_mb: list[str] = []
    prev_mb: list[str] | None = None
    converged = False
    prompt = prompts.proposal_prompt(
        domain, sample_reviews(reviews, child_rng(rng_seed, "round", 1).integers(2**31),
                               per_group=per_group))

    def set_ctx(round_idx, step):
        if hasattr(llm, "set_context"):
            llm.set_context(round_idx, step)

    for tau in range(1, tau_max + 1):
        step = "propose"
        try:
            set_ctx(tau, step)
            known = {v.name for v in variables}
            new_vars = propose_variables(llm, prompt, known, tau)
            variables = variables + new_vars

            step = "annotate"
            set_ctx(tau, step)
            if new_vars:
                cols, _ = annotate_reviews(llm, reviews, new_vars, domain)
                matrix.add_columns([v.name for v in new_vars], cols)

            step = "refine"
            if matrix.variables:
                filt = ci_filter(matrix.q, matrix.y, matrix.variables,
                                 significance=significance)
                z_f = filt.kept
            else:
                z_f = []
            if z_f:
                data = np.hstack([matrix.restrict(z_f), matrix.y[:, None]])
                fci = fci_discover(data, z_f + [TARGET], alpha=significance)
                z_mb = sorted(markov_blanket(fci.pag, TARGET))
            else:
                z_mb = []

            step = "extract"
            set_ctx(tau, step)
            new_confs: list[ConfounderRecord] = []
            if z_mb:
                rng = child_rng(rng_seed, "extract", tau)
                new_confs, newly_rejected = extract_confounders(
                    llm, domain, z_mb, pool, rejected, rng, tau)
                pool = pool + new_confs
                rejected = rejected + [n for n in newly_rejected if n not in rejected]

            step = "feedback"
            set_ctx(tau, step)
            prompt, _, max_entropy = causal_feedback(
                matrix, z_mb, reviews, prompt,
                child_rng(rng_seed, "round", tau).integers(2**31),
                n_clusters=n_clusters, sample_size=feedback_samples)
        except Exception as exc:
            if pool_path is not None:
                _persist_pool(pool, pool_path)
            raise DiscoveryError(tau, step, pool) from exc

        reason = None
        if prev_mb is not None and z_mb == prev_mb:
            reason = "refined set unchanged"
        elif max_entropy < entropy_tol:
            reason = f"max cluster entropy {max_entropy:.4f} below {entropy_tol}"
        rounds.append(RoundSummary(tau, [v.name for v in new_vars], list(z_f),
                                   list(z_mb), [c.name for c in new_confs],
                                   max_entropy, reason))
        prev_mb = list(z_mb)
        if reason is not None:
            converged = True
            break

    variable_pool = sorted({v.name for v in variables} - set(z_mb))
    if pool_path is not None:
        _persist_pool(pool, pool_path)
    return DiscoveryResult(pool, variables, variable_pool, z_f, z_mb, matrix,
                           rounds, converged, rejected)


def direct_llm_pool(corpus: InteractionCorpus, llm, rng_seed: int,
                    max_users: int = 1000, per_user: int = 5,
                    sample_size: int = 15) -> list[ConfounderRecord]:
    """Single-shot extraction over raw reviews (the non-iterative baseline)."""
    reviews = collect_reviews(corpus, rng_seed, max_users=max_users, per_user=per_user)
    rng = child_rng(rng_seed, "direct")
    take = min(sample_size, len(reviews))
    picked = sorted(rng.choice(len(reviews), take, replace=False))
    samples = [reviews[int(i)] for i in picked]
    if hasattr(llm, "set_context"):
        llm.set_context(1, "direct-extract")
    prompt = prompts.direct_extraction_prompt(corpus.domain_name, samples)
    parsed = _complete_with_retry(llm, prompt, prompts.parse_confounders)
    seen = set()
    out = []
    for d in parsed:
        if d["name"] in seen:
            continue
        seen.add(d["name"])
        out.append(ConfounderRecord(d["name"], d["description"], d["reasoning"], 1))
    return out
