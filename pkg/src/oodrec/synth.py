"""Synthetic data generators used by the test benches and demos.

Each generator is a pure function of its seed: linear structural causal
models for DAG recovery, discrete SCMs for causal-discovery calibration,
review corpora with planted confounders for the discovery loop, and a
confounded cross-domain interaction benchmark for end-to-end runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Event, InteractionCorpus, User
from .rng import child_rng


# -- linear SCM over attribute/preference dimensions --------------------------


@dataclass
class LinearScm:
    a_true: np.ndarray  # (2k, 2k) ground-truth weighted adjacency
    samples: np.ndarray  # (n, 2k) rows drawn from the SCM
    k: int


def make_linear_scm(k: int, n_samples: int, seed: int,
                    edge_prob: float = 0.4, w_min: float = 0.7,
                    w_max: float = 1.5) -> LinearScm:
    """Ground-truth SCM with edges only from attribute to preference nodes."""
    rng = child_rng(seed, "linear-scm")
    d = 2 * k
    a = np.zeros((d, d))
    for j in range(k, d):  # each preference node needs at least one parent
        parents = rng.random(k) < edge_prob
        if not parents.any():
            parents[rng.integers(k)] = True
        for i in np.flatnonzero(parents):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            a[i, j] = sign * rng.uniform(w_min, w_max)
    noise = rng.standard_normal((n_samples, d))
    samples = noise @ np.linalg.inv(np.eye(d) - a)
    return LinearScm(a, samples, k)


# -- discrete SCMs for constraint-based discovery ------------------------------


@dataclass
class DiscreteScm:
    parents: dict[int, tuple[int, ...]]  # node -> parent indices
    data: np.ndarray  # (n, d) values in {-1, 0, 1}; target column is binary
    target: int

    def markov_blanket(self) -> set[int]:
        """Oracle by graph enumeration: parents, children, co-parents."""
        y = self.target
        mb = set(self.parents.get(y, ()))
        children = [v for v, ps in self.parents.items() if y in ps]
        mb.update(children)
        for c in children:
            mb.update(p for p in self.parents[c] if p != y)
        mb.discard(y)
        return mb


def make_discrete_scm(n_vars: int, n_samples: int, seed: int,
                      edge_prob: float = 0.35) -> DiscreteScm:
    """Random DAG over ternary variables with a binary target.

    Conditional tables are logistic in a strong random linear score of the
    parents, keeping dependencies well away from independence so that
    constraint-based discovery is well-posed at the given sample size.
    """
    rng = child_rng(seed, "discrete-scm")
    order = rng.permutation(n_vars)
    parents: dict[int, tuple[int, ...]] = {int(v): () for v in order}
    for pos, v in enumerate(order):
        prior = order[:pos]
        chosen = [int(p) for p in prior if rng.random() < edge_prob]
        parents[int(v)] = tuple(chosen)
    target = int(order[-1])  # most downstream node
    if not parents[target]:
        parents[target] = (int(order[rng.integers(0, n_vars - 1)]),)

    coeffs = {v: rng.uniform(1.2, 2.5, size=len(ps)) * rng.choice([-1.0, 1.0], size=len(ps))
              for v, ps in parents.items()}
    data = np.zeros((n_samples, n_vars), dtype=np.int64)
    for v in order:
        v = int(v)
        score = np.zeros(n_samples)
        for p, c in zip(parents[v], coeffs[v]):
            score += c * data[:, p]
        if v == target:
            prob = 1.0 / (1.0 + np.exp(-(score + rng.normal(scale=0.2))))
            data[:, v] = (rng.random(n_samples) < prob).astype(np.int64)
        else:
            # three-way split driven by the parent score
            noise = rng.normal(scale=1.0, size=n_samples)
            z = score + noise
            data[:, v] = np.where(z > 0.6, 1, np.where(z < -0.6, -1, 0))
    return DiscreteScm(parents, data, target)


# -- review corpus with planted variables --------------------------------------


@dataclass(frozen=True)
class PlantedVariable:
    name: str
    pos_keyword: str
    neg_keyword: str
    category: str  # 'a' = intrinsic/preference, 'b' = external factor
    kind: str  # 'confounder' | 'direct' | 'noise'


PLANTED_VOCABULARY = [
    PlantedVariable("discount promotion", "bargain-price", "overpriced", "b", "confounder"),
    PlantedVariable("fast shipping service", "swift-delivery", "late-delivery", "b", "confounder"),
    PlantedVariable("customer support quality", "helpful-support", "rude-support", "b", "confounder"),
    PlantedVariable("story quality", "gripping-story", "dull-story", "a", "direct"),
    PlantedVariable("production quality", "polished-craft", "shoddy-craft", "a", "direct"),
    PlantedVariable("emotional depth", "moving-themes", "hollow-themes", "a", "direct"),
    PlantedVariable("advertising mentioned", "saw-the-ad", "skipped-the-ad", "b", "noise"),
    PlantedVariable("weather mentioned", "sunny-day", "rainy-day", "b", "noise"),
]

_FILLER = ["honestly", "overall", "really", "the", "pacing", "felt", "fine",
           "again", "tonight", "classic"]


@dataclass
class PlantedCorpus:
    corpus: InteractionCorpus
    vocabulary: list[PlantedVariable]
    true_confounders: set[str]
    noise_variables: set[str]
    values: np.ndarray  # (n_reviews, n_vars) planted annotation ground truth


def make_planted_review_corpus(seed: int, n_users: int = 120,
                               n_items: int = 200,
                               reviews_per_user: int = 9) -> PlantedCorpus:
    """Reviews whose text encodes planted variables driving the rating.

    Confounders and direct-preference variables shift the rating; noise
    variables appear in text but are independent of it.
    """
    rng = child_rng(seed, "planted-corpus")
    vocab = PLANTED_VOCABULARY
    users = [User(f"u{i:04d}") for i in range(n_users)]
    items = [f"i{j:04d}" for j in range(n_items)]
    events = []
    rows = []
    for u in users:
        picks = rng.choice(n_items, size=reviews_per_user, replace=False)
        for j in picks:
            vals = np.zeros(len(vocab), dtype=np.int64)
            score = 0.0
            words = [_FILLER[int(rng.integers(len(_FILLER)))] for _ in range(3)]
            for vi, var in enumerate(vocab):
                if rng.random() < 0.45:  # variable not mentioned
                    continue
                val = 1 if rng.random() < 0.5 else -1
                vals[vi] = val
                words.append(var.pos_keyword if val == 1 else var.neg_keyword)
                if var.kind != "noise":
                    score += 1.6 * val
            prob = 1.0 / (1.0 + np.exp(-(score + rng.normal(scale=0.4))))
            liked = rng.random() < prob
            rating = int(rng.choice([4, 5])) if liked else int(rng.choice([1, 2, 3]))
            order = rng.permutation(len(words))
            text = " ".join(words[t] for t in order)
            events.append(Event(u.id, items[int(j)], rating, text))
            rows.append(vals)
    corpus = InteractionCorpus("bookshop", users, items, events)
    return PlantedCorpus(
        corpus=corpus,
        vocabulary=list(vocab),
        true_confounders={v.name for v in vocab if v.kind == "confounder"},
        noise_variables={v.name for v in vocab if v.kind == "noise"},
        values=np.array(rows, dtype=np.int64),
    )


# -- confounded cross-domain interaction benchmark ------------------------------


@dataclass
class DomainTruth:
    item_latents: np.ndarray
    item_pop: np.ndarray
    flags: np.ndarray  # (n_items, n_confounders) bool
    w_map: np.ndarray  # attribute-to-preference mechanism


@dataclass
class CdrBenchmark:
    source: InteractionCorpus
    target: InteractionCorpus
    user_latents: np.ndarray  # (m, d) stable attribute factors
    high_degree: np.ndarray  # (m,) bool, the degree-shift test population
    seeker: np.ndarray = None  # (m,) preference-mediated confounder response
    truth: dict = None  # domain name -> DomainTruth

    def oracle_score(self, domain: str, user_id: str, item_id: str,
                     stable_w: float = 1.6, promo_direct: float = 1.5,
                     promo_seeker: float = 1.2) -> float:
        t = self.truth[domain]
        ui = int(user_id[1:])
        j = int(item_id[1:])
        d = self.user_latents.shape[1]
        pref = self.user_latents[ui] @ t.w_map
        score = stable_w * float(pref @ t.item_latents[j]) / np.sqrt(d)
        weights = [1.0, 0.55, 0.4]
        for ci in range(t.flags.shape[1]):
            if t.flags[j, ci]:
                score += weights[ci] * (promo_direct + promo_seeker * self.seeker[ui])
        return score


def make_cdr_benchmark(seed: int, n_users: int = 160, n_items: int = 200,
                       latent_dim: int = 4, stable_w: float = 1.6,
                       promo_direct: float = 1.5, promo_seeker: float = 1.2,
                       pop_w: float = 1.8, target_low_degree=(8, 13),
                       target_high_degree=(16, 22), source_degree=(28, 40),
                       seeker_rates=(0.70, 0.15), seeker_token: bool = False,
                       like_offset: float = 2.8) -> CdrBenchmark:
    """Source/target corpora with a shared user set and a planted shift.

    Interactions follow a stable attribute-driven preference, item-level
    confounder flags (promotion and friends) with both a direct effect and
    a preference-mediated effect, and a spurious popularity pull confined
    to the low-degree population. A degree-shifted test set therefore
    breaks the popularity shortcut while the attribute mechanism and the
    confounders' direct effect persist. Review text exposes the confounder
    keywords and coarse attribute tokens.
    """
    rng = child_rng(seed, "cdr-benchmark")
    users = [User(f"u{i:04d}", "beijing" if i % 4 == 0 else "hongkong")
             for i in range(n_users)]
    latents = rng.standard_normal((n_users, latent_dim))
    high_degree = np.zeros(n_users, dtype=bool)
    high_degree[: n_users // 4] = True  # first quartile interacts heavily
    # deal-seeking mediates the confounder into preferences; its prevalence
    # differs across the degree populations
    seeker = np.where(high_degree, rng.random(n_users) < seeker_rates[1],
                      rng.random(n_users) < seeker_rates[0]).astype(np.float64)
    confs = [v for v in PLANTED_VOCABULARY if v.kind == "confounder"]
    taste_tokens = [
        [f"taste{d}-low", f"taste{d}-high"] for d in range(latent_dim)
    ]

    def user_tokens(ui: int) -> list[str]:
        dims = np.argsort(-np.abs(latents[ui]))[:2]
        out = [taste_tokens[d][int(latents[ui, d] > 0)] for d in dims]
        if seeker_token and seeker[ui]:
            out.append("frugal-shopper")
        return out

    def build_domain(name: str, tag: str, rich: bool) -> InteractionCorpus:
        items = [f"{tag}{j:04d}" for j in range(n_items)]
        item_latents = rng.standard_normal((n_items, latent_dim))
        item_pop = rng.standard_normal(n_items)
        # one flag per planted confounder per item; the first (promotion)
        # carries the full effect, the others are weaker echoes
        flags = rng.random((n_items, len(confs))) < 0.35
        weights = np.array([1.0, 0.55, 0.4])
        w_map = rng.standard_normal((latent_dim, latent_dim)) / np.sqrt(latent_dim)

        def item_tokens(j: int) -> list[str]:
            dims = np.argsort(-np.abs(item_latents[j]))[:2]
            return [f"{tag}genre{d}-{'high' if item_latents[j, d] > 0 else 'low'}"
                    for d in dims]

        events = []
        for ui, u in enumerate(users):
            if rich:  # the data-richer auxiliary domain
                n_ev = int(rng.integers(*source_degree))
            else:
                lo, hi = (target_high_degree if high_degree[ui] else target_low_degree)
                n_ev = int(rng.integers(lo, hi))
            pref = latents[ui] @ w_map
            score = stable_w * (item_latents @ pref) / np.sqrt(latent_dim)
            score = score + flags @ (weights * (promo_direct + promo_seeker * seeker[ui]))
            if not high_degree[ui]:
                score = score + pop_w * item_pop
            # exposure follows preference: users mostly encounter items they
            # are inclined to like, as in real implicit-feedback logs
            expo = np.exp(0.9 * (score - score.max()))
            picks = rng.choice(n_items, size=n_ev, replace=False, p=expo / expo.sum())
            for j in picks:
                j = int(j)
                prob = 1.0 / (1.0 + np.exp(-(score[j] - like_offset)))
                liked = rng.random() < prob
                rating = int(rng.choice([4, 5])) if liked else int(rng.choice([1, 2, 3]))
                words = [_FILLER[int(rng.integers(len(_FILLER)))]]
                words += user_tokens(ui)
                words += item_tokens(j)
                for ci, conf in enumerate(confs):
                    if flags[j, ci]:
                        words.append(conf.pos_keyword)
                    elif rng.random() < 0.35:
                        words.append(conf.neg_keyword)
                order = rng.permutation(len(words))
                text = " ".join(words[t] for t in order)
                events.append(Event(u.id, items[j], rating, text))
        truth[name] = DomainTruth(item_latents, item_pop, flags, w_map)
        return InteractionCorpus(name, users, items, events)

    truth: dict = {}
    source = build_domain("movies", "s", rich=True)
    target = build_domain("books", "t", rich=False)
    return CdrBenchmark(source, target, latents, high_degree, seeker, truth)
