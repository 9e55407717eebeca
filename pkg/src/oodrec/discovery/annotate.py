"""Review collection, rating-stratified sampling, and LLM annotation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import POSITIVE_RATING, InteractionCorpus
from ..rng import child_rng
from . import prompts
from .types import CausalVariable, ReviewRecord


def collect_reviews(corpus: InteractionCorpus, rng_seed: int,
                    max_users: int = 1000, per_user: int = 5) -> list[ReviewRecord]:
    """Annotation budget: up to max_users users, up to per_user reviews each."""
    by_user: dict[str, list] = {}
    for ev in corpus.events:
        if ev.review:
            by_user.setdefault(ev.user, []).append(ev)
    if not by_user:
        raise ValueError(f"corpus {corpus.domain_name!r} has no reviews")
    rng = child_rng(rng_seed, "collect-reviews")
    users = sorted(by_user)
    if len(users) > max_users:
        users = [users[i] for i in sorted(rng.choice(len(users), max_users, replace=False))]
    records: list[ReviewRecord] = []
    for u in users:
        events = by_user[u]
        if len(events) > per_user:
            events = [events[i] for i in sorted(rng.choice(len(events), per_user, replace=False))]
        for ev in events:
            records.append(ReviewRecord(len(records), ev.user, ev.item, ev.rating, ev.review))
    return records


def sample_reviews(reviews: list[ReviewRecord], rng_seed: int,
                   per_group: int = 3) -> list[ReviewRecord]:
    """Sample per_group reviews from each non-empty rating group."""
    if not reviews:
        raise ValueError("no reviews to sample from")
    rng = child_rng(rng_seed, "sample-reviews")
    out: list[ReviewRecord] = []
    for rating in range(1, 6):
        group = [r for r in reviews if r.rating == rating]
        if not group:
            continue
        take = min(per_group, len(group))
        out.extend(group[i] for i in sorted(rng.choice(len(group), take, replace=False)))
    return out


@dataclass
class AnnotationMatrix:
    """Reviews x variables data matrix with entries in {-1, 0, 1}."""

    variables: list[str]
    q: np.ndarray  # (n_reviews, n_variables)
    y: np.ndarray  # (n_reviews,) implicit-feedback labels

    @classmethod
    def empty(cls, reviews: list[ReviewRecord]) -> "AnnotationMatrix":
        y = np.array([1 if r.rating >= POSITIVE_RATING else 0 for r in reviews],
                     dtype=np.int64)
        return cls([], np.zeros((len(reviews), 0), dtype=np.int64), y)

    def add_columns(self, names: list[str], cols: np.ndarray) -> None:
        cols = np.asarray(cols, dtype=np.int64)
        if cols.shape != (self.q.shape[0], len(names)):
            raise ValueError(f"column block shape {cols.shape} does not fit")
        if not np.isin(cols, (-1, 0, 1)).all():
            raise ValueError("annotation values must lie in {-1, 0, 1}")
        dupes = set(names) & set(self.variables)
        if dupes:
            raise ValueError(f"columns already present: {sorted(dupes)}")
        self.variables = self.variables + list(names)
        self.q = np.hstack([self.q, cols])

    def restrict(self, names: list[str]) -> np.ndarray:
        index = {n: i for i, n in enumerate(self.variables)}
        return self.q[:, [index[n] for n in names]]


def annotate_reviews(llm, reviews: list[ReviewRecord],
                     variables: list[CausalVariable], domain: str,
                     max_invalid_frac: float = 0.05) -> tuple[np.ndarray, int]:
    """Annotate every review against each new variable, in (review, variable)
    order. Unparseable replies coerce to 0; too many of them is an error."""
    cols = np.zeros((len(reviews), len(variables)), dtype=np.int64)
    invalid = 0
    calls = 0
    for ri, review in enumerate(reviews):
        for vi, var in enumerate(variables):
            prompt = prompts.annotation_prompt(domain, var.name, var.criterion, review)
            reply = llm.complete(prompt, temperature=0.0)
            calls += 1
            try:
                cols[ri, vi] = prompts.parse_annotation(reply)
            except prompts.ReplyParseError:
                cols[ri, vi] = 0
                invalid += 1
    if calls and invalid > max_invalid_frac * calls:
        raise ValueError(
            f"{invalid}/{calls} annotation replies were invalid "
            f"(limit {max_invalid_frac:.0%})"
        )
    return cols, invalid
