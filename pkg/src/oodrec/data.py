"""Interaction corpora, implicit feedback, OOD splits, and candidate sets.

A corpus holds one domain's users, items, and rated (optionally reviewed)
events. A source/target pair must share its user-id set. All sampling
operations are pure functions of (inputs, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import child_rng

POSITIVE_RATING = 4  # ratings >= this count as implicit-feedback positives


class SplitSetting(str, Enum):
    USER_DEGREE_SHIFT = "user_degree_shift"
    REGION_SHIFT = "region_shift"
    IID = "iid"


@dataclass(frozen=True)
class Event:
    user: str
    item: str
    rating: int
    review: str | None = None


@dataclass(frozen=True)
class User:
    id: str
    region: str | None = None


@dataclass
class InteractionCorpus:
    domain_name: str
    users: list[User]
    items: list[str]
    events: list[Event]
    degree_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        user_ids = {u.id for u in self.users}
        if len(user_ids) != len(self.users):
            raise ValueError("duplicate user ids")
        item_ids = set(self.items)
        if len(item_ids) != len(self.items):
            raise ValueError("duplicate item ids")
        for idx, ev in enumerate(self.events):
            if ev.user not in user_ids:
                raise ValueError(f"event {idx} references unknown user {ev.user!r}")
            if ev.item not in item_ids:
                raise ValueError(f"event {idx} references unknown item {ev.item!r}")
            if not 1 <= ev.rating <= 5:
                raise ValueError(f"event {idx} rating {ev.rating} outside [1, 5]")
        if not self.degree_index:
            counts = {u.id: 0 for u in self.users}
            for ev in self.events:
                counts[ev.user] += 1
            self.degree_index = counts

    @classmethod
    def from_events(cls, domain_name: str, events: list[Event],
                    regions: dict[str, str | None] | None = None) -> "InteractionCorpus":
        regions = regions or {}
        user_ids = sorted({ev.user for ev in events})
        items = sorted({ev.item for ev in events})
        users = [User(uid, regions.get(uid)) for uid in user_ids]
        return cls(domain_name, users, items, events)

    def region_of(self, user_id: str) -> str | None:
        for u in self.users:
            if u.id == user_id:
                return u.region
        raise KeyError(user_id)

    def interacted(self) -> dict[str, set[str]]:
        """All items each user has any event with, regardless of rating."""
        out: dict[str, set[str]] = {u.id: set() for u in self.users}
        for ev in self.events:
            out[ev.user].add(ev.item)
        return out


def check_shared_users(source: InteractionCorpus, target: InteractionCorpus) -> None:
    src = {u.id for u in source.users}
    tgt = {u.id for u in target.users}
    if src != tgt:
        missing = sorted(src ^ tgt)[:5]
        raise ValueError(f"source/target user sets differ, e.g. {missing}")


@dataclass
class ImplicitFeedback:
    positives: list[tuple[str, str]]  # (user, item), deduplicated, sorted
    labels: dict[tuple[str, str], int]  # 1 iff some event rated >= POSITIVE_RATING


def to_implicit(events: list[Event]) -> ImplicitFeedback:
    """Convert explicit ratings to implicit feedback labels."""
    labels: dict[tuple[str, str], int] = {}
    for idx, ev in enumerate(events):
        if not 1 <= ev.rating <= 5:
            raise ValueError(f"event {idx} rating {ev.rating} outside [1, 5]")
        pair = (ev.user, ev.item)
        lab = 1 if ev.rating >= POSITIVE_RATING else 0
        labels[pair] = max(labels.get(pair, 0), lab)
    positives = sorted(p for p, y in labels.items() if y == 1)
    return ImplicitFeedback(positives, labels)


@dataclass
class OodSplit:
    train: list[tuple[str, str]]
    val: list[tuple[str, str]]
    test: list[tuple[str, str]]
    setting: SplitSetting
    shift_ratio: float
    seed: int

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("train/val/test overlap")


def _split_sizes(n: int) -> tuple[int, int, int]:
    n_test = n // 10
    n_val = n // 10
    return n - n_val - n_test, n_val, n_test


def high_degree_users(corpus: InteractionCorpus) -> set[str]:
    """Top quartile of users by interaction count, ties broken by id."""
    degrees = corpus.degree_index
    if not degrees:
        raise ValueError("empty corpus")
    if min(degrees.values()) == max(degrees.values()):
        raise ValueError("all users have equal degree; high-degree shift is undefined")
    ranked = sorted(degrees, key=lambda u: (-degrees[u], u))
    quota = max(1, len(ranked) // 4)
    return set(ranked[:quota])


def _split_with_membership(corpus: InteractionCorpus, member: set[str],
                           setting: SplitSetting, shift_ratio: float,
                           rng_seed: int) -> OodSplit:
    if not 0.0 <= shift_ratio <= 1.0:
        raise ValueError(f"shift_ratio {shift_ratio} outside [0, 1]")
    positives = to_implicit(corpus.events).positives
    if not positives:
        raise ValueError("corpus has no positive interactions")
    n_train, n_val, n_test = _split_sizes(len(positives))
    shifted = [p for p in positives if p[0] in member]
    rest = [p for p in positives if p[0] not in member]
    n_test_shift = int(round(shift_ratio * n_test))
    n_test_rest = n_test - n_test_shift
    if len(shifted) < n_test_shift:
        raise ValueError(
            f"only {len(shifted)} shifted-population positives for a test quota "
            f"of {n_test_shift} ({setting.value})"
        )
    if len(rest) < n_test_rest:
        raise ValueError(
            f"only {len(rest)} complement positives for a test quota of {n_test_rest}"
        )
    rng = child_rng(rng_seed, "split", setting.value, round(shift_ratio, 6))
    test = [shifted[i] for i in rng.choice(len(shifted), n_test_shift, replace=False)]
    test += [rest[i] for i in rng.choice(len(rest), n_test_rest, replace=False)]
    remaining = sorted(set(positives) - set(test))
    val_idx = rng.choice(len(remaining), n_val, replace=False)
    val = [remaining[i] for i in sorted(val_idx)]
    train = sorted(set(remaining) - set(val))
    return OodSplit(train, val, sorted(test), setting, shift_ratio, rng_seed)


def split_ood_degree(corpus: InteractionCorpus, shift_ratio: float,
                     rng_seed: int) -> OodSplit:
    """8:1:1 split whose test set over-represents high-degree users."""
    return _split_with_membership(
        corpus, high_degree_users(corpus),
        SplitSetting.USER_DEGREE_SHIFT, shift_ratio, rng_seed,
    )


def split_ood_region(corpus: InteractionCorpus, region: str, shift_ratio: float,
                     rng_seed: int) -> OodSplit:
    """8:1:1 split whose test set over-represents users from one region."""
    member = {u.id for u in corpus.users if u.region == region}
    if not member:
        known = sorted({u.region for u in corpus.users if u.region is not None})
        if not known:
            raise ValueError("corpus carries no region metadata")
        raise ValueError(f"no users in region {region!r}; known regions: {known}")
    return _split_with_membership(
        corpus, member, SplitSetting.REGION_SHIFT, shift_ratio, rng_seed,
    )


def split_iid(corpus: InteractionCorpus, rng_seed: int) -> OodSplit:
    """8:1:1 split with test drawn from the same distribution as train."""
    positives = to_implicit(corpus.events).positives
    if not positives:
        raise ValueError("corpus has no positive interactions")
    n_train, n_val, n_test = _split_sizes(len(positives))
    rng = child_rng(rng_seed, "split", "iid")
    order = rng.permutation(len(positives))
    test = [positives[i] for i in order[:n_test]]
    val = [positives[i] for i in order[n_test:n_test + n_val]]
    train = [positives[i] for i in order[n_test + n_val:]]
    return OodSplit(sorted(train), sorted(val), sorted(test),
                    SplitSetting.IID, 0.0, rng_seed)


@dataclass
class TrainingPairs:
    pairs: list[tuple[str, str]]
    labels: np.ndarray  # parallel to pairs, values {0, 1}
    flagged_users: set[str]  # users that needed replacement sampling


def sample_negatives(split: OodSplit, corpus: InteractionCorpus, rng_seed: int,
                     ratio: int = 3) -> TrainingPairs:
    """Pair each train positive with `ratio` sampled negatives.

    Negatives avoid the user's full positive set; users with too few
    never-liked items fall back to replacement sampling and are flagged.
    """
    if not split.train:
        raise ValueError("split has no training positives")
    implicit = to_implicit(corpus.events)
    pos_by_user: dict[str, set[str]] = {}
    for u, i in implicit.positives:
        pos_by_user.setdefault(u, set()).add(i)
    items = sorted(corpus.items)
    rng = child_rng(rng_seed, "negatives")
    pairs: list[tuple[str, str]] = []
    labels: list[int] = []
    flagged: set[str] = set()
    for u, i in split.train:
        pairs.append((u, i))
        labels.append(1)
        candidates = sorted(set(items) - pos_by_user.get(u, set()))
        if len(candidates) >= ratio:
            picks = rng.choice(len(candidates), ratio, replace=False)
        else:
            flagged.add(u)
            pool = candidates if candidates else items
            picks = rng.integers(0, len(pool), size=ratio)
            candidates = pool
        for p in picks:
            pairs.append((u, candidates[int(p)]))
            labels.append(0)
    return TrainingPairs(pairs, np.array(labels, dtype=np.int64), flagged)


@dataclass
class EvalCandidateSet:
    user_id: str
    positive_item: str
    negatives: list[str]

    def __post_init__(self):
        if len(self.negatives) != 99:
            raise ValueError(f"expected 99 negatives, got {len(self.negatives)}")
        if self.positive_item in self.negatives:
            raise ValueError("positive item appears among negatives")


def build_eval_candidates(split: OodSplit, corpus: InteractionCorpus,
                          rng_seed: int) -> list[EvalCandidateSet]:
    """One (1 positive + 99 negatives) candidate set per test positive."""
    if not split.test:
        raise ValueError("split has no test positives")
    interacted = corpus.interacted()
    items = sorted(corpus.items)
    rng = child_rng(rng_seed, "candidates")
    out = []
    for u, i in split.test:
        never = sorted(set(items) - interacted[u])
        if len(never) < 99:
            raise ValueError(
                f"user {u!r} has only {len(never)} never-interacted items; need 99"
            )
        picks = rng.choice(len(never), 99, replace=False)
        out.append(EvalCandidateSet(u, i, [never[int(p)] for p in picks]))
    return out


# -- file formats -------------------------------------------------------------


def load_events_jsonl(path) -> InteractionCorpus:
    """Read one domain's events from JSONL rows.

    Row schema: {"user", "item", "rating", "review", "region", "domain"}.
    """
    events: list[Event] = []
    regions: dict[str, str | None] = {}
    domain = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if domain is None:
                domain = row.get("domain", "unknown")
            events.append(Event(str(row["user"]), str(row["item"]),
                                int(row["rating"]), row.get("review")))
            if row.get("region") is not None:
                regions[str(row["user"])] = row["region"]
    if not events:
        raise ValueError(f"{path}: no events")
    return InteractionCorpus.from_events(domain or "unknown", events, regions)


def save_events_jsonl(corpus: InteractionCorpus, path) -> None:
    regions = {u.id: u.region for u in corpus.users}
    with open(path, "w", encoding="utf-8") as fh:
        for ev in corpus.events:
            fh.write(json.dumps({
                "user": ev.user, "item": ev.item, "rating": ev.rating,
                "review": ev.review, "region": regions.get(ev.user),
                "domain": corpus.domain_name,
            }) + "\n")


def save_split(split: OodSplit, path) -> None:
    payload = {
        "train": [list(p) for p in split.train],
        "val": [list(p) for p in split.val],
        "test": [list(p) for p in split.test],
        "setting": split.setting.value,
        "shift_ratio": split.shift_ratio,
        "seed": split.seed,
    }
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def load_split(path) -> OodSplit:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return OodSplit(
        [tuple(p) for p in payload["train"]],
        [tuple(p) for p in payload["val"]],
        [tuple(p) for p in payload["test"]],
        SplitSetting(payload["setting"]),
        float(payload["shift_ratio"]),
        int(payload["seed"]),
    )
