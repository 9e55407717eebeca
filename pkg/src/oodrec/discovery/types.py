"""Shared record types for the confounder-discovery loop."""

from __future__ import annotations

import re
from dataclasses import dataclass


def normalize_name(name: str) -> str:
    return re.sub(r"\s+", " ", name.strip().lower())


@dataclass(frozen=True)
class CausalVariable:
    name: str  # normalized
    criterion: str  # defines values 1 / -1 / 0
    round_proposed: int


@dataclass(frozen=True)
class ConfounderRecord:
    name: str
    description: str
    reasoning: str
    round: int


@dataclass(frozen=True)
class ReviewRecord:
    index: int  # position in the collected review list
    user: str
    item: str
    rating: int
    text: str
