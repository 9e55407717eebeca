"""Markov blanket extraction from a partial ancestral graph."""

from __future__ import annotations

from .fci import ARROW, Pag


def markov_blanket(pag: Pag, target: str) -> set[str]:
    """Neighbors of the target plus spouses through its child edges.

    A child is a neighbor whose edge carries an arrow into it and no arrow
    back into the target (covers both oriented and circle-tailed child
    edges); a spouse is any other node with an arrow into such a child.
    """
    if target not in pag.nodes:
        raise KeyError(f"unknown node {target!r}")
    mb = set(pag.neighbors(target))
    children = [
        c for c in mb
        if pag.mark_at(target, c) == ARROW and pag.mark_at(c, target) != ARROW
    ]
    for c in children:
        for w in pag.neighbors(c):
            if w != target and pag.mark_at(w, c) == ARROW:
                mb.add(w)
    mb.discard(target)
    return mb
