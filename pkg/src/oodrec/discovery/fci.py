"""Constraint-based causal discovery: FCI over discrete annotation data.

The output is a partial ancestral graph (PAG) with edge marks in
{circle, arrow, tail}. The search runs a PC-style adjacency phase with
growing conditioning sets, orients v-structures, prunes again over
Possible-D-Sep sets, and closes with orientation rules R1-R4.

Mark convention: marks[(a, b)] is the mark at the b end of edge a-b, so
"a --> b" stores TAIL under (b, a) and ARROW under (a, b).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .citest import g2_test

CIRCLE = "o"
ARROW = ">"
TAIL = "-"


@dataclass
class Pag:
    nodes: list[str]
    marks: dict[tuple[str, str], str] = field(default_factory=dict)

    def add_edge(self, a: str, b: str, mark_a: str = CIRCLE, mark_b: str = CIRCLE):
        self.marks[(a, b)] = mark_b
        self.marks[(b, a)] = mark_a

    def remove_edge(self, a: str, b: str) -> None:
        self.marks.pop((a, b), None)
        self.marks.pop((b, a), None)

    def adjacent(self, a: str, b: str) -> bool:
        return (a, b) in self.marks

    def neighbors(self, a: str) -> list[str]:
        return [b for b in self.nodes if (a, b) in self.marks]

    def mark_at(self, a: str, b: str) -> str:
        """The mark at the b end of the a-b edge."""
        return self.marks[(a, b)]

    def set_mark(self, a: str, b: str, mark: str) -> None:
        if (a, b) not in self.marks:
            raise KeyError(f"no edge {a}-{b}")
        self.marks[(a, b)] = mark

    def edges(self) -> list[tuple[str, str]]:
        seen = set()
        out = []
        for a, b in self.marks:
            if (b, a) not in seen:
                seen.add((a, b))
                out.append((a, b))
        return out

    def describe(self, a: str, b: str) -> str:
        right = {CIRCLE: "o", ARROW: ">", TAIL: "-"}
        left = {CIRCLE: "o", ARROW: "<", TAIL: "-"}
        return f"{a} {left[self.mark_at(b, a)]}-{right[self.mark_at(a, b)]} {b}"


@dataclass
class FciResult:
    pag: Pag
    sepsets: dict[frozenset, frozenset]
    flagged_tests: int  # degenerate CI tests treated as independence


class _Tester:
    def __init__(self, data: np.ndarray, names: list[str], alpha: float):
        self.data = data
        self.cols = {n: i for i, n in enumerate(names)}
        self.alpha = alpha
        self.flagged = 0

    def independent(self, x: str, y: str, cond) -> bool:
        z = self.data[:, [self.cols[s] for s in cond]] if cond else None
        res = g2_test(self.data[:, self.cols[x]], self.data[:, self.cols[y]], z)
        if res.degenerate:
            self.flagged += 1
        return res.p_value > self.alpha


def _skeleton(names: list[str], tester: _Tester, max_cond: int):
    adj = {n: {m for m in names if m != n} for n in names}
    sepsets: dict[frozenset, frozenset] = {}
    for size in range(0, max_cond + 1):
        for x, y in combinations(names, 2):
            if y not in adj[x]:
                continue
            for anchor in (x, y):
                other = y if anchor == x else x
                candidates = sorted(adj[anchor] - {other})
                if len(candidates) < size:
                    continue
                separated = False
                for subset in combinations(candidates, size):
                    if tester.independent(x, y, subset):
                        sepsets[frozenset((x, y))] = frozenset(subset)
                        adj[x].discard(y)
                        adj[y].discard(x)
                        separated = True
                        break
                if separated:
                    break
    return adj, sepsets


def _orient_v_structures(pag: Pag, sepsets) -> None:
    for z in pag.nodes:
        nbrs = pag.neighbors(z)
        for x, y in combinations(sorted(nbrs), 2):
            if pag.adjacent(x, y):
                continue
            if z not in sepsets.get(frozenset((x, y)), frozenset()):
                pag.set_mark(x, z, ARROW)
                pag.set_mark(y, z, ARROW)


def _possible_d_sep(pag: Pag, x: str) -> set[str]:
    """Nodes reachable from x along paths whose interior vertices are
    colliders on the path or lie in a triangle with their path neighbors."""
    out: set[str] = set()
    start = [(x, n) for n in pag.neighbors(x)]
    visited = set(start)
    queue = list(start)
    while queue:
        a, b = queue.pop(0)
        out.add(b)
        for c in pag.neighbors(b):
            if c == a or (b, c) in visited:
                continue
            collider = pag.mark_at(a, b) == ARROW and pag.mark_at(c, b) == ARROW
            triangle = pag.adjacent(a, c)
            if collider or triangle:
                visited.add((b, c))
                queue.append((b, c))
    out.discard(x)
    return out


def _pds_prune(pag: Pag, sepsets, tester: _Tester, max_cond: int) -> None:
    for x, y in list(pag.edges()):
        removed = False
        for anchor in (x, y):
            pds = sorted(_possible_d_sep(pag, anchor) - {x, y})
            for size in range(1, min(max_cond, len(pds)) + 1):
                for subset in combinations(pds, size):
                    if tester.independent(x, y, subset):
                        sepsets[frozenset((x, y))] = frozenset(subset)
                        pag.remove_edge(x, y)
                        removed = True
                        break
                if removed:
                    break
            if removed:
                break


def _r1(pag: Pag) -> bool:
    # x *-> z o-* y, x and y not adjacent  =>  z --> y
    changed = False
    for z in pag.nodes:
        for x in pag.neighbors(z):
            if pag.mark_at(x, z) != ARROW:
                continue
            for y in pag.neighbors(z):
                if y == x or pag.adjacent(x, y):
                    continue
                if pag.mark_at(y, z) == CIRCLE:
                    pag.set_mark(y, z, TAIL)
                    pag.set_mark(z, y, ARROW)
                    changed = True
    return changed


def _r2(pag: Pag) -> bool:
    # (x --> z *-> y) or (x *-> z --> y), and x *-o y  =>  x *-> y
    changed = False
    for x in pag.nodes:
        for y in pag.neighbors(x):
            if pag.mark_at(x, y) != CIRCLE:
                continue
            for z in pag.neighbors(x):
                if z == y or not pag.adjacent(z, y):
                    continue
                chain1 = (pag.mark_at(z, x) == TAIL and pag.mark_at(x, z) == ARROW
                          and pag.mark_at(z, y) == ARROW)
                chain2 = (pag.mark_at(x, z) == ARROW and pag.mark_at(y, z) == TAIL
                          and pag.mark_at(z, y) == ARROW)
                if chain1 or chain2:
                    pag.set_mark(x, y, ARROW)
                    changed = True
                    break
    return changed


def _r3(pag: Pag) -> bool:
    # x *-> z <-* y, x *-o w o-* y, x and y not adjacent, w *-o z  =>  w *-> z
    changed = False
    for z in pag.nodes:
        nbrs = pag.neighbors(z)
        for x, y in combinations(sorted(nbrs), 2):
            if pag.adjacent(x, y):
                continue
            if pag.mark_at(x, z) != ARROW or pag.mark_at(y, z) != ARROW:
                continue
            for w in pag.nodes:
                if w in (x, y, z) or not pag.adjacent(w, z):
                    continue
                if not (pag.adjacent(x, w) and pag.adjacent(y, w)):
                    continue
                if (pag.mark_at(x, w) == CIRCLE and pag.mark_at(y, w) == CIRCLE
                        and pag.mark_at(w, z) == CIRCLE):
                    pag.set_mark(w, z, ARROW)
                    changed = True
    return changed


def _discriminating_paths(pag: Pag, z: str, y: str) -> list[tuple[str, str]]:
    """Pairs (x, w) such that <x, ..., w, z, y> discriminates z: interior
    vertices are colliders on the path and parents of y; x, y not adjacent."""
    results: list[tuple[str, str]] = []

    def extend(path: list[str]) -> None:
        last = path[-1]
        for q in pag.neighbors(last):
            if q in path:
                continue
            if pag.mark_at(q, last) != ARROW:  # need q *-> last
                continue
            if not pag.adjacent(q, y):
                if len(path) >= 3:  # at least one interior vertex
                    results.append((q, path[2]))
                continue
            # q would be interior: collider on the path and a parent of y
            if pag.mark_at(last, q) != ARROW:
                continue
            if not (pag.mark_at(q, y) == ARROW and pag.mark_at(y, q) == TAIL):
                continue
            extend(path + [q])

    extend([y, z])
    return results


def _r4(pag: Pag, sepsets) -> bool:
    changed = False
    for y in pag.nodes:
        for z in pag.neighbors(y):
            if pag.mark_at(y, z) != CIRCLE and pag.mark_at(z, y) != CIRCLE:
                continue
            for x, w in _discriminating_paths(pag, z, y):
                if z in sepsets.get(frozenset((x, y)), frozenset()):
                    pag.set_mark(y, z, TAIL)
                    pag.set_mark(z, y, ARROW)
                else:
                    pag.set_mark(z, w, ARROW)
                    pag.set_mark(w, z, ARROW)
                    pag.set_mark(y, z, ARROW)
                    pag.set_mark(z, y, ARROW)
                changed = True
                break
    return changed


def fci_discover(data: np.ndarray, names: list[str], alpha: float = 0.05,
                 max_cond: int = 4) -> FciResult:
    """Run FCI on discrete columns; returns the PAG over `names`."""
    data = np.asarray(data)
    if data.shape[1] != len(names):
        raise ValueError("data width does not match names")
    if len(names) < 2:
        raise ValueError("need at least two variables")
    tester = _Tester(data, list(names), alpha)
    adj, sepsets = _skeleton(list(names), tester, max_cond)
    pag = Pag(list(names))
    for x, y in combinations(names, 2):
        if y in adj[x]:
            pag.add_edge(x, y)
    _orient_v_structures(pag, sepsets)

    _pds_prune(pag, sepsets, tester, max_cond)
    for a, b in pag.edges():
        pag.set_mark(a, b, CIRCLE)
        pag.set_mark(b, a, CIRCLE)
    _orient_v_structures(pag, sepsets)

    changed = True
    while changed:
        changed = False
        changed |= _r1(pag)
        changed |= _r2(pag)
        changed |= _r3(pag)
        changed |= _r4(pag, sepsets)
    return FciResult(pag, sepsets, tester.flagged)
