"""G-squared conditional independence testing on discrete annotation data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2


@dataclass
class CiResult:
    g2: float
    dof: int
    p_value: float
    degenerate: bool  # no testable stratum (constant columns, empty cells)


def g2_test(x, y, z=None) -> CiResult:
    """Likelihood-ratio test of x independent of y given the columns of z.

    Strata with a constant margin contribute zero degrees of freedom; if no
    stratum is testable the result is flagged degenerate with p = 1.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    if z is None or (hasattr(z, "shape") and np.asarray(z).size == 0):
        groups = np.zeros(n, dtype=np.int64)
    else:
        z = np.asarray(z)
        if z.ndim == 1:
            z = z[:, None]
        _, groups = np.unique(z, axis=0, return_inverse=True)
    g2 = 0.0
    dof = 0
    for g in np.unique(groups):
        mask = groups == g
        xs, ys = x[mask], y[mask]
        x_levels, x_idx = np.unique(xs, return_inverse=True)
        y_levels, y_idx = np.unique(ys, return_inverse=True)
        if len(x_levels) < 2 or len(y_levels) < 2:
            continue
        table = np.zeros((len(x_levels), len(y_levels)))
        np.add.at(table, (x_idx, y_idx), 1.0)
        total = table.sum()
        expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / total
        observed = table > 0
        g2 += 2.0 * float((table[observed] * np.log(table[observed] / expected[observed])).sum())
        dof += (len(x_levels) - 1) * (len(y_levels) - 1)
    if dof == 0:
        return CiResult(0.0, 0, 1.0, degenerate=True)
    return CiResult(g2, dof, float(chi2.sf(g2, dof)), degenerate=False)


@dataclass
class CiFilterResult:
    kept: list[str]
    dropped: list[str]
    degenerate: list[str]  # constant columns, skipped as independent


def ci_filter(q: np.ndarray, y: np.ndarray, names: list[str],
              significance: float = 0.05, cond_cap: int = 3) -> CiFilterResult:
    """Keep variables that stay associated with y given recently kept ones.

    Variables are visited in proposal order; the conditioning set is the
    cond_cap most recently kept variables, bounding contingency-cell
    sparsity.
    """
    if q.shape[1] != len(names):
        raise ValueError("column count does not match names")
    if q.shape[1] == 0:
        raise ValueError("ci_filter requires at least one column")
    kept: list[int] = []
    dropped: list[str] = []
    degenerate: list[str] = []
    for j in range(q.shape[1]):
        col = q[:, j]
        if np.all(col == col[0]):
            degenerate.append(names[j])
            dropped.append(names[j])
            continue
        cond = q[:, kept[-cond_cap:]] if kept else None
        res = g2_test(col, y, cond)
        if not res.degenerate and res.p_value < significance:
            kept.append(j)
        else:
            dropped.append(names[j])
    return CiFilterResult([names[j] for j in kept], dropped, degenerate)
