"""Distances between finitely supported measures and between stochastic kernels.

Measures are dense weight vectors over the points of a ground
:class:`~beliefbounds.model.FiniteMetricSpace`.  Wasserstein-1 is solved
exactly: by the CDF formula when the ground space lies on a line, otherwise as
a transportation LP (HiGHS simplex).  No entropic smoothing anywhere.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from scipy.optimize import linprog

from .model import FiniteMetricSpace

WEIGHT_TOL = 1e-9

Metric = Literal["TV", "W1", "BL"]


class MetricError(ValueError):
    """Raised for incompatible or malformed measures."""


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise MetricError(f"measures live on different universes: shapes {p.shape} and {q.shape}")
    return p, q


def _check_normalized(p, q):
    for name, v in (("p", p), ("q", q)):
        if np.any(v < -WEIGHT_TOL) or abs(v.sum() - 1.0) > WEIGHT_TOL:
            raise MetricError(f"{name} is not a probability vector (sum={v.sum()!r})")


def tv_distance(p, q) -> float:
    """Sum of absolute mass differences; lies in [0, 2]."""
    p, q = _check_pair(p, q)
    return float(np.abs(p - q).sum())


def _w1_line(p, q, coords) -> float:
    order = np.argsort(coords, kind="stable")
    xs = coords[order]
    cdf = np.cumsum(p[order] - q[order])[:-1]
    return float(np.abs(cdf) @ np.diff(xs))


def w1_line_rows(p, rows, coords) -> np.ndarray:
    """W1 from ``p`` to each row of ``rows`` on a 1-D ground space."""
    order = np.argsort(coords, kind="stable")
    gaps = np.diff(coords[order])
    cdf = np.cumsum(np.asarray(rows)[:, order] - np.asarray(p)[order], axis=1)[:, :-1]
    return np.abs(cdf) @ gaps


def _transport_lp(p, q, cost) -> float:
    # drop zero-mass atoms; the LP only needs the supports
    si = np.flatnonzero(p > 0)
    sj = np.flatnonzero(q > 0)
    c = cost[np.ix_(si, sj)]
    # a single source or sink forces the plan
    if len(si) == 1:
        return float(c[0] @ q[sj])
    if len(sj) == 1:
        return float(p[si] @ c[:, 0])
    n, m = c.shape
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([p[si], q[sj]])
    b_eq[n:] *= b_eq[:n].sum() / b_eq[n:].sum()
    res = linprog(c.ravel(), A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise MetricError(f"transport solver failed: {res.message}")
    return float(res.fun)


def w1_distance(p, q, ground: FiniteMetricSpace) -> float:
    """Exact Wasserstein-1 distance under the ground metric."""
    p, q = _check_pair(p, q)
    if ground.dist.shape != (len(p), len(p)):
        raise MetricError("ground metric does not match the measures' universe")
    _check_normalized(p, q)
    if np.array_equal(p, q):
        return 0.0
    if ground.is_line:
        return _w1_line(p, q, ground.coords)
    # common mass cancels in the Kantorovich problem
    common = np.minimum(p, q)
    mass = 1.0 - common.sum()
    if mass <= 0:
        return 0.0
    return mass * _transport_lp((p - common) / mass, (q - common) / mass, ground.dist)


def w1_dual(p, q, ground: FiniteMetricSpace) -> float:
    """Kantorovich dual: max sum f (p - q) over 1-Lipschitz f.

    Independent LP used to cross-check :func:`w1_distance`.
    """
    p, q = _check_pair(p, q)
    n = len(p)
    rows, rhs = [], []
    for i in range(n):
        for j in range(n):
            if i != j:
                r = np.zeros(n)
                r[i], r[j] = 1.0, -1.0
                rows.append(r)
                rhs.append(ground.dist[i, j])
    bounds = [(0.0, 0.0)] + [(None, None)] * (n - 1)
    res = linprog(-(p - q), A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise MetricError(f"dual solver failed: {res.message}")
    return float(-res.fun)


def _capped_cost(plan, b) -> float:
    w, d = plan
    return float(w @ np.minimum(b * d, 2.0 * (1.0 - b)))


def _bl_from_plans(plans) -> float:
    """max over b in [0, 1] of min over vertex plans of the capped transport cost.

    Each plan is (masses, distances) of its edges.  Every plan's cost is
    concave piecewise linear in b with kinks at b = 2/(2 + d), so between
    consecutive kinks the minimum of two plans is attained at an endpoint or
    where the two lines cross.
    """
    dists = np.concatenate([d for _, d in plans])
    kinks = np.unique(np.concatenate([[0.0, 1.0], 2.0 / (2.0 + dists[dists > 0])]))
    cands = list(kinks)
    if len(plans) == 2:
        gap = [_capped_cost(plans[0], b) - _capped_cost(plans[1], b) for b in kinks]
        for k in range(len(kinks) - 1):
            if gap[k] * gap[k + 1] < 0:
                cands.append(kinks[k] + (kinks[k + 1] - kinks[k]) * gap[k] / (gap[k] - gap[k + 1]))
    return max(min(_capped_cost(pl, b) for pl in plans) for b in cands)


def _bl_small(diff, dist) -> float | None:
    """Exact BL without an LP when the transport polytope has at most two vertices.

    With budgets a + b = 1 the inner sup is optimal transport under the cost
    min(b d, 2a), which is concave in b.  One source or one sink forces the
    plan; two sources and two sinks leave a segment of plans with two
    vertices.  Any pair of measures on at most four points falls in one of
    these cases.  Returns None otherwise.
    """
    pos = np.flatnonzero(diff > 0)
    neg = np.flatnonzero(diff < 0)
    if len(pos) == 0:
        return 0.0
    if len(pos) == 1 or len(neg) == 1:
        hub, others = (pos[0], neg) if len(pos) == 1 else (neg[0], pos)
        return _bl_from_plans([(np.abs(diff[others]), dist[hub, others])])
    if len(pos) == 2 and len(neg) == 2:
        (i1, i2), (j1, j2) = pos, neg
        s1, s2 = diff[i1], diff[i2]
        t1 = -diff[j1]
        d = np.array([dist[i1, j1], dist[i1, j2], dist[i2, j1], dist[i2, j2]])
        plans = []
        for x in (max(0.0, t1 - s2), min(s1, t1)):
            w = np.maximum(np.array([x, s1 - x, t1 - x, s2 - t1 + x]), 0.0)
            plans.append((w, d))
        return _bl_from_plans(plans)
    return None


def bl_distance(p, q, ground: FiniteMetricSpace) -> float:
    """Bounded-Lipschitz distance: sup over f with ||f||_inf + ||f||_Lip <= 1.

    Single LP in the values f(x) and the two budgets a = sup|f|, b = Lip(f);
    skipped when the transport polytope is small enough to enumerate
    (see ``_bl_small``).
    """
    p, q = _check_pair(p, q)
    if ground.dist.shape != (len(p), len(p)):
        raise MetricError("ground metric does not match the measures' universe")
    diff = p - q
    if not np.any(diff):
        return 0.0
    small = _bl_small(diff, ground.dist)
    if small is not None:
        return small
    return bl_distance_lp(p, q, ground)


def bl_distance_lp(p, q, ground: FiniteMetricSpace) -> float:
    """The BL linear program, always solved in full."""
    p, q = _check_pair(p, q)
    diff = p - q
    n = len(p)
    # variables: f_0..f_{n-1}, a, b
    rows = []
    rhs = []
    for i in range(n):
        r = np.zeros(n + 2)
        r[i], r[n] = 1.0, -1.0
        rows.append(r)
        r = np.zeros(n + 2)
        r[i], r[n] = -1.0, -1.0
        rows.append(r)
        rhs += [0.0, 0.0]
    for i in range(n):
        for j in range(n):
            if i != j:
                r = np.zeros(n + 2)
                r[i], r[j], r[n + 1] = 1.0, -1.0, -ground.dist[i, j]
                rows.append(r)
                rhs.append(0.0)
    r = np.zeros(n + 2)
    r[n] = r[n + 1] = 1.0
    rows.append(r)
    rhs.append(1.0)
    c = np.concatenate([-diff, [0.0, 0.0]])
    bounds = [(None, None)] * n + [(0.0, None), (0.0, None)]
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise MetricError(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, float(-res.fun))


def measure_distance(p, q, metric: Metric, ground: FiniteMetricSpace | None = None) -> float:
    if metric == "TV":
        return tv_distance(p, q)
    if ground is None:
        raise MetricError(f"{metric} needs a ground metric")
    if metric == "W1":
        return w1_distance(p, q, ground)
    if metric == "BL":
        return bl_distance(p, q, ground)
    raise MetricError(f"unknown metric {metric!r}")


def _rows_distance(a: np.ndarray, b: np.ndarray, metric: Metric, ground) -> np.ndarray:
    """Distances between matching rows; ``a`` and ``b`` have shape (..., n)."""
    if a.shape != b.shape:
        raise MetricError(f"dimension mismatch: {a.shape} vs {b.shape}")
    flat_a = a.reshape(-1, a.shape[-1])
    flat_b = b.reshape(-1, b.shape[-1])
    if metric == "TV":
        vals = np.abs(flat_a - flat_b).sum(axis=1)
    elif metric == "W1" and ground is not None and ground.is_line:
        if ground.size != a.shape[-1]:
            raise MetricError("ground metric does not match kernel rows")
        order = np.argsort(ground.coords, kind="stable")
        gaps = np.diff(ground.coords[order])
        cdf = np.cumsum(flat_a[:, order] - flat_b[:, order], axis=1)[:, :-1]
        vals = np.abs(cdf) @ gaps
    else:
        vals = np.array([measure_distance(x, y, metric, ground) for x, y in zip(flat_a, flat_b)])
    return vals.reshape(a.shape[:-1])


def kernel_distance_rows(A, B, metric: Metric, ground: FiniteMetricSpace | None = None) -> np.ndarray:
    """Row-wise distances, shape (actions, states)."""
    return _rows_distance(np.asarray(A, float), np.asarray(B, float), metric, ground)


def kernel_distance(A, B, metric: Metric, ground: FiniteMetricSpace | None = None) -> float:
    """Uniform kernel distance: sup over (x, u) of the row distance."""
    rows = kernel_distance_rows(A, B, metric, ground)
    return float(rows.max()) if rows.size else 0.0


def channel_distance(Qa, Qb, metric: Metric, ground: FiniteMetricSpace | None = None) -> float:
    """Uniform distance between observation channels (rows indexed by state)."""
    rows = _rows_distance(np.asarray(Qa, float), np.asarray(Qb, float), metric, ground)
    return float(rows.max()) if rows.size else 0.0


def dobrushin(Q) -> float:
    """Minimal row overlap: min over state pairs of sum_z min(Q(z|x), Q(z|y))."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if n < 2:
        return 1.0
    best = 1.0
    for x in range(n - 1):
        overlap = np.minimum(Q[x], Q[x + 1:]).sum(axis=1)
        best = min(best, float(overlap.min()))
    return min(1.0, max(0.0, best))
