"""Exact transportation problem via min-cost flow.

Successive shortest augmenting paths on the residual network, with Dijkstra
on reduced costs and Johnson potentials. The network is tiny and dense
(super source -> m supplies -> n demands -> super sink), so Dijkstra runs in
O(V^2) over dense numpy rows instead of a heap.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, UnbalancedDomainError

BALANCE_TOL = 1e-6


def _dijkstra(cap, cost, pi, source, tol):
    v = len(pi)
    dist = np.full(v, np.inf)
    parent = np.full(v, -1, dtype=np.intp)
    done = np.zeros(v, dtype=bool)
    dist[source] = 0.0
    for _ in range(v):
        cand = np.where(done, np.inf, dist)
        u = int(np.argmin(cand))
        if not np.isfinite(cand[u]):
            break
        done[u] = True
        ok = (cap[u] > tol) & ~done
        # clamp tiny negative reduced costs from rounding
        rc = np.maximum(cost[u] + pi[u] - pi, 0.0)
        nd = dist[u] + rc
        better = ok & (nd < dist)
        dist[better] = nd[better]
        parent[better] = u
    return dist, parent


def solve_transport(supply, demand, cost):
    """Minimise ``sum f_ij * cost_ij`` subject to row sums = supply, column sums = demand.

    Returns ``(flow, total_cost)``. Supplies and demands must be non-negative
    with equal totals up to ``BALANCE_TOL``; both are rescaled to the mean of
    the two totals before solving.
    """
    a = np.asarray(supply, dtype=np.float64)
    b = np.asarray(demand, dtype=np.float64)
    d = np.asarray(cost, dtype=np.float64)
    m, n = len(a), len(b)
    if d.shape != (m, n):
        raise InvalidInputError(f"cost matrix shape {d.shape} != ({m}, {n})")
    if m == 0 or n == 0:
        raise InvalidInputError("empty supply or demand")
    if np.any(a < 0) or np.any(b < 0) or not np.all(np.isfinite(d)):
        raise InvalidInputError("supplies/demands must be non-negative and costs finite")
    if abs(a.sum() - b.sum()) > BALANCE_TOL:
        raise UnbalancedDomainError(f"total supply {a.sum()} != total demand {b.sum()}")
    total = 0.5 * (a.sum() + b.sum())
    if total <= 0:
        raise InvalidInputError("total mass must be positive")
    a = a * (total / a.sum())
    b = b * (total / b.sum())

    # node layout: 0 = source, 1..m supplies, m+1..m+n demands, m+n+1 = sink
    nv = m + n + 2
    src, snk = 0, nv - 1
    cap = np.zeros((nv, nv))
    arc_cost = np.zeros((nv, nv))
    cap[src, 1 : m + 1] = a
    cap[1 : m + 1, m + 1 : m + n + 1] = np.inf
    cap[m + 1 : m + n + 1, snk] = b
    arc_cost[1 : m + 1, m + 1 : m + n + 1] = d
    arc_cost[m + 1 : m + n + 1, 1 : m + 1] = -d.T
    flow = np.zeros((nv, nv))

    tol = 1e-15 * max(total, 1.0)
    pi = np.zeros(nv)
    remaining = total
    # each augmentation saturates at least one arc; bound guards against stalls
    for _ in range(4 * (m + 1) * (n + 1) + 16):
        if remaining <= tol:
            break
        dist, parent = _dijkstra(cap, arc_cost, pi, src, tol)
        if not np.isfinite(dist[snk]):
            break
        pi = pi + np.where(np.isfinite(dist), np.minimum(dist, dist[snk]), dist[snk])
        path = []
        v = snk
        while v != src:
            u = parent[v]
            path.append((u, v))
            v = u
        delta = min(remaining, min(cap[u, v] for u, v in path))
        for u, v in path:
            cap[u, v] -= delta
            cap[v, u] += delta
            flow[u, v] += delta
        remaining -= delta

    f = flow[1 : m + 1, m + 1 : m + n + 1] - flow[m + 1 : m + n + 1, 1 : m + 1].T
    f = np.maximum(f, 0.0)
    return f, float((f * d).sum())
