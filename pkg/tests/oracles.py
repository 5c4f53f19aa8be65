"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package's numerics; only plain loops and numpy
scalar arithmetic.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def conv_loop(x, k, stride=1, pad=0):
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    xp = np.zeros((h + 2 * pad, w + 2 * pad, cin))
    xp[pad : pad + h, pad : pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for o in range(cout):
                s = 0.0
                for a in range(kh):
                    for b in range(kw):
                        for c in range(cin):
                            s += xp[i * stride + a, j * stride + b, c] * k[a, b, c, o]
                out[i, j, o] = s
    return out


def gap_loop(x):
    h, w, c = x.shape
    out = np.zeros(c)
    for ch in range(c):
        s = 0.0
        for i in range(h):
            for j in range(w):
                s += x[i, j, ch]
        out[ch] = s / (h * w)
    return out


def bap_loop(F, A):
    h, w, c = F.shape
    m = A.shape[2]
    P = np.zeros((m, c))
    for k in range(m):
        for ch in range(c):
            s = 0.0
            for i in range(h):
                for j in range(w):
                    s += A[i, j, k] * F[i, j, ch]
            v = s / (h * w)
            P[k, ch] = math.copysign(math.sqrt(abs(v) + 1e-12), v) if v != 0 else 0.0
        norm = math.sqrt(sum(P[k, ch] ** 2 for ch in range(c)))
        if norm > 0:
            for ch in range(c):
                P[k, ch] /= norm
    return P


def relu(x):
    return np.where(x > 0, x, 0.0)


def forward_loop(tensors, image, mean, std, gain):
    """Logits of the attention network, layer by layer with loop convolutions."""
    x = (image - mean) / std
    for i in (1, 2, 3):
        x = relu(conv_loop(x, tensors[f"conv{i}_w"], 2, 1) + tensors[f"conv{i}_b"])
    A = relu(conv_loop(x, tensors["attn_w"], 1, 0))
    P = bap_loop(x, A)
    flat = P.reshape(-1)
    W, b = tensors["cls_w"], tensors["cls_b"]
    logits = np.zeros(W.shape[1])
    for o in range(W.shape[1]):
        s = 0.0
        for i in range(W.shape[0]):
            s += flat[i] * W[i, o]
        logits[o] = gain * s + b[o]
    return logits


def bbox_scan(m, theta):
    """(top, bottom, left, right) of cells >= theta, full extent if none."""
    h, w = m.shape
    top, bottom, left, right = h, -1, w, -1
    for i in range(h):
        for j in range(w):
            if m[i, j] >= theta:
                top, bottom = min(top, i), max(bottom, i)
                left, right = min(left, j), max(right, j)
    if bottom < 0:
        return 0, h - 1, 0, w - 1
    return top, bottom, left, right


def drop_loop(image, a_k, theta):
    """Per-pixel erase: nearest source cell of the max-normalised map above theta."""
    s = image.shape[0]
    h, w = a_k.shape
    peak = a_k.max()
    out = image.copy()
    for i in range(s):
        for j in range(image.shape[1]):
            v = a_k[(i * h) // s, (j * w) // image.shape[1]]
            if peak > 0 and v / peak > theta:
                out[i, j] = 0.0
    return out


def _tree_flows(edges, a, b):
    """Flows on a spanning tree of the bipartite graph fixed by the marginals, or None."""
    m = len(a)
    rem = {("s", i): a[i] for i in range(m)}
    rem.update({("t", j): b[j] for j in range(len(b))})
    adj = {v: set() for v in rem}
    for i, j in edges:
        adj[("s", i)].add(("t", j))
        adj[("t", j)].add(("s", i))
    flows = {}
    live = set(edges)
    while live:
        leaf = next((v for v in adj if len(adj[v]) == 1), None)
        if leaf is None:
            return None
        other = adj[leaf].pop()
        adj[other].discard(leaf)
        e = (leaf[1], other[1]) if leaf[0] == "s" else (other[1], leaf[1])
        f = rem[leaf]
        flows[e] = f
        rem[other] -= f
        rem[leaf] = 0.0
        live.discard(e)
    return flows


def _is_tree(edges, m, n):
    parent = list(range(m + n))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for i, j in edges:
        ru, rv = find(i), find(m + j)
        if ru == rv:
            return False
        parent[ru] = rv
    return True


def transport_bfs(a, b, d):
    """Minimum cost over every basic feasible solution (spanning-tree bases)."""
    m, n = d.shape
    cells = [(i, j) for i in range(m) for j in range(n)]
    best = math.inf
    for edges in itertools.combinations(cells, m + n - 1):
        if not _is_tree(edges, m, n):
            continue
        flows = _tree_flows(edges, a, b)
        if flows is None or min(flows.values()) < -1e-12:
            continue
        best = min(best, sum(f * d[e] for e, f in flows.items()))
    return best


def rank_average(x):
    """1-based ranks by sorting, ties share their average rank."""
    x = list(x)
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for t in range(i, j + 1):
            ranks[order[t]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman_rank_sort(x, y):
    rx, ry = rank_average(x), rank_average(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((p - mx) * (q - my) for p, q in zip(rx, ry))
    den = math.sqrt(sum((p - mx) ** 2 for p in rx) * sum((q - my) ** 2 for q in ry))
    return num / den


def central_diff(f, x, eps):
    """Numerical gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        fp = f(x)
        x[idx] = old - eps
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def nn1_accuracy(train_x, train_y, test_x, test_y):
    tx = train_x.reshape(len(train_x), -1)
    hits = 0
    for xi, yi in zip(test_x.reshape(len(test_x), -1), test_y):
        d = ((tx - xi) ** 2).sum(axis=1)
        hits += int(train_y[int(np.argmin(d))] == yi)
    return hits / len(test_y)
