"""Pure-Python fallback for the compiled kernels in ``_ckernels.pyx``.

Loop structure and floating-point operation order mirror the Cython code so
the two backends agree bit for bit.
"""

import math

import numpy as np


def softplus(z):
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def batch_hard_select(dist, labels):
    dist = np.asarray(dist).tolist()
    labels = np.asarray(labels).tolist()
    n = len(labels)
    pos = [-1] * n
    neg = [-1] * n
    for a in range(n):
        best_p = -1.0
        best_n = 0.0
        row = dist[a]
        la = labels[a]
        for j in range(n):
            d = row[j]
            if labels[j] == la:
                if j != a and d > best_p:
                    best_p = d
                    pos[a] = j
            elif neg[a] < 0 or d < best_n:
                best_n = d
                neg[a] = j
    return np.array(pos, dtype=np.int64), np.array(neg, dtype=np.int64)


def triplet_all(dist, labels, margin, use_softplus):
    dist = np.asarray(dist).tolist()
    labels = np.asarray(labels).tolist()
    n = len(labels)
    coef = [[0.0] * n for _ in range(n)]
    value = 0.0
    count = 0
    for a in range(n):
        la = labels[a]
        row = dist[a]
        for p in range(n):
            if p == a or labels[p] != la:
                continue
            for q in range(n):
                if labels[q] == la:
                    continue
                count += 1
                z = margin + row[p] - row[q]
                if use_softplus:
                    value += softplus(z)
                    g = sigmoid(z)
                elif z > 0.0:
                    value += z
                    g = 1.0
                else:
                    continue
                coef[a][p] += g
                coef[a][q] -= g
    return value, np.array(coef, dtype=np.float64).reshape(n, n), count


def query_metrics(order, q_ids, q_cams, g_ids, g_cams):
    order = np.asarray(order).tolist()
    q_ids, q_cams = np.asarray(q_ids).tolist(), np.asarray(q_cams).tolist()
    g_ids, g_cams = np.asarray(g_ids).tolist(), np.asarray(g_cams).tolist()
    nq = len(order)
    ap = [math.nan] * nq
    first = [0] * nq
    kept = [0] * nq
    for i in range(nq):
        qi, qc = q_ids[i], q_cams[i]
        rank = 0
        hits = 0
        ap_sum = 0.0
        for g in order[i]:
            if g_ids[g] == qi and g_cams[g] == qc:
                continue
            rank += 1
            if g_ids[g] == qi:
                hits += 1
                ap_sum += hits / rank
                if first[i] == 0:
                    first[i] = rank
        kept[i] = rank
        if hits > 0:
            ap[i] = ap_sum / hits
    return (
        np.array(ap, dtype=np.float64),
        np.array(first, dtype=np.int64),
        np.array(kept, dtype=np.int64),
    )
