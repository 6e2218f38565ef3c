"""Independent reference implementations used as test oracles.

Each function is written from the textbook definition with plain Python loops
and shares no code with the package, so agreement is evidence of correctness
rather than of a shared bug.
"""
from __future__ import annotations

import itertools
import math


# --------------------------------------------------------------------------- #
# losses


def bce(truth, pred, clamp=1e-7):
    total = 0.0
    for y, p in zip(truth, pred):
        p = min(max(p, clamp), 1 - clamp)
        total -= y * math.log(p) + (1 - y) * math.log(1 - p)
    return total


def multi_margin(truth, pred):
    pos = [i for i, y in enumerate(truth) if y == 1]
    neg = [j for j, y in enumerate(truth) if y == 0]
    if not pos or not neg:
        return 0.0
    total = 0.0
    for i in pos:
        for j in neg:
            total += max(0.0, 1.0 - (pred[i] - pred[j]))
    return total / len(truth)


def ddi_penalty(pred, matrix):
    total = 0.0
    n = len(pred)
    for i in range(n):
        for j in range(n):
            total += matrix[i][j] * pred[i] * pred[j]
    return total


# --------------------------------------------------------------------------- #
# metrics


def jaccard(truth, pred):
    inter = sum(1 for x in truth if x in pred)
    union = len(set(truth) | set(pred))
    return inter / union if union else 0.0


def f1(truth, pred):
    hit = sum(1 for x in pred if x in truth)
    if hit == 0:
        return 0.0
    p, r = hit / len(pred), hit / len(truth)
    return 2 * p * r / (p + r)


def ddi_rate(sets, matrix):
    bad = total = 0
    for s in sets:
        for a, b in itertools.combinations(sorted(s), 2):
            total += 1
            bad += matrix[a][b]
    return bad / total if total else 0.0


def prauc(truth, scores):
    """Sum over every cut-off k of precision@k times the recall gained at k."""
    n = len(scores)
    ranking = sorted(range(n), key=lambda i: (-scores[i], i))
    if not truth:
        return 0.0
    area = 0.0
    prev_recall = 0.0
    for k in range(1, n + 1):
        top = ranking[:k]
        hits = sum(1 for i in top if i in truth)
        precision = hits / k
        recall = hits / len(truth)
        area += precision * (recall - prev_recall)
        prev_recall = recall
    return area


def avg_med(sets):
    return sum(len(s) for s in sets) / len(sets) if sets else 0.0


# --------------------------------------------------------------------------- #
# structure scores and exhaustive search


def bdeu(node, parents, rows, ess=1.0):
    """BDeu over every parent configuration, counted with explicit loops."""
    parents = sorted(parents)
    q = 2 ** len(parents)
    counts = {}
    for row in rows:
        key = tuple(row[p] for p in parents)
        c = counts.setdefault(key, [0, 0])
        c[row[node]] += 1
    score = 0.0
    for config in itertools.product((0, 1), repeat=len(parents)):
        n0, n1 = counts.get(config, [0, 0])
        a_j, a_jk = ess / q, ess / (2 * q)
        score += math.lgamma(a_j) - math.lgamma(a_j + n0 + n1)
        score += math.lgamma(a_jk + n0) - math.lgamma(a_jk)
        score += math.lgamma(a_jk + n1) - math.lgamma(a_jk)
    return score


def is_acyclic(n, edges):
    state = [0] * n

    def visit(u):
        state[u] = 1
        for a, b in edges:
            if a == u:
                if state[b] == 1 or (state[b] == 0 and not visit(b)):
                    return False
        state[u] = 2
        return True

    return all(state[u] == 2 or visit(u) for u in range(n))


def all_dags(n):
    pairs = list(itertools.combinations(range(n), 2))
    out = []
    for choice in itertools.product((None, 0, 1), repeat=len(pairs)):
        edges = []
        for (a, b), c in zip(pairs, choice):
            if c == 0:
                edges.append((a, b))
            elif c == 1:
                edges.append((b, a))
        if is_acyclic(n, edges):
            out.append(frozenset(edges))
    return out


def dag_score(n, edges, rows, ess=1.0):
    return sum(bdeu(v, [a for a, b in edges if b == v], rows, ess) for v in range(n))


def exhaustive_best(n, rows, ess=1.0):
    """Best score and every DAG attaining it (Markov-equivalent DAGs tie exactly)."""
    scored = [(dag_score(n, e, rows, ess), e) for e in all_dags(n)]
    best = max(s for s, _ in scored)
    return best, [e for s, e in scored if abs(s - best) < 1e-7]
