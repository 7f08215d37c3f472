"""Independent reference implementations used by the tests."""

import math

import numpy as np
import torch


def np_softmax(z, tau=1.0):
    e = np.exp((np.asarray(z, float) - np.max(z)) / tau)
    return e / e.sum()


def np_kl(p, q):
    return float(np.sum(p * (np.log(p) - np.log(q))))


def scalar_distance(u, v):
    acc = 0.0
    for a, b in zip(u, v):
        d = float(a) - float(b)
        acc += d * d  # not d ** 2: libm pow is not always correctly rounded
    return math.sqrt(max(acc, 1e-12))


def brute_triplet(x, y, margin):
    """Batch-hard hinge by explicit enumeration of every (positive, negative) pair per anchor."""
    x, y = np.asarray(x, float), np.asarray(y)
    n = len(y)
    vals = []
    for a in range(n):
        pos = [p for p in range(n) if p != a and y[p] == y[a]]
        neg = [q for q in range(n) if y[q] != y[a]]
        if not pos or not neg:
            continue
        worst = -math.inf
        for p in pos:
            for q in neg:
                worst = max(worst, scalar_distance(x[a], x[p]) - scalar_distance(x[a], x[q]))
        vals.append(max(0.0, worst + margin))
    return float(torch.tensor(vals, dtype=torch.float64).mean())  # same reduction order as torch


def brute_rank_positions(matches):
    """1-based ranks of the relevant entries in a ranked boolean list."""
    return [i + 1 for i, m in enumerate(matches) if m]


def brute_cmc(match_lists, max_k):
    curve = []
    for k in range(1, max_k + 1):
        hit = 0
        for m in match_lists:
            if any(m[:k]):
                hit += 1
        curve.append(hit / len(match_lists))
    return curve


def brute_ap(matches):
    ranks = brute_rank_positions(matches)
    if not ranks:
        return 0.0
    total = 0.0
    for j, r in enumerate(ranks, start=1):
        total += j / r
    return total / len(ranks)


def finite_difference(fn, x, step=1e-3):
    """Central differences of scalar ``fn`` at float64 tensor ``x``."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat, g = x.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        old = float(flat[i])
        with torch.no_grad():
            flat[i] = old + step
            hi = float(fn(x))
            flat[i] = old - step
            lo = float(fn(x))
        flat[i] = old
        g[i] = (hi - lo) / (2 * step)
    return grad


def analytic_gradient(fn, x):
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    return x.grad.detach()


def relative_error(a, b):
    return float((a - b).norm() / max(float(a.norm()), float(b.norm()), 1e-12))
