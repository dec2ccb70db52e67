"""Independent reference computations used by unit and acceptance tests."""

from __future__ import annotations

import itertools
import math

import numpy as np
import torch


def brute_force_log_likelihood(log_probs: np.ndarray, targets: list[int]) -> float:
    """Sum over every monotonic path of the lattice ``log_probs [T, U+1, V+1]``.

    A path is a sequence of T blanks and U emissions whose last symbol is a
    blank; enumerated explicitly as positions of the emissions.
    """
    T, U1, _ = log_probs.shape
    U = U1 - 1
    total = []
    # choose which of the first T-1+U steps are emissions
    for emit_steps in itertools.combinations(range(T - 1 + U), U):
        t = u = 0
        lp = 0.0
        emit_set = set(emit_steps)
        for step in range(T - 1 + U):
            if step in emit_set:
                lp += log_probs[t, u, targets[u]]
                u += 1
            else:
                lp += log_probs[t, u, 0]
                t += 1
        lp += log_probs[T - 1, U, 0]
        total.append(lp)
    m = max(total)
    return m + math.log(sum(math.exp(x - m) for x in total))


def uniform_closed_form(T: int, U: int, V: int) -> float:
    """Negative log-likelihood when every symbol has probability 1/(V+1)."""
    return -(math.log(math.comb(T + U - 1, U)) - (T + U) * math.log(V + 1))


def finite_difference_grads(loss_fn, params: list[torch.nn.Parameter], eps: float = 1e-5) -> list[torch.Tensor]:
    """Central differences for every element of every parameter."""
    out = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                g.view(-1)[i] = (up - down) / (2 * eps)
            out.append(g)
    return out


def set_partitions(items: list):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1 :]
        yield [[first]] + part


def threshold_partitions(distance: np.ndarray, threshold: float) -> list[list[list[int]]]:
    """Partitions whose clusters all have average within-cluster pair
    distance <= threshold and whose cluster pairs all have average linkage
    > threshold."""
    n = distance.shape[0]
    good = []
    for part in set_partitions(list(range(n))):
        ok = True
        for c in part:
            if len(c) > 1:
                within = [distance[i, j] for i, j in itertools.combinations(c, 2)]
                ok &= float(np.mean(within)) <= threshold
        for a, b in itertools.combinations(part, 2):
            ok &= float(distance[np.ix_(a, b)].mean()) > threshold
        if ok:
            good.append(sorted(sorted(c) for c in part))
    return good


def canonical_partition(labels: dict | list) -> frozenset:
    if isinstance(labels, dict):
        groups: dict = {}
        for k, g in labels.items():
            groups.setdefault(g, set()).add(k)
        return frozenset(frozenset(v) for v in groups.values())
    return frozenset(frozenset(c) for c in labels)
