"""Slow, obviously-correct reference implementations used as test oracles."""

import math
import random
from fractions import Fraction

import numpy as np

from wareorch.baselines import best_split, best_split_bruteforce
from wareorch.preprocess import FeatureMatrix, cap_outliers, impute_mode, prune_correlated


def mode_oracle(column):
    present = [v for v in column if v is not None]
    best = None
    for cand in sorted(set(present)):
        n = sum(1 for v in present if v == cand)
        if best is None or n > best[1]:
            best = (cand, n)
    return [best[0] if v is None else v for v in column]


def cap_oracle(column, pct):
    s = sorted(column)
    rank = math.ceil(Fraction(repr(pct)) * len(s))
    q = s[max(rank, 1) - 1]
    return [q if v > q else v for v in column]


def pearson_oracle(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return 0.0
    return sxy / math.sqrt(sxx * syy)


def prune_oracle(columns, threshold):
    kept, removed = [], []
    for j, col in enumerate(columns):
        if any(abs(pearson_oracle(columns[i], col)) > threshold for i in kept):
            removed.append(j)
        else:
            kept.append(j)
    return removed


def random_mode_case(rng):
    n = rng.randint(1, 12)
    col = [rng.choice("ABCD") if rng.random() < 0.7 else None for _ in range(n)]
    if all(v is None for v in col):
        col[rng.randrange(n)] = rng.choice("ABCD")
    return col


def random_cap_case(rng):
    n = rng.randint(1, 30)
    col = [float(rng.randint(0, 20)) for _ in range(n)]
    if rng.random() < 0.5:
        col[rng.randrange(n)] = float(rng.randint(100, 1000))
    pct = rng.choice([0.5, 0.75, 0.9, 0.95, 0.99, 0.07, 0.33])
    return col, pct


def random_prune_case(rng):
    n = rng.randint(5, 25)
    base = [rng.gauss(0, 1) for _ in range(n)]
    cols = []
    for _ in range(rng.randint(2, 6)):
        kind = rng.random()
        if kind < 0.15:
            cols.append([2.0] * n)
        elif kind < 0.6:
            noise = rng.uniform(0.0, 1.5)
            cols.append([b + noise * rng.gauss(0, 1) for b in base])
        else:
            cols.append([rng.gauss(0, 1) for _ in range(n)])
    return cols, rng.choice([0.5, 0.8, 0.9])


def random_gini_case(rng):
    n = rng.randint(2, 25)
    x = [float(rng.randint(0, 8)) for _ in range(n)]
    y = [rng.random() < 0.4 for _ in range(n)]
    return x, y


def check_mode(rng) -> bool:
    col = random_mode_case(rng)
    return impute_mode(col) == mode_oracle(col)


def check_cap(rng) -> bool:
    col, pct = random_cap_case(rng)
    return cap_outliers(col, pct).tolist() == cap_oracle(col, pct)


def check_prune(rng) -> bool:
    cols, thr = random_prune_case(rng)
    names = [f"c{j}" for j in range(len(cols))]
    m = FeatureMatrix(names, {c: np.array(v) for c, v in zip(names, cols)}, {c: "numeric" for c in names}, len(cols[0]))
    _, removed = prune_correlated(m, thr)
    return removed == [names[j] for j in prune_oracle(cols, thr)]


def check_gini(rng) -> bool:
    x, y = random_gini_case(rng)
    return best_split(np.array(x), np.array(y)) == best_split_bruteforce(x, y)


ORACLE_CHECKS = {"mode": check_mode, "cap": check_cap, "prune": check_prune, "gini": check_gini}


def run_oracle(name: str, n: int = 500, seed: int = 0) -> int:
    """Number of mismatches over ``n`` random inputs."""
    rng = random.Random(f"{name}-{seed}")
    return sum(not ORACLE_CHECKS[name](rng) for _ in range(n))
