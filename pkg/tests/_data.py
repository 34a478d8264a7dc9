"""Random row generators shared by the equivalence tests."""

import random

WORDS = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran", "über", "naïve", "x", "?", "don't", "42"]

# parameter overrides that keep slow modules fast in bulk tests
FAST_PARAMS = {"paired_bootstrap": {"iterations": 50}}


def sentence(rng, lo=1, hi=9):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def column(rng, name, typ, n, n_labels=3):
    if typ == "int":
        return [rng.randrange(n_labels) for _ in range(n)]
    if typ == "float":
        return [rng.uniform(-5, 5) for _ in range(n)]
    if typ == "string":
        if name == "data":
            # measurement text: some repeats so duplicate counts are interesting
            pool = [sentence(rng) for _ in range(max(1, n // 2))]
            return [rng.choice(pool) for _ in range(n)]
        return [sentence(rng) for _ in range(n)]
    if typ == "string-sequence":
        return [[sentence(rng) for _ in range(rng.randint(1, 3))] for _ in range(n)]
    if typ == "float-sequence":
        return [[-rng.expovariate(1.0) for _ in range(rng.randint(1, 6))] for _ in range(n)]
    raise ValueError(typ)


def random_rows(rng, schema, n):
    return {name: column(rng, name, typ, n) for name, typ in schema.columns}


def split_batches(rng, cols, max_batch=17):
    n = len(next(iter(cols.values())))
    i = 0
    while i < n:
        k = rng.randint(1, max_batch)
        yield {name: col[i:i + k] for name, col in cols.items()}
        i += k
