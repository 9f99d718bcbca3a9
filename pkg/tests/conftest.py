import numpy as np
import pytest

from lginet.graphs import ROOT, ParseSample


def dosa_sample() -> ParseSample:
    # "A cheap eat for NYC, but not for dosa." with `eat` as root; `dosa`
    # hangs off the second `for`, so `cheap` and `but` are 3 hops away.
    tokens = "A cheap eat for NYC , but not for dosa .".split()
    heads = [2, 2, ROOT, 2, 3, 2, 2, 8, 2, 8, 2]
    deprels = ["det", "amod", "root", "prep", "pobj", "punct", "cc", "neg", "prep", "pobj", "punct"]
    return ParseSample(tokens, heads, deprels, (9, 10), 0)


def random_tree(rng: np.random.Generator, n: int) -> list[int]:
    """Heads of a uniformly re-rooted random recursive tree over ``n`` tokens."""
    order = rng.permutation(n)
    heads = [ROOT] * n
    for k in range(1, n):
        heads[order[k]] = int(order[rng.integers(0, k)])
    return heads


def random_sample(rng: np.random.Generator, n: int, label: int | None = None) -> ParseSample:
    heads = random_tree(rng, n)
    a_len = int(rng.integers(1, min(3, n - 1) + 1))
    a0 = int(rng.integers(0, n - a_len + 1))
    deprels = [str(rng.choice(["nsubj", "amod", "det", "obj", "advmod"])) for _ in range(n)]
    tokens = [f"w{int(rng.integers(0, 20))}" for _ in range(n)]
    y = int(rng.integers(0, 3)) if label is None else label
    return ParseSample(tokens, heads, deprels, (a0, a0 + a_len), y)


@pytest.fixture
def dosa():
    return dosa_sample()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
