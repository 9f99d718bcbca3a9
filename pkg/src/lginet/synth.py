"""Seeded synthetic parse corpus with a planted polarity word.

Each sample is a random dependency tree.  One lexicon word whose polarity
decides the label sits at a chosen tree distance from the aspect; an
optional distractor of a different polarity sits further away, so a model
must tell the two apart by graph distance rather than by word identity
alone.
"""

from __future__ import annotations

import numpy as np

from .graphs import ROOT, ParseSample

POLARITY_WORDS = {
    0: ["awful", "bland", "rude", "overpriced", "soggy", "terrible"],
    1: ["average", "ordinary", "standard", "typical", "usual", "plain"],
    2: ["great", "delicious", "friendly", "cheap", "superb", "fresh"],
}
ASPECT_WORDS = ["food", "service", "staff", "dosa", "battery", "screen", "menu", "wine", "pasta", "keyboard"]
ASPECT_MODIFIERS = ["sushi", "wait", "laptop", "house", "side", "lunch"]
FILLER_WORDS = [
    "the", "a", "was", "is", "for", "with", "at", "of", "and", "but", "we", "they",
    "there", "it", "this", "place", "night", "table", "really", "very", "quite", "our",
]
DEPRELS = ["nsubj", "amod", "det", "prep", "pobj", "advmod", "cc", "conj", "dobj", "acomp", "aux"]


def _random_tree(rng, n_nodes: int, spine: int) -> list[int]:
    """Parent array of a tree whose nodes 0..spine form a path from node 0."""
    parent = [-1] * n_nodes
    for k in range(1, spine + 1):
        parent[k] = k - 1
    for k in range(spine + 1, n_nodes):
        parent[k] = int(rng.integers(0, k))
    return parent


def _tree_distances(parent: list[int], src: int) -> list[int]:
    n = len(parent)
    nbrs = [[] for _ in range(n)]
    for c, p in enumerate(parent):
        if p >= 0:
            nbrs[c].append(p)
            nbrs[p].append(c)
    dist = [-1] * n
    dist[src] = 0
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            for v in nbrs[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def make_sample(
    rng: np.random.Generator,
    label: int,
    distance: int = 3,
    min_tokens: int = 6,
    max_tokens: int = 12,
    multiword_prob: float = 0.3,
    distractor: bool = False,
) -> ParseSample:
    # abstract nodes: 0 = aspect head, path 0..distance ends at the polarity word
    lo = max(min_tokens, distance + 2 + (2 if distractor else 0))
    n_ctx = int(rng.integers(lo, max(lo, max_tokens) + 1))
    parent = _random_tree(rng, n_ctx, distance)
    polar = distance
    words = [str(rng.choice(FILLER_WORDS)) for _ in range(n_ctx)]
    words[0] = str(rng.choice(ASPECT_WORDS))
    words[polar] = str(rng.choice(POLARITY_WORDS[label]))

    if distractor:
        dist = _tree_distances(parent, 0)
        far = [k for k in range(n_ctx) if dist[k] >= distance + 2 and k != polar]
        if not far:
            # grow a chain off the polarity word until something is far enough
            tail = polar
            for _ in range(2):
                parent.append(tail)
                words.append(str(rng.choice(FILLER_WORDS)))
                tail = len(parent) - 1
            far = [tail]
        other = int(rng.choice([c for c in POLARITY_WORDS if c != label]))
        words[int(rng.choice(far))] = str(rng.choice(POLARITY_WORDS[other]))

    n_nodes = len(parent)
    aspect_len = 2 if rng.random() < multiword_prob else 1

    # linear order: a random permutation with the aspect tokens kept contiguous
    others = [k for k in range(1, n_nodes)]
    order = list(rng.permutation(others))
    insert_at = int(rng.integers(0, len(order) + 1))
    aspect_slot = [0] if aspect_len == 1 else [n_nodes, 0]  # modifier precedes the head
    order = order[:insert_at] + aspect_slot + order[insert_at:]
    pos = {node: i for i, node in enumerate(order)}

    if aspect_len == 2:
        parent.append(0)
        words.append(str(rng.choice(ASPECT_MODIFIERS)))

    root = int(rng.integers(0, n_ctx))
    # re-root the undirected tree at `root`
    nbrs: dict[int, list[int]] = {k: [] for k in range(len(parent))}
    for c, p in enumerate(parent):
        if p >= 0:
            nbrs[c].append(p)
            nbrs[p].append(c)
    head_of = {root: ROOT}
    stack = [root]
    while stack:
        u = stack.pop()
        for v in nbrs[u]:
            if v not in head_of:
                head_of[v] = u
                stack.append(v)

    n_tok = len(order)
    tokens = [""] * n_tok
    heads = [ROOT] * n_tok
    deprels = [""] * n_tok
    for node, i in pos.items():
        tokens[i] = words[node]
        h = head_of[node]
        heads[i] = ROOT if h == ROOT else pos[h]
        if h == ROOT:
            deprels[i] = "root"
        elif aspect_len == 2 and node == n_nodes:
            deprels[i] = "compound"
        else:
            deprels[i] = str(rng.choice(DEPRELS))
    a0 = pos[0] if aspect_len == 1 else pos[n_nodes]
    return ParseSample(tokens, heads, deprels, (a0, a0 + aspect_len), label)


def generate(
    n: int,
    seed: int = 0,
    distance: int = 3,
    min_tokens: int = 6,
    max_tokens: int = 12,
    multiword_prob: float = 0.3,
    distractor: bool = False,
) -> list[ParseSample]:
    """``n`` samples with labels cycling 0, 1, 2 before a seeded shuffle."""
    rng = np.random.default_rng(seed)
    labels = [k % 3 for k in range(n)]
    rng.shuffle(labels)
    return [
        make_sample(rng, int(y), distance, min_tokens, max_tokens, multiword_prob, distractor)
        for y in labels
    ]
