"""Syntax graph, relation graph and their interactive pairing.

Node indexing after aspect merging: the merged aspect node sits at
``a_start`` and tokens after the aspect shift left by ``N_a - 1``, so the
linear order of the sentence is preserved for position weighting.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .numcore import ContractError

ROOT = -1
UNREACHABLE = -1
NO_RELATION = -1
LABELS = ("negative", "neutral", "positive")


class FormatError(ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass
class ParseSample:
    tokens: list[str]
    heads: list[int]
    deprels: list[str]
    aspect_span: tuple[int, int] = (0, 1)
    label: int = 1

    def __post_init__(self):
        n = len(self.tokens)
        if len(self.heads) != n or len(self.deprels) != n:
            raise ContractError(
                f"tokens/heads/deprels lengths differ: {n}, {len(self.heads)}, {len(self.deprels)}"
            )
        self.aspect_span = tuple(self.aspect_span)
        a0, a1 = self.aspect_span
        if not (0 <= a0 < a1 <= n):
            raise ContractError(f"aspect span {self.aspect_span} outside sentence of {n} tokens")
        check_tree(self.heads)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def aspect_tokens(self) -> list[str]:
        return self.tokens[self.aspect_span[0] : self.aspect_span[1]]

    def to_json(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "heads": [None if h == ROOT else h for h in self.heads],
            "deprels": list(self.deprels),
            "aspect": list(self.aspect_span),
            "label": int(self.label),
        }

    @classmethod
    def from_json(cls, obj: dict) -> ParseSample:
        heads = [ROOT if h is None or h == ROOT else int(h) for h in obj["heads"]]
        return cls(
            tokens=list(obj["tokens"]),
            heads=heads,
            deprels=list(obj["deprels"]),
            aspect_span=tuple(obj["aspect"]),
            label=int(obj.get("label", 1)),
        )


def check_tree(heads: Sequence[int]) -> None:
    n = len(heads)
    roots = [i for i, h in enumerate(heads) if h == ROOT]
    if len(roots) != 1:
        raise ContractError(f"expected exactly one root, found {len(roots)}")
    for i, h in enumerate(heads):
        if h == i or (h != ROOT and not 0 <= h < n):
            raise ContractError(f"token {i} has invalid head {h}")
    # every token must reach the root without revisiting
    for i in range(n):
        seen = set()
        j = i
        while heads[j] != ROOT:
            if j in seen:
                raise ContractError(f"head cycle through token {i}")
            seen.add(j)
            j = heads[j]


# ingestion ------------------------------------------------------------


def parse_conllu(text: str, source: str | None = None) -> list[ParseSample]:
    """Read CoNLL-U sentences into single-token-aspect skeletons.

    Multiword ranges (``3-4``) and empty nodes (``3.1``) are skipped.  The
    returned samples carry a placeholder aspect of ``(0, 1)``; callers set
    the real span.
    """
    sentences: list[list[tuple[int, list[str]]]] = []
    current: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n\r")
        if not line.strip():
            if current:
                sentences.append(current)
                current = []
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise FormatError(f"expected 10 tab-separated columns, got {len(cols)}", lineno, source)
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue
        current.append((lineno, cols))
    if current:
        sentences.append(current)
    if not sentences:
        raise FormatError("no sentences found", None, source)

    out = []
    for rows in sentences:
        n = len(rows)
        tokens, heads, deprels = [], [], []
        for k, (lineno, cols) in enumerate(rows):
            try:
                tid = int(cols[0])
            except ValueError:
                raise FormatError(f"non-integer ID {cols[0]!r}", lineno, source) from None
            if tid != k + 1:
                raise FormatError(f"token ID {tid} out of sequence (expected {k + 1})", lineno, source)
            try:
                head = int(cols[6])
            except ValueError:
                raise FormatError(f"non-integer HEAD {cols[6]!r}", lineno, source) from None
            if not 0 <= head <= n:
                raise FormatError(f"HEAD {head} out of range for {n} tokens", lineno, source)
            tokens.append(cols[1])
            heads.append(ROOT if head == 0 else head - 1)
            deprels.append(cols[7])
        try:
            out.append(ParseSample(tokens, heads, deprels, (0, 1), 1))
        except ContractError as exc:
            raise FormatError(str(exc), rows[0][0], source) from None
    return out


def read_jsonl(path) -> list[ParseSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(ParseSample.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(str(exc), lineno, str(path)) from None
    if not samples:
        raise FormatError("dataset is empty", None, str(path))
    return samples


def write_jsonl(path, samples: Iterable[ParseSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json()) + "\n")


# syntax graph ---------------------------------------------------------


@dataclass
class SyntaxGraph:
    adj: np.ndarray
    tau: int

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def degrees(self) -> np.ndarray:
        return self.adj.sum(axis=1)

    def neighbors(self, i: int) -> list[int]:
        return np.flatnonzero(self.adj[i]).tolist()


def build_base_adjacency(p: ParseSample) -> np.ndarray:
    n = p.n_tokens
    m = np.zeros((n, n), dtype=np.int8)
    for i, h in enumerate(p.heads):
        if h != ROOT:
            m[i, h] = m[h, i] = 1
    return m


def merge_aspect(m: np.ndarray, span: tuple[int, int]) -> SyntaxGraph:
    """Collapse the aspect rows/columns of ``m`` into one node at ``span[0]``."""
    n = m.shape[0]
    a0, a1 = span
    if not (0 <= a0 < a1 <= n):
        raise ContractError(f"aspect span {span} outside matrix of size {n}")
    if a1 - a0 == n:
        raise ContractError("aspect covers every token; no context remains")
    row = (m[a0:a1, :].sum(axis=0) >= 1).astype(np.int8)
    col = (m[:, a0:a1].sum(axis=1) >= 1).astype(np.int8)
    keep = list(range(a0)) + [a0] + list(range(a1, n))
    out = m[np.ix_(keep, keep)].copy()
    out[a0, :] = row[keep]
    out[:, a0] = col[keep]
    out[a0, a0] = 0
    return SyntaxGraph(adj=out, tau=a0)


def merged_index(i: int, span: tuple[int, int]) -> int:
    """Position of original token ``i`` after the aspect merge."""
    a0, a1 = span
    if i < a0:
        return i
    if i < a1:
        return a0
    return i - (a1 - a0 - 1)


def aspect_distances(sg: SyntaxGraph) -> list[int]:
    """BFS hop counts from the aspect node; ``UNREACHABLE`` when disconnected."""
    dist = [UNREACHABLE] * sg.n
    dist[sg.tau] = 0
    queue = deque([sg.tau])
    nbrs = [np.flatnonzero(r).tolist() for r in sg.adj]
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if dist[v] == UNREACHABLE:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


# relation graph -------------------------------------------------------


def distance_label(d: int, max_bucket: int) -> str:
    if d == UNREACHABLE:
        return "disc:con"
    return f"{min(d, max_bucket)}:con"


def relation_strings(p: ParseSample, sg: SyntaxGraph, dist: Sequence[int], max_bucket: int = 4) -> list[str | None]:
    """Relation label of every merged node toward the aspect (None at tau)."""
    a0, a1 = p.aspect_span
    labels: list[str | None] = [None] * sg.n
    first_order: dict[int, str] = {}
    # tree edges touching the aspect, visited by ascending aspect token so the
    # lowest-index aspect token wins ties
    for k in range(a0, a1):
        for i in range(p.n_tokens):
            if a0 <= i < a1 or i in first_order:
                continue
            if p.heads[i] == k:
                first_order[i] = p.deprels[i]
            elif p.heads[k] == i:
                first_order[i] = p.deprels[k]
    for i in range(p.n_tokens):
        if a0 <= i < a1:
            continue
        j = merged_index(i, p.aspect_span)
        if dist[j] == 1:
            labels[j] = first_order[i]
        else:
            labels[j] = distance_label(dist[j], max_bucket)
    return labels


class RelationVocab:
    """Sorted relation strings with a parallel ``rv:``-prefixed id space."""

    def __init__(self, relations: Iterable[str], max_bucket: int = 4):
        self.max_bucket = max_bucket
        rels = set(relations)
        rels.add(distance_label(max_bucket, max_bucket))
        self.itos: list[str] = sorted(rels)
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        self.rv_itos = ["rv:" + s for s in self.itos]
        self.rv_stoi = {s: i for i, s in enumerate(self.rv_itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, RelationVocab) and self.itos == other.itos and self.max_bucket == other.max_bucket

    @property
    def fallback(self) -> int:
        return self.stoi[distance_label(self.max_bucket, self.max_bucket)]

    def id(self, rel: str) -> int:
        return self.stoi.get(rel, self.fallback)

    def rv_id(self, rel: str) -> int:
        return self.rv_stoi.get("rv:" + rel, self.fallback)

    def to_json(self) -> dict:
        return {"relations": self.itos, "max_bucket": self.max_bucket}

    @classmethod
    def from_json(cls, obj: dict) -> RelationVocab:
        return cls(obj["relations"], obj["max_bucket"])

    @classmethod
    def from_samples(cls, samples: Iterable[ParseSample], max_bucket: int = 4) -> RelationVocab:
        rels: set[str] = set()
        for p in samples:
            sg = merge_aspect(build_base_adjacency(p), p.aspect_span)
            rels.update(r for r in relation_strings(p, sg, aspect_distances(sg), max_bucket) if r is not None)
        return cls(rels, max_bucket)


@dataclass
class RelationGraph:
    tau: int
    rel: list[int]
    rel_rv: list[int]
    vocab: RelationVocab

    @property
    def n(self) -> int:
        return len(self.rel)

    def context_nodes(self) -> list[int]:
        return [i for i in range(self.n) if i != self.tau]

    def rel_strings(self) -> list[str | None]:
        return [None if r == NO_RELATION else self.vocab.itos[r] for r in self.rel]


def build_relation_graph(
    p: ParseSample,
    sg: SyntaxGraph,
    dist: Sequence[int],
    max_bucket: int = 4,
    vocab: RelationVocab | None = None,
) -> RelationGraph:
    labels = relation_strings(p, sg, dist, max_bucket)
    if vocab is None:
        vocab = RelationVocab((r for r in labels if r is not None), max_bucket)
    rel = [NO_RELATION if r is None else vocab.id(r) for r in labels]
    rel_rv = [NO_RELATION if r is None else vocab.rv_id(r) for r in labels]
    return RelationGraph(tau=sg.tau, rel=rel, rel_rv=rel_rv, vocab=vocab)


# interactive graph ----------------------------------------------------


class EdgeMode(str, Enum):
    ONE_TO_ONE = "one-to-one"
    ONE_TO_ALL = "one-to-all"


INTERACTIVE = "r_ita"


@dataclass
class LGIG:
    syntax: SyntaxGraph
    relation: RelationGraph
    mode: EdgeMode = EdgeMode.ONE_TO_ONE

    @property
    def n(self) -> int:
        return self.syntax.n

    @property
    def tau(self) -> int:
        return self.syntax.tau

    def interactive_pairs(self) -> list[tuple[int, int]]:
        if self.mode == EdgeMode.ONE_TO_ONE:
            return [(i, i) for i in range(self.n)]
        return [(i, j) for i in range(self.n) for j in range(self.n)]

    def edges(self) -> list[tuple[tuple[str, int], tuple[str, int], object]]:
        """Directed labelled edges ``((graph, i), (graph, j), r_ij)``.

        Syntax edges carry 0, interactive edges ``r_ita``, relation edges the
        relation id into the aspect and the reversed id out of it.
        """
        out: list = []
        adj = self.syntax.adj
        for i in range(self.n):
            for j in np.flatnonzero(adj[i]):
                out.append((("x", i), ("x", int(j)), 0))
        tau = self.tau
        for i in self.relation.context_nodes():
            out.append((("y", i), ("y", tau), self.relation.rel[i]))
            out.append((("y", tau), ("y", i), ("rv", self.relation.rel_rv[i])))
        for i, j in self.interactive_pairs():
            out.append((("x", i), ("y", j), INTERACTIVE))
            out.append((("y", j), ("x", i), INTERACTIVE))
        return out

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "tau": self.tau,
            "mode": self.mode.value,
            "adjacency": self.syntax.adj.astype(int).tolist(),
            "rel": list(self.relation.rel),
            "rel_rv": list(self.relation.rel_rv),
            "vocab": self.relation.vocab.to_json(),
            "interactive_label": INTERACTIVE,
        }

    @classmethod
    def from_json(cls, obj: dict) -> LGIG:
        sg = SyntaxGraph(adj=np.array(obj["adjacency"], dtype=np.int8), tau=int(obj["tau"]))
        rg = RelationGraph(
            tau=int(obj["tau"]),
            rel=[int(r) for r in obj["rel"]],
            rel_rv=[int(r) for r in obj["rel_rv"]],
            vocab=RelationVocab.from_json(obj["vocab"]),
        )
        return assemble_lgig(sg, rg, EdgeMode(obj["mode"]))

    def to_dot(self, tokens: Sequence[str] | None = None) -> str:
        names = list(tokens) if tokens is not None else [str(i) for i in range(self.n)]
        lines = ["digraph lgig {", "  subgraph cluster_x { label=\"syntax\";"]
        for i in range(self.n):
            lines.append(f'    x{i} [label="{_dot_escape(names[i])}"];')
        lines.append("  }")
        lines.append('  subgraph cluster_y { label="relation";')
        for i in range(self.n):
            lines.append(f'    y{i} [label="{_dot_escape(names[i])}"];')
        lines.append("  }")
        adj = self.syntax.adj
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if adj[i, j]:
                    lines.append(f"  x{i} -> x{j} [dir=none];")
        rels = self.relation.rel_strings()
        for i in self.relation.context_nodes():
            lines.append(f'  y{i} -> y{self.tau} [label="{_dot_escape(rels[i])}"];')
            lines.append(f'  y{self.tau} -> y{i} [label="rv:{_dot_escape(rels[i])}", style=dashed];')
        for i, j in self.interactive_pairs():
            lines.append(f"  x{i} -> y{j} [dir=both, color=gray];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def assemble_lgig(sg: SyntaxGraph, rg: RelationGraph, mode: EdgeMode | str = EdgeMode.ONE_TO_ONE) -> LGIG:
    if sg.n != rg.n or sg.tau != rg.tau:
        raise ContractError(f"syntax graph (n={sg.n}, tau={sg.tau}) and relation graph (n={rg.n}, tau={rg.tau}) are misaligned")
    return LGIG(syntax=sg, relation=rg, mode=EdgeMode(mode))


def build_lgig(
    p: ParseSample,
    vocab: RelationVocab | None = None,
    mode: EdgeMode | str = EdgeMode.ONE_TO_ONE,
    max_bucket: int = 4,
) -> LGIG:
    sg = merge_aspect(build_base_adjacency(p), p.aspect_span)
    dist = aspect_distances(sg)
    if vocab is not None:
        max_bucket = vocab.max_bucket
    rg = build_relation_graph(p, sg, dist, max_bucket, vocab)
    return assemble_lgig(sg, rg, mode)

