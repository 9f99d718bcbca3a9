"""DigNet forward pass over a local-global interactive graph."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import numcore as nc
from .graphs import LGIG, EdgeMode, ParseSample, RelationVocab, build_lgig
from .numcore import ContractError, ParamStore, Tensor

N_CLASSES = 3
CGMP_VARIANTS = ("gate", "mlp", "mha")
ABLATIONS = (
    "none",
    "no_syntax",
    "no_relation",
    "no_lgi",
    "no_fa2c",
    "syntax_decoder",
    "relation_decoder",
)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_hidden: int = 64
    d_rel: int = 32
    d_embed: int = 32
    L_lgi: int = 2
    L_gcn: int = 2
    n_heads_rel: int = 2
    n_heads_mha: int = 4
    cgmp_variant: str = "gate"
    dropout_enc: float = 0.1
    dropout_other: float = 0.1
    ablation: str = "none"
    max_bucket: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.cgmp_variant not in CGMP_VARIANTS:
            raise ConfigError(f"cgmp_variant must be one of {CGMP_VARIANTS}, got {self.cgmp_variant!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.L_lgi < 1:
            raise ConfigError(f"L_lgi must be >= 1, got {self.L_lgi}")
        if self.L_gcn < 1:
            raise ConfigError(f"L_gcn must be >= 1, got {self.L_gcn}")
        if min(self.d_hidden, self.d_rel, self.d_embed, self.n_heads_rel, self.n_heads_mha) < 1:
            raise ConfigError("dimensions and head counts must be positive")
        if self.d_hidden % self.n_heads_mha:
            raise ConfigError(
                f"d_hidden={self.d_hidden} is not divisible by n_heads_mha={self.n_heads_mha}"
            )
        for name in ("dropout_enc", "dropout_other"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.max_bucket < 2:
            raise ConfigError("max_bucket must be >= 2")

    @property
    def edge_mode(self) -> EdgeMode:
        return EdgeMode.ONE_TO_ALL if self.cgmp_variant == "mha" else EdgeMode.ONE_TO_ONE

    @property
    def uses_syntax(self) -> bool:
        return self.ablation != "no_syntax"

    @property
    def uses_relation(self) -> bool:
        return self.ablation != "no_relation"

    @property
    def uses_cgmp(self) -> bool:
        return self.ablation not in ("no_lgi", "no_syntax", "no_relation")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class TokenVocab:
    """Lower-cased word vocabulary; id 0 is reserved for unknown words."""

    UNK = "<unk>"

    def __init__(self, words: Sequence[str]):
        self.itos = [self.UNK] + sorted(set(w.lower() for w in words) - {self.UNK})
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenVocab) and self.itos == other.itos

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(t.lower(), 0) for t in tokens], dtype=np.int64)

    @classmethod
    def from_samples(cls, samples: Sequence[ParseSample]) -> TokenVocab:
        return cls([t for s in samples for t in s.tokens])

    def to_json(self) -> list[str]:
        return self.itos[1:]

    @classmethod
    def from_json(cls, words: list[str]) -> TokenVocab:
        return cls(words)


@dataclass
class GraphInput:
    """Per-sample constants derived once from a parse."""

    token_ids: np.ndarray
    aspect_span: tuple[int, int]
    lgig: LGIG
    gcn_norm: np.ndarray
    w_p: np.ndarray
    ctx: np.ndarray
    rel_ctx: np.ndarray
    perm: np.ndarray
    label: int

    @property
    def n(self) -> int:
        return self.lgig.n

    @property
    def tau(self) -> int:
        return self.lgig.tau


@dataclass
class EncodedSample:
    H0: Tensor
    lgig: LGIG
    tau: int


def position_weights(n: int, tau: int) -> np.ndarray:
    if not 0 <= tau < n:
        raise ContractError(f"tau={tau} outside 0..{n - 1}")
    i = np.arange(n)
    return 1.0 - np.abs(i - tau) / (n + 1)


def gcn_normalizer(adj: np.ndarray) -> np.ndarray:
    """``(A + I) / (deg + 1)`` row-wise, the self-inclusive neighbour mean."""
    n = adj.shape[0]
    a = adj.astype(np.float64) + np.eye(n)
    return a / (adj.sum(axis=1, keepdims=True) + 1.0)


def prepare(
    p: ParseSample,
    tokens: TokenVocab,
    relations: RelationVocab,
    mode: EdgeMode | str = EdgeMode.ONE_TO_ONE,
    dtype=np.float64,
) -> GraphInput:
    lgig = build_lgig(p, relations, mode)
    n, tau = lgig.n, lgig.tau
    ctx = np.array([i for i in range(n) if i != tau], dtype=np.int64)
    perm = np.empty(n, dtype=np.int64)
    perm[ctx] = np.arange(n - 1)
    perm[tau] = n - 1
    return GraphInput(
        token_ids=tokens.ids(p.tokens),
        aspect_span=tuple(p.aspect_span),
        lgig=lgig,
        gcn_norm=gcn_normalizer(lgig.syntax.adj).astype(dtype),
        w_p=position_weights(n, tau).astype(dtype)[:, None],
        ctx=ctx,
        rel_ctx=np.array([lgig.relation.rel[i] for i in ctx], dtype=np.int64),
        perm=perm,
        label=int(p.label),
    )


# parameter construction -----------------------------------------------


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_params(
    cfg: ModelConfig,
    vocab_size: int,
    n_relations: int,
    seed: int = 0,
    dtype=np.float64,
) -> ParamStore:
    if vocab_size < 1:
        raise ConfigError("token vocabulary is empty")
    rng = np.random.default_rng(seed)
    d, ps = cfg.d_hidden, ParamStore()

    def weight(name, fan_in, fan_out, shape=None):
        ps.add(name, _xavier(rng, fan_in, fan_out, shape), dtype)

    def bias(name, size):
        ps.add(name, np.zeros(size), dtype)

    ps.add("embed.weight", rng.uniform(-0.1, 0.1, (vocab_size, cfg.d_embed)), dtype)
    weight("encoder.W", cfg.d_embed, d)
    bias("encoder.b", d)
    if cfg.uses_relation:
        ps.add("rel_embed.weight", rng.uniform(-0.1, 0.1, (max(n_relations, 1), cfg.d_rel)), dtype)

    for l in range(cfg.L_lgi):
        pre = f"lgi{l}"
        if cfg.uses_syntax:
            for k in range(cfg.L_gcn):
                weight(f"{pre}.gcn{k}.W", d, d)
                bias(f"{pre}.gcn{k}.b", d)
        if cfg.uses_relation:
            ps.add(
                f"{pre}.r2atn.W_heads",
                np.concatenate([_xavier(rng, d, d) for _ in range(cfg.n_heads_rel)], axis=1),
                dtype,
            )
            weight(f"{pre}.r2atn.ffn.W1", cfg.d_rel, cfg.d_rel)
            bias(f"{pre}.r2atn.ffn.b1", cfg.d_rel)
            weight(f"{pre}.r2atn.ffn.W2", cfg.d_rel, cfg.n_heads_rel)
            bias(f"{pre}.r2atn.ffn.b2", cfg.n_heads_rel)
        if cfg.uses_cgmp:
            for direction in ("yx", "xy"):
                q = f"{pre}.cgmp_{direction}"
                if cfg.cgmp_variant == "gate":
                    weight(f"{q}.W_gate", 2 * d, d)
                elif cfg.cgmp_variant == "mlp":
                    weight(f"{q}.W1", 2 * d, d)
                    bias(f"{q}.b1", d)
                    weight(f"{q}.W2", d, d)
                    bias(f"{q}.b2", d)
                else:
                    for t in "qkv":
                        weight(f"{q}.W_{t}", d, d)
                        bias(f"{q}.b_{t}", d)

    if cfg.ablation in ("none", "no_lgi", "no_fa2c"):
        weight("decoder.W_f", 2 * d, d)
    if cfg.ablation != "no_fa2c":
        weight("decoder.W_a2c", d, d)
        bias("decoder.b_a2c", d)
    weight("decoder.mlp.W1", d, d)
    bias("decoder.mlp.b1", d)
    weight("decoder.mlp.W2", d, N_CLASSES)
    bias("decoder.mlp.b2", N_CLASSES)
    return ps


# building blocks ------------------------------------------------------


def initial_encoding(
    g: GraphInput,
    params: ParamStore,
    cfg: ModelConfig,
    rng: np.random.Generator | None = None,
) -> EncodedSample:
    emb = params["embed.weight"][g.token_ids]
    X = nc.linear(emb, params["encoder.W"], params["encoder.b"])
    a0, a1 = g.aspect_span
    aspect = X[a0:a1].mean(axis=0, keepdims=True)
    H0 = nc.concat([X[:a0], aspect, X[a1:]], axis=0)
    H0 = nc.dropout(H0, cfg.dropout_enc, rng)
    return EncodedSample(H0=H0, lgig=g.lgig, tau=g.tau)


def pwgcn_layer(H: Tensor, norm: np.ndarray, w_p: np.ndarray, W: Tensor, b: Tensor) -> Tensor:
    """One position-weighted graph convolution followed by ReLU."""
    if H.shape[0] != norm.shape[0]:
        raise ContractError(f"node states have {H.shape[0]} rows but the graph has {norm.shape[0]} nodes")
    agg = nc.matmul(Tensor(norm), H * Tensor(w_p))
    return nc.relu(nc.linear(agg, W, b))


def pwgcn_stack(H: Tensor, g: GraphInput, params: ParamStore, layer: int, cfg: ModelConfig) -> Tensor:
    for k in range(cfg.L_gcn):
        H = pwgcn_layer(H, g.gcn_norm, g.w_p, params[f"lgi{layer}.gcn{k}.W"], params[f"lgi{layer}.gcn{k}.b"])
    return H


def relation_attention(rel_ctx: np.ndarray, rel_emb: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    """Per-head attention weights over context nodes, shape ``[n - 1, heads]``."""
    e = rel_emb[rel_ctx]
    scores = nc.linear(nc.relu(nc.linear(e, W1, b1)), W2, b2)
    return nc.softmax(scores, axis=0)


def r2atn_layer(
    H: Tensor,
    g: GraphInput,
    rel_emb: Tensor,
    W_heads: Tensor,
    ffn: tuple[Tensor, Tensor, Tensor, Tensor],
    n_heads: int,
) -> Tensor:
    """Aggregate context to the aspect node, then broadcast back on reversed edges."""
    n, d = H.shape
    if n < 2:
        raise ContractError("relation attention needs at least one context node")
    alpha = relation_attention(g.rel_ctx, rel_emb, *ffn)
    Hc = H[g.ctx]
    proj = nc.matmul(Hc, W_heads).reshape(n - 1, n_heads, d)
    per_head = (proj * alpha.reshape(n - 1, n_heads, 1)).sum(axis=0)
    h_aspect = per_head.mean(axis=0, keepdims=True)
    # reversed-relation weight of each head is its forward attention weight
    back = alpha.mean(axis=1, keepdims=True)
    ctx_out = Hc + back * h_aspect
    return nc.concat([ctx_out, h_aspect], axis=0)[g.perm]


def _check_aligned(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ContractError(f"cross-graph inputs misaligned: {a.shape} vs {b.shape}")


def cg_gate(h_this: Tensor, h_other: Tensor, W_gate: Tensor) -> Tensor:
    _check_aligned(h_this, h_other)
    gate = nc.sigmoid(nc.matmul(nc.concat([h_other, h_this], axis=1), W_gate))
    return h_other * gate


def cg_mlp(h_this: Tensor, h_other: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    _check_aligned(h_this, h_other)
    hidden = nc.relu(nc.linear(nc.concat([h_other, h_this], axis=1), W1, b1))
    return nc.linear(hidden, W2, b2)


def cg_mha(
    queries: Tensor,
    keys_values: Tensor,
    Wq: Tensor,
    bq: Tensor,
    Wk: Tensor,
    bk: Tensor,
    Wv: Tensor,
    bv: Tensor,
    n_heads: int,
) -> Tensor:
    d = queries.shape[1]
    if d % n_heads:
        raise ConfigError(f"hidden size {d} is not divisible by {n_heads} heads")
    ds = d // n_heads
    q = nc.linear(queries, Wq, bq)
    k = nc.linear(keys_values, Wk, bk)
    v = nc.linear(keys_values, Wv, bv)
    n, m = queries.shape[0], keys_values.shape[0]
    qh = nc.permute(q.reshape(n, n_heads, ds), (1, 0, 2))
    kh = nc.permute(k.reshape(m, n_heads, ds), (1, 2, 0))
    vh = nc.permute(v.reshape(m, n_heads, ds), (1, 0, 2))
    att = nc.softmax(nc.bmm(qh, kh) * (1.0 / math.sqrt(ds)), axis=-1)
    out = nc.bmm(att, vh)
    return nc.permute(out, (1, 0, 2)).reshape(n, d)


def cgmp(h_this: Tensor, h_other: Tensor, params: ParamStore, prefix: str, cfg: ModelConfig) -> Tensor:
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    if cfg.cgmp_variant == "gate":
        return cg_gate(h_this, h_other, p("W_gate"))
    if cfg.cgmp_variant == "mlp":
        return cg_mlp(h_this, h_other, p("W1"), p("b1"), p("W2"), p("b2"))
    return cg_mha(
        h_this, h_other, p("W_q"), p("b_q"), p("W_k"), p("b_k"), p("W_v"), p("b_v"), cfg.n_heads_mha
    )


def lgi_layer(
    HX: Tensor | None,
    HY: Tensor | None,
    g: GraphInput,
    params: ParamStore,
    cfg: ModelConfig,
    layer: int,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor | None, Tensor | None]:
    pre = f"lgi{layer}"
    igmp_x = pwgcn_stack(HX, g, params, layer, cfg) if cfg.uses_syntax else None
    igmp_y = None
    if cfg.uses_relation:
        ffn = tuple(params[f"{pre}.r2atn.ffn.{k}"] for k in ("W1", "b1", "W2", "b2"))
        igmp_y = r2atn_layer(HY, g, params["rel_embed.weight"], params[f"{pre}.r2atn.W_heads"], ffn, cfg.n_heads_rel)

    out_x, out_y = igmp_x, igmp_y
    if cfg.uses_cgmp:
        out_x = igmp_x + cgmp(igmp_x, HY, params, f"{pre}.cgmp_yx", cfg)
        out_y = igmp_y + cgmp(igmp_y, HX, params, f"{pre}.cgmp_xy", cfg)
    if out_x is not None:
        out_x = nc.dropout(out_x, cfg.dropout_other, rng)
    if out_y is not None:
        out_y = nc.dropout(out_y, cfg.dropout_other, rng)
    return out_x, out_y


def fa2c_weights(H_f: Tensor, R_a: Tensor, W: Tensor, b: Tensor) -> Tensor:
    logits = (nc.linear(H_f, W, b) * R_a).sum(axis=1)
    return nc.softmax(logits, axis=0)


def decode(HX: Tensor | None, HY: Tensor | None, tau: int, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """Class probabilities ``P[3]`` from the final node states of both graphs."""
    if "decoder.W_f" in params:
        H_f = nc.matmul(nc.concat([HX, HY], axis=1), params["decoder.W_f"])
    elif cfg.ablation in ("syntax_decoder", "no_relation"):
        H_f = HX
    else:
        H_f = HY
    R_a = H_f[tau : tau + 1]
    if cfg.ablation == "no_fa2c":
        R = R_a
    else:
        beta = fa2c_weights(H_f, R_a, params["decoder.W_a2c"], params["decoder.b_a2c"])
        R = nc.matmul(beta.reshape(1, -1), H_f)
    hidden = nc.relu(nc.linear(R, params["decoder.mlp.W1"], params["decoder.mlp.b1"]))
    logits = nc.linear(hidden, params["decoder.mlp.W2"], params["decoder.mlp.b2"])
    return nc.softmax(logits.reshape(N_CLASSES), axis=0)


class DigNet:
    """Parameters plus vocabularies; ``forward`` maps one graph input to ``P``."""

    def __init__(
        self,
        cfg: ModelConfig,
        tokens: TokenVocab,
        relations: RelationVocab,
        seed: int = 0,
        dtype=np.float64,
        params: ParamStore | None = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.tokens = tokens
        self.relations = relations
        self.dtype = np.dtype(dtype)
        self.params = params if params is not None else init_params(cfg, len(tokens), len(relations), seed, dtype)

    def prepare(self, p: ParseSample) -> GraphInput:
        return prepare(p, self.tokens, self.relations, self.cfg.edge_mode, self.dtype)

    def prepare_all(self, samples: Sequence[ParseSample]) -> list[GraphInput]:
        return [self.prepare(p) for p in samples]

    def forward(self, g: GraphInput, rng: np.random.Generator | None = None) -> Tensor:
        """``rng`` enables dropout (training mode); ``None`` is eval mode."""
        enc = initial_encoding(g, self.params, self.cfg, rng)
        HX = enc.H0 if self.cfg.uses_syntax else None
        HY = enc.H0 if self.cfg.uses_relation else None
        for layer in range(self.cfg.L_lgi):
            HX, HY = lgi_layer(HX, HY, g, self.params, self.cfg, layer, rng)
        return decode(HX, HY, g.tau, self.params, self.cfg)

    def predict_proba(self, g: GraphInput) -> np.ndarray:
        with nc.no_grad():
            return self.forward(g).data.copy()

    def predict(self, inputs: Sequence[GraphInput]) -> list[int]:
        return [int(np.argmax(self.predict_proba(g))) for g in inputs]
