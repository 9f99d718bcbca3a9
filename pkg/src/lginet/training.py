"""Objective, AdamW and the per-sample gradient-accumulation training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .graphs import ParseSample, RelationVocab
from .model import ConfigError, DigNet, GraphInput, ModelConfig, N_CLASSES, TokenVocab
from .numcore import ParamStore, Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

# learning rate and weight decay per benchmark, as reported for the BERT runs
BENCHMARK_HPARAMS = {
    "lap14": {"lr": 1e-5, "weight_decay": 0.001},
    "res14": {"lr": 5e-5, "weight_decay": 0.05},
    "res15": {"lr": 3e-5, "weight_decay": 0.05},
}


class DataError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 8
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    precision: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ConfigError(f"lr must be a finite non-negative number, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


def preset(name: str, dataset: str = "lap14") -> tuple[ModelConfig, TrainConfig]:
    if name == "desk":
        return ModelConfig(), TrainConfig()
    if name == "paper":
        hp = BENCHMARK_HPARAMS[dataset]
        model = ModelConfig(
            d_hidden=768,
            d_rel=300,
            d_embed=768,
            L_lgi=2,
            L_gcn=2,
            n_heads_rel=4,
            n_heads_mha=12,
            cgmp_variant="mha",
            dropout_enc=0.1,
            dropout_other=0.3,
        )
        return model, TrainConfig(lr=hp["lr"], weight_decay=hp["weight_decay"], batch_size=32, epochs=30, precision=32)
    raise ConfigError(f"unknown preset {name!r}; expected 'paper' or 'desk'")


def _coerce(value: str, kind):
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def parse_config_text(text: str, base: tuple[ModelConfig, TrainConfig] | None = None, source: str = "<config>"):
    """Apply flat ``key = value`` lines on top of ``base`` (desk preset by default)."""
    model, train = base if base is not None else preset("desk")
    m_vals, t_vals = asdict(model), asdict(train)
    m_types = {f.name: type(m_vals[f.name]) for f in fields(ModelConfig)}
    t_types = {f.name: type(t_vals[f.name]) for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in m_types:
                m_vals[key] = _coerce(value, m_types[key])
            elif key in t_types:
                t_vals[key] = _coerce(value, t_types[key])
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from None
    return ModelConfig(**m_vals), TrainConfig(**t_vals)


def load_config(path, base=None):
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base, str(path))


# objective ------------------------------------------------------------


def cross_entropy(P: Tensor, y: int) -> Tensor:
    """``-log P[y]`` with ``P[y]`` floored at 1e-12."""
    if y not in range(N_CLASSES):
        raise DataError(f"label {y!r} is not a class id in 0..{N_CLASSES - 1}")
    py = P[y]
    if py.data < PROB_FLOOR:
        return Tensor(-math.log(PROB_FLOOR))
    return -nc.log(py)


# optimizer ------------------------------------------------------------


class AdamW:
    """Adam with bias correction and weight decay applied to the weights."""

    def __init__(self, params: ParamStore, cfg: TrainConfig):
        self.params = params
        self.lr = cfg.lr
        self.wd = cfg.weight_decay
        self.b1, self.b2, self.eps = cfg.beta1, cfg.beta2, cfg.eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise nc.ContractError(f"gradient for {name!r} was not populated")
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(name)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.wd:
                p.data *= 1.0 - self.lr * self.wd
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# training loop --------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    acc: float


@dataclass
class TrainResult:
    model: DigNet
    history: list[EpochRecord] = field(default_factory=list)

    def history_json(self) -> list[dict]:
        return [asdict(r) for r in self.history]


def build_model(model_cfg: ModelConfig, train_cfg: TrainConfig, samples: Sequence[ParseSample]) -> DigNet:
    if not samples:
        raise ConfigError("training dataset is empty")
    tokens = TokenVocab.from_samples(samples)
    relations = RelationVocab.from_samples(samples, model_cfg.max_bucket)
    return DigNet(model_cfg, tokens, relations, seed=train_cfg.seed, dtype=train_cfg.dtype)


def evaluate_loss_acc(model: DigNet, inputs: Sequence[GraphInput]) -> tuple[float, float]:
    total, correct = 0.0, 0
    with nc.no_grad():
        for g in inputs:
            P = model.forward(g)
            total += cross_entropy(P, g.label).item()
            correct += int(np.argmax(P.data) == g.label)
    return total / len(inputs), correct / len(inputs)


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    samples: Sequence[ParseSample],
    model: DigNet | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Mini-batch AdamW over per-sample tapes.

    Each epoch's history row holds the mean training loss accumulated during
    the epoch and the eval-mode training accuracy after it.
    """
    if not samples:
        raise ConfigError("training dataset is empty")
    for s in samples:
        if s.label not in range(N_CLASSES):
            raise DataError(f"label {s.label!r} is not a class id in 0..{N_CLASSES - 1}")
    model = model or build_model(model_cfg, train_cfg, samples)
    inputs = model.prepare_all(samples)
    opt = AdamW(model.params, train_cfg)
    order_rng = np.random.default_rng(train_cfg.seed)
    drop_rng = np.random.default_rng([train_cfg.seed, 1])
    result = TrainResult(model=model)
    n = len(inputs)
    for epoch in range(1, train_cfg.epochs + 1):
        order = order_rng.permutation(n)
        running = 0.0
        for start in range(0, n, train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            model.params.zero_grad()
            scale = 1.0 / len(batch)
            for idx in batch:
                g = inputs[idx]
                loss = cross_entropy(model.forward(g, drop_rng), g.label)
                running += loss.item()
                nc.backward(loss * scale, model.params)
            opt.step()
        _, acc = evaluate_loss_acc(model, inputs)
        result.history.append(EpochRecord(epoch, running / n, acc))
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.4f acc %.4f", epoch, running / n, acc)
    return result


# persistence ----------------------------------------------------------


def save_checkpoint(model: DigNet, out_dir, history: Sequence[EpochRecord] | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nc.save_archive(out / "model.ckpt", model.params)
    sidecar = {
        "model_config": model.cfg.to_dict(),
        "precision": 64 if model.dtype == np.float64 else 32,
        "relation_vocab": model.relations.to_json(),
        "token_vocab": model.tokens.to_json(),
    }
    (out / "model.json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    if history is not None:
        (out / "history.json").write_text(json.dumps([asdict(r) for r in history], indent=2) + "\n", encoding="utf-8")
    return out / "model.ckpt"


def load_checkpoint(ckpt_dir) -> DigNet:
    d = Path(ckpt_dir)
    meta = json.loads((d / "model.json").read_text(encoding="utf-8"))
    cfg = ModelConfig.from_dict(meta["model_config"])
    dtype = np.float64 if meta.get("precision", 64) == 64 else np.float32
    model = DigNet(
        cfg,
        TokenVocab.from_json(meta["token_vocab"]),
        RelationVocab.from_json(meta["relation_vocab"]),
        dtype=dtype,
    )
    model.params.load_arrays(nc.load_archive(d / "model.ckpt"))
    return model
