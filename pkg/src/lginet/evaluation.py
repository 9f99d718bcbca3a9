"""Accuracy, macro-F1 and the ablation / layer-count sweep harness."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .graphs import ParseSample
from .model import ABLATIONS, ConfigError, ModelConfig, N_CLASSES
from .numcore import ContractError
from .training import TrainConfig, train

VARIANTS = ("full",) + tuple(a for a in ABLATIONS if a != "none")


def accuracy(preds: Sequence[int], golds: Sequence[int]) -> float:
    if len(preds) != len(golds):
        raise ContractError(f"{len(preds)} predictions for {len(golds)} gold labels")
    if not golds:
        raise ContractError("accuracy of an empty evaluation set")
    return sum(int(p == g) for p, g in zip(preds, golds)) / len(golds)


def macro_f1(preds: Sequence[int], golds: Sequence[int], n_classes: int = N_CLASSES) -> float:
    """Unweighted mean of per-class F1.

    Classes absent from both predictions and gold labels are skipped; zero
    precision or recall denominators count as 0.
    """
    if len(preds) != len(golds):
        raise ContractError(f"{len(preds)} predictions for {len(golds)} gold labels")
    if not golds:
        raise ContractError("macro-F1 of an empty evaluation set")
    tp = [0] * n_classes
    n_pred = [0] * n_classes
    n_gold = [0] * n_classes
    for p, g in zip(preds, golds):
        if not (0 <= p < n_classes and 0 <= g < n_classes):
            raise ContractError(f"label out of range 0..{n_classes - 1}: pred={p}, gold={g}")
        n_pred[p] += 1
        n_gold[g] += 1
        tp[p] += int(p == g)
    scores = []
    for c in range(n_classes):
        if n_pred[c] == 0 and n_gold[c] == 0:
            continue
        prec = tp[c] / n_pred[c] if n_pred[c] else 0.0
        rec = tp[c] / n_gold[c] if n_gold[c] else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(scores) / len(scores)


@dataclass
class ResultRow:
    variant: str
    acc: float
    f1: float
    params: int
    seed: int


def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return replace(base, ablation="none" if variant == "full" else variant)


def evaluate_model(model, samples: Sequence[ParseSample]) -> tuple[float, float]:
    inputs = model.prepare_all(samples)
    preds = model.predict(inputs)
    golds = [g.label for g in inputs]
    return accuracy(preds, golds), macro_f1(preds, golds)


def run_ablation(
    base: ModelConfig,
    train_cfg: TrainConfig,
    variant: str,
    train_set: Sequence[ParseSample],
    eval_set: Sequence[ParseSample],
    label: str | None = None,
) -> ResultRow:
    cfg = variant_config(base, variant)
    result = train(cfg, train_cfg, train_set)
    acc, f1 = evaluate_model(result.model, eval_set)
    return ResultRow(label or variant, acc, f1, result.model.params.num_params(), train_cfg.seed)


def ablation_table(
    base: ModelConfig,
    train_cfg: TrainConfig,
    train_set,
    eval_set,
    variants: Iterable[str] = VARIANTS,
) -> list[ResultRow]:
    return [run_ablation(base, train_cfg, v, train_set, eval_set) for v in variants]


def layer_sweep(
    base: ModelConfig,
    train_cfg: TrainConfig,
    field: str,
    values: Iterable[int],
    train_set,
    eval_set,
) -> list[ResultRow]:
    """Retrain the full model once per value of ``L_lgi`` or ``L_gcn``."""
    if field not in ("L_lgi", "L_gcn"):
        raise ConfigError(f"can only sweep L_lgi or L_gcn, not {field!r}")
    rows = []
    for v in values:
        cfg = replace(base, **{field: int(v)})
        rows.append(run_ablation(cfg, train_cfg, "full", train_set, eval_set, label=f"{field}={v}"))
    return rows


COLUMNS = ("variant", "acc", "f1", "params", "seed")


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r.variant, f"{r.acc:.4f}", f"{r.f1:.4f}", r.params, r.seed])
    return buf.getvalue()


def rows_to_text(rows: Sequence[ResultRow]) -> str:
    width = max([len("variant")] + [len(r.variant) for r in rows])
    lines = [f"{'variant':<{width}}  {'acc':>7}  {'f1':>7}  {'params':>8}  {'seed':>5}"]
    for r in rows:
        lines.append(f"{r.variant:<{width}}  {r.acc:7.4f}  {r.f1:7.4f}  {r.params:8d}  {r.seed:5d}")
    return "\n".join(lines) + "\n"
