import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score

from lginet.evaluation import (
    VARIANTS,
    ResultRow,
    ablation_table,
    accuracy,
    layer_sweep,
    macro_f1,
    rows_to_csv,
    rows_to_text,
    run_ablation,
    variant_config,
)
from lginet.model import ConfigError, ModelConfig
from lginet.numcore import ContractError
from lginet.synth import generate
from lginet.training import TrainConfig

SMALL = ModelConfig(d_hidden=8, d_rel=4, d_embed=4, L_lgi=1, L_gcn=1, n_heads_mha=2)
QUICK = TrainConfig(epochs=1, batch_size=4)


def confusion_oracle(preds, golds, n_classes=3) -> float:
    """Macro-F1 from an explicit confusion matrix, one class at a time."""
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for p, g in zip(preds, golds):
        cm[g, p] += 1
    f1s = []
    for c in range(n_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        if tp + fp + fn == 0:
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall))
    return float(np.mean(f1s))


# accuracy ---------------------------------------------------------------


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([0, 1, 2], [0, 1, 1]) == pytest.approx(2 / 3)
    assert accuracy([1, 2, 0], [0, 1, 2]) == 0.0


def test_accuracy_rejects_empty_and_mismatched():
    with pytest.raises(ContractError):
        accuracy([], [])
    with pytest.raises(ContractError):
        accuracy([0], [0, 1])


# macro-F1 ---------------------------------------------------------------


def test_macro_f1_perfect():
    assert macro_f1([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0


def test_macro_f1_hand_confusion_matrix():
    assert macro_f1([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.5, abs=1e-15)


def test_macro_f1_counts_predicted_only_class_as_zero():
    # class 2 is predicted but never gold: F1 = 0 and it is not skipped
    assert macro_f1([0, 2], [0, 0]) == pytest.approx((2 / 3 + 0.0) / 2)


def test_macro_f1_rejects_bad_input():
    with pytest.raises(ContractError):
        macro_f1([], [])
    with pytest.raises(ContractError):
        macro_f1([3], [0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=30))
def test_macro_f1_matches_oracle(pairs):
    preds, golds = zip(*pairs)
    assert abs(macro_f1(preds, golds) - confusion_oracle(preds, golds)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=30))
def test_macro_f1_agrees_with_sklearn_on_present_labels(pairs):
    preds, golds = zip(*pairs)
    present = sorted(set(preds) | set(golds))
    ref = f1_score(golds, preds, labels=present, average="macro", zero_division=0)
    assert macro_f1(preds, golds) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=30), st.randoms())
def test_metrics_are_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    p1, g1 = zip(*pairs)
    p2, g2 = zip(*shuffled)
    assert accuracy(p1, g1) == accuracy(p2, g2)
    assert macro_f1(p1, g1) == pytest.approx(macro_f1(p2, g2), abs=1e-15)


# harness ----------------------------------------------------------------


def test_variant_names():
    assert VARIANTS == ("full", "no_syntax", "no_relation", "no_lgi", "no_fa2c", "syntax_decoder", "relation_decoder")
    assert variant_config(SMALL, "full").ablation == "none"
    with pytest.raises(ConfigError):
        variant_config(SMALL, "w/o everything")


@pytest.fixture(scope="module")
def split():
    data = generate(12, seed=9)
    return data[:8], data[8:]


def test_ablation_table_rows_and_param_counts(split):
    tr, te = split
    rows = {r.variant: r for r in ablation_table(SMALL, QUICK, tr, te)}
    assert list(rows) == list(VARIANTS)
    assert rows["no_syntax"].params < rows["full"].params
    assert rows["syntax_decoder"].params == rows["full"].params - 2 * SMALL.d_hidden * SMALL.d_hidden
    for r in rows.values():
        assert 0 <= r.acc <= 1 and 0 <= r.f1 <= 1 and r.seed == 0


def test_layer_sweep_emits_one_row_per_value(split):
    tr, te = split
    rows = layer_sweep(SMALL, QUICK, "L_lgi", range(1, 7), tr, te)
    assert [r.variant for r in rows] == [f"L_lgi={k}" for k in range(1, 7)]
    assert all(a.params < b.params for a, b in zip(rows, rows[1:]))
    with pytest.raises(ConfigError):
        layer_sweep(SMALL, QUICK, "d_hidden", [8], tr, te)


def test_run_ablation_is_deterministic(split):
    tr, te = split
    assert run_ablation(SMALL, QUICK, "no_fa2c", tr, te) == run_ablation(SMALL, QUICK, "no_fa2c", tr, te)


def test_result_table_formats():
    rows = [ResultRow("full", 0.75, 0.5, 1234, 0), ResultRow("L_gcn=3", 1.0, 1.0, 99, 7)]
    parsed = list(csv.DictReader(io.StringIO(rows_to_csv(rows))))
    assert parsed[0] == {"variant": "full", "acc": "0.7500", "f1": "0.5000", "params": "1234", "seed": "0"}
    text = rows_to_text(rows).splitlines()
    assert text[0].split() == ["variant", "acc", "f1", "params", "seed"]
    assert text[2].split() == ["L_gcn=3", "1.0000", "1.0000", "99", "7"]
