import json
import subprocess
import sys

import numpy as np
import pytest

from lginet.cli import main
from lginet.graphs import LGIG, build_lgig, read_jsonl, write_jsonl
from lginet.synth import generate

TINY_CFG = "d_hidden = 8\nd_rel = 4\nd_embed = 4\nn_heads_mha = 2\nL_lgi = 1\nL_gcn = 1\nepochs = 2\n"


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "data.jsonl"
    write_jsonl(path, generate(10, seed=1))
    return path


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


def test_synth_data_is_deterministic(tmp_path, capsys):
    for k in range(2):
        assert main(["synth-data", "--n", "32", "--seed", "7", "--out", str(tmp_path / f"{k}.jsonl")]) == 0
    assert (tmp_path / "0.jsonl").read_bytes() == (tmp_path / "1.jsonl").read_bytes()
    assert len(read_jsonl(tmp_path / "0.jsonl")) == 32


def test_env_seed_overrides_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("LGINET_SEED", "7")
    main(["synth-data", "--seed", "1", "--out", str(tmp_path / "env.jsonl")])
    monkeypatch.delenv("LGINET_SEED")
    main(["synth-data", "--seed", "7", "--out", str(tmp_path / "flag.jsonl")])
    assert (tmp_path / "env.jsonl").read_bytes() == (tmp_path / "flag.jsonl").read_bytes()


def test_build_graph_round_trip(tmp_path, dosa):
    data = tmp_path / "dosa.jsonl"
    write_jsonl(data, [dosa])
    out = tmp_path / "graphs"
    assert main(["build-graph", "--data", str(data), "--out", str(out), "--dot"]) == 0
    rec = json.loads((out / "lgig.jsonl").read_text().splitlines()[0])
    assert rec["tau"] == dosa.aspect_span[0]
    assert rec["tokens"] == dosa.tokens
    back = LGIG.from_json(rec)
    mem = build_lgig(dosa)
    np.testing.assert_array_equal(back.syntax.adj, mem.syntax.adj)
    assert (back.tau, back.mode, back.relation.rel, back.relation.rel_rv) == (
        mem.tau,
        mem.mode,
        mem.relation.rel,
        mem.relation.rel_rv,
    )
    assert back.relation.vocab == mem.relation.vocab
    assert (out / "lgig_0.dot").read_text().startswith("digraph")


def test_build_graph_from_conllu_with_aspect(tmp_path, capsys):
    conllu = tmp_path / "s.conllu"
    conllu.write_text(
        "1\tthe\t_\t_\t_\t_\t2\tdet\t_\t_\n"
        "2\tfood\t_\t_\t_\t_\t3\tnsubj\t_\t_\n"
        "3\trocks\t_\t_\t_\t_\t0\troot\t_\t_\n"
    )
    assert main(["build-graph", "--data", str(conllu), "--aspect", "1:2", "--mode", "one-to-all"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["tau"] == 1 and rec["mode"] == "one-to-all"


def test_build_graph_bad_conllu_exits_1(tmp_path, capsys):
    conllu = tmp_path / "bad.conllu"
    conllu.write_text("1\tfood\t_\t_\t_\t_\t9\troot\t_\t_\n")
    assert main(["build-graph", "--data", str(conllu)]) == 1
    assert "bad.conllu:1:" in capsys.readouterr().err


def test_missing_data_flag_exits_1(capsys):
    assert main(["train"]) == 1
    assert "--data" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--data", str(tmp_path / "nope.jsonl")]) == 1


def test_train_then_eval(tmp_path, corpus, tiny_cfg, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data", str(corpus), "--config", str(tiny_cfg), "--out", str(out), "--variant", "mlp"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["epochs"] == 2
    meta = json.loads((out / "model.json").read_text())
    assert meta["model_config"]["cgmp_variant"] == "mlp"
    assert len(json.loads((out / "history.json").read_text())) == 2

    assert main(["eval", "--checkpoint", str(out), "--data", str(corpus), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) == {"acc", "f1", "n"} and metrics["n"] == 10


def test_train_is_deterministic(tmp_path, corpus, tiny_cfg):
    for k in range(2):
        main(["train", "--data", str(corpus), "--config", str(tiny_cfg), "--out", str(tmp_path / str(k)), "--seed", "3"])
    for name in ("model.ckpt", "history.json"):
        assert (tmp_path / "0" / name).read_bytes() == (tmp_path / "1" / name).read_bytes()


def test_unknown_config_key_exits_1(tmp_path, corpus, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("hidden_size = 8\n")
    assert main(["train", "--data", str(corpus), "--config", str(cfg)]) == 1
    assert "bad.cfg:1:" in capsys.readouterr().err


@pytest.mark.parametrize("variant", ["gate", "mlp", "mha"])
def test_gradcheck_passes(variant, capsys):
    assert main(["gradcheck", "--variant", variant]) == 0
    err = float(capsys.readouterr().out.split()[3])
    assert err <= 1e-4


def test_gradcheck_on_given_data(corpus, capsys):
    assert main(["gradcheck", "--data", str(corpus), "--ablation", "no_fa2c", "--max-coords", "50"]) == 0


def test_ablate_variants(tmp_path, tiny_cfg):
    out = tmp_path / "abl"
    assert main(["ablate", "--sweep", "variants", "--config", str(tiny_cfg), "--n", "12", "--epochs", "1", "--out", str(out)]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == "variant,acc,f1,params,seed"
    assert [ln.split(",")[0] for ln in lines[1:]] == [
        "full",
        "no_syntax",
        "no_relation",
        "no_lgi",
        "no_fa2c",
        "syntax_decoder",
        "relation_decoder",
    ]
    assert (out / "results.txt").exists()


def test_ablate_rejects_empty_holdout(tiny_cfg):
    assert main(["ablate", "--sweep", "variants", "--config", str(tiny_cfg), "--n", "4", "--split", "1.0"]) == 1


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "s.jsonl"
    proc = subprocess.run(
        [sys.executable, "-m", "lginet.cli", "synth-data", "--n", "3", "--out", str(out)],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert len(read_jsonl(out)) == 3


def test_aspect_covering_whole_sentence_exits_2(tmp_path, capsys):
    conllu = tmp_path / "s.conllu"
    conllu.write_text("1\tgreat\t_\t_\t_\t_\t0\troot\t_\t_\n2\tfood\t_\t_\t_\t_\t1\tnsubj\t_\t_\n")
    assert main(["build-graph", "--data", str(conllu), "--aspect", "0:2"]) == 2
    assert "contract violation" in capsys.readouterr().err


def test_gradcheck_above_tolerance_exits_3(monkeypatch, capsys):
    import lginet.cli as cli

    monkeypatch.setattr(cli, "gradcheck_model", lambda *a, **k: 0.5)
    assert main(["gradcheck"]) == 3
