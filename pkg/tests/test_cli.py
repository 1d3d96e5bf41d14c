import json
import struct

import numpy as np
import pytest

from podep.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_header, save_checkpoint
from podep.cli import main
from podep.conllu import read_conllu
from podep.decoder import find_cycles
from podep.model import ModelConfig, Parser
from podep.parser_head import parse_score_matrix

from .conftest import FIXTURES, TOY


@pytest.fixture(scope="module")
def overfit_ckpt(overfit_result, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "toy.model"
    save_checkpoint(overfit_result.model, path)
    return path


def test_checkpoint_round_trip(toy_lexicon, tmp_path):
    model = Parser(ModelConfig.tiny(), toy_lexicon, seed=2)
    path = tmp_path / "m.bin"
    save_checkpoint(model, path, extra={"note": "x"})
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded.lexicon.labels.items == toy_lexicon.labels.items
    for (name, a), (_, b) in zip(model.params.items(), loaded.params.items()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=name)
    forms = ["a", "cat", "sang", "."]
    np.testing.assert_array_equal(model.head_probabilities(forms), loaded.head_probabilities(forms))
    assert read_header(path)[0]["extra"] == {"note": "x"}


def test_checkpoint_version_mismatch(toy_lexicon, tmp_path):
    path = tmp_path / "m.bin"
    save_checkpoint(Parser(ModelConfig.tiny(), toy_lexicon), path)
    raw = path.read_bytes()
    header, offset = read_header(path)
    header["format_version"] = 99
    blob = json.dumps(header).encode()
    path.write_bytes(MAGIC + struct.pack("<Q", len(blob)) + blob + raw[offset:])
    with pytest.raises(CheckpointError, match="99"):
        load_checkpoint(path)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"hello world")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_truncated(toy_lexicon, tmp_path):
    path = tmp_path / "m.bin"
    save_checkpoint(Parser(ModelConfig.tiny(), toy_lexicon), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


# -- train ---------------------------------------------------------------

def _train_args(tmp_path, *extra):
    return ["train", "--train", str(TOY), "--dev", str(TOY), "--model", str(tmp_path / "m.bin"),
            "--preset", "tiny", "--epochs", "1", *extra]


def test_train_smoke(tmp_path, capsys):
    assert main(_train_args(tmp_path)) == 0
    last = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert "dev_uas" in last and "loss_tagger" not in last
    assert (tmp_path / "m.bin").exists()
    log_lines = (tmp_path / "m.bin.log.jsonl").read_text().splitlines()
    assert json.loads(log_lines[-1]) == last


def test_train_pos_head_flag(tmp_path, capsys):
    assert main(_train_args(tmp_path, "--pos-head", "on")) == 0
    assert "loss_tagger" in json.loads(capsys.readouterr().out.splitlines()[-1])


def test_train_same_seed_same_log(tmp_path, capsys):
    main(_train_args(tmp_path, "--seed", "4"))
    first = capsys.readouterr().out
    main(_train_args(tmp_path, "--seed", "4"))
    assert capsys.readouterr().out == first


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"scorer": {"attention_mode": "hard"}}, "train": {"epochs": 1}}))
    assert main(_train_args(tmp_path, "--config", str(cfg), "--attention", "soft")) == 0
    header, _ = read_header(tmp_path / "m.bin")
    assert header["config"]["scorer"]["attention_mode"] == "soft"
    assert header["extra"]["train"]["epochs"] == 1


def test_bad_config_is_reported(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"model": {"nonsense": 1}}')
    assert main(_train_args(tmp_path, "--config", str(cfg))) == 1
    assert "nonsense" in capsys.readouterr().err


# -- parse ---------------------------------------------------------------

def test_parse_reproduces_memorized_trees(overfit_ckpt, tmp_path):
    out = tmp_path / "out.conllu"
    assert main(["parse", "--model", str(overfit_ckpt), "--input", str(TOY), "--output", str(out)]) == 0
    gold, pred = read_conllu(TOY), read_conllu(out)
    assert [s.forms for s in pred] == [s.forms for s in gold]
    correct = sum(g == p for gs, ps in zip(gold, pred) for g, p in zip(gs.heads, ps.heads))
    assert correct / sum(len(s) for s in gold) >= 0.99


def test_parse_raw_text(overfit_ckpt, tmp_path, capsys):
    raw = tmp_path / "in.txt"
    raw.write_text("a cat sang .\n\nthe dogs ran\n")
    assert main(["parse", "--model", str(overfit_ckpt), "--input", str(raw)]) == 0
    out = capsys.readouterr().out
    from podep.conllu import parse_conllu
    sents = parse_conllu(out)
    assert [s.forms for s in sents] == [["a", "cat", "sang", "."], ["the", "dogs", "ran"]]


def test_parse_empty_input(overfit_ckpt, tmp_path, capsys):
    empty = tmp_path / "empty.conllu"
    empty.write_text("")
    assert main(["parse", "--model", str(overfit_ckpt), "--input", str(empty)]) == 0
    assert capsys.readouterr().out == ""


def test_greedy_and_cle_differ_only_on_cycles(overfit_ckpt, tmp_path):
    runs = {}
    for mode in ("greedy", "cle"):
        out = tmp_path / f"{mode}.conllu"
        main(["parse", "--model", str(overfit_ckpt), "--input", str(TOY), "--output", str(out), "--decode", mode])
        runs[mode] = read_conllu(out)
    for g, c in zip(runs["greedy"], runs["cle"]):
        if g.heads != c.heads:
            assert find_cycles(g.heads)


def test_parse_missing_model(tmp_path, capsys):
    assert main(["parse", "--model", str(tmp_path / "nope"), "--input", str(TOY)]) == 1
    assert "nope" in capsys.readouterr().err


def test_parse_threads_agree(overfit_ckpt, tmp_path, monkeypatch):
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("PODEP_THREADS", threads)
        out = tmp_path / f"t{threads}.conllu"
        main(["parse", "--model", str(overfit_ckpt), "--input", str(TOY), "--output", str(out)])
        outs.append(out.read_text())
    assert outs[0] == outs[1]


# -- eval ----------------------------------------------------------------

def test_eval_identical_files(capsys):
    gold = str(FIXTURES / "metrics_gold.conllu")
    assert main(["eval", "--gold", gold, "--pred", gold, "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out) == {"la": 100.0, "uas": 100.0, "las": 100.0, "tokens": 17}


@pytest.mark.parametrize("flags, expected", [
    ([], {"la": 76.47, "uas": 82.35, "las": 64.71, "tokens": 17}),
    (["--exclude-punct"], {"la": 76.92, "uas": 84.62, "las": 69.23, "tokens": 13}),
])
def test_eval_fixture(capsys, flags, expected):
    assert main(["eval", "--gold", str(FIXTURES / "metrics_gold.conllu"),
                 "--pred", str(FIXTURES / "metrics_pred.conllu"), "--format", "json", *flags]) == 0
    assert json.loads(capsys.readouterr().out) == expected


def test_eval_misaligned(capsys):
    assert main(["eval", "--gold", str(FIXTURES / "metrics_gold.conllu"), "--pred", str(TOY)]) == 1
    assert "error" in capsys.readouterr().err


# -- inspect / stats -----------------------------------------------------

def test_inspect_matrix(overfit_ckpt, capsys):
    assert main(["inspect", "--model", str(overfit_ckpt), "--input", str(TOY), "--index", "2"]) == 0
    forms, probs = parse_score_matrix(capsys.readouterr().out)
    assert forms == read_conllu(TOY)[2].forms
    assert probs.shape == (len(forms), len(forms) + 1)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=5e-4 * len(forms))
    assert np.all(probs.max(axis=1) > 0.9)


def test_inspect_sentence_flag(overfit_ckpt, capsys):
    assert main(["inspect", "--model", str(overfit_ckpt), "--sentence", "a cat sang"]) == 0
    forms, probs = parse_score_matrix(capsys.readouterr().out)
    assert forms == ["a", "cat", "sang"] and probs.shape == (3, 4)


def test_inspect_index_out_of_range(overfit_ckpt, capsys):
    assert main(["inspect", "--model", str(overfit_ckpt), "--input", str(TOY), "--index", "999"]) == 1


def test_stats(capsys):
    assert main(["stats", str(FIXTURES / "metrics_gold.conllu")]) == 0
    assert capsys.readouterr().out.strip().endswith("\t17\t5")
