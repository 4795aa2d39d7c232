import io
import os

import pytest

from tea.cli import build_parser, main, resolve_config


def run(argv, environ=None):
    out = io.StringIO()
    code = main(argv, out=out, environ=environ or {})
    return code, out.getvalue()


def test_inspect_minimal_method(tmp_path):
    (tmp_path / "minimal.c").write_text("void f ( ) { }\n")
    code, text = run(["inspect", "--input", str(tmp_path / "minimal.c")])
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == "AST" and lines[1] == "FUNCTION"
    assert [l for l in lines if l.startswith("CFG")] == ["CFG entry -> exit"]
    assert not [l for l in lines if l.startswith("DFG")]


def test_inspect_two_statements(tmp_path):
    (tmp_path / "m.c").write_text("void f ( ) { int a = 1 ; b = a ; }\n")
    code, text = run(["inspect", "--input", str(tmp_path / "m.c")])
    assert code == 0
    assert [l for l in text.splitlines() if l.startswith("CFG")] == ["CFG entry -> 2", "CFG 2 -> 3", "CFG 3 -> exit"]
    assert [l for l in text.splitlines() if l.startswith("DFG")] == ["DFG a 6 -> 12"]


def test_inspect_unparseable_degrades(tmp_path):
    (tmp_path / "m.c").write_text("x = 1 ;")
    (tmp_path / "c.txt").write_text("x = 1 ;\n")
    assert run(["bpe-train", "--corpus", str(tmp_path / "c.txt"), "--bpe-model", str(tmp_path / "b")])[0] == 0
    code, text = run(["inspect", "--input", str(tmp_path / "m.c"), "--bpe-model", str(tmp_path / "b")])
    assert code == 0
    assert "AST unavailable" in text
    assert all(line.endswith(" 0") for line in text.splitlines()[2:])


def test_missing_subcommand(capsys):
    assert run([])[0] == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert run(["inspect", "--bogus", "1"])[0] == 1
    assert "--bogus" in capsys.readouterr().err


def test_bad_value_is_usage_error(tmp_path, capsys):
    assert run(["train", "--piam-version", "V9", "--buggy", "b"])[0] == 1
    assert "piam_version" in capsys.readouterr().err


def test_missing_input_is_data_error(tmp_path):
    assert run(["inspect", "--input", str(tmp_path / "nope.c")])[0] == 2


def test_three_way_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# settings\nseed = 5\nsteps = 7\nlr = 0.01  # comment\n")
    args = build_parser().parse_args(["train", "--config", str(cfg_file), "--seed", "9"])
    cfg = resolve_config(args, {"TEA_SEED": "3"})
    assert (cfg.seed, cfg.steps, cfg.lr, cfg.batch_size) == (9, 7, 0.01, 32)
    args = build_parser().parse_args(["train", "--config", str(cfg_file)])
    assert resolve_config(args, {"TEA_SEED": "3"}).seed == 5
    args = build_parser().parse_args(["train"])
    assert resolve_config(args, {"TEA_SEED": "3"}).seed == 3
    assert resolve_config(args, {}).seed == 0


def test_bad_config_file(tmp_path):
    (tmp_path / "c").write_text("nonsense = 1\n")
    assert run(["inspect", "--config", str(tmp_path / "c"), "--input", "x"])[0] == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    s = str(d)
    assert run(["synth", "--n", "30", "--seed", "1", "--output-dir", s])[0] == 0
    assert run(["bpe-train", "--buggy", f"{s}/buggy.txt", "--fixed", f"{s}/fixed.txt", "--merges", "80", "--bpe-model", f"{s}/bpe"])[0] == 0
    assert run(["vocab-build", "--corpus", f"{s}/buggy.txt", "--piam-version", "V3", "--vocab", f"{s}/v3"])[0] == 0
    assert run(["vocab-build", "--corpus", f"{s}/buggy.txt", "--piam-version", "V1", "--vocab", f"{s}/v1"])[0] == 0
    code, text = run([
        "train", "--buggy", f"{s}/buggy.txt", "--fixed", f"{s}/fixed.txt", "--bpe-model", f"{s}/bpe",
        "--vocab", f"{s}/v3", "--piam-version", "V3", "--checkpoint", f"{s}/m.ckpt", "--steps", "3",
        "--d-model", "16", "--n-heads", "2", "--d-ff", "32", "--n-enc-layers", "1", "--n-dec-layers", "1",
        "--batch-size", "4",
    ])
    assert code == 0
    assert text.splitlines()[0].startswith("step 1 loss ")
    return s


def test_eval_and_repair(pipeline):
    s = pipeline
    code, text = run(["eval", "--buggy", f"{s}/buggy.txt", "--fixed", f"{s}/fixed.txt", "--bpe-model", f"{s}/bpe",
                      "--vocab", f"{s}/v3", "--checkpoint", f"{s}/m.ckpt", "--output", f"{s}/report.txt"])
    assert code == 0 and text.startswith("exact matches: ")
    assert len(open(f"{s}/report.txt").read().splitlines()) == 31
    first = open(f"{s}/buggy.txt").readline()
    open(f"{s}/one.c", "w").write(first)
    code, text = run(["repair", "--input", f"{s}/one.c", "--bpe-model", f"{s}/bpe", "--vocab", f"{s}/v3",
                      "--checkpoint", f"{s}/m.ckpt", "--top-k", "2"])
    assert code == 0 and len(text.splitlines()) == 2


def test_eval_with_mismatched_vocab(pipeline, capsys):
    s = pipeline
    code, _ = run(["eval", "--buggy", f"{s}/buggy.txt", "--fixed", f"{s}/fixed.txt", "--bpe-model", f"{s}/bpe",
                   "--vocab", f"{s}/v1", "--checkpoint", f"{s}/m.ckpt"])
    assert code == 2
    err = capsys.readouterr().err
    assert f"{s}/m.ckpt" in err and f"{s}/v1" in err


def test_extract_writes_dumps(pipeline):
    s = pipeline
    code, _ = run(["extract", "--corpus", f"{s}/buggy.txt", "--bpe-model", f"{s}/bpe", "--vocab", f"{s}/v3", "--output-dir", f"{s}/piam"])
    assert code == 0
    assert len(os.listdir(f"{s}/piam")) == 30
    assert open(f"{s}/piam/0.piam").readline().startswith("TEA-PIAM v1 L=")
