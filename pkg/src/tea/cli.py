"""Command-line entry point.

Settings come from defaults, then the ``TEA_SEED`` environment variable,
then a flat ``key = value`` config file (``--config``), then flags.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .errors import FormatError, TeaError
from .features import FeatureVocab, PiamVersion, build_vocab
from .flow import dfg_lines
from .harness import EvalReport, evaluate, gen_synthetic, load_pairs, prepare, source_piam, train
from .model import Checkpoint, ModelConfig, beam_decode
from .parser import parse
from .piam import analyze, assemble, dump, write_batch
from .tokenizer import BpeModel, decode_ids, lex, train_bpe

USAGE_ERROR, DATA_ERROR = 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    max_len: int = 128
    piam_version: str = "none"
    x: int = 24
    merges: int = 1000
    beam_width: int = 1
    top_k: int = 1
    steps: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    n: int = 100
    corpus: str = ""
    buggy: str = ""
    fixed: str = ""
    input: str = ""
    vocab: str = ""
    bpe_model: str = ""
    checkpoint: str = ""
    output: str = ""
    output_dir: str = ""

    def validate(self) -> None:
        try:
            v = PiamVersion(self.piam_version)
        except ValueError:
            raise UsageError(f"piam_version must be one of none, V1, V2, V3 (got {self.piam_version!r})")
        positive = ("d_model", "n_heads", "d_ff", "n_enc_layers", "n_dec_layers", "max_len",
                    "beam_width", "top_k", "batch_size", "n")
        for name in positive:
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        for name in ("merges", "steps"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")
        if self.d_model % self.n_heads:
            raise UsageError("d_model must be divisible by n_heads")
        if v is not PiamVersion.NONE and not 22 <= self.x <= 25:
            raise UsageError("x must lie in [22, 25]")
        if self.lr <= 0:
            raise UsageError("lr must be positive")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig.for_version(
            vocab_size,
            self.piam_version,
            d_model=self.d_model,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            n_enc_layers=self.n_enc_layers,
            n_dec_layers=self.n_dec_layers,
            max_len=self.max_len,
            x=self.x,
            seed=self.seed,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise UsageError(f"{key}: expected {kind}, got {value!r}")
    return value


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown or malformed setting {raw.strip()!r}")
        out[key] = _coerce(key, value.strip())
    return out


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values: dict = {}
    if environ.get("TEA_SEED"):
        values["seed"] = _coerce("seed", environ["TEA_SEED"])
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"--config: no such file {args.config}")
        values.update(read_config_file(path))
    for name in _FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


_SUBCOMMANDS = {
    "bpe-train": ("learn BPE merges", ("corpus", "buggy", "fixed", "merges", "bpe_model")),
    "vocab-build": ("build the AST feature vocabulary", ("corpus", "buggy", "piam_version", "x", "vocab")),
    "extract": ("write one PIAM dump per method", ("corpus", "bpe_model", "vocab", "output_dir")),
    "inspect": ("print AST, CFG, DFG and PIAM of one method", ("input", "bpe_model", "vocab")),
    "train": ("train a repair model", ("buggy", "fixed", "bpe_model", "vocab", "checkpoint", "output")),
    "eval": ("exact-match evaluation", ("buggy", "fixed", "bpe_model", "vocab", "checkpoint", "beam_width", "output")),
    "repair": ("print candidate fixes for one method", ("input", "bpe_model", "vocab", "checkpoint", "beam_width", "top_k")),
    "synth": ("write a synthetic buggy/fixed corpus", ("n", "output_dir")),
}
_MODEL_FLAGS = ("d_model", "n_heads", "d_ff", "n_enc_layers", "n_dec_layers", "max_len", "piam_version",
                "x", "steps", "batch_size", "lr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tea", description="Program-structure attention for sequence-to-sequence bug repair.")
    parser.add_argument("--version", action="version", version=f"tea {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (help_text, keys) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--seed", type=int)
        extra = _MODEL_FLAGS if name == "train" else ()
        for key in dict.fromkeys(keys + extra):
            kind = _FIELD_TYPES[key]
            p.add_argument("--" + key.replace("_", "-"), dest=key, type={"int": int, "float": float}.get(kind, str))
    return parser


def _need(cfg: RunConfig, *keys: str) -> None:
    for key in keys:
        if not getattr(cfg, key):
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _methods(path) -> list[str]:
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def _load_vocab(cfg: RunConfig) -> FeatureVocab | None:
    return FeatureVocab.load(cfg.vocab) if cfg.vocab else None


def _check_compat(cfg: RunConfig, ckpt: Checkpoint, bpe: BpeModel, vocab: FeatureVocab | None) -> None:
    mc = ckpt.config
    if mc.vocab_size != bpe.vocab_size:
        raise TeaError(
            f"checkpoint {cfg.checkpoint} expects {mc.vocab_size} subwords but BPE model {cfg.bpe_model} has {bpe.vocab_size}"
        )
    if mc.piam_version is PiamVersion.NONE:
        return
    if vocab is None:
        raise TeaError(f"checkpoint {cfg.checkpoint} uses PIAM {mc.piam_version.value}; pass --vocab")
    if vocab.version is not mc.piam_version or vocab.x != mc.x:
        raise TeaError(
            f"checkpoint {cfg.checkpoint} (PIAM {mc.piam_version.value}, x={mc.x}) does not match "
            f"vocab {cfg.vocab} (PIAM {vocab.version.value}, x={vocab.x})"
        )


# ------------------------------------------------------------------ commands


def cmd_bpe_train(cfg: RunConfig, out) -> None:
    _need(cfg, "bpe_model")
    corpus = []
    if cfg.corpus:
        corpus += _methods(cfg.corpus)
    for key in ("buggy", "fixed"):
        if getattr(cfg, key):
            corpus += _methods(getattr(cfg, key))
    if not corpus:
        raise UsageError("--corpus or --buggy/--fixed is required")
    model = train_bpe(corpus, cfg.merges)
    model.save(cfg.bpe_model)
    print(f"learned {len(model.merges)} merges, {model.vocab_size} subwords -> {cfg.bpe_model}", file=out)


def cmd_vocab_build(cfg: RunConfig, out) -> None:
    _need(cfg, "vocab")
    source = cfg.corpus or cfg.buggy
    if not source:
        raise UsageError("--corpus is required")
    if PiamVersion(cfg.piam_version) is PiamVersion.NONE:
        raise UsageError("--piam-version must be V1, V2 or V3")
    asts, skipped = [], 0
    for method in _methods(source):
        try:
            asts.append(parse(lex(method)))
        except TeaError:
            skipped += 1
    if not asts:
        raise TeaError(f"no parseable methods in {source}")
    vocab = build_vocab(asts, cfg.piam_version, cfg.x)
    vocab.save(cfg.vocab)
    print(f"{len(vocab.table)} features from {len(asts)} methods ({skipped} unparseable) -> {cfg.vocab}", file=out)


def cmd_extract(cfg: RunConfig, out) -> None:
    _need(cfg, "corpus", "bpe_model", "output_dir")
    paths = write_batch(_methods(cfg.corpus), BpeModel.load(cfg.bpe_model), _load_vocab(cfg), cfg.output_dir)
    print(f"wrote {len(paths)} PIAM dumps to {cfg.output_dir}", file=out)


def cmd_inspect(cfg: RunConfig, out) -> None:
    _need(cfg, "input")
    source = Path(cfg.input).read_text(encoding="utf-8")
    bpe = BpeModel.load(cfg.bpe_model) if cfg.bpe_model else BpeModel.from_merges([])
    a = analyze(source, bpe)
    if a.ast is None:
        print(f"AST unavailable: {a.error}", file=out)
    else:
        print("AST", file=out)
        print(a.ast.render(), file=out)
        for line in a.cfg.lines():
            print(line, file=out)
        for line in dfg_lines(a.dfg):
            print(line, file=out)
    if cfg.bpe_model:
        print(dump(assemble(a.seq, a.ast, a.cfg, a.dfg, _load_vocab(cfg))), end="", file=out)


def cmd_train(cfg: RunConfig, out) -> None:
    _need(cfg, "buggy", "fixed", "bpe_model", "checkpoint")
    bpe = BpeModel.load(cfg.bpe_model)
    vocab = _load_vocab(cfg)
    version = PiamVersion(cfg.piam_version)
    if version is not PiamVersion.NONE and (vocab is None or vocab.version is not version or vocab.x != cfg.x):
        raise TeaError(f"--piam-version {version.value} / x={cfg.x} needs a matching --vocab (got {cfg.vocab or 'none'})")
    model_cfg = cfg.model_config(bpe.vocab_size)
    examples = prepare(load_pairs(cfg.buggy, cfg.fixed), bpe, vocab, version, cfg.max_len)
    log_file = open(cfg.output, "w", encoding="utf-8") if cfg.output else None

    def log_step(step, loss):
        line = f"step {step} loss {loss:.6f}"
        print(line, file=log_file or out)

    try:
        ckpt = train(model_cfg, examples, cfg.steps, cfg.seed, cfg.batch_size, cfg.lr, log_fn=log_step)
    finally:
        if log_file:
            log_file.close()
    ckpt.save(cfg.checkpoint)
    print(f"checkpoint -> {cfg.checkpoint}", file=out)


def _load_checkpoint_bundle(cfg: RunConfig):
    _need(cfg, "bpe_model", "checkpoint")
    ckpt = Checkpoint.load(cfg.checkpoint)
    bpe = BpeModel.load(cfg.bpe_model)
    vocab = _load_vocab(cfg)
    _check_compat(cfg, ckpt, bpe, vocab)
    return ckpt, bpe, vocab


def cmd_eval(cfg: RunConfig, out) -> None:
    _need(cfg, "buggy", "fixed")
    ckpt, bpe, vocab = _load_checkpoint_bundle(cfg)
    mc = ckpt.config
    examples = prepare(load_pairs(cfg.buggy, cfg.fixed), bpe, vocab, mc.piam_version, mc.max_len)
    report = evaluate(ckpt, examples, bpe, cfg.beam_width)
    if cfg.output:
        report.save(cfg.output)
    print(f"exact matches: {report.exact_matches}/{report.total}", file=out)


def cmd_repair(cfg: RunConfig, out) -> None:
    _need(cfg, "input")
    ckpt, bpe, vocab = _load_checkpoint_bundle(cfg)
    source = Path(cfg.input).read_text(encoding="utf-8")
    src, piam = source_piam(source, bpe, vocab, ckpt.config.piam_version)
    model = ckpt.to_model()
    width = max(cfg.beam_width, cfg.top_k)
    hyps = beam_decode(model, src, piam, width, min(model.cfg.max_len - 1, 2 * len(src) + 10))
    for rank, (ids, score) in enumerate(hyps[: cfg.top_k], start=1):
        print(f"{rank}\t{score:.4f}\t{decode_ids(bpe, ids)}", file=out)


def cmd_synth(cfg: RunConfig, out) -> None:
    _need(cfg, "output_dir")
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    pairs = gen_synthetic(cfg.n, cfg.seed)
    (d / "buggy.txt").write_text("".join(p.buggy + "\n" for p in pairs), encoding="utf-8")
    (d / "fixed.txt").write_text("".join(p.fixed + "\n" for p in pairs), encoding="utf-8")
    print(f"wrote {len(pairs)} pairs to {d}", file=out)


COMMANDS = {
    "bpe-train": cmd_bpe_train,
    "vocab-build": cmd_vocab_build,
    "extract": cmd_extract,
    "inspect": cmd_inspect,
    "train": cmd_train,
    "eval": cmd_eval,
    "repair": cmd_repair,
    "synth": cmd_synth,
}


def main(argv=None, out=None, environ=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        print("tea: error: a subcommand is required", file=sys.stderr)
        return USAGE_ERROR
    try:
        cfg = resolve_config(args, environ)
        COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"tea {args.command}: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (TeaError, FormatError, OSError, ValueError) as exc:
        print(f"tea {args.command}: {exc}", file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
