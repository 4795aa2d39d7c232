"""Repair datasets, training loop and exact-match evaluation."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DimensionError, LexError, LineCountMismatch, ParseError
from .features import FeatureVocab, PiamVersion, build_vocab
from .model import Checkpoint, ModelConfig, TeaTransformer, beam_decode, collate, loss_and_grads
from .piam import analyze, assemble
from .parser import parse
from .tokenizer import BpeModel, decode_ids, encode_target, lex, normalize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RepairPair:
    buggy: str
    fixed: str
    id: int


@dataclass(frozen=True)
class Example:
    """Model-ready form of a RepairPair."""

    id: int
    src: tuple[int, ...]
    piam: np.ndarray | None
    tgt: tuple[int, ...]
    fixed: str


@dataclass
class EvalReport:
    total: int
    exact_matches: int
    per_example: list[tuple[int, bool, str]] = field(default_factory=list)

    def dumps(self) -> str:
        lines = [f"# total={self.total} exact_matches={self.exact_matches}"]
        lines += [f"{i} {int(m)} {pred}" for i, m, pred in self.per_example]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "EvalReport":
        rows = []
        for line in text.splitlines():
            if not line or line.startswith("#"):
                continue
            parts = line.split(" ", 2)
            rows.append((int(parts[0]), parts[1] == "1", parts[2] if len(parts) > 2 else ""))
        return cls(len(rows), sum(m for _, m, _ in rows), rows)


def load_pairs(buggy_path, fixed_path) -> list[RepairPair]:
    """Line-aligned buggy/fixed files; each line is lexed and re-joined."""
    buggy = Path(buggy_path).read_text(encoding="utf-8").splitlines()
    fixed = Path(fixed_path).read_text(encoding="utf-8").splitlines()
    if len(buggy) != len(fixed):
        raise LineCountMismatch(f"{buggy_path} has {len(buggy)} lines but {fixed_path} has {len(fixed)}")
    pairs = []
    for i, (b, f) in enumerate(zip(buggy, fixed)):
        try:
            pairs.append(RepairPair(normalize(b), normalize(f), i))
        except LexError as exc:
            raise LexError(exc.position, exc.char, line=i + 1) from exc
    return pairs


# ---------------------------------------------------------------- synthetic data

_VARS = (
    "count", "total", "value", "result", "temp", "index", "sum", "acc", "item", "size",
    "data", "buf", "node", "left", "right", "next", "prev", "level", "score", "limit",
    "offset", "delta", "width", "height", "depth", "rate", "base", "mark",
)
_METHODS = ("compute", "process", "update", "scale", "merge", "apply", "check", "reduce")
_CALLEES = ("helper", "transform", "adjust", "clamp", "normalize", "shift")
_OPS = ("+", "-", "*")


def _synthetic_method(rng: random.Random) -> tuple[list[str], list[tuple[int, str, list[str]]]]:
    """One templated method as tokens plus its chain-variable read sites.

    Every read of a chain variable refers to the most recently defined one.
    Read sites are ``(token position, variable, other variables in scope)``.
    """
    names = rng.sample(_VARS, 8)
    params = names[:2]
    fresh = iter(names[2:])
    toks = ["int", rng.choice(_METHODS), "(", "int", params[0], ",", "int", params[1], ")", "{"]
    scope = list(params)
    cur = params[0]
    sites: list[tuple[int, str, list[str]]] = []

    def read(var: str) -> None:
        sites.append((len(toks), var, [v for v in scope if v != var]))
        toks.append(var)

    def lit() -> str:
        return str(rng.randint(1, 9))

    def update_stmt(var: str) -> None:
        toks.extend([var, "="])
        read(var)
        toks.extend([rng.choice(_OPS), lit(), ";"])

    for _ in range(rng.randint(1, 3)):
        kind = rng.choice(("decl", "decl", "call", "for", "while", "if"))
        if kind in ("decl", "call"):
            new = next(fresh)
            toks.extend(["int", new, "="])
            if kind == "decl":
                read(cur)
                toks.extend([rng.choice(_OPS), lit()])
            else:
                toks.extend([rng.choice(_CALLEES), "("])
                read(cur)
                toks.append(")")
            toks.append(";")
            scope.append(new)
            cur = new
        elif kind == "for":
            toks.extend(["for", "(", "int", "i", "=", "0", ";", "i", "<", lit(), ";", "++", "i", ")"])
            update_stmt(cur)
        elif kind == "while":
            toks.extend(["while", "("])
            read(cur)
            toks.extend(["<", str(rng.randint(10, 99)), ")", "{"])
            update_stmt(cur)
            toks.append("}")
        else:
            toks.extend(["if", "("])
            read(cur)
            toks.extend([">", lit(), ")", "{"])
            update_stmt(cur)
            toks.append("}")
            if rng.random() < 0.5:
                toks.extend(["else", "{"])
                update_stmt(cur)
                toks.append("}")
    toks.append("return")
    read(cur)
    toks.extend([";", "}"])
    return toks, sites


def gen_synthetic(n: int, seed: int) -> list[RepairPair]:
    """Templated repair pairs whose fix restores a broken def-use chain.

    Each method threads a value through declarations, loops and branches, and
    every read uses the most recently defined variable. The buggy side swaps
    one read for another in-scope variable; the fix puts back the variable
    whose definition should reach that read.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    pairs = []
    while len(pairs) < n:
        toks, sites = _synthetic_method(rng)
        sites = [s for s in sites if s[2]]
        if not sites:
            continue
        pos, _, others = rng.choice(sites)
        bug = list(toks)
        bug[pos] = rng.choice(others)
        pairs.append(RepairPair(" ".join(bug), " ".join(toks), len(pairs)))
    return pairs


# ------------------------------------------------------------------- prep/train


def source_piam(source: str, bpe: BpeModel, vocab: FeatureVocab | None, version: PiamVersion):
    """``(src ids, piam entries or None)`` for one buggy method."""
    a = analyze(source, bpe)
    if version is PiamVersion.NONE:
        return a.seq.ids, None
    return a.seq.ids, assemble(a.seq, a.ast, a.cfg, a.dfg, vocab, version.p).array()


def prepare(pairs, bpe: BpeModel, vocab: FeatureVocab | None, version="none", max_len: int | None = None) -> list[Example]:
    version = PiamVersion(version)
    if version is not PiamVersion.NONE:
        if vocab is None or vocab.version is not version:
            raise ValueError(f"PIAM version {version.value} needs a matching feature vocabulary")
    out = []
    for pair in pairs:
        src, piam = source_piam(pair.buggy, bpe, vocab, version)
        tgt = encode_target(bpe, pair.fixed)
        if max_len is not None and (len(src) > max_len or len(tgt) > max_len):
            raise DimensionError(f"pair {pair.id} longer than max_len={max_len}")
        out.append(Example(pair.id, tuple(src), piam, tuple(tgt), normalize(pair.fixed)))
    return out


def vocab_for(pairs, version, x: int) -> FeatureVocab | None:
    """Feature vocabulary over the parseable buggy sides of ``pairs``."""
    version = PiamVersion(version)
    if version is PiamVersion.NONE:
        return None
    asts = []
    for pair in pairs:
        try:
            asts.append(parse(lex(pair.buggy)))
        except ParseError:
            continue
    return build_vocab(asts, version, x)


def train(
    config: ModelConfig,
    examples: list[Example],
    steps: int,
    seed: int | None = None,
    batch_size: int = 32,
    lr: float = 1e-3,
    log_fn=None,
) -> Checkpoint:
    """Adam on shuffled mini-batches; returns the final parameters.

    ``seed`` (defaults to ``config.seed``) drives both initialization and
    batch order. ``log_fn(step, loss)`` is called once per step.
    """
    if not examples:
        raise ValueError("training needs at least one example")
    if seed is not None and seed != config.seed:
        config = ModelConfig(**{**config.__dict__, "seed": seed})
    model = TeaTransformer.initialize(config)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.98), eps=1e-9)
    rng = np.random.default_rng(config.seed)
    order: list[int] = []
    for step in range(1, steps + 1):
        if len(order) < batch_size:
            order.extend(rng.permutation(len(examples)).tolist())
        idx, order = order[:batch_size], order[batch_size:]
        batch = collate([(examples[i].src, examples[i].piam, examples[i].tgt) for i in idx])
        loss, _ = loss_and_grads(model, batch, step)
        opt.step()
        if log_fn is not None:
            log_fn(step, loss)
        else:
            log.debug("step %d loss %.6f", step, loss)
    return Checkpoint.from_model(model)


def evaluate(model_or_ckpt, examples: list[Example], bpe: BpeModel, beam_width: int = 1, max_steps: int | None = None) -> EvalReport:
    """Top-1 exact match of the decoded hypothesis against the fixed side."""
    model = model_or_ckpt.to_model() if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt
    rows = []
    for ex in examples:
        steps = max_steps if max_steps is not None else min(model.cfg.max_len - 1, 2 * len(ex.src) + 10)
        hyps = beam_decode(model, ex.src, ex.piam, beam_width, steps)
        pred = decode_ids(bpe, hyps[0][0]) if hyps else ""
        rows.append((ex.id, pred == ex.fixed, pred))
    return EvalReport(len(rows), sum(m for _, m, _ in rows), rows)


def score_predictions(predictions, references) -> EvalReport:
    """Exact-match report for already-detokenized predictions."""
    rows = [(i, normalize(p) == normalize(r), normalize(p)) for i, (p, r) in enumerate(zip(predictions, references))]
    return EvalReport(len(rows), sum(m for _, m, _ in rows), rows)

