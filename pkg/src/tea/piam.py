"""Sparse binary program-information attention tensors over subword positions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, ParseError
from .features import ADJ_SLOT, CFG_SLOT, DFG_SLOT, FeatureVocab, iter_pair_keys
from .flow import Cfg, build_cfg, build_dfg
from .parser import Ast, parse
from .tokenizer import BpeModel, SubwordSeq, apply_bpe, lex

PIAM_HEADER = "TEA-PIAM v1"


@dataclass(frozen=True)
class PiamTensor:
    L: int
    p: int
    entries: frozenset[tuple[int, int, int]]

    def __post_init__(self) -> None:
        for i, j, k in self.entries:
            if not (0 <= i < self.L and 0 <= j < self.L and 0 <= k < self.p):
                raise DimensionError(f"entry {(i, j, k)} outside L={self.L}, p={self.p}")

    def array(self) -> np.ndarray:
        """Entries as a sorted ``(E, 3)`` int64 array."""
        if not self.entries:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array(sorted(self.entries), dtype=np.int64)

    def slot(self, k: int) -> set[tuple[int, int]]:
        return {(i, j) for i, j, kk in self.entries if kk == k}

    def dense(self) -> np.ndarray:
        out = np.zeros((self.L, self.L, self.p), dtype=np.float32)
        for i, j, k in self.entries:
            out[i, j, k] = 1.0
        return out


def assemble(
    seq: SubwordSeq,
    ast: Ast | None,
    cfg: Cfg | None,
    dfg,
    vocab: FeatureVocab | None,
    p: int | None = None,
) -> PiamTensor:
    """Fill adjacency, CFG, DFG and AST-feature slots for one program.

    With ``ast``/``cfg``/``dfg`` all ``None`` (unparseable input) only the
    adjacency slot is populated. ``p`` defaults to the vocabulary's dimension.
    """
    if p is None:
        p = vocab.p if vocab is not None else 3
    L = len(seq)
    present = [x is not None for x in (ast, cfg, dfg)]
    if any(present) and not all(present):
        raise ValueError("ast, cfg and dfg must be all present or all absent")
    first, last = seq.first_sub, seq.last_sub

    def pos(table, t: int) -> int:
        if t >= len(table) or table[t] >= L:
            raise DimensionError(f"token {t} has no subword position below L={L}")
        return table[t]

    entries: set[tuple[int, int, int]] = set()
    for i in range(L - 1):
        entries.add((i, i + 1, ADJ_SLOT))
        entries.add((i + 1, i, ADJ_SLOT))
    if ast is None:
        return PiamTensor(L, p, frozenset(entries))

    for s, t in cfg.edges:
        if s == t:
            continue
        src, dst = cfg.nodes[s], cfg.nodes[t]
        if src.last_token is None or dst.first_token is None:
            continue
        entries.add((pos(last, src.last_token), pos(first, dst.first_token), CFG_SLOT))
    for e in dfg:
        entries.add((pos(last, e.def_token), pos(first, e.use_token), DFG_SLOT))

    if vocab is not None:
        table = vocab.table
        for ta, tb, lk, tk, pk in iter_pair_keys(ast):
            a, b = pos(first, ta), pos(first, tb)
            if a == b:
                continue
            for key in (lk, tk, pk):
                k = table.get(key)
                if k is not None:
                    entries.add((a, b, k))
                    entries.add((b, a, k))
    return PiamTensor(L, p, frozenset(entries))


@dataclass(frozen=True)
class Analysis:
    """Everything derived from one source method."""

    tokens: list
    seq: SubwordSeq
    ast: Ast | None
    cfg: Cfg | None
    dfg: frozenset | None
    error: ParseError | None = None


def analyze(source: str, bpe: BpeModel) -> Analysis:
    """Lex, segment and (when the grammar allows) parse and run flow analysis.

    Raises LexError for unlexable input; grammar violations degrade to an
    analysis without ast/cfg/dfg.
    """
    tokens = lex(source)
    seq = apply_bpe(bpe, tokens)
    try:
        ast = parse(tokens)
    except ParseError as exc:
        return Analysis(tokens, seq, None, None, None, exc)
    cfg = build_cfg(ast)
    return Analysis(tokens, seq, ast, cfg, build_dfg(ast, cfg))


def piam_for_source(source: str, bpe: BpeModel, vocab: FeatureVocab | None, p: int | None = None) -> PiamTensor:
    a = analyze(source, bpe)
    return assemble(a.seq, a.ast, a.cfg, a.dfg, vocab, p)


def dump(t: PiamTensor) -> str:
    lines = [f"{PIAM_HEADER} L={t.L} p={t.p}"]
    lines.extend(f"{i} {j} {k}" for i, j, k in sorted(t.entries))
    return "\n".join(lines) + "\n"


def parse_dump(text: str) -> PiamTensor:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(PIAM_HEADER + " "):
        raise FormatError(f"missing {PIAM_HEADER!r} header")
    try:
        parts = dict(kv.split("=") for kv in lines[0][len(PIAM_HEADER) + 1 :].split())
        L, p = int(parts["L"]), int(parts["p"])
        entries = frozenset(tuple(int(v) for v in line.split()) for line in lines[1:] if line)
    except (KeyError, ValueError) as exc:
        raise FormatError("malformed PIAM dump") from exc
    if any(len(e) != 3 for e in entries):
        raise FormatError("PIAM entries must have three indices")
    return PiamTensor(L, p, entries)


def write_batch(sources, bpe: BpeModel, vocab: FeatureVocab | None, out_dir, p: int | None = None) -> list[Path]:
    """Write ``<index>.piam`` for every source; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for idx, src in enumerate(sources):
        path = out / f"{idx}.piam"
        path.write_text(dump(piam_for_source(src, bpe, vocab, p)), encoding="utf-8")
        paths.append(path)
    return paths

