"""Lexing, byte-pair-encoding subwords, and subword/token alignment.

BPE word units are whole lexer tokens, so identifiers may split into several
subwords while operators stay atomic. The end-of-token marker ``</w>`` is
attached to the final character of every token, which lets a
flat id sequence from the decoder be turned back into tokens.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import AlignmentError, FormatError, LexError

END = "</w>"
PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")
BPE_HEADER = "TEA-BPE v1"

KEYWORDS = frozenset(
    {"int", "void", "var", "float", "bool", "for", "while", "if", "else", "return", "true", "false"}
)
PUNCTUATION = frozenset("(){}[];,.")


class TokenKind(str, Enum):
    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    LITERAL = "literal"
    OPERATOR = "operator"
    PUNCTUATION = "punctuation"


@dataclass(frozen=True)
class Token:
    text: str
    index: int
    kind: TokenKind
    span: tuple[int, int]


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
  | (?P<number>\d+(?:\.\d+)?[fFlL]?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\+\+|--|<=|>=|==|!=|&&|\|\||\+=|-=|\*=|/=|[-+*/%<>=!&|^~?:])
  | (?P<punct>[(){}\[\];,.])
    """,
    re.VERBOSE,
)


def lex(source: str) -> list[Token]:
    """Split one method's source into maximal-munch tokens."""
    tokens: list[Token] = []
    pos = 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise LexError(pos, source[pos])
        group = m.lastgroup
        text = m.group()
        if group != "ws":
            if group == "name":
                kind = TokenKind.KEYWORD if text in KEYWORDS else TokenKind.IDENTIFIER
            elif group in ("string", "number"):
                kind = TokenKind.LITERAL
            elif group == "punct":
                kind = TokenKind.PUNCTUATION
            else:
                kind = TokenKind.OPERATOR
            tokens.append(Token(text, len(tokens), kind, (pos, m.end())))
        pos = m.end()
    return tokens


def normalize(source: str) -> str:
    """Space-joined token texts of ``source``."""
    return " ".join(t.text for t in lex(source))


# --------------------------------------------------------------------------- BPE


def _base_symbols() -> list[str]:
    chars = [chr(c) for c in range(32, 127)]
    return chars + [c + END for c in chars]


def _word_symbols(text: str) -> list[str]:
    if not text:
        return []
    return list(text[:-1]) + [text[-1] + END]


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    vocab: dict[str, int] = field(compare=False, repr=False)
    _ranks: dict[tuple[str, str], int] = field(compare=False, repr=False)
    _cache: dict[str, tuple[str, ...]] = field(compare=False, repr=False, default_factory=dict)

    @classmethod
    def from_merges(cls, merges) -> "BpeModel":
        merges = tuple((str(a), str(b)) for a, b in merges)
        vocab: dict[str, int] = {s: i for i, s in enumerate(SPECIALS)}
        for sym in _base_symbols():
            vocab.setdefault(sym, len(vocab))
        for a, b in merges:
            vocab.setdefault(a + b, len(vocab))
        ranks = {pair: r for r, pair in enumerate(merges)}
        return cls(merges, vocab, ranks)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def id_to_symbol(self) -> list[str]:
        inv = [""] * len(self.vocab)
        for s, i in self.vocab.items():
            inv[i] = s
        return inv

    def segment(self, text: str) -> tuple[str, ...]:
        """Split one token into subword strings by applying merges in rank order."""
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        symbols = _word_symbols(text)
        while len(symbols) > 1:
            best = None
            best_rank = len(self._ranks)
            for pair in zip(symbols, symbols[1:]):
                r = self._ranks.get(pair)
                if r is not None and r < best_rank:
                    best, best_rank = pair, r
            if best is None:
                break
            merged = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == best:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        out = tuple(symbols)
        self._cache[text] = out
        return out

    def dumps(self) -> str:
        lines = [BPE_HEADER] + [f"{a}\t{b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "BpeModel":
        lines = text.split("\n")
        if not lines or lines[0].rstrip("\r") != BPE_HEADER:
            raise FormatError(f"missing {BPE_HEADER!r} header")
        merges = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"line {lineno}: expected 'left<TAB>right'")
            merges.append((parts[0], parts[1]))
        return cls.from_merges(merges)

    @classmethod
    def load(cls, path) -> "BpeModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _as_token_texts(seq) -> list[str]:
    if isinstance(seq, str):
        return [t.text for t in lex(seq)]
    return [t.text if isinstance(t, Token) else str(t) for t in seq]


def train_bpe(corpus, num_merges: int) -> BpeModel:
    """Learn ``num_merges`` merges over the multiset of token texts in ``corpus``.

    ``corpus`` items may be source strings (lexed here), lists of Tokens or
    lists of token strings. The most frequent adjacent pair wins each round;
    ties go to the lexicographically smallest pair.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    counts: Counter[str] = Counter()
    for item in corpus:
        counts.update(_as_token_texts(item))

    words = [[list(_word_symbols(w)), c] for w, c in sorted(counts.items()) if w]
    merges: list[tuple[str, str]] = []
    for _ in range(max(num_merges, 0)):
        pair_counts: Counter[tuple[str, str]] = Counter()
        for symbols, c in words:
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += c
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        joined = best[0] + best[1]
        for entry in words:
            symbols = entry[0]
            if len(symbols) < 2:
                continue
            out = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == best[0] and symbols[i + 1] == best[1]:
                    out.append(joined)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            entry[0] = out
    return BpeModel.from_merges(merges)


# ------------------------------------------------------------------ alignment


@dataclass(frozen=True)
class SubwordSeq:
    ids: tuple[int, ...]
    texts: tuple[str, ...]
    token_of: tuple[int, ...]
    first_sub: tuple[int, ...]
    last_sub: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def apply_bpe(model: BpeModel, tokens) -> SubwordSeq:
    ids: list[int] = []
    texts: list[str] = []
    token_of: list[int] = []
    first: list[int] = []
    last: list[int] = []
    for t_index, text in enumerate(_as_token_texts(tokens)):
        first.append(len(ids))
        for sub in model.segment(text):
            ids.append(model.vocab.get(sub, UNK))
            texts.append(sub)
            token_of.append(t_index)
        last.append(len(ids) - 1)
    return SubwordSeq(tuple(ids), tuple(texts), tuple(token_of), tuple(first), tuple(last))


def check_alignment(seq: SubwordSeq) -> None:
    n = len(seq.ids)
    if len(seq.texts) != n or len(seq.token_of) != n:
        raise AlignmentError("ids, texts and token_of differ in length")
    if len(seq.first_sub) != len(seq.last_sub):
        raise AlignmentError("first_sub and last_sub differ in length")
    expected = 0
    for t, (lo, hi) in enumerate(zip(seq.first_sub, seq.last_sub)):
        if lo != expected or hi < lo or hi >= n:
            raise AlignmentError(f"token {t} has bad subword range [{lo}, {hi}]")
        if any(seq.token_of[p] != t for p in range(lo, hi + 1)):
            raise AlignmentError(f"token_of disagrees with range of token {t}")
        expected = hi + 1
    if expected != n:
        raise AlignmentError("subword positions not covered by any token")


def detok(seq: SubwordSeq) -> str:
    """Rebuild the space-joined token string from an aligned subword sequence."""
    check_alignment(seq)
    words = []
    for lo, hi in zip(seq.first_sub, seq.last_sub):
        word = "".join(seq.texts[lo : hi + 1])
        if word.endswith(END):
            word = word[: -len(END)]
        words.append(word)
    return " ".join(words)


def decode_ids(model: BpeModel, ids) -> str:
    """Turn a flat subword id sequence (e.g. decoder output) into a token string.

    Token boundaries come from the ``</w>`` marker; specials are skipped and
    decoding stops at EOS.
    """
    inv = model.id_to_symbol
    words: list[str] = []
    buf = ""
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, BOS) or not 0 <= i < len(inv):
            continue
        sym = SPECIALS[UNK] if i == UNK else inv[i]
        if sym.endswith(END):
            words.append(buf + sym[: -len(END)])
            buf = ""
        else:
            buf += sym
    if buf:
        words.append(buf)
    return " ".join(words)


def encode_target(model: BpeModel, text: str) -> list[int]:
    """BOS + subword ids + EOS for a decoder target."""
    return [BOS, *apply_bpe(model, lex(text)).ids, EOS]
