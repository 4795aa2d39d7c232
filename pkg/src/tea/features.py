"""Pairwise AST leaf features and the frequency-ranked feature vocabulary.

For two leaves the features are the label of their nearest common ancestor,
the (left, nca, right) label triple, and the label path through the nca. Leaves
are represented by their feature label (the parent's label), so for two
declaration types under a loop the triple reads ``TYPE->FOR->TYPE``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import FormatError, InvalidBudget
from .parser import Ast, NodeLabel

ADJ_SLOT, CFG_SLOT, DFG_SLOT = 0, 1, 2
FIRST_FEATURE_SLOT = 3
SECOND_TIER_TOTAL = 125
DEFAULT_X = 24
VOCAB_HEADER = "TEA-VOCAB v1"


class PiamVersion(str, Enum):
    NONE = "none"
    V1 = "V1"
    V2 = "V2"
    V3 = "V3"

    @property
    def p(self) -> int:
        return {"none": 0, "V1": 32, "V2": 128, "V3": 128}[self.value]

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class NcaLabel:
    label: NodeLabel

    def render(self) -> str:
        return f"L:{self.label.value}"


@dataclass(frozen=True)
class NcaTriple:
    left: NodeLabel
    nca: NodeLabel
    right: NodeLabel

    def render(self) -> str:
        return f"T:{self.left.value}->{self.nca.value}->{self.right.value}"


@dataclass(frozen=True)
class NcaPath:
    labels: tuple[NodeLabel, ...]

    def render(self) -> str:
        return "P:" + "->".join(l.value for l in self.labels)


def nca(ast: Ast, a: int, b: int) -> int:
    """Deepest node that is an ancestor-or-self of both ``a`` and ``b``."""
    depth = ast.depth
    while depth[a] > depth[b]:
        a = ast.nodes[a].parent
    while depth[b] > depth[a]:
        b = ast.nodes[b].parent
    while a != b:
        a = ast.nodes[a].parent
        b = ast.nodes[b].parent
    return a


def _path_nodes(ast: Ast, leaf_a: int, leaf_b: int) -> tuple[list[int], int]:
    """Feature-node path a..nca..b and the index of the nca within it.

    The endpoints are the leaves' feature nodes. When a feature node *is* the
    nca it is still listed separately from the nca, so the path always has at
    least three entries.
    """
    top = nca(ast, leaf_a, leaf_b)
    fa, fb = ast.feature_node(leaf_a), ast.feature_node(leaf_b)

    def up_leg(f: int) -> list[int]:
        leg = [f]
        n = f
        while n != top:
            n = ast.nodes[n].parent
            if n != top:
                leg.append(n)
        return leg

    left = up_leg(fa)
    right = up_leg(fb)
    return left + [top] + right[::-1], len(left)


def pair_features(ast: Ast, leaf_a: int, leaf_b: int) -> tuple[NcaLabel, NcaTriple, NcaPath]:
    if leaf_a == leaf_b:
        raise ValueError("pair features need two different leaves")
    nodes, mid = _path_nodes(ast, leaf_a, leaf_b)
    labels = tuple(ast.nodes[n].label for n in nodes)
    return NcaLabel(labels[mid]), NcaTriple(labels[0], labels[mid], labels[-1]), NcaPath(labels)


def iter_pair_keys(ast: Ast):
    """Yield ``(token_a, token_b, label_key, triple_key, path_key)`` for all leaf pairs a < b.

    Keys are the text renderings used by FeatureVocab. This is the bulk path
    used for vocabulary counting and tensor assembly.
    """
    leaves = ast.leaves()
    names = [n.label.value for n in ast.nodes]
    # root-to-feature-node chains, one per leaf
    chains = []
    for leaf in leaves:
        chain = []
        n = ast.nodes[leaf].parent
        while n is not None:
            chain.append(n)
            n = ast.nodes[n].parent
        chains.append(chain[::-1])
    toks = [ast.nodes[l].token_index for l in leaves]
    for i in range(len(leaves)):
        ca = chains[i]
        la = [names[n] for n in ca]
        for j in range(i + 1, len(leaves)):
            cb = chains[j]
            k = 0
            lim = min(len(ca), len(cb))
            while k < lim and ca[k] == cb[k]:
                k += 1
            # ca[k-1] is the nca; ca[-1], cb[-1] are the feature nodes
            nca_name = la[k - 1]
            lb = [names[n] for n in cb]
            up = la[:k - 1:-1] if len(ca) > k else []
            down = lb[k:] if len(cb) > k else []
            if not up:
                up = [nca_name]
            if not down:
                down = [nca_name]
            path = up + [nca_name] + down
            yield (
                toks[i],
                toks[j],
                "L:" + nca_name,
                f"T:{path[0]}->{nca_name}->{path[-1]}",
                "P:" + "->".join(path),
            )


@dataclass(frozen=True)
class FeatureVocab:
    version: PiamVersion
    x: int
    table: dict[str, int]

    @property
    def p(self) -> int:
        return self.version.p

    def slot(self, rendering: str) -> int | None:
        return self.table.get(rendering)

    def dumps(self) -> str:
        lines = [f"{VOCAB_HEADER} {self.version.value} p={self.p} x={self.x}"]
        for feat, slot in sorted(self.table.items(), key=lambda kv: kv[1]):
            lines.append(f"{slot}\t{feat}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "FeatureVocab":
        lines = [l for l in text.splitlines() if l]
        if not lines or not lines[0].startswith(VOCAB_HEADER + " "):
            raise FormatError(f"missing {VOCAB_HEADER!r} header")
        try:
            _, _, version, p_part, x_part = lines[0].split(" ")
            v = PiamVersion(version)
            p = int(p_part.removeprefix("p="))
            x = int(x_part.removeprefix("x="))
        except ValueError as exc:
            raise FormatError(f"bad vocab header {lines[0]!r}") from exc
        if p != v.p:
            raise FormatError(f"p={p} inconsistent with version {v.value}")
        table = {}
        for line in lines[1:]:
            slot, _, feat = line.partition("\t")
            table[feat] = int(slot)
        return cls(v, x, table)

    @classmethod
    def load(cls, path) -> "FeatureVocab":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _top(counter: Counter, n: int) -> list[str]:
    return [k for k, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:n]]


def count_features(asts) -> tuple[Counter, Counter, Counter]:
    labels, triples, paths = Counter(), Counter(), Counter()
    for ast in asts:
        for _, _, lk, tk, pk in iter_pair_keys(ast):
            labels[lk] += 1
            triples[tk] += 1
            paths[pk] += 1
    return labels, triples, paths


def build_vocab(asts, version, x: int = DEFAULT_X) -> FeatureVocab:
    """Rank corpus features by frequency and assign PIAM slots.

    Slots 0-2 are reserved for adjacency, CFG and DFG relations. The top ``x``
    nca labels take slots 3..3+x-1; for V2/V3 the top ``125 - x`` triples or
    paths fill the remaining slots up to 127. Ties are broken by rendering.
    """
    version = PiamVersion(version)
    if version is PiamVersion.NONE:
        raise ValueError("a feature vocabulary needs version V1, V2 or V3")
    if not 22 <= x <= 25:
        raise InvalidBudget(f"x must lie in [22, 25], got {x}")
    asts = list(asts)
    if not asts:
        raise ValueError("corpus must be non-empty")
    labels, triples, paths = count_features(asts)
    table = {}
    for i, feat in enumerate(_top(labels, x)):
        table[feat] = FIRST_FEATURE_SLOT + i
    second = {PiamVersion.V2: triples, PiamVersion.V3: paths}.get(version)
    if second is not None:
        for i, feat in enumerate(_top(second, SECOND_TIER_TOTAL - x)):
            table[feat] = FIRST_FEATURE_SLOT + x + i
    return FeatureVocab(version, x, table)
