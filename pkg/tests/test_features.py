import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from figure_tree import figure_ast, leaf
from programs import random_program, random_tree
from tea.errors import InvalidBudget
from tea.features import (
    FeatureVocab, NcaPath, PiamVersion, build_vocab, iter_pair_keys, nca, pair_features,
)
from tea.parser import NodeLabel, parse
from tea.tokenizer import lex


def root_path(ast, n):
    out = []
    while n is not None:
        out.append(n)
        n = ast.parent(n)
    return out[::-1]


def oracle_nca(ast, a, b):
    common = [x for x, y in zip(root_path(ast, a), root_path(ast, b)) if x == y]
    return common[-1]


def test_self_nca():
    ast = figure_ast()
    a = leaf(ast, "int")
    assert nca(ast, a, a) == a


def test_figure_pair():
    ast = figure_ast()
    lab, tri, path = pair_features(ast, leaf(ast, "int"), leaf(ast, "var"))
    assert lab.render() == "L:FOR"
    assert tri.render() == "T:TYPE->FOR->TYPE"
    assert path.render() == "P:TYPE->VAR->INIT->FOR->BLOCK->TYPE"


def test_listing_loop_nca_is_for(listing):
    ast = parse(lex(listing))
    toks = ast.tokens
    a = ast.leaf_of_token(toks.index("int", 4))
    b = ast.leaf_of_token(toks.index("var"))
    assert ast.label(nca(ast, a, b)) is NodeLabel.FOR
    assert pair_features(ast, a, b)[1].render() == "T:TYPE->FOR->TYPE"


def test_same_leaf_rejected():
    ast = figure_ast()
    with pytest.raises(ValueError):
        pair_features(ast, leaf(ast, "int"), leaf(ast, "int"))


def test_sibling_leaves_give_three_entry_path():
    ast = parse(lex("void f ( ) { }"))
    lv = ast.leaves()
    # "(" and ")" both hang directly under PARAMS
    _, _, path = pair_features(ast, lv[2], lv[3])
    assert path.labels == (NodeLabel.PARAMS,) * 3


@given(st.integers(0, 100_000))
@settings(max_examples=100, deadline=None)
def test_nca_against_root_path_oracle(seed):
    ast = random_tree(random.Random(seed))
    lv = ast.leaves()
    for a in lv:
        for b in lv:
            n = nca(ast, a, b)
            assert n == oracle_nca(ast, a, b) == nca(ast, b, a)
            assert ast.depth[n] <= min(ast.depth[a], ast.depth[b])


def expected_path_length(ast, a, b):
    top = nca(ast, a, b)
    fa, fb = ast.feature_node(a), ast.feature_node(b)
    legs = [max(ast.depth[f] - ast.depth[top], 1) for f in (fa, fb)]
    return legs[0] + legs[1] + 1


@given(st.integers(0, 100_000))
@settings(max_examples=60, deadline=None)
def test_path_properties(seed):
    ast = random_tree(random.Random(seed), max_leaves=20)
    lv = ast.leaves()
    for i, a in enumerate(lv):
        for b in lv[i + 1:]:
            lab, tri, path = pair_features(ast, a, b)
            _, _, back = pair_features(ast, b, a)
            assert back.labels == path.labels[::-1]
            assert len(path.labels) >= 3
            assert len(path.labels) == expected_path_length(ast, a, b)
            fa, fb, top = ast.feature_node(a), ast.feature_node(b), nca(ast, a, b)
            if fa != top and fb != top:
                assert len(path.labels) == ast.depth[fa] + ast.depth[fb] - 2 * ast.depth[top] + 1
            assert (tri.left, tri.right) == (path.labels[0], path.labels[-1])
            assert tri.nca is lab.label is ast.label(top)


@given(st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_bulk_keys_agree_with_pair_features(seed):
    ast = parse(lex(random_program(random.Random(seed))))
    lv = ast.leaves()
    got = list(iter_pair_keys(ast))
    assert len(got) == len(lv) * (len(lv) - 1) // 2
    for ta, tb, lk, tk, pk in got:
        lab, tri, path = pair_features(ast, lv[ta], lv[tb])
        assert (lk, tk, pk) == (lab.render(), tri.render(), path.render())


def toy_corpus():
    return [parse(lex(s)) for s in (
        "void f ( ) { }",
        "int g ( int a ) { return a ; }",
        "void h ( ) { x = 1 ; }",
    )]


def hand_count(asts):
    labels, paths = Counter(), Counter()
    for ast in asts:
        lv = ast.leaves()
        for i, a in enumerate(lv):
            for b in lv[i + 1:]:
                lab, _, path = pair_features(ast, a, b)
                labels[lab.render()] += 1
                paths[path.render()] += 1
    return labels, paths


def test_toy_vocab_matches_hand_ranking():
    asts = toy_corpus()
    labels, paths = hand_count(asts)
    vocab = build_vocab(asts, "V3", 22)
    ranked_labels = sorted(labels, key=lambda k: (-labels[k], k))[:22]
    ranked_paths = sorted(paths, key=lambda k: (-paths[k], k))[:103]
    assert {k: v for k, v in vocab.table.items() if k.startswith("L:")} == {k: 3 + i for i, k in enumerate(ranked_labels)}
    assert {k: v for k, v in vocab.table.items() if k.startswith("P:")} == {k: 25 + i for i, k in enumerate(ranked_paths)}


def test_minimal_method_labels_all_fit():
    asts = [parse(lex("void f ( ) { }"))]
    vocab = build_vocab(asts, "V1", 24)
    assert sorted(vocab.table) == ["L:BLOCK", "L:FUNCTION", "L:PARAMS"]
    assert vocab.p == 32


def test_v1_has_no_second_tier():
    vocab = build_vocab(toy_corpus(), PiamVersion.V1, 24)
    assert all(k.startswith("L:") for k in vocab.table)
    assert max(vocab.table.values()) < 32


def test_table_layout_limits():
    asts = [parse(lex(random_program(random.Random(i)))) for i in range(30)]
    for version in ("V2", "V3"):
        for x in (22, 25):
            v = build_vocab(asts, version, x)
            slots = list(v.table.values())
            assert len(slots) == len(set(slots)) and max(slots) < 128
            assert sum(k.startswith("L:") for k in v.table) <= x
            assert all(s < 3 + x for k, s in v.table.items() if k.startswith("L:"))
            assert all(3 + x <= s for k, s in v.table.items() if not k.startswith("L:"))
            assert len(v.table) - sum(k.startswith("L:") for k in v.table) <= 125 - x
    assert build_vocab(asts, "V2", 24).table == build_vocab(asts, "V2", 24).table


@pytest.mark.parametrize("x", [21, 26])
def test_invalid_budget(x):
    with pytest.raises(InvalidBudget):
        build_vocab(toy_corpus(), "V1", x)


def test_vocab_serialization(tmp_path):
    vocab = build_vocab(toy_corpus(), "V2", 23)
    text = vocab.dumps()
    assert text.splitlines()[0] == "TEA-VOCAB v1 V2 p=128 x=23"
    assert text.splitlines()[1].split("\t")[0] == "3"
    vocab.save(tmp_path / "v.txt")
    back = FeatureVocab.load(tmp_path / "v.txt")
    assert back == vocab


def test_path_render_format():
    assert NcaPath((NodeLabel.TYPE, NodeLabel.FOR, NodeLabel.TYPE)).render() == "P:TYPE->FOR->TYPE"
