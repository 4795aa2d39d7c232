"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

import random
from pathlib import Path

import numpy as np
import torch

from acceptance_log import criterion
from figure_tree import figure_ast, leaf
from flow_oracle import brute_force_def_use
from gradcheck import finite_difference_check
from programs import random_program, random_tree
from test_flow import random_dag, random_loop_free_program, solver_def_use
from test_piam import check_structure
from tea.features import FeatureVocab, build_vocab, nca, pair_features
from tea.flow import ENTRY, _defs_and_uses, build_cfg, build_dfg
from tea.harness import evaluate, gen_synthetic, prepare, train, vocab_for
from tea.model import Checkpoint, ModelConfig, TeaTransformer, collate, forward
from tea.parser import parse
from tea.piam import PiamTensor, analyze, assemble, dump, piam_for_source
from tea.tokenizer import BOS, EOS, BpeModel, apply_bpe, detok, lex, normalize, train_bpe

DATA = Path(__file__).parent / "data"


def test_criterion_1_baseline_equivalence():
    with criterion(1, "alpha=1 encoder equals baseline bit for bit", 5) as info:
        base_cfg = ModelConfig.for_version(40, "none", d_model=32, n_heads=4, d_ff=64, max_len=16, seed=0)
        piam_cfg = ModelConfig.for_version(40, "V2", d_model=32, n_heads=4, d_ff=64, max_len=16, seed=0)
        base = TeaTransformer.initialize(base_cfg).eval()
        tea = TeaTransformer.initialize(piam_cfg).eval()
        tea.load_state_dict(base.state_dict(), strict=False)
        with torch.no_grad():
            for layer in tea.encoder:
                layer.attn.piam_w.normal_()
                layer.attn.gate_w.normal_()
        rng = random.Random(0)
        for _ in range(20):
            L = rng.randint(1, 16)
            src = [rng.randrange(4, 40) for _ in range(L)]
            entries = frozenset((rng.randrange(L), rng.randrange(L), rng.randrange(128)) for _ in range(3 * L))
            plain = collate([(src, None, [BOS, EOS])])
            rich = collate([(src, PiamTensor(L, 128, entries), [BOS, EOS])])
            with torch.no_grad():
                out_a, layers_a = base.encode(plain.src, None, return_layers=True)
                out_b, layers_b = tea.encode(rich.src, rich.piam, alpha_override=1.0, return_layers=True)
                none_logits = base(plain.src, None, plain.tgt)
                pinned_logits = tea(rich.src, rich.piam, rich.tgt, alpha_override=1.0)
            assert torch.equal(out_a, out_b)
            assert all(torch.equal(a, b) for a, b in zip(layers_a, layers_b))
            assert torch.equal(none_logits, pinned_logits)
        info["detail"] = "20/20 inputs identical"


def test_criterion_2_gradient_correctness():
    with criterion(2, "analytic gradients match central differences", 60) as info:
        rows = finite_difference_check(seed=0, fraction=0.1, eps=1e-4)
        model = TeaTransformer.initialize(ModelConfig.for_version(12, "V1", d_model=8, n_heads=2, d_ff=16, n_enc_layers=1, n_dec_layers=1, max_len=16))
        names = {name for name, _ in model.named_parameters()}
        assert {r[0] for r in rows} == names
        worst = max(rows, key=lambda r: r[4])
        assert worst[4] <= 1e-4, worst
        info["detail"] = f"{len(rows)} samples over {len(names)} tensors, max rel err {worst[4]:.2e}"


def test_criterion_3_nca_oracle():
    with criterion(3, "nca agrees with root-path intersection", 10) as info:
        pairs = 0
        for seed in range(100):
            ast = random_tree(random.Random(seed), max_leaves=50)
            lv = ast.leaves()
            paths = {}
            for n in lv:
                chain, m = [], n
                while m is not None:
                    chain.append(m)
                    m = ast.parent(m)
                paths[n] = chain[::-1]
            for a in lv:
                for b in lv:
                    common = [x for x, y in zip(paths[a], paths[b]) if x == y]
                    assert nca(ast, a, b) == common[-1]
                    pairs += 1
        info["detail"] = f"{pairs} leaf pairs"


def test_criterion_4_reaching_definitions_oracle():
    with criterion(4, "DFG edges equal path enumeration", 10) as info:
        rng = random.Random(4)
        for _ in range(50):
            n = rng.randint(1, 8)
            edges, defs, uses = random_dag(rng, n)
            assert solver_def_use(n, edges, defs, uses) == brute_force_def_use(edges, defs, uses)
        checked = 0
        while checked < 50:
            ast = parse(lex(random_loop_free_program(rng)))
            cfg = build_cfg(ast)
            if len(cfg.nodes) > 8:
                continue
            defs = [[] for _ in cfg.nodes]
            uses = [[] for _ in cfg.nodes]
            defs[ENTRY] = [("a", 4), ("b", 7)]
            for node in cfg.nodes:
                if node.ast_node is not None:
                    defs[node.id], uses[node.id] = _defs_and_uses(ast, node.ast_node)
            got = {(e.def_token, e.use_token) for e in build_dfg(ast, cfg)}
            assert got == brute_force_def_use(cfg.edges, defs, uses)
            checked += 1
        info["detail"] = "50 abstract graphs and 50 programs"


def test_criterion_5_definition_conformance():
    with criterion(5, "golden PIAM, version nesting, symmetry and direction", 10) as info:
        src = (DATA / "listing.c").read_text()
        bpe = BpeModel.load(DATA / "listing.bpe")
        vocab = FeatureVocab.load(DATA / "listing_v1.vocab")
        assert dump(piam_for_source(src, bpe, vocab)) == (DATA / "listing_v1.piam").read_text()
        rng = random.Random(5)
        progs = [random_program(rng) for _ in range(100)]
        corpus_bpe = train_bpe(progs, 40)
        asts = [parse(lex(p)) for p in progs]
        vocabs = {v: build_vocab(asts, v, 24) for v in ("V1", "V2", "V3")}
        asymmetric = 0
        for p in progs:
            t = check_structure(p, corpus_bpe, vocabs)
            asymmetric += sum((j, i) not in t.slot(k) for k in (1, 2) for i, j in t.slot(k))
        assert asymmetric > 0
        info["detail"] = f"100 programs, {asymmetric} one-way flow entries"


def test_criterion_6_figure_fixture():
    with criterion(6, "figure tree pair features", 1):
        ast = figure_ast()
        lab, tri, path = pair_features(ast, leaf(ast, "int"), leaf(ast, "var"))
        assert lab.render() == "L:FOR"
        assert tri.render() == "T:TYPE->FOR->TYPE"
        assert path.render() == "P:TYPE->VAR->INIT->FOR->BLOCK->TYPE"


def run_pipeline(seed: int):
    pairs = gen_synthetic(100, seed)
    train_pairs, eval_pairs = pairs[:80], pairs[80:]
    bpe = train_bpe([p.buggy for p in train_pairs] + [p.fixed for p in train_pairs], 150)
    vocab = vocab_for(train_pairs, "V3", 24)
    cfg = ModelConfig.for_version(bpe.vocab_size, "V3", d_model=32, n_heads=4, d_ff=64, n_enc_layers=1, n_dec_layers=1, seed=seed)
    ckpt = train(cfg, prepare(train_pairs, bpe, vocab, "V3", 128), 40, batch_size=8)
    report = evaluate(ckpt, prepare(eval_pairs, bpe, vocab, "V3", 128), bpe, beam_width=2)
    return ckpt, report, bpe, vocab, eval_pairs


def test_criterion_8_determinism_and_persistence(tmp_path):
    with criterion(8, "same seed gives same checkpoint and report", 300):
        a_ckpt, a_report, bpe, vocab, eval_pairs = run_pipeline(7)
        b_ckpt, b_report, *_ = run_pipeline(7)
        assert a_ckpt.to_bytes() == b_ckpt.to_bytes()
        assert a_report.dumps() == b_report.dumps()
        a_ckpt.save(tmp_path / "m.ckpt")
        back = Checkpoint.load(tmp_path / "m.ckpt")
        assert back.to_bytes() == a_ckpt.to_bytes()
        src = apply_bpe(bpe, lex(eval_pairs[0].buggy)).ids
        piam = piam_for_source(eval_pairs[0].buggy, bpe, vocab)
        tgt = [BOS, *apply_bpe(bpe, lex(eval_pairs[0].fixed)).ids, EOS]
        m1, m2 = a_ckpt.to_model(), back.to_model()
        assert torch.equal(forward(m1, src, piam, tgt), forward(m2, src, piam, tgt))


def test_criterion_9_round_trip_and_degradation():
    with criterion(9, "BPE round trip and unparseable degradation", 30) as info:
        pairs = gen_synthetic(2000, 0)
        texts = [p.buggy for p in pairs] + [p.fixed for p in pairs]
        bpe = train_bpe(texts, 300)
        for text in texts:
            assert detok(apply_bpe(bpe, lex(text))) == normalize(text)
        vocab = vocab_for(pairs[:200], "V3", 24)
        broken = "int f ( int a ) { a = a + ; return a"
        a = analyze(broken, bpe)
        assert a.ast is None
        t = assemble(a.seq, a.ast, a.cfg, a.dfg, vocab)
        L = len(a.seq)
        assert t.entries == {(i, i + 1, 0) for i in range(L - 1)} | {(i + 1, i, 0) for i in range(L - 1)}
        model = TeaTransformer.initialize(ModelConfig.for_version(bpe.vocab_size, "V3", d_model=32, n_heads=4, d_ff=64))
        logits = forward(model, a.seq.ids, t, [BOS, EOS])
        assert torch.isfinite(logits).all()
        info["detail"] = f"{len(texts)} methods round-tripped"


# Desk-scale model for the monotonicity run; sized for a single laptop core.
MONO_MODEL = dict(d_model=64, n_heads=4, d_ff=128, n_enc_layers=1, n_dec_layers=1, max_len=128)
MONO_STEPS = 3000
MONO_SEEDS = (0, 1, 2)


def test_criterion_7_monotonicity():
    with criterion(7, "V3 and mean(V1,V2,V3) exact match >= baseline", 45 * 60) as info:
        pairs = gen_synthetic(2000, 0)
        train_pairs, eval_pairs = pairs[:1800], pairs[1800:]
        bpe = train_bpe([p.buggy for p in train_pairs] + [p.fixed for p in train_pairs], 300)
        scores = {}
        for version in ("none", "V1", "V2", "V3"):
            vocab = vocab_for(train_pairs, version, 24)
            tr = prepare(train_pairs, bpe, vocab, version, MONO_MODEL["max_len"])
            ev = prepare(eval_pairs, bpe, vocab, version, MONO_MODEL["max_len"])
            runs = []
            for seed in MONO_SEEDS:
                cfg = ModelConfig.for_version(bpe.vocab_size, version, seed=seed, **MONO_MODEL)
                ckpt = train(cfg, tr, MONO_STEPS, batch_size=16)
                runs.append(evaluate(ckpt, ev, bpe, beam_width=1).exact_matches)
            scores[version] = runs
            print(f"monotonicity {version}: exact matches {runs} of {len(ev)}")
        mean = {v: float(np.mean(r)) for v, r in scores.items()}
        info["detail"] = " ".join(f"{v}={m:.1f}" for v, m in mean.items())
        assert mean["V3"] >= mean["none"], mean
        assert np.mean([mean["V1"], mean["V2"], mean["V3"]]) >= mean["none"], mean
