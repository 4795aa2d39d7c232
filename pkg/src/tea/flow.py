"""Statement-level control flow and reaching-definition data flow.

CFG units are simple statements plus the INIT/COND/UPDATE parts of loops and
the COND of ``if``/``while``. Node 0 is the synthetic entry and node 1 the
synthetic exit; neither owns tokens.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .parser import Ast, NodeLabel

ENTRY, EXIT = 0, 1

_SIMPLE = frozenset({NodeLabel.DECL, NodeLabel.EXPR_STMT, NodeLabel.RETURN})


@dataclass(frozen=True)
class CfgNode:
    id: int
    first_token: int | None
    last_token: int | None
    ast_node: int | None = None
    kind: str = ""


@dataclass(frozen=True)
class Cfg:
    nodes: tuple[CfgNode, ...]
    edges: frozenset[tuple[int, int]]
    entry: int = ENTRY
    exit: int = EXIT

    def successors(self, n: int) -> list[int]:
        return sorted(t for s, t in self.edges if s == n)

    def predecessors(self, n: int) -> list[int]:
        return sorted(s for s, t in self.edges if t == n)

    def lines(self) -> list[str]:
        def name(n: int) -> str:
            if n == self.entry:
                return "entry"
            if n == self.exit:
                return "exit"
            return str(n)

        return [f"CFG {name(s)} -> {name(t)}" for s, t in sorted(self.edges)]


@dataclass(frozen=True, order=True)
class DfgEdge:
    def_token: int
    use_token: int
    var: str


class _CfgBuilder:
    def __init__(self, ast: Ast):
        self.ast = ast
        self.nodes: list[CfgNode] = [CfgNode(ENTRY, None, None, None, "entry"), CfgNode(EXIT, None, None, None, "exit")]
        self.edges: set[tuple[int, int]] = set()

    def unit(self, ast_node: int, kind: str) -> int:
        first, last = self.ast.span(ast_node)
        nid = len(self.nodes)
        self.nodes.append(CfgNode(nid, first, last, ast_node, kind))
        return nid

    def connect(self, preds, target: int) -> None:
        for p in preds:
            self.edges.add((p, target))

    def child(self, node: int, label: NodeLabel) -> int | None:
        for c in self.ast.children(node):
            if self.ast.label(c) == label:
                return c
        return None

    def body_stmt(self, node: int) -> int:
        # the body is always the last child of FOR/WHILE, and the 5th child of IF
        return self.ast.children(node)[-1]

    def stmt(self, node: int, preds: list[int]) -> list[int]:
        """Wire ``node`` after ``preds``; return the nodes that fall through."""
        ast = self.ast
        label = ast.label(node)
        if label == NodeLabel.BLOCK:
            for c in ast.children(node):
                if ast.label(c) != NodeLabel.TOKEN:
                    preds = self.stmt(c, preds)
            return preds
        if label in _SIMPLE:
            u = self.unit(node, label.value)
            self.connect(preds, u)
            if label == NodeLabel.RETURN:
                self.edges.add((u, EXIT))
                return []
            return [u]
        if label == NodeLabel.WHILE:
            cond = self.unit(self.child(node, NodeLabel.COND), "COND")
            self.connect(preds, cond)
            self.connect(self.stmt(self.body_stmt(node), [cond]), cond)
            return [cond]
        if label == NodeLabel.IF:
            cond = self.unit(self.child(node, NodeLabel.COND), "COND")
            self.connect(preds, cond)
            kids = ast.children(node)
            then_exits = self.stmt(kids[4], [cond])
            else_node = self.child(node, NodeLabel.ELSE)
            if else_node is None:
                return then_exits + [cond]
            return then_exits + self.stmt(ast.children(else_node)[-1], [cond])
        if label == NodeLabel.FOR:
            return self.for_stmt(node, preds)
        raise ValueError(f"unexpected statement node {label}")

    def for_stmt(self, node: int, preds: list[int]) -> list[int]:
        init = self.child(node, NodeLabel.INIT)
        cond = self.child(node, NodeLabel.COND)
        update = self.child(node, NodeLabel.UPDATE)
        if init is not None:
            u = self.unit(init, "INIT")
            self.connect(preds, u)
            preds = [u]
        if cond is not None:
            head = self.unit(cond, "COND")
            self.connect(preds, head)
            body_preds = [head]
        else:
            head = None
            body_preds = preds
        first_body = len(self.nodes)
        exits = self.stmt(self.body_stmt(node), body_preds)
        if update is not None:
            u = self.unit(update, "UPDATE")
            self.connect(exits, u)
            exits = [u]
        if head is not None:
            self.connect(exits, head)
            return [head]
        # no condition: loop back to the first unit of the body (or update)
        if first_body < len(self.nodes):
            self.connect(exits, first_body)
        return []

    def finish(self) -> Cfg:
        seen = {ENTRY}
        queue = deque([ENTRY])
        succ: dict[int, list[int]] = {}
        for s, t in self.edges:
            succ.setdefault(s, []).append(t)
        while queue:
            n = queue.popleft()
            for t in succ.get(n, ()):
                if t not in seen:
                    seen.add(t)
                    queue.append(t)
        keep = [n for n in self.nodes if n.id in seen or n.id == EXIT]
        remap = {n.id: i for i, n in enumerate(keep)}
        nodes = tuple(
            CfgNode(remap[n.id], n.first_token, n.last_token, n.ast_node, n.kind) for n in keep
        )
        edges = frozenset((remap[s], remap[t]) for s, t in self.edges if s in remap and t in remap)
        return Cfg(nodes, edges)


def build_cfg(ast: Ast) -> Cfg:
    """Build the statement-level CFG of a parsed method.

    Statements that cannot be reached from entry (code after ``return``) are
    dropped.
    """
    b = _CfgBuilder(ast)
    body = ast.children(ast.root)[-1]
    b.connect(b.stmt(body, [ENTRY]), EXIT)
    return b.finish()


# ------------------------------------------------------------------ data flow


def _defs_and_uses(ast: Ast, root: int) -> tuple[list[tuple[str, int]], list[tuple[str, int]]]:
    """(defs, uses) of one CFG unit as (variable, token index) lists in source order."""
    defs: list[tuple[str, int]] = []
    uses: list[tuple[str, int]] = []

    def ident(n: int) -> tuple[str, int]:
        leaf = ast.children(n)[0]
        return ast.tokens[ast.nodes[leaf].token_index], ast.nodes[leaf].token_index

    def visit(n: int) -> None:
        label = ast.label(n)
        kids = ast.children(n)
        if label == NodeLabel.NAME:
            uses.append(ident(n))
        elif label == NodeLabel.DECL:
            for c in kids[2:]:
                visit(c)
            if len(kids) > 2 and ast.token_text(kids[2]) == "=":
                defs.append(ident(kids[1]))
        elif label == NodeLabel.ASSIGN:
            target, op, rhs = kids
            if ast.token_text(op) != "=":
                uses.append(ident(target))
            visit(rhs)
            defs.append(ident(target))
        elif label == NodeLabel.CALL:
            visit(kids[1])
        elif label == NodeLabel.UNOP and any(ast.token_text(c) in ("++", "--") for c in kids):
            operand = next(c for c in kids if ast.label(c) != NodeLabel.TOKEN)
            visit(operand)
            if ast.label(operand) == NodeLabel.NAME:
                defs.append(ident(operand))
        else:
            for c in kids:
                visit(c)

    visit(root)
    return defs, uses


def reaching_definitions(n_nodes: int, edges, defs, order=None) -> list[frozenset]:
    """Worklist reaching definitions over an abstract graph.

    ``defs[n]`` lists ``(var, def_id)`` generated at node ``n`` in program
    order; a later definition of the same variable within a node shadows an
    earlier one. Returns IN sets of def ids per node. ``order`` fixes the
    initial worklist order; the fixed point does not depend on it.
    """
    preds: list[list[int]] = [[] for _ in range(n_nodes)]
    succs: list[list[int]] = [[] for _ in range(n_nodes)]
    for s, t in edges:
        preds[t].append(s)
        succs[s].append(t)

    by_var: dict[str, set] = {}
    for n in range(n_nodes):
        for var, d in defs[n]:
            by_var.setdefault(var, set()).add(d)
    gen: list[frozenset] = []
    kill: list[frozenset] = []
    for n in range(n_nodes):
        last: dict[str, object] = {}
        for var, d in defs[n]:
            last[var] = d
        gen.append(frozenset(last.values()))
        killed = set()
        for var in last:
            killed |= by_var[var]
        kill.append(frozenset(killed - gen[-1]))

    in_sets = [frozenset()] * n_nodes
    out_sets = [gen[n] for n in range(n_nodes)]
    work = deque(range(n_nodes) if order is None else order)
    queued = set(work)
    while work:
        n = work.popleft()
        queued.discard(n)
        new_in = frozenset().union(*(out_sets[p] for p in preds[n])) if preds[n] else frozenset()
        in_sets[n] = new_in
        new_out = gen[n] | (new_in - kill[n])
        if new_out != out_sets[n]:
            out_sets[n] = new_out
            for s in succs[n]:
                if s not in queued:
                    queued.add(s)
                    work.append(s)
    return in_sets


def build_dfg(ast: Ast, cfg: Cfg) -> frozenset[DfgEdge]:
    """Def-use edges: one per (reaching definition, identifier read) pair."""
    n = len(cfg.nodes)
    defs: list[list[tuple[str, int]]] = [[] for _ in range(n)]
    uses: list[list[tuple[str, int]]] = [[] for _ in range(n)]
    params = ast.children(ast.root)[2]
    for c in ast.children(params):
        if ast.label(c) == NodeLabel.PARAM:
            var_leaf = ast.children(ast.children(c)[1])[0]
            ti = ast.nodes[var_leaf].token_index
            defs[cfg.entry].append((ast.tokens[ti], ti))
    for node in cfg.nodes:
        if node.ast_node is not None:
            defs[node.id], uses[node.id] = _defs_and_uses(ast, node.ast_node)

    in_sets = reaching_definitions(n, cfg.edges, defs)
    var_of = {d: v for ds in defs for v, d in ds}
    edges = set()
    for node_id in range(n):
        for var, use_tok in uses[node_id]:
            for d in in_sets[node_id]:
                if var_of[d] == var:
                    edges.add(DfgEdge(d, use_tok, var))
    return frozenset(edges)


def dfg_lines(dfg) -> list[str]:
    return [f"DFG {e.var} {e.def_token} -> {e.use_token}" for e in sorted(dfg)]
