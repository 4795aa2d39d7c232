"""Recursive-descent parser for a small C/Java-like method language.

Every lexer token becomes exactly one leaf (label TOKEN) so that in-order leaf
traversal reproduces the token sequence. Internal nodes carry NodeLabel
values; a leaf's *feature label* is the label of its parent.

Grammar::

    method   := type NAME "(" params? ")" block
    params   := param ("," param)*        param := type NAME
    block    := "{" stmt* "}"
    stmt     := decl ";" | expr ";" | for | while | if | "return" expr? ";" | block
    decl     := type NAME ("=" expr)?
    for      := "for" "(" (decl|expr)? ";" expr? ";" expr? ")" stmt
    while    := "while" "(" expr ")" stmt
    if       := "if" "(" expr ")" stmt ("else" stmt)?
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import ParseError
from .tokenizer import Token, TokenKind


class NodeLabel(str, Enum):
    FUNCTION = "FUNCTION"
    PARAMS = "PARAMS"
    PARAM = "PARAM"
    BLOCK = "BLOCK"
    DECL = "DECL"
    TYPE = "TYPE"
    VAR = "VAR"
    NAME = "NAME"
    INIT = "INIT"
    COND = "COND"
    UPDATE = "UPDATE"
    FOR = "FOR"
    WHILE = "WHILE"
    IF = "IF"
    ELSE = "ELSE"
    RETURN = "RETURN"
    EXPR_STMT = "EXPR_STMT"
    ASSIGN = "ASSIGN"
    CALL = "CALL"
    ARGS = "ARGS"
    BINOP = "BINOP"
    UNOP = "UNOP"
    LITERAL = "LITERAL"
    TOKEN = "TOKEN"

    def __str__(self) -> str:
        return self.value


@dataclass
class Node:
    id: int
    label: NodeLabel
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    token_index: int | None = None


@dataclass
class Ast:
    nodes: list[Node]
    root: int
    tokens: list[str]
    depth: list[int] = field(init=False)

    def __post_init__(self) -> None:
        self.depth = [0] * len(self.nodes)
        stack = [self.root]
        while stack:
            n = stack.pop()
            for c in self.nodes[n].children:
                self.depth[c] = self.depth[n] + 1
                stack.append(c)
        self._leaves: list[int] | None = None

    def label(self, node_id: int) -> NodeLabel:
        return self.nodes[node_id].label

    def parent(self, node_id: int) -> int | None:
        return self.nodes[node_id].parent

    def children(self, node_id: int) -> list[int]:
        return self.nodes[node_id].children

    def feature_node(self, leaf: int) -> int:
        """The node whose label stands for ``leaf`` in pair features."""
        p = self.nodes[leaf].parent
        return leaf if p is None else p

    def feature_label(self, leaf: int) -> NodeLabel:
        return self.nodes[self.feature_node(leaf)].label

    def leaves(self) -> list[int]:
        if self._leaves is None:
            out = []
            stack = [self.root]
            while stack:
                n = stack.pop()
                node = self.nodes[n]
                if node.token_index is not None:
                    out.append(n)
                stack.extend(reversed(node.children))
            self._leaves = out
        return self._leaves

    def leaf_of_token(self, token_index: int) -> int:
        return self.leaves()[token_index]

    def span(self, node_id: int) -> tuple[int, int]:
        """First and last token index under ``node_id``."""
        n = node_id
        while self.nodes[n].token_index is None:
            n = self.nodes[n].children[0]
        first = self.nodes[n].token_index
        n = node_id
        while self.nodes[n].token_index is None:
            n = self.nodes[n].children[-1]
        return first, self.nodes[n].token_index

    def token_text(self, node_id: int) -> str | None:
        ti = self.nodes[node_id].token_index
        return None if ti is None else self.tokens[ti]

    def walk(self, node_id: int | None = None):
        """Node ids in pre-order."""
        stack = [self.root if node_id is None else node_id]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(self.nodes[n].children))

    def render(self) -> str:
        lines = []
        for n in self.walk():
            node = self.nodes[n]
            line = " " * self.depth[n] + node.label.value
            if node.token_index is not None:
                line += " :" + self.tokens[node.token_index]
            lines.append(line)
        return "\n".join(lines)

    @classmethod
    def from_nested(cls, tree) -> "Ast":
        """Build a tree from ``(label, [children...])`` tuples and token strings.

        Plain strings become TOKEN leaves numbered in order of appearance.
        Intended for hand-encoded fixtures.
        """
        nodes: list[Node] = []
        tokens: list[str] = []

        def build(item, parent):
            nid = len(nodes)
            if isinstance(item, str):
                nodes.append(Node(nid, NodeLabel.TOKEN, parent, [], len(tokens)))
                tokens.append(item)
                return nid
            label, kids = item
            nodes.append(Node(nid, NodeLabel(label), parent))
            for k in kids:
                nodes[nid].children.append(build(k, nid))
            return nid

        root = build(tree, None)
        return cls(nodes, root, tokens)


TYPE_KEYWORDS = frozenset({"int", "void", "var", "float", "bool"})
_ASSIGN_OPS = frozenset({"=", "+=", "-=", "*=", "/="})
_BINARY_LEVELS = (
    frozenset({"||"}),
    frozenset({"&&"}),
    frozenset({"==", "!="}),
    frozenset({"<", "<=", ">", ">="}),
    frozenset({"+", "-"}),
    frozenset({"*", "/", "%"}),
)
_PREFIX_OPS = frozenset({"!", "-", "+", "++", "--", "~"})
_STMT_START = {"{", "for", "while", "if", "return", "<type>", "<expr>"}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.pos = 0
        self.nodes: list[Node] = []

    # -- helpers
    def peek(self, offset: int = 0) -> Token | None:
        i = self.pos + offset
        return self.toks[i] if i < len(self.toks) else None

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def fail(self, expected) -> ParseError:
        t = self.peek()
        return ParseError(self.pos, set(expected), None if t is None else t.text)

    def new(self, label: NodeLabel, children: list[int] = ()) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(nid, label))
        for c in children:
            self.adopt(nid, c)
        return nid

    def adopt(self, parent: int, child: int) -> None:
        self.nodes[child].parent = parent
        self.nodes[parent].children.append(child)

    def leaf(self, text: str | None = None, kind: TokenKind | None = None) -> int:
        t = self.peek()
        if t is None or (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            raise self.fail({text or (kind.value if kind else "<token>")})
        nid = len(self.nodes)
        self.nodes.append(Node(nid, NodeLabel.TOKEN, token_index=t.index))
        self.pos += 1
        return nid

    def wrap(self, label: NodeLabel, text: str | None = None, kind: TokenKind | None = None) -> int:
        return self.new(label, [self.leaf(text, kind)])

    def is_type_start(self) -> bool:
        t = self.peek()
        if t is None:
            return False
        if t.text in TYPE_KEYWORDS:
            return True
        nxt = self.peek(1)
        return t.kind == TokenKind.IDENTIFIER and nxt is not None and nxt.kind == TokenKind.IDENTIFIER

    def type_node(self) -> int:
        t = self.peek()
        if t is None or not (t.text in TYPE_KEYWORDS or t.kind == TokenKind.IDENTIFIER):
            raise self.fail({"<type>"})
        return self.wrap(NodeLabel.TYPE)

    # -- declarations
    def method(self) -> int:
        typ = self.type_node()
        name = self.wrap(NodeLabel.NAME, kind=TokenKind.IDENTIFIER)
        params = self.new(NodeLabel.PARAMS, [self.leaf("(")])
        if not self.at(")"):
            while True:
                self.adopt(params, self.new(NodeLabel.PARAM, [self.type_node(), self.wrap(NodeLabel.VAR, kind=TokenKind.IDENTIFIER)]))
                if self.at(","):
                    self.adopt(params, self.leaf(","))
                    continue
                break
        self.adopt(params, self.leaf(")"))
        body = self.block()
        if self.peek() is not None:
            raise self.fail({"<end of input>"})
        return self.new(NodeLabel.FUNCTION, [typ, name, params, body])

    def decl(self) -> int:
        node = self.new(NodeLabel.DECL, [self.type_node(), self.wrap(NodeLabel.VAR, kind=TokenKind.IDENTIFIER)])
        if self.at("="):
            self.adopt(node, self.leaf("="))
            self.adopt(node, self.expr())
        return node

    # -- statements
    def block(self) -> int:
        node = self.new(NodeLabel.BLOCK, [self.leaf("{")])
        while not self.at("}"):
            if self.peek() is None:
                raise self.fail({"}"} | _STMT_START)
            self.adopt(node, self.stmt())
        self.adopt(node, self.leaf("}"))
        return node

    def stmt(self) -> int:
        t = self.peek()
        if t is None:
            raise self.fail(_STMT_START)
        if t.text == "{":
            return self.block()
        if t.text == "for":
            return self.for_stmt()
        if t.text == "while":
            kw = self.leaf("while")
            lp = self.leaf("(")
            cond = self.new(NodeLabel.COND, [self.expr()])
            rp = self.leaf(")")
            return self.new(NodeLabel.WHILE, [kw, lp, cond, rp, self.stmt()])
        if t.text == "if":
            kw = self.leaf("if")
            lp = self.leaf("(")
            cond = self.new(NodeLabel.COND, [self.expr()])
            rp = self.leaf(")")
            node = self.new(NodeLabel.IF, [kw, lp, cond, rp, self.stmt()])
            if self.at("else"):
                else_kw = self.leaf("else")
                self.adopt(node, self.new(NodeLabel.ELSE, [else_kw, self.stmt()]))
            return node
        if t.text == "return":
            node = self.new(NodeLabel.RETURN, [self.leaf("return")])
            if self.peek() is None:
                raise self.fail({";", "<expr>"})
            if not self.at(";"):
                self.adopt(node, self.expr())
            self.adopt(node, self.leaf(";"))
            return node
        if self.is_type_start():
            node = self.decl()
        else:
            node = self.new(NodeLabel.EXPR_STMT, [self.expr()])
        self.adopt(node, self.leaf(";"))
        return node

    def for_stmt(self) -> int:
        node = self.new(NodeLabel.FOR, [self.leaf("for"), self.leaf("(")])
        if not self.at(";"):
            inner = self.decl() if self.is_type_start() else self.expr()
            self.adopt(node, self.new(NodeLabel.INIT, [inner]))
        self.adopt(node, self.leaf(";"))
        if not self.at(";"):
            self.adopt(node, self.new(NodeLabel.COND, [self.expr()]))
        self.adopt(node, self.leaf(";"))
        if not self.at(")"):
            self.adopt(node, self.new(NodeLabel.UPDATE, [self.expr()]))
        self.adopt(node, self.leaf(")"))
        self.adopt(node, self.stmt())
        return node

    # -- expressions
    def expr(self) -> int:
        t, nxt = self.peek(), self.peek(1)
        if t is not None and t.kind == TokenKind.IDENTIFIER and nxt is not None and nxt.text in _ASSIGN_OPS:
            target = self.wrap(NodeLabel.NAME)
            op = self.leaf()
            return self.new(NodeLabel.ASSIGN, [target, op, self.expr()])
        return self.binary(0)

    def binary(self, level: int) -> int:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.binary(level + 1)
        while (t := self.peek()) is not None and t.text in _BINARY_LEVELS[level]:
            op = self.leaf()
            left = self.new(NodeLabel.BINOP, [left, op, self.binary(level + 1)])
        return left

    def unary(self) -> int:
        t = self.peek()
        if t is not None and t.kind == TokenKind.OPERATOR and t.text in _PREFIX_OPS:
            op = self.leaf()
            return self.new(NodeLabel.UNOP, [op, self.unary()])
        node = self.primary()
        while (t := self.peek()) is not None and t.text in ("++", "--"):
            node = self.new(NodeLabel.UNOP, [node, self.leaf()])
        return node

    def primary(self) -> int:
        t = self.peek()
        if t is None:
            raise self.fail({"<expr>"})
        if t.kind == TokenKind.LITERAL or t.text in ("true", "false"):
            return self.wrap(NodeLabel.LITERAL)
        if t.text == "(":
            # grouping parentheses hang under a UNOP node
            lp = self.leaf("(")
            inner = self.expr()
            return self.new(NodeLabel.UNOP, [lp, inner, self.leaf(")")])
        if t.kind == TokenKind.IDENTIFIER:
            name = self.wrap(NodeLabel.NAME)
            if self.at("("):
                args = self.new(NodeLabel.ARGS, [self.leaf("(")])
                if not self.at(")"):
                    while True:
                        self.adopt(args, self.expr())
                        if self.at(","):
                            self.adopt(args, self.leaf(","))
                            continue
                        break
                self.adopt(args, self.leaf(")"))
                return self.new(NodeLabel.CALL, [name, args])
            return name
        raise self.fail({"<expr>"})


def parse(tokens: list[Token]) -> Ast:
    """Parse a whole method; raises ParseError on any grammar violation."""
    p = _Parser(list(tokens))
    root = p.method()
    return Ast(p.nodes, root, [t.text for t in tokens])


def leaves(ast: Ast) -> list[int]:
    return list(ast.leaves())
