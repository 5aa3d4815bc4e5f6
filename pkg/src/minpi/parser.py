"""Hand-written recursive descent parser for processes and types.

Concrete syntax, prefix by prefix:

    u!(5, w). P        send values along u
    u?(x, y). P        receive, binding x and y
    u+add. P           select a label
    u&{add: P, neg: Q} offer labels
    (new u: T) P       restrict u, annotation required for linear sessions
    P | Q              parallel composition
    rec X. P / X       recursion and recursion variable
    *P                 replicated P
    0                  inaction

Names: base, base@3, ~base (dual), a^2 (generated trigger), c@4 / cr@4 /
cr@r / crX@X (generated chaining channels).  Plain `c`, `cr`, `crX` are
reserved and rejected.  Expressions: integers, true/false, names, -e,
succ e, e + e.

Types: end, Int, Bool, t, !(T, ...).T, ?(T, ...).T (a lone base type may
drop its parentheses: ?Int.end), +{l: T, ...}, &{l: T, ...}, mu t.T, <T>.
"""

from __future__ import annotations

import re
from typing import Optional

from . import syntax as sx
from . import types as ty


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<op><|>|\(|\)|\{|\}|\[|\]|!|\?|\+|&|\*|\||~|@|\^|\.|,|:|=|-)
    """,
    re.VERBOSE,
)

KEYWORDS = {"new", "rec", "succ", "true", "false", "end", "mu"}


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.toks: list = []
        line, col = 1, 1
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None:
                raise ParseError(f"stray character {text[pos]!r}", line, col)
            if m.lastgroup != "ws":
                self.toks.append((m.lastgroup, m.group(), line, col))
            chunk = m.group()
            nl = chunk.count("\n")
            if nl:
                line += nl
                col = len(chunk) - chunk.rfind("\n")
            else:
                col += len(chunk)
            pos = m.end()
        self.toks.append(("eof", "", line, col))
        self.i = 0

    def peek(self, ahead: int = 0):
        j = min(self.i + ahead, len(self.toks) - 1)
        return self.toks[j]

    def next(self):
        tok = self.toks[self.i]
        if tok[0] != "eof":
            self.i += 1
        return tok

    def expect(self, value: str):
        kind, got, line, col = self.peek()
        if got != value:
            raise ParseError(f"expected {value!r}, found {got or 'end of input'!r}", line, col)
        return self.next()

    def at(self, value: str) -> bool:
        return self.peek()[1] == value

    def eat(self, value: str) -> bool:
        if self.at(value):
            self.next()
            return True
        return False

    def fail(self, message: str):
        _, got, line, col = self.peek()
        raise ParseError(message, line, col)


# ---------------------------------------------------------------------------
# Names

def _parse_name(lx: _Lexer) -> sx.Name:
    dual = lx.eat("~")
    kind, base, line, col = lx.peek()
    if kind != "ident":
        lx.fail("expected a name")
    lx.next()
    index: Optional[int] = None
    name_kind = sx.SOURCE
    if base in ("c", "cr", "crX"):
        if not lx.eat("@"):
            raise ParseError(f"{base!r} is reserved for generated channels", line, col)
        kind2, tag, line2, col2 = lx.peek()
        if base == "c":
            if kind2 != "int":
                raise ParseError("c@ needs a numeric index", line2, col2)
            lx.next()
            return sx.prop(int(tag), dual)
        if base == "cr":
            lx.next()
            if kind2 == "int":
                return sx.prop_rec(int(tag), dual)
            if kind2 == "ident":
                return sx.prop_recname(tag, dual)
            raise ParseError("cr@ needs an index or a name", line2, col2)
        if kind2 != "ident":
            raise ParseError("crX@ needs a variable name", line2, col2)
        lx.next()
        return sx.prop_var(tag, dual)
    if lx.eat("@"):
        kind2, tag, line2, col2 = lx.peek()
        if kind2 != "int":
            raise ParseError("@ needs a numeric index", line2, col2)
        lx.next()
        index = int(tag)
    elif lx.eat("^"):
        kind2, tag, line2, col2 = lx.peek()
        if kind2 != "int":
            raise ParseError("^ needs a numeric serial", line2, col2)
        lx.next()
        return sx.trigger(base, int(tag), dual)
    return sx.Name(base, index, dual, name_kind)


def _starts_name(lx: _Lexer) -> bool:
    kind, value, _, _ = lx.peek()
    if value == "~":
        return lx.peek(1)[0] == "ident"
    return kind == "ident" and value not in KEYWORDS


# ---------------------------------------------------------------------------
# Expressions

def _parse_expr(lx: _Lexer) -> sx.Expr:
    left = _parse_expr_atom(lx)
    while lx.at("+"):
        lx.next()
        right = _parse_expr_atom(lx)
        left = sx.Add(left, right)
    return left


def _parse_expr_atom(lx: _Lexer) -> sx.Expr:
    kind, value, line, col = lx.peek()
    if value == "-":
        lx.next()
        return sx.Neg(_parse_expr_atom(lx))
    if value == "succ":
        lx.next()
        return sx.Succ(_parse_expr_atom(lx))
    if value == "true":
        lx.next()
        return sx.BoolLit(True)
    if value == "false":
        lx.next()
        return sx.BoolLit(False)
    if kind == "int":
        lx.next()
        return sx.IntLit(int(value))
    if value == "(":
        lx.next()
        e = _parse_expr(lx)
        lx.expect(")")
        return e
    if _starts_name(lx) or value == "~":
        return sx.NameRef(_parse_name(lx))
    raise ParseError(f"expected a value, found {value or 'end of input'!r}", line, col)


# ---------------------------------------------------------------------------
# Types

def parse_type(text: str) -> ty.Type:
    lx = _Lexer(text)
    t = _parse_type(lx)
    if lx.peek()[0] != "eof":
        lx.fail("trailing input after type")
    return t


def _parse_type(lx: _Lexer) -> ty.Type:
    kind, value, line, col = lx.peek()
    if value == "end":
        lx.next()
        return ty.TEnd()
    if value == "Int":
        lx.next()
        return ty.TInt()
    if value == "Bool":
        lx.next()
        return ty.TBool()
    if value == "mu":
        lx.next()
        kind2, var, line2, col2 = lx.peek()
        if kind2 != "ident":
            raise ParseError("mu needs a variable", line2, col2)
        lx.next()
        lx.expect(".")
        return ty.TRec(var, _parse_type(lx))
    if value in ("!", "?"):
        lx.next()
        payload = _parse_type_payload(lx)
        lx.expect(".")
        cont = _parse_type(lx)
        return (ty.TOut if value == "!" else ty.TIn)(payload, cont)
    if value in ("+", "&"):
        lx.next()
        lx.expect("{")
        branches = []
        while True:
            kind2, lab, line2, col2 = lx.peek()
            if kind2 != "ident":
                raise ParseError("expected a branch label", line2, col2)
            lx.next()
            lx.expect(":")
            branches.append((lab, _parse_type(lx)))
            if not lx.eat(","):
                break
        lx.expect("}")
        return (ty.TSelect if value == "+" else ty.TBranch)(tuple(branches))
    if value == "<":
        lx.next()
        items = []
        if not lx.at(">"):
            items.append(_parse_type(lx))
            while lx.eat(","):
                items.append(_parse_type(lx))
        lx.expect(">")
        return ty.TShared(tuple(items))
    if kind == "ident" and value not in KEYWORDS:
        lx.next()
        return ty.TVar(value)
    raise ParseError(f"expected a type, found {value or 'end of input'!r}", line, col)


def _parse_type_payload(lx: _Lexer) -> tuple:
    if lx.eat("("):
        items = []
        if not lx.at(")"):
            items.append(_parse_type(lx))
            while lx.eat(","):
                items.append(_parse_type(lx))
        lx.expect(")")
        return tuple(items)
    # A lone base type or variable may drop the parentheses: ?Int.end.
    return (_parse_type(lx),)


# ---------------------------------------------------------------------------
# Processes

def parse_process(text: str) -> sx.Process:
    lx = _Lexer(text)
    p = _parse_par(lx)
    if lx.peek()[0] != "eof":
        lx.fail("trailing input after process")
    return p


def _parse_par(lx: _Lexer) -> sx.Process:
    left = _parse_prefix(lx)
    while lx.at("|"):
        lx.next()
        right = _parse_prefix(lx)
        left = sx.Par(left, right)
    return left


def _parse_prefix(lx: _Lexer) -> sx.Process:
    kind, value, line, col = lx.peek()
    if value == "0":
        lx.next()
        return sx.Nil()
    if value == "*":
        lx.next()
        return sx.Repl(_parse_prefix(lx))
    if value == "rec":
        lx.next()
        kind2, var, line2, col2 = lx.peek()
        if kind2 != "ident":
            raise ParseError("rec needs a variable", line2, col2)
        lx.next()
        lx.expect(".")
        return sx.Rec(var, _parse_prefix(lx))
    if value == "(":
        if lx.peek(1)[1] == "new":
            lx.next()
            lx.next()
            name = _parse_name(lx)
            annot = None
            if lx.eat(":"):
                annot = _parse_type(lx)
            lx.expect(")")
            return sx.Res(name, annot, _parse_prefix(lx))
        lx.next()
        p = _parse_par(lx)
        lx.expect(")")
        return p
    if _starts_name(lx):
        mark = lx.i
        name = _parse_name(lx)
        nxt = lx.peek()[1]
        if nxt == "!":
            lx.next()
            lx.expect("(")
            payload: list = []
            if not lx.at(")"):
                payload.append(_parse_expr(lx))
                while lx.eat(","):
                    payload.append(_parse_expr(lx))
            lx.expect(")")
            lx.expect(".")
            return sx.Out(name, tuple(payload), _parse_prefix(lx))
        if nxt == "?":
            lx.next()
            if lx.at("{"):
                lx.fail("branching is written with &, not ?")
            lx.expect("(")
            binders: list = []
            if not lx.at(")"):
                binders.append(_parse_binder(lx))
                while lx.eat(","):
                    binders.append(_parse_binder(lx))
            lx.expect(")")
            lx.expect(".")
            return sx.In(name, tuple(binders), _parse_prefix(lx))
        if nxt == "+":
            lx.next()
            kind2, lab, line2, col2 = lx.peek()
            if kind2 != "ident":
                raise ParseError("expected a label after +", line2, col2)
            lx.next()
            lx.expect(".")
            return sx.Select(name, lab, _parse_prefix(lx))
        if nxt == "&":
            lx.next()
            lx.expect("{")
            branches = []
            while True:
                kind2, lab, line2, col2 = lx.peek()
                if kind2 != "ident":
                    raise ParseError("expected a branch label", line2, col2)
                lx.next()
                lx.expect(":")
                branches.append((lab, _parse_par(lx)))
                if not lx.eat(","):
                    break
            lx.expect("}")
            return sx.Branch(name, tuple(branches))
        # A bare identifier is a recursion variable.
        lx.i = mark
        if name.dual or name.index is not None or name.generated:
            lx.fail("expected a prefix after this name")
        lx.next()
        return sx.Var(name.base)
    raise ParseError(f"expected a process, found {value or 'end of input'!r}", line, col)


def _parse_binder(lx: _Lexer):
    name = _parse_name(lx)
    if name.dual:
        lx.fail("binders are plain names")
    annot = None
    if lx.eat(":"):
        annot = _parse_type(lx)
    return (name, annot)


# ---------------------------------------------------------------------------
# Environment files

def parse_env(text: str) -> tuple:
    """Read `name: type` lines into shared and linear environments.

    Shared (unrestricted) entries are those with a <...> type; everything
    else lands in the linear environment.  Blank lines and #-comments are
    skipped.
    """
    gamma: dict = {}
    delta: dict = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lx = _Lexer(line)
        name = _parse_name(lx)
        lx.expect(":")
        t = _parse_type(lx)
        if lx.peek()[0] != "eof":
            lx.fail("trailing input after environment entry")
        if isinstance(t, ty.TShared):
            gamma[name] = t
        else:
            delta[name] = t
    return gamma, delta


def print_process(p: sx.Process) -> str:
    return str(p)


def print_type(t: ty.Type) -> str:
    return str(t)
