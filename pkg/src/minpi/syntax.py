"""Process syntax for a polyadic session pi-calculus.

Names carry an optional numeric index, a polarity flag, and a kind tag that
separates user-written channels from the bookkeeping names a decomposition
introduces.  Processes and expressions are immutable trees; reduction lives
in `semantics`, type syntax in `types`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Optional, Union

# Name kinds.  "source" names come from user input; every other kind is
# generated during decomposition and is invisible to source programs.
SOURCE = "source"
PROP = "prop"          # linear propagator, printed c@k
PROP_REC = "prop_rec"  # looping propagator cr@k, or per-name server cr@base
PROP_VAR = "prop_var"  # per-recursion-variable control channel, printed cv@X
TRIGGER = "trigger"    # fresh trigger or handshake name, printed base^n

GENERATED_KINDS = (PROP, PROP_REC, PROP_VAR, TRIGGER)

RESERVED_BASES = ("c", "cr", "crX")


class SyntaxError_(Exception):
    """Raised for malformed process constructions."""


@dataclass(frozen=True, order=True)
class Name:
    base: str
    index: Optional[int] = None
    dual: bool = False
    kind: str = SOURCE

    @property
    def generated(self) -> bool:
        return self.kind != SOURCE

    def bar(self) -> "Name":
        return replace(self, dual=not self.dual)

    def plain(self) -> "Name":
        return replace(self, dual=False) if self.dual else self

    def at(self, index: int) -> "Name":
        return replace(self, index=index)

    def channel_key(self) -> tuple:
        """Identity of the underlying channel, ignoring polarity."""
        return (self.base, self.index, self.kind)

    def __str__(self) -> str:
        sigil = "~" if self.dual else ""
        if self.kind == PROP:
            return f"{sigil}{self.base}@{self.index}"
        if self.kind == PROP_REC:
            tag = self.base if self.index is None else self.index
            return f"{sigil}cr@{tag}"
        if self.kind == PROP_VAR:
            return f"{sigil}crX@{self.base}"
        if self.kind == TRIGGER:
            return f"{sigil}{self.base}^{self.index}"
        if self.index is None:
            return f"{sigil}{self.base}"
        return f"{sigil}{self.base}@{self.index}"


def prop(k: int, dual: bool = False) -> Name:
    return Name("c", k, dual, PROP)


def prop_rec(k: int, dual: bool = False) -> Name:
    """Looping propagator at index k; feeds the trios of a recursion body."""
    return Name("c", k, dual, PROP_REC)


def prop_recname(base: str, dual: bool = False) -> Name:
    """Server channel handing out the decomposition of recursive name `base`."""
    return Name(base, None, dual, PROP_REC)


def prop_var(var: str, dual: bool = False) -> Name:
    return Name(var, None, dual, PROP_VAR)


def trigger(base: str, n: int, dual: bool = False) -> Name:
    return Name(base, n, dual, TRIGGER)


# ---------------------------------------------------------------------------
# Expressions

@dataclass(frozen=True)
class NameRef:
    name: Name

    def __str__(self) -> str:
        return str(self.name)


@dataclass(frozen=True)
class IntLit:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class BoolLit:
    value: bool

    def __str__(self) -> str:
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"

    def __str__(self) -> str:
        return f"-{_atom(self.arg)}"


@dataclass(frozen=True)
class Succ:
    arg: "Expr"

    def __str__(self) -> str:
        return f"succ {_atom(self.arg)}"


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"

    def __str__(self) -> str:
        return f"{self.left} + {_atom(self.right)}"


def _atom(e: "Expr") -> str:
    if isinstance(e, (NameRef, IntLit, BoolLit)):
        return str(e)
    return f"({e})"


Expr = Union[NameRef, IntLit, BoolLit, Neg, Succ, Add]


def expr_names(e: Expr) -> Iterator[Name]:
    if isinstance(e, NameRef):
        yield e.name
    elif isinstance(e, (Neg, Succ)):
        yield from expr_names(e.arg)
    elif isinstance(e, Add):
        yield from expr_names(e.left)
        yield from expr_names(e.right)


# ---------------------------------------------------------------------------
# Processes

@dataclass(frozen=True)
class Nil:
    def __str__(self) -> str:
        return "0"


@dataclass(frozen=True)
class Out:
    subject: Name
    payload: tuple
    cont: "Process"
    # Decompositions insert a few sends on user-visible channels that only
    # shuttle fresh endpoints around.  They mark them aux so the reduction
    # machinery can file those steps as bookkeeping, not observable traffic.
    aux: bool = False

    def __str__(self) -> str:
        items = ", ".join(str(e) for e in self.payload)
        return f"{self.subject}!({items}).{_wrap(self.cont)}"


@dataclass(frozen=True)
class In:
    subject: Name
    binders: tuple  # of (Name, Optional[Type])
    cont: "Process"
    aux: bool = False

    def __str__(self) -> str:
        items = ", ".join(str(n) for n, _ in self.binders)
        return f"{self.subject}?({items}).{_wrap(self.cont)}"


@dataclass(frozen=True)
class Select:
    subject: Name
    label: str
    cont: "Process"

    def __str__(self) -> str:
        return f"{self.subject}+{self.label}.{_wrap(self.cont)}"


@dataclass(frozen=True)
class Branch:
    subject: Name
    branches: tuple  # of (str, Process)

    def __str__(self) -> str:
        items = ", ".join(f"{lab}: {p}" for lab, p in self.branches)
        return f"{self.subject}&{{{items}}}"


@dataclass(frozen=True)
class Par:
    left: "Process"
    right: "Process"

    def __str__(self) -> str:
        return f"{_wrap_par(self.left)} | {_wrap_par(self.right)}"


@dataclass(frozen=True)
class Res:
    name: Name
    annot: Optional[object]  # session or shared type, from `types`
    cont: "Process"

    def __str__(self) -> str:
        ann = f": {self.annot}" if self.annot is not None else ""
        return f"(new {self.name}{ann}) {_wrap(self.cont)}"


@dataclass(frozen=True)
class Rec:
    var: str
    body: "Process"

    def __str__(self) -> str:
        return f"rec {self.var}.{_wrap(self.body)}"


@dataclass(frozen=True)
class Var:
    var: str

    def __str__(self) -> str:
        return self.var


@dataclass(frozen=True)
class Repl:
    body: "Process"

    def __str__(self) -> str:
        return f"*{_wrap(self.body)}"


Process = Union[Nil, Out, In, Select, Branch, Par, Res, Rec, Var, Repl]


def _wrap(p: Process) -> str:
    if isinstance(p, Par):
        return f"({p})"
    return str(p)


def _wrap_par(p: Process) -> str:
    if isinstance(p, (Par, Rec)):
        return f"({p})"
    return str(p)


def par(*parts: Process) -> Process:
    """Right-nested parallel composition; drops nothing."""
    items = list(parts)
    if not items:
        return Nil()
    out = items[-1]
    for p in reversed(items[:-1]):
        out = Par(p, out)
    return out


def res(names, cont: Process) -> Process:
    """Fold a sequence of (name, annot) pairs or bare names into Res nests."""
    out = cont
    for item in reversed(list(names)):
        if isinstance(item, Name):
            out = Res(item, None, out)
        else:
            n, t = item
            out = Res(n, t, out)
    return out


# ---------------------------------------------------------------------------
# Free names, substitution, alpha equivalence

def free_names(p: Process) -> set:
    """Free channel identities of a process, as plain (undualized) names."""
    out: set = set()
    _free(p, out, set())
    return out


def _free(p: Process, acc: set, bound: set) -> None:
    if isinstance(p, Nil) or isinstance(p, Var):
        return
    if isinstance(p, Out):
        _note(p.subject, acc, bound)
        for e in p.payload:
            for n in expr_names(e):
                _note(n, acc, bound)
        _free(p.cont, acc, bound)
    elif isinstance(p, In):
        _note(p.subject, acc, bound)
        inner = bound | {n.plain().channel_key() for n, _ in p.binders}
        _free(p.cont, acc, inner)
    elif isinstance(p, Select):
        _note(p.subject, acc, bound)
        _free(p.cont, acc, bound)
    elif isinstance(p, Branch):
        _note(p.subject, acc, bound)
        for _, q in p.branches:
            _free(q, acc, bound)
    elif isinstance(p, Par):
        _free(p.left, acc, bound)
        _free(p.right, acc, bound)
    elif isinstance(p, Res):
        _free(p.cont, acc, bound | {p.name.plain().channel_key()})
    elif isinstance(p, (Rec, Repl)):
        _free(p.body, acc, bound)


def _note(n: Name, acc: set, bound: set) -> None:
    if n.plain().channel_key() not in bound:
        acc.add(n.plain())


def fn_sorted(p: Process) -> list:
    """Free names in lexicographic order of their printed form."""
    return sorted(free_names(p), key=str)


def fnb(p: Process, candidates) -> list:
    """Order-preserving filter of `candidates` down to names p mentions.

    Matching is by base and kind, not exact index: a context entry u@2 is
    kept when p touches any u@i, since later fragments of the same session
    still need their share of the decomposed channel.
    """
    bases = {(n.base, n.kind) for n in free_names(p)}
    return [n for n in candidates if (n.base, n.kind) in bases]


def free_vars(p: Process) -> set:
    """Free recursion variables of a process."""
    if isinstance(p, Var):
        return {p.var}
    if isinstance(p, Rec):
        return free_vars(p.body) - {p.var}
    if isinstance(p, (Out, In, Select)):
        return free_vars(p.cont)
    if isinstance(p, Branch):
        out: set = set()
        for _, q in p.branches:
            out |= free_vars(q)
        return out
    if isinstance(p, Par):
        return free_vars(p.left) | free_vars(p.right)
    if isinstance(p, Res):
        return free_vars(p.cont)
    if isinstance(p, Repl):
        return free_vars(p.body)
    return set()


def initialized(p: Process) -> bool:
    return all(n.index is not None for n in free_names(p))


def init_subst(names) -> dict:
    """Send every unindexed name to itself at index 1."""
    out: dict = {}
    for n in names:
        if n.index is not None:
            raise SyntaxError_(f"{n} is already indexed")
        key = n.plain()
        out[key] = NameRef(key.at(1))
    return out


def subst_expr(e: Expr, mapping: Mapping[Name, Expr]) -> Expr:
    if isinstance(e, NameRef):
        return _subst_name_expr(e.name, mapping)
    if isinstance(e, Neg):
        return Neg(subst_expr(e.arg, mapping))
    if isinstance(e, Succ):
        return Succ(subst_expr(e.arg, mapping))
    if isinstance(e, Add):
        return Add(subst_expr(e.left, mapping), subst_expr(e.right, mapping))
    return e


def _subst_name_expr(n: Name, mapping: Mapping[Name, Expr]) -> Expr:
    hit = mapping.get(n.plain())
    if hit is None:
        return NameRef(n)
    if not n.dual:
        return hit
    if isinstance(hit, NameRef):
        return NameRef(hit.name.bar())
    raise SyntaxError_(f"cannot take the dual of value {hit}")


def _subst_name(n: Name, mapping: Mapping[Name, Expr]) -> Name:
    got = _subst_name_expr(n, mapping)
    if isinstance(got, NameRef):
        return got.name
    raise SyntaxError_(f"subject position needs a name, got {got}")


def subst(p: Process, mapping: Mapping[Name, Expr]) -> Process:
    """Capture-avoiding substitution of values for plain name keys.

    Binders shadow; mapping keys must be plain names.  A dual occurrence of
    a mapped name resolves to the dual of the mapped value.
    """
    if not mapping:
        return p
    if isinstance(p, Nil) or isinstance(p, Var):
        return p
    if isinstance(p, Out):
        return Out(
            _subst_name(p.subject, mapping),
            tuple(subst_expr(e, mapping) for e in p.payload),
            subst(p.cont, mapping),
            p.aux,
        )
    if isinstance(p, In):
        inner = _shadow(mapping, [n for n, _ in p.binders])
        return In(_subst_name(p.subject, mapping), p.binders, subst(p.cont, inner), p.aux)
    if isinstance(p, Select):
        return Select(_subst_name(p.subject, mapping), p.label, subst(p.cont, mapping))
    if isinstance(p, Branch):
        return Branch(
            _subst_name(p.subject, mapping),
            tuple((lab, subst(q, mapping)) for lab, q in p.branches),
        )
    if isinstance(p, Par):
        return Par(subst(p.left, mapping), subst(p.right, mapping))
    if isinstance(p, Res):
        inner = _shadow(mapping, [p.name])
        return Res(p.name, p.annot, subst(p.cont, inner))
    if isinstance(p, Rec):
        return Rec(p.var, subst(p.body, mapping))
    if isinstance(p, Repl):
        return Repl(subst(p.body, mapping))
    raise SyntaxError_(f"unknown process node {p!r}")


def _shadow(mapping: Mapping[Name, Expr], binders) -> dict:
    keys = {b.plain() for b in binders}
    return {k: v for k, v in mapping.items() if k not in keys}


def rename(p: Process, mapping: Mapping[Name, Name]) -> Process:
    return subst(p, {k.plain(): NameRef(v) for k, v in mapping.items()})


def subst_var(p: Process, var: str, body: Process) -> Process:
    """Replace free occurrences of recursion variable `var` by `body`."""
    if isinstance(p, Var):
        return body if p.var == var else p
    if isinstance(p, Rec):
        if p.var == var:
            return p
        return Rec(p.var, subst_var(p.body, var, body))
    if isinstance(p, Nil):
        return p
    if isinstance(p, Out):
        return Out(p.subject, p.payload, subst_var(p.cont, var, body), p.aux)
    if isinstance(p, In):
        return In(p.subject, p.binders, subst_var(p.cont, var, body), p.aux)
    if isinstance(p, Select):
        return Select(p.subject, p.label, subst_var(p.cont, var, body))
    if isinstance(p, Branch):
        return Branch(p.subject, tuple((l, subst_var(q, var, body)) for l, q in p.branches))
    if isinstance(p, Par):
        return Par(subst_var(p.left, var, body), subst_var(p.right, var, body))
    if isinstance(p, Res):
        return Res(p.name, p.annot, subst_var(p.cont, var, body))
    if isinstance(p, Repl):
        return Repl(subst_var(p.body, var, body))
    raise SyntaxError_(f"unknown process node {p!r}")


def alpha_eq(p: Process, q: Process) -> bool:
    return _alpha(p, q, {}, {})


def _alpha(p: Process, q: Process, env: dict, venv: dict) -> bool:
    if type(p) is not type(q):
        return False
    if isinstance(p, Nil):
        return True
    if isinstance(p, Var):
        return venv.get(p.var, p.var) == q.var
    if isinstance(p, Out):
        return (
            _alpha_name(p.subject, q.subject, env)
            and len(p.payload) == len(q.payload)
            and all(_alpha_expr(a, b, env) for a, b in zip(p.payload, q.payload))
            and _alpha(p.cont, q.cont, env, venv)
        )
    if isinstance(p, In):
        if not _alpha_name(p.subject, q.subject, env) or len(p.binders) != len(q.binders):
            return False
        inner = dict(env)
        for (a, _), (b, _) in zip(p.binders, q.binders):
            inner[a.plain().channel_key()] = b.plain().channel_key()
        return _alpha(p.cont, q.cont, inner, venv)
    if isinstance(p, Select):
        return (
            p.label == q.label
            and _alpha_name(p.subject, q.subject, env)
            and _alpha(p.cont, q.cont, env, venv)
        )
    if isinstance(p, Branch):
        if not _alpha_name(p.subject, q.subject, env):
            return False
        if [l for l, _ in p.branches] != [l for l, _ in q.branches]:
            return False
        return all(
            _alpha(a, b, env, venv)
            for (_, a), (_, b) in zip(p.branches, q.branches)
        )
    if isinstance(p, Par):
        return _alpha(p.left, q.left, env, venv) and _alpha(p.right, q.right, env, venv)
    if isinstance(p, Res):
        inner = dict(env)
        inner[p.name.plain().channel_key()] = q.name.plain().channel_key()
        return _alpha(p.cont, q.cont, inner, venv)
    if isinstance(p, Rec):
        inner = dict(venv)
        inner[p.var] = q.var
        return _alpha(p.body, q.body, env, inner)
    if isinstance(p, Repl):
        return _alpha(p.body, q.body, env, venv)
    return False


def _alpha_name(a: Name, b: Name, env: dict) -> bool:
    if a.dual != b.dual:
        return False
    ka, kb = a.plain().channel_key(), b.plain().channel_key()
    return env.get(ka, ka) == kb


def _alpha_expr(a: Expr, b: Expr, env: dict) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, NameRef):
        return _alpha_name(a.name, b.name, env)
    if isinstance(a, (IntLit, BoolLit)):
        return a.value == b.value
    if isinstance(a, (Neg, Succ)):
        return _alpha_expr(a.arg, b.arg, env)
    if isinstance(a, Add):
        return _alpha_expr(a.left, b.left, env) and _alpha_expr(a.right, b.right, env)
    return False
