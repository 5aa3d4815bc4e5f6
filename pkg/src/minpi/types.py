"""Session types, duality, and the two translations to minimal form.

A minimal session type spends at most one prefix before ending or looping,
so a standard type is translated to a tuple of minimal ones: the direct
route keeps each payload as is, the staged route wraps every payload in the
fixed five-level shuttle that name-passing over trigger channels costs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union


class TypeError_(Exception):
    """Raised for malformed or out-of-fragment types."""


@dataclass(frozen=True)
class TInt:
    def __str__(self) -> str:
        return "Int"


@dataclass(frozen=True)
class TBool:
    def __str__(self) -> str:
        return "Bool"


@dataclass(frozen=True)
class TEnd:
    def __str__(self) -> str:
        return "end"


@dataclass(frozen=True)
class TVar:
    var: str

    def __str__(self) -> str:
        return self.var


@dataclass(frozen=True)
class TOut:
    payload: tuple
    cont: "Type"

    def __str__(self) -> str:
        items = ", ".join(str(t) for t in self.payload)
        return f"!({items}).{self.cont}"


@dataclass(frozen=True)
class TIn:
    payload: tuple
    cont: "Type"

    def __str__(self) -> str:
        items = ", ".join(str(t) for t in self.payload)
        return f"?({items}).{self.cont}"


@dataclass(frozen=True)
class TSelect:
    branches: tuple  # of (label, Type)

    def __str__(self) -> str:
        items = ", ".join(f"{lab}: {t}" for lab, t in self.branches)
        return f"+{{{items}}}"


@dataclass(frozen=True)
class TBranch:
    branches: tuple

    def __str__(self) -> str:
        items = ", ".join(f"{lab}: {t}" for lab, t in self.branches)
        return f"&{{{items}}}"


@dataclass(frozen=True)
class TRec:
    var: str
    body: "Type"

    def __str__(self) -> str:
        return f"mu {self.var}.{self.body}"


@dataclass(frozen=True)
class TShared:
    items: tuple  # one type in source programs; a tuple once decomposed

    def __str__(self) -> str:
        inner = ", ".join(str(t) for t in self.items)
        return f"<{inner}>"


Type = Union[TInt, TBool, TEnd, TVar, TOut, TIn, TSelect, TBranch, TRec, TShared]

SESSION_HEADS = (TEnd, TVar, TOut, TIn, TSelect, TBranch, TRec)


def is_value_type(t: Type) -> bool:
    return isinstance(t, (TInt, TBool))


def is_session(t: Type) -> bool:
    return isinstance(t, SESSION_HEADS)


# ---------------------------------------------------------------------------
# Basic operations

def dual(t: Type) -> Type:
    """Swap the direction of every action; payloads stay untouched."""
    if isinstance(t, (TEnd, TVar)):
        return t
    if isinstance(t, TOut):
        return TIn(t.payload, dual(t.cont))
    if isinstance(t, TIn):
        return TOut(t.payload, dual(t.cont))
    if isinstance(t, TSelect):
        return TBranch(tuple((lab, dual(s)) for lab, s in t.branches))
    if isinstance(t, TBranch):
        return TSelect(tuple((lab, dual(s)) for lab, s in t.branches))
    if isinstance(t, TRec):
        return TRec(t.var, dual(t.body))
    if isinstance(t, TShared):
        return t
    raise TypeError_(f"no dual for value type {t}")


def unfold(t: Type) -> Type:
    """One unfolding of a recursive type; other types come back unchanged."""
    if isinstance(t, TRec):
        return subst_tvar(t.body, t.var, t)
    return t


def subst_tvar(t: Type, var: str, rep: Type) -> Type:
    if isinstance(t, TVar):
        return rep if t.var == var else t
    if isinstance(t, TRec):
        if t.var == var:
            return t
        return TRec(t.var, subst_tvar(t.body, var, rep))
    if isinstance(t, TOut):
        return TOut(t.payload, subst_tvar(t.cont, var, rep))
    if isinstance(t, TIn):
        return TIn(t.payload, subst_tvar(t.cont, var, rep))
    if isinstance(t, TSelect):
        return TSelect(tuple((lab, subst_tvar(s, var, rep)) for lab, s in t.branches))
    if isinstance(t, TBranch):
        return TBranch(tuple((lab, subst_tvar(s, var, rep)) for lab, s in t.branches))
    return t


def free_tvars(t: Type, bound: frozenset = frozenset()) -> set:
    if isinstance(t, TVar):
        return set() if t.var in bound else {t.var}
    if isinstance(t, TRec):
        return free_tvars(t.body, bound | {t.var})
    if isinstance(t, (TOut, TIn)):
        out = free_tvars(t.cont, bound)
        for p in t.payload:
            out |= free_tvars(p, bound)
        return out
    if isinstance(t, (TSelect, TBranch)):
        out: set = set()
        for _, s in t.branches:
            out |= free_tvars(s, bound)
        return out
    if isinstance(t, TShared):
        out = set()
        for s in t.items:
            out |= free_tvars(s, bound)
        return out
    return set()


def closed(t: Type) -> bool:
    return not free_tvars(t)


def teq(a: Type, b: Type) -> bool:
    """Syntactic equality up to renaming of recursion variables."""
    return _teq(a, b, {})


def _teq(a: Type, b: Type, env: dict) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, (TInt, TBool, TEnd)):
        return True
    if isinstance(a, TVar):
        return env.get(a.var, a.var) == b.var
    if isinstance(a, (TOut, TIn)):
        return (
            len(a.payload) == len(b.payload)
            and all(_teq(x, y, env) for x, y in zip(a.payload, b.payload))
            and _teq(a.cont, b.cont, env)
        )
    if isinstance(a, (TSelect, TBranch)):
        if [l for l, _ in a.branches] != [l for l, _ in b.branches]:
            return False
        return all(_teq(x, y, env) for (_, x), (_, y) in zip(a.branches, b.branches))
    if isinstance(a, TRec):
        inner = dict(env)
        inner[a.var] = b.var
        return _teq(a.body, b.body, inner)
    if isinstance(a, TShared):
        return len(a.items) == len(b.items) and all(
            _teq(x, y, env) for x, y in zip(a.items, b.items)
        )
    return False


# ---------------------------------------------------------------------------
# Recursion shape predicates

def tr(t: Type) -> bool:
    """Tail-recursive: a single loop of plain prefixes back to the binder."""
    if not isinstance(t, TRec):
        return False
    body = t.body
    seen = 0
    while isinstance(body, (TOut, TIn)):
        seen += 1
        body = body.cont
    return seen > 0 and isinstance(body, TVar) and body.var == t.var


def tr_state(t: Type) -> bool:
    """True for a tail-recursive type or a prefix-peeled unfolding of one."""
    while isinstance(t, (TOut, TIn)):
        t = t.cont
    return tr(t)


def lin(t: Type) -> bool:
    """Linear session behaviour: an action type that is not tail recursive."""
    if tr_state(t):
        return False
    return isinstance(t, (TOut, TIn, TSelect, TBranch))


def spine_prefixes(t: Type) -> int:
    """Prefixes and choices along the spine of a non-recursive type."""
    n = 0
    while True:
        if isinstance(t, (TOut, TIn)):
            n += 1
            t = t.cont
        elif isinstance(t, (TSelect, TBranch)):
            return n + 1
        else:
            return n


def validate_source_type(t: Type) -> None:
    """Reject annotations outside the fragment the decompositions cover.

    Recursion must sit at the top of an annotation (or of a shared payload)
    and be tail recursive; mid-spine binders only ever arise internally, as
    the leftover of a partially consumed recursive type.
    """
    if not closed(t):
        raise TypeError_(f"type {t} has free variables")
    _validate(t, top=True)


def _validate(t: Type, top: bool) -> None:
    if isinstance(t, TRec):
        if not top:
            raise TypeError_(f"recursive type {t} not at the top of an annotation")
        if not tr(t):
            raise TypeError_(f"recursive type {t} is not tail recursive")
        return
    if isinstance(t, (TOut, TIn)):
        for p in t.payload:
            _validate(p, top=True)
        _validate(t.cont, top=False)
    elif isinstance(t, (TSelect, TBranch)):
        if not t.branches:
            raise TypeError_("choice type with no branches")
        for _, s in t.branches:
            _validate(s, top=False)
    elif isinstance(t, TShared):
        if len(t.items) != 1:
            raise TypeError_("source shared type must carry exactly one session")
        _validate(t.items[0], top=True)


# ---------------------------------------------------------------------------
# Direct decomposition into minimal types

def decompose_type_opt(t: Type) -> tuple:
    """Split a type into the tuple of minimal types its channel becomes."""
    if is_value_type(t):
        return (t,)
    if isinstance(t, TEnd):
        return (TEnd(),)
    if isinstance(t, TShared):
        return (TShared(_payload_opt(t.items)),)
    if isinstance(t, TRec):
        if not tr(t):
            raise TypeError_(f"cannot decompose non-tail-recursive {t}")
        return _loop_split(t.body, t.var, _payload_opt)
    if isinstance(t, (TOut, TIn)):
        if tr_state(t):
            return _skip_to_loop(t, _payload_opt)
        head = (TOut if isinstance(t, TOut) else TIn)(_payload_opt(t.payload), TEnd())
        if isinstance(t.cont, TEnd):
            return (head,)
        return (head,) + decompose_type_opt(t.cont)
    if isinstance(t, TSelect):
        return (TSelect(tuple(
            (lab, TOut(_tuple_opt(s), TEnd())) for lab, s in t.branches
        )),)
    if isinstance(t, TBranch):
        return (TBranch(tuple(
            (lab, TIn(_tuple_opt(s), TEnd())) for lab, s in t.branches
        )),)
    raise TypeError_(f"cannot decompose {t}")


def _tuple_opt(s: Type) -> tuple:
    return decompose_type_opt(s)


def _payload_opt(payload: tuple) -> tuple:
    out: tuple = ()
    for p in payload:
        out = out + decompose_type_opt(p)
    return out


def _loop_split(body: Type, var: str, pay) -> tuple:
    """One minimal loop per prefix of a tail-recursive body."""
    out: tuple = ()
    t = body
    while isinstance(t, (TOut, TIn)):
        head = TOut if isinstance(t, TOut) else TIn
        out = out + (TRec(var, head(pay(t.payload), TVar(var))),)
        t = t.cont
    if not (isinstance(t, TVar) and t.var == var):
        raise TypeError_(f"loop body ends in {t}, not its own variable")
    return out


def _skip_to_loop(t: Type, pay) -> tuple:
    while isinstance(t, (TOut, TIn)):
        t = t.cont
    if not isinstance(t, TRec):
        raise TypeError_(f"expected a recursive tail, found {t}")
    return _loop_split(t.body, t.var, pay)


# ---------------------------------------------------------------------------
# Staged decomposition into minimal types

def decompose_type_composed(t: Type) -> tuple:
    """Minimal types for the staged route; payloads gain the shuttle wrap."""
    if is_value_type(t):
        return (t,)
    if isinstance(t, TEnd):
        return (TEnd(),)
    if isinstance(t, TRec):
        if not tr(t):
            raise TypeError_(f"cannot decompose non-tail-recursive {t}")
        return _loop_split(t.body, t.var, _wrap_tuple)
    if isinstance(t, (TOut, TIn)):
        if tr_state(t):
            return _skip_to_loop(t, _wrap_tuple)
        head = (TOut if isinstance(t, TOut) else TIn)(_wrap_tuple(t.payload), TEnd())
        if isinstance(t.cont, TEnd):
            return (head,)
        return (head,) + decompose_type_composed(t.cont)
    if isinstance(t, (TSelect, TBranch)):
        raise TypeError_("choice types have no staged decomposition")
    if isinstance(t, TShared):
        raise TypeError_("shared types have no staged decomposition")
    raise TypeError_(f"cannot decompose {t}")


def _wrap_tuple(payload: tuple) -> tuple:
    return (shuttle_wrap(payload),)


def shuttle_wrap(payload: tuple) -> Type:
    """The five-level type a staged payload travels under.

    A sent value is fetched through a shared trigger, a fresh session, and
    one more input before it lands, and the wrap records that protocol:
    <?(?(<?(inner)end>)end)end> around the pointwise translation.
    """
    inner: tuple = ()
    for p in payload:
        if is_value_type(p):
            inner = inner + (p,)
        elif isinstance(p, TShared):
            raise TypeError_("shared payloads have no staged decomposition")
        else:
            inner = inner + decompose_type_composed(p)
    step1 = TIn(inner, TEnd())
    step2 = TShared((step1,))
    step3 = TIn((step2,), TEnd())
    step4 = TIn((step3,), TEnd())
    return TShared((step4,))


# ---------------------------------------------------------------------------
# Environments, indices, degrees, minimality

def decompose_env(gamma: dict, delta: dict, mode: str) -> tuple:
    """Map both typing environments through the chosen decomposition.

    Linear entries u@i : S expand to the run (u@i .. u@{i+n-1}) over the
    minimal tuple of S; shared entries keep their name and wrap pointwise.
    """
    split = _splitter(mode)
    new_delta: dict = {}
    for name, s in delta.items():
        if name.index is None:
            raise TypeError_(f"linear environment entry {name} is not indexed")
        parts = split(s)
        for off, m in enumerate(parts):
            new_delta[name.at(name.index + off)] = m
    new_gamma: dict = {}
    for name, s in gamma.items():
        if isinstance(s, TShared):
            if mode == "composed":
                raise TypeError_("shared entries have no staged decomposition")
            new_gamma[name] = TShared(_payload_opt(s.items))
        else:
            new_gamma[name] = s
    return new_gamma, new_delta


def _splitter(mode: str):
    if mode == "opt":
        return decompose_type_opt
    if mode == "composed":
        return decompose_type_composed
    raise TypeError_(f"unknown mode {mode!r}")


def next_subst(n, s: Type) -> dict:
    """Step an indexed name to its successor when its session is linear."""
    from .syntax import NameRef

    if n.index is None:
        raise TypeError_(f"{n} is not indexed")
    if not lin(s):
        return {}
    key = n.plain()
    return {key: NameRef(key.at(key.index + 1))}


def bname(n, c: Type) -> tuple:
    """The run of indexed names a channel spreads over once decomposed."""
    if n.index is None:
        raise TypeError_(f"{n} is not indexed")
    width = len(decompose_type_opt(c))
    return tuple(n.at(n.index + off) for off in range(width))


def rec_free_names(p, delta: dict) -> set:
    """Free names of p whose declared session type is a loop."""
    from .syntax import free_names

    out = set()
    by_key = {n.plain().channel_key(): t for n, t in delta.items()}
    for n in free_names(p):
        t = by_key.get(n.channel_key())
        if t is None:
            if not n.generated:
                raise TypeError_(f"free name {n} missing from the environment")
            continue
        if tr_state(t):
            out.add(n)
    return out


def index_fn(s: Type, mode: str = "opt") -> int:
    """Which slot of a decomposed loop channel carries the next action.

    Both decompositions keep one minimal loop per prefix of the cycle, so
    the slot arithmetic is shared; `mode` is accepted for symmetry.
    """
    _splitter(mode)
    if isinstance(s, TRec):
        if not tr(s):
            raise TypeError_(f"{s} is not tail recursive")
        return _findex(0, unfold(s))
    if not tr_state(s):
        raise TypeError_(f"{s} is not an unfolding of a tail-recursive type")
    return _findex(0, s)


def _findex(depth: int, t: Type) -> int:
    if isinstance(t, (TOut, TIn)):
        return _findex(depth + 1, t.cont)
    if isinstance(t, TRec):
        cycle = 0
        body = t.body
        while isinstance(body, (TOut, TIn)):
            cycle += 1
            body = body.cont
        return cycle - depth + 1
    raise TypeError_(f"unexpected tail {t} in an unfolded recursive type")


def degree(p, mode: str = "opt") -> int:
    """How many chaining channels the chosen decomposition spends on p."""
    if mode == "opt":
        return _degree_opt(p)
    if mode == "composed":
        return _degree_composed(p)
    raise TypeError_(f"unknown mode {mode!r}")


def _degree_opt(p) -> int:
    from . import syntax as sx

    if isinstance(p, (sx.Nil, sx.Var)):
        return 1
    if isinstance(p, (sx.Out, sx.In, sx.Select)):
        return _degree_opt(p.cont) + 1
    if isinstance(p, sx.Branch):
        # Branch alternatives run on their own locally bound chains, so the
        # shared ladder only pays for the guard itself.
        return 1
    if isinstance(p, sx.Par):
        return _degree_opt(p.left) + _degree_opt(p.right) + 1
    if isinstance(p, sx.Res):
        bump = 1 if (p.annot is not None and tr(p.annot)) else 0
        return _degree_opt(p.cont) + bump
    if isinstance(p, sx.Rec):
        return _degree_opt(p.body) + 1
    raise TypeError_(f"no degree for {type(p).__name__}")


def _degree_composed(p) -> int:
    from . import syntax as sx

    if isinstance(p, sx.Nil):
        return 1
    if isinstance(p, sx.Var):
        return 4
    if isinstance(p, sx.Out):
        return _degree_composed(p.cont) + 3
    if isinstance(p, sx.In):
        return _degree_composed(p.cont) + 5
    if isinstance(p, sx.Par):
        return _degree_composed(p.left) + _degree_composed(p.right) + 1
    if isinstance(p, sx.Res):
        return _degree_composed(p.cont)
    if isinstance(p, sx.Rec):
        return _degree_composed(p.body) + 4
    if isinstance(p, (sx.Select, sx.Branch)):
        raise TypeError_("choice has no staged decomposition")
    raise TypeError_(f"no degree for {type(p).__name__}")


def is_minimal(t: Type) -> bool:
    """At most one prefix, then end or a loop variable."""
    if isinstance(t, (TInt, TBool, TEnd, TVar)):
        return True
    if isinstance(t, (TOut, TIn)):
        return isinstance(t.cont, (TEnd, TVar)) and all(
            is_minimal(p) for p in t.payload
        )
    if isinstance(t, TRec):
        return is_minimal(t.body)
    if isinstance(t, TShared):
        return all(is_minimal(s) for s in t.items)
    if isinstance(t, (TSelect, TBranch)):
        head = TOut if isinstance(t, TSelect) else TIn
        return all(
            isinstance(s, head)
            and isinstance(s.cont, TEnd)
            and all(is_minimal(p) for p in s.payload)
            for _, s in t.branches
        )
    return False
