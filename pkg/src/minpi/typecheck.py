"""Session type checking over shared and linear environments.

The checker is algorithmic: the linear environment flows through the
process, every prefix consumes one action of its subject's type, and
whatever survives comes back as the residual.  Parallel composition
splits the linear environment by who mentions what, so checking needs
no search; a name claimed by both sides or by neither fails instead.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import syntax as sx
from . import types as ty


@dataclass(frozen=True)
class CheckReport:
    ok: bool
    residual_delta: dict
    failures: tuple = ()


class _Fail(Exception):
    def __init__(self, loc: str, rule: str, msg: str):
        super().__init__(f"{rule} at {loc}: {msg}")
        self.loc = loc
        self.rule = rule
        self.msg = msg


def _droppable(t) -> bool:
    return isinstance(t, ty.TEnd)


def typecheck(gamma, delta, p) -> CheckReport:
    """Check p under shared entries gamma and linear entries delta.

    Value-typed entries in delta count as ambient values, not linear
    obligations.  The report is ok when no rule failed and the residual
    holds nothing but end-typed entries.
    """
    g: dict = {}
    vals: dict = {}
    d: dict = {}
    for n, t in (gamma or {}).items():
        g[n.plain()] = t
    for n, t in (delta or {}).items():
        if ty.is_value_type(t):
            vals[n.plain()] = t
        elif isinstance(t, ty.TShared):
            g[n.plain()] = t
        else:
            d[n] = t
    try:
        residual = _check(p, d, g, vals, {}, "top")
    except _Fail as f:
        return CheckReport(False, {}, ((f.loc, f.rule, f.msg),))
    live = [n for n, t in residual.items() if not _droppable(t)]
    if live:
        names = ", ".join(str(n) for n in sorted(live, key=str))
        fail = ("top", "Nil", f"unfinished sessions: {names}")
        return CheckReport(False, residual, (fail,))
    return CheckReport(True, residual, ())


# ---------------------------------------------------------------------------
# The checker proper.  delta is owned by each call and mutated freely;
# gamma, values, and recursion snapshots flow downward only and are
# copied when extended.

def _check(p, delta, gamma, values, snaps, loc) -> dict:
    if isinstance(p, sx.Nil):
        return delta
    if isinstance(p, sx.Out):
        return _check_out(p, delta, gamma, values, snaps, loc)
    if isinstance(p, sx.In):
        return _check_in(p, delta, gamma, values, snaps, loc)
    if isinstance(p, sx.Select):
        return _check_select(p, delta, gamma, values, snaps, loc)
    if isinstance(p, sx.Branch):
        return _check_branch(p, delta, gamma, values, snaps, loc)
    if isinstance(p, sx.Par):
        return _check_par(p, delta, gamma, values, snaps, loc)
    if isinstance(p, sx.Res):
        return _check_res(p, delta, gamma, values, snaps, loc)
    if isinstance(p, sx.Rec):
        snaps2 = dict(snaps)
        snaps2[p.var] = dict(delta)
        _check(p.body, dict(delta), gamma, values, snaps2, f"{loc}.rec {p.var}")
        # The loop owns its snapshot entirely; nothing is left to consume.
        return {}
    if isinstance(p, sx.Var):
        return _check_rvar(p, delta, snaps, loc)
    if isinstance(p, sx.Repl):
        return _check_repl(p, delta, gamma, values, snaps, loc)
    raise _Fail(loc, "Nil", f"unknown process node {type(p).__name__}")


def _head(t):
    return ty.unfold(t) if isinstance(t, ty.TRec) else t


def _check_out(p, delta, gamma, values, snaps, loc):
    here = f"{loc}.{p.subject}!"
    if p.subject in delta:
        s = _head(delta[p.subject])
        if not isinstance(s, ty.TOut):
            raise _Fail(here, "Send", f"{p.subject} : {delta[p.subject]} cannot send")
        if len(p.payload) != len(s.payload):
            raise _Fail(here, "Send", f"sends {len(p.payload)} values, type carries {len(s.payload)}")
        for e, want in zip(p.payload, s.payload):
            _use_payload(e, want, delta, gamma, values, here, "Send")
        delta[p.subject] = s.cont
        return _check(p.cont, delta, gamma, values, snaps, here)
    sh = gamma.get(p.subject.plain())
    if sh is not None:
        if not isinstance(sh, ty.TShared):
            raise _Fail(here, "Req", f"{p.subject} : {sh} is not a channel")
        if len(p.payload) != len(sh.items):
            raise _Fail(here, "Req", f"sends {len(p.payload)} values, type carries {len(sh.items)}")
        for e, want in zip(p.payload, sh.items):
            _use_payload(e, want, delta, gamma, values, here, "Req")
        return _check(p.cont, delta, gamma, values, snaps, here)
    raise _Fail(here, "Send", f"unbound name {p.subject}")


def _check_in(p, delta, gamma, values, snaps, loc):
    here = f"{loc}.{p.subject}?"
    if p.subject in delta:
        s = _head(delta[p.subject])
        if not isinstance(s, ty.TIn):
            raise _Fail(here, "Rcv", f"{p.subject} : {delta[p.subject]} cannot receive")
        if len(p.binders) != len(s.payload):
            raise _Fail(here, "Rcv", f"binds {len(p.binders)} names, type carries {len(s.payload)}")
        delta[p.subject] = s.cont
        gamma, values = _bind(p.binders, s.payload, delta, gamma, values, here, "Rcv")
        return _check(p.cont, delta, gamma, values, snaps, here)
    sh = gamma.get(p.subject.plain())
    if sh is not None:
        if not isinstance(sh, ty.TShared):
            raise _Fail(here, "Acc", f"{p.subject} : {sh} is not a channel")
        if len(p.binders) != len(sh.items):
            raise _Fail(here, "Acc", f"binds {len(p.binders)} names, type carries {len(sh.items)}")
        gamma, values = _bind(p.binders, sh.items, delta, gamma, values, here, "Acc")
        return _check(p.cont, delta, gamma, values, snaps, here)
    raise _Fail(here, "Rcv", f"unbound name {p.subject}")


def _bind(binders, payload, delta, gamma, values, loc, rule):
    """Route received names into the right environment; returns scoped copies."""
    gamma = dict(gamma)
    values = dict(values)
    for (b, ann), want in zip(binders, payload):
        if ann is not None and not ty.teq(ann, want):
            raise _Fail(loc, rule, f"binder {b} annotated {ann}, payload is {want}")
        key = b.plain()
        if ty.is_value_type(want):
            values[key] = want
        elif isinstance(want, ty.TShared):
            gamma[key] = want
        else:
            old = delta.get(key)
            if old is not None and not _droppable(old):
                raise _Fail(loc, rule, f"binder {b} shadows a live session ({old})")
            delta.pop(key, None)
            delta[key] = want
    return gamma, values


def _use_payload(e, want, delta, gamma, values, loc, rule):
    if ty.is_value_type(want):
        got = _type_expr(e, values, loc, rule)
        if not ty.teq(got, want):
            raise _Fail(loc, rule, f"payload {e} : {got}, type carries {want}")
        return
    if not isinstance(e, sx.NameRef):
        raise _Fail(loc, rule, f"payload {e} is not a name, type carries {want}")
    n = e.name
    if isinstance(want, ty.TShared):
        sh = gamma.get(n.plain())
        if sh is None:
            raise _Fail(loc, rule, f"unbound shared name {n}")
        if not ty.teq(sh, want):
            raise _Fail(loc, rule, f"{n} : {sh}, type carries {want}")
        return
    have = delta.pop(n, None)
    if have is None:
        raise _Fail(loc, rule, f"{n} is not available for delegation")
    if not ty.teq(have, want):
        raise _Fail(loc, rule, f"delegates {n} : {have}, type carries {want}")


def _type_expr(e, values, loc, rule):
    if isinstance(e, sx.IntLit):
        return ty.TInt()
    if isinstance(e, sx.BoolLit):
        return ty.TBool()
    if isinstance(e, sx.NameRef):
        got = values.get(e.name.plain())
        if got is None:
            raise _Fail(loc, rule, f"{e.name} is not a base value")
        return got
    if isinstance(e, (sx.Neg, sx.Succ)):
        arg = _type_expr(e.arg, values, loc, rule)
        if not isinstance(arg, ty.TInt):
            op = "neg" if isinstance(e, sx.Neg) else "succ"
            raise _Fail(loc, rule, f"{op} needs Int, got {arg}")
        return ty.TInt()
    if isinstance(e, sx.Add):
        for side in (e.left, e.right):
            if not isinstance(_type_expr(side, values, loc, rule), ty.TInt):
                raise _Fail(loc, rule, f"+ needs Int operands in {e}")
        return ty.TInt()
    raise _Fail(loc, rule, f"unknown expression {e!r}")


def _check_select(p, delta, gamma, values, snaps, loc):
    here = f"{loc}.{p.subject}+{p.label}"
    if p.subject not in delta:
        raise _Fail(here, "Sel", f"unbound name {p.subject}")
    s = _head(delta[p.subject])
    if not isinstance(s, ty.TSelect):
        raise _Fail(here, "Sel", f"{p.subject} : {delta[p.subject]} cannot select")
    for lab, cont in s.branches:
        if lab == p.label:
            delta[p.subject] = cont
            return _check(p.cont, delta, gamma, values, snaps, here)
    raise _Fail(here, "Sel", f"label {p.label} not offered by {delta[p.subject]}")


def _check_branch(p, delta, gamma, values, snaps, loc):
    here = f"{loc}.{p.subject}&"
    if p.subject not in delta:
        raise _Fail(here, "Bra", f"unbound name {p.subject}")
    s = _head(delta[p.subject])
    if not isinstance(s, ty.TBranch):
        raise _Fail(here, "Bra", f"{p.subject} : {delta[p.subject]} cannot branch")
    offered = {lab for lab, _ in p.branches}
    typed = {lab for lab, _ in s.branches}
    if offered != typed:
        raise _Fail(here, "Bra", f"labels {sorted(offered)} do not match type labels {sorted(typed)}")
    conts = dict(s.branches)
    residuals = []
    for lab, body in p.branches:
        d2 = dict(delta)
        d2[p.subject] = conts[lab]
        residuals.append((lab, _check(body, d2, gamma, values, snaps, f"{here}{lab}")))
    # Alternatives are exclusive, so they must agree on what is left over.
    first_lab, first = residuals[0]
    pin = _live_shape(first)
    for lab, r in residuals[1:]:
        if _live_shape(r) != pin:
            raise _Fail(here, "Bra", f"branches {first_lab} and {lab} disagree on leftover sessions")
    return first


def _live_shape(delta) -> tuple:
    return tuple(sorted((str(n), str(t)) for n, t in delta.items() if not _droppable(t)))


def _check_par(p, delta, gamma, values, snaps, loc):
    here = f"{loc}.par"
    left_names = _occurs(p.left, snaps)
    right_names = _occurs(p.right, snaps)
    dl: dict = {}
    dr: dict = {}
    passthrough: dict = {}
    for n, t in delta.items():
        in_l = n in left_names
        in_r = n in right_names
        if in_l and in_r:
            raise _Fail(here, "Par", f"both sides claim linear name {n}")
        if in_l:
            dl[n] = t
        elif in_r:
            dr[n] = t
        elif _droppable(t):
            passthrough[n] = t
        else:
            raise _Fail(here, "Par", f"neither side claims linear name {n}")
    out = _check(p.left, dl, gamma, values, snaps, f"{here}.L")
    out.update(_check(p.right, dr, gamma, values, snaps, f"{here}.R"))
    out.update(passthrough)
    return out


def _check_res(p, delta, gamma, values, snaps, loc):
    here = f"{loc}.(new {p.name})"
    annot = p.annot
    if annot is None:
        raise _Fail(here, "ResS", f"restriction of {p.name} needs a type annotation")
    np = p.name.plain()
    if isinstance(annot, ty.TShared):
        gamma = dict(gamma)
        gamma[np] = annot
        return _check(p.cont, delta, gamma, values, snaps, here)
    if ty.is_value_type(annot):
        raise _Fail(here, "Res", f"cannot restrict {p.name} at value type {annot}")
    for end in (np, np.bar()):
        old = delta.get(end)
        if old is not None and not _droppable(old):
            raise _Fail(here, "ResS", f"{end} shadows a live session ({old})")
        delta.pop(end, None)
    delta[np] = annot
    delta[np.bar()] = ty.dual(annot)
    residual = _check(p.cont, delta, gamma, values, snaps, here)
    for end in (np, np.bar()):
        t = residual.pop(end, None)
        if t is not None and not _droppable(t):
            raise _Fail(here, "ResS", f"{end} finishes at {t}, not end")
    return residual


def _check_rvar(p, delta, snaps, loc):
    here = f"{loc}.{p.var}"
    snap = snaps.get(p.var)
    if snap is None:
        raise _Fail(here, "RVar", f"unbound recursion variable {p.var}")
    for n, t in snap.items():
        cur = delta.get(n)
        if cur is None:
            raise _Fail(here, "RVar", f"{n} was consumed before looping (needs {t})")
        if not ty.teq(cur, t):
            raise _Fail(here, "RVar", f"{n} loops at {cur}, recursion expects {t}")
    for n, t in delta.items():
        if n not in snap and not _droppable(t):
            raise _Fail(here, "RVar", f"{n} : {t} was not present at the recursion point")
    return {}


def _check_repl(p, delta, gamma, values, snaps, loc):
    here = f"{loc}.repl"
    body_names = _occurs(p.body, snaps)
    owned = {n: t for n, t in delta.items() if n in body_names}
    live = [n for n, t in owned.items() if not _droppable(t)]
    if live:
        names = ", ".join(str(n) for n in sorted(live, key=str))
        raise _Fail(here, "Repl", f"replicated body captures linear names: {names}")
    rest = {n: t for n, t in delta.items() if n not in owned}
    out = _check(p.body, owned, gamma, values, snaps, here)
    out.update(rest)
    return out


# ---------------------------------------------------------------------------
# Polarity-significant occurrence check, used to split linear environments.
# A recursion variable stands for its whole loop body, so it claims every
# name in the snapshot taken at its binder.

def _occurs(p, snaps) -> set:
    acc: set = set()
    _occ(p, acc, set(), set(), snaps)
    return acc


def _occ(p, acc, bound, vbound, snaps) -> None:
    if isinstance(p, sx.Nil):
        return
    if isinstance(p, sx.Var):
        if p.var not in vbound:
            for n in snaps.get(p.var, {}):
                if n.plain().channel_key() not in bound:
                    acc.add(n)
        return
    if isinstance(p, sx.Out):
        _occ_note(p.subject, acc, bound)
        for e in p.payload:
            for n in sx.expr_names(e):
                _occ_note(n, acc, bound)
        _occ(p.cont, acc, bound, vbound, snaps)
    elif isinstance(p, sx.In):
        _occ_note(p.subject, acc, bound)
        inner = bound | {b.plain().channel_key() for b, _ in p.binders}
        _occ(p.cont, acc, inner, vbound, snaps)
    elif isinstance(p, sx.Select):
        _occ_note(p.subject, acc, bound)
        _occ(p.cont, acc, bound, vbound, snaps)
    elif isinstance(p, sx.Branch):
        _occ_note(p.subject, acc, bound)
        for _, q in p.branches:
            _occ(q, acc, bound, vbound, snaps)
    elif isinstance(p, sx.Par):
        _occ(p.left, acc, bound, vbound, snaps)
        _occ(p.right, acc, bound, vbound, snaps)
    elif isinstance(p, sx.Res):
        _occ(p.cont, acc, bound | {p.name.plain().channel_key()}, vbound, snaps)
    elif isinstance(p, sx.Rec):
        _occ(p.body, acc, bound, vbound | {p.var}, snaps)
    elif isinstance(p, sx.Repl):
        _occ(p.body, acc, bound, vbound, snaps)


def _occ_note(n, acc, bound) -> None:
    if n.plain().channel_key() not in bound:
        acc.add(n)


# ---------------------------------------------------------------------------
# Session environment balance, reduction, confluence

def env_balanced(delta) -> bool:
    """Every co-located endpoint pair carries dual types."""
    for n, t in delta.items():
        if n.dual:
            continue
        other = delta.get(n.bar())
        if other is not None and not ty.teq(other, ty.dual(t)):
            return False
    return True


def env_reduce(delta) -> dict:
    """Fire the first enabled endpoint pair; identity when none is."""
    for out in _env_steps(delta):
        return out
    return dict(delta)


def _env_steps(delta):
    """All one-step reducts of a session environment."""
    for n in sorted(delta, key=str):
        if n.dual:
            continue
        partner = n.bar()
        if partner not in delta:
            continue
        a = _head(delta[n])
        b = _head(delta[partner])
        for snd, rcv, s_key, r_key in ((a, b, n, partner), (b, a, partner, n)):
            if isinstance(snd, ty.TOut) and isinstance(rcv, ty.TIn):
                if len(snd.payload) == len(rcv.payload) and all(
                    ty.teq(x, y) for x, y in zip(snd.payload, rcv.payload)
                ):
                    out = dict(delta)
                    out[s_key] = snd.cont
                    out[r_key] = rcv.cont
                    yield out
                break
            if isinstance(snd, ty.TSelect) and isinstance(rcv, ty.TBranch):
                offers = dict(rcv.branches)
                for lab, cont in snd.branches:
                    if lab in offers:
                        out = dict(delta)
                        out[s_key] = cont
                        out[r_key] = offers[lab]
                        yield out
                break


def env_confluent(d1, d2, cap: int = 4096) -> bool:
    """True when the two environments reach a common reduct."""
    seen1 = _reachable(d1, cap)
    seen2 = _reachable(d2, cap)
    return bool(seen1 & seen2)


def _reachable(delta, cap: int) -> set:
    start = _env_key(delta)
    seen = {start}
    frontier = [dict(delta)]
    while frontier and len(seen) < cap:
        cur = frontier.pop()
        for nxt in _env_steps(cur):
            key = _env_key(nxt)
            if key not in seen:
                seen.add(key)
                frontier.append(nxt)
    return seen


def _env_key(delta) -> frozenset:
    return frozenset((str(n), str(t)) for n, t in delta.items())


# ---------------------------------------------------------------------------

def check_minimality(gamma, delta) -> bool:
    """Every linear type and every shared payload is a minimal type."""
    for t in (delta or {}).values():
        if not ty.is_minimal(t):
            return False
    for t in (gamma or {}).values():
        if isinstance(t, ty.TShared) and not ty.is_minimal(t):
            return False
    return True
