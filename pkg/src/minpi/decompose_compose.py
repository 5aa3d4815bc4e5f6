"""Staged decomposition: name passing routed through abstraction passing.

The staged route reaches minimal processes in three steps: rewrite every
name-passing prefix into an abstraction-passing one, break the result into
trios, then compile abstractions back to name passing behind fresh trigger
channels.  A sent value therefore travels through a trigger, a fresh
session, and one more input before it lands, and every source prefix pays
a fixed bookkeeping overhead.

`decompose_composed` emits the fused shapes of that composition directly,
one entry per source construct, with recursion handled by a replicated
instance factory and per-channel fetch servers.  `pipeline_composed` runs
the three stages literally; on the recursion-free fragment both routes
agree up to alpha conversion, which the tests pin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from . import syntax as sx
from . import types as ty
from .decompose_opt import DecomposeError, _expand_repl
from .typecheck import typecheck


# ---------------------------------------------------------------------------
# Higher-order process terms.  Abstractions and applications are the only
# additions over the source grammar; variables are trigger-kind names, so
# binders and subjects share one representation with the source syntax.

@dataclass(frozen=True)
class HNil:
    def __str__(self) -> str:
        return "0"


@dataclass(frozen=True)
class HOut:
    subject: sx.Name
    payload: object  # HAbs or a tuple of expressions
    cont: "HOProcess"

    def __str__(self) -> str:
        if isinstance(self.payload, HAbs):
            return f"{self.subject}!({self.payload}).{_hwrap(self.cont)}"
        items = ", ".join(str(e) for e in self.payload)
        return f"{self.subject}!({items}).{_hwrap(self.cont)}"


@dataclass(frozen=True)
class HIn:
    subject: sx.Name
    binders: tuple  # of (Name, Optional[type])
    cont: "HOProcess"

    def __str__(self) -> str:
        items = ", ".join(str(n) for n, _ in self.binders)
        return f"{self.subject}?({items}).{_hwrap(self.cont)}"


@dataclass(frozen=True)
class HApp:
    head: sx.Name
    args: tuple  # of expressions

    def __str__(self) -> str:
        items = ", ".join(str(e) for e in self.args)
        return f"({self.head} {items})"


@dataclass(frozen=True)
class HAbs:
    params: tuple  # of (Name, Optional[type])
    body: "HOProcess"

    def __str__(self) -> str:
        items = ", ".join(str(n) for n, _ in self.params)
        return f"\\({items}).{_hwrap(self.body)}"


@dataclass(frozen=True)
class HPar:
    left: "HOProcess"
    right: "HOProcess"

    def __str__(self) -> str:
        return f"{_hwrap(self.left)} | {_hwrap(self.right)}"


@dataclass(frozen=True)
class HRes:
    name: sx.Name
    annot: Optional[object]
    cont: "HOProcess"

    def __str__(self) -> str:
        ann = f": {self.annot}" if self.annot is not None else ""
        return f"(new {self.name}{ann}) {_hwrap(self.cont)}"


@dataclass(frozen=True)
class HRec:
    var: str
    body: "HOProcess"

    def __str__(self) -> str:
        return f"rec {self.var}.{_hwrap(self.body)}"


@dataclass(frozen=True)
class HVar:
    var: str

    def __str__(self) -> str:
        return self.var


HOProcess = Union[HNil, HOut, HIn, HApp, HPar, HRes, HRec, HVar]


def _hwrap(p) -> str:
    if isinstance(p, HPar):
        return f"({p})"
    return str(p)


def hpar(*parts: HOProcess) -> HOProcess:
    """Right-nested parallel composition over higher-order terms."""
    items = list(parts)
    if not items:
        return HNil()
    out = items[-1]
    for p in reversed(items[:-1]):
        out = HPar(p, out)
    return out


def ho_free_names(p: HOProcess) -> set:
    """Free channel identities of a higher-order term, undualized."""
    acc: set = set()
    _ho_free(p, acc, set())
    return acc


def _ho_free(p, acc: set, bound: set) -> None:
    def note(n: sx.Name) -> None:
        if n.plain().channel_key() not in bound:
            acc.add(n.plain())

    def note_exprs(exprs) -> None:
        for e in exprs:
            for n in sx.expr_names(e):
                note(n)

    if isinstance(p, (HNil, HVar)):
        return
    if isinstance(p, HOut):
        note(p.subject)
        if isinstance(p.payload, HAbs):
            inner = bound | {b.plain().channel_key() for b, _ in p.payload.params}
            _ho_free(p.payload.body, acc, inner)
        else:
            note_exprs(p.payload)
        _ho_free(p.cont, acc, bound)
    elif isinstance(p, HIn):
        note(p.subject)
        inner = bound | {b.plain().channel_key() for b, _ in p.binders}
        _ho_free(p.cont, acc, inner)
    elif isinstance(p, HApp):
        note(p.head)
        note_exprs(p.args)
    elif isinstance(p, HPar):
        _ho_free(p.left, acc, bound)
        _ho_free(p.right, acc, bound)
    elif isinstance(p, HRes):
        _ho_free(p.cont, acc, bound | {p.name.plain().channel_key()})
    elif isinstance(p, HRec):
        _ho_free(p.body, acc, bound)
    else:
        raise DecomposeError(f"unknown higher-order node {p!r}")


def ho_fnb(p: HOProcess, candidates) -> list:
    """Candidates free in p, in candidate order."""
    free = {n.channel_key() for n in ho_free_names(p)}
    return [c for c in candidates if c.plain().channel_key() in free]


def ho_len(p: HOProcess) -> int:
    """Prefix count of a higher-order term; drives the trio slot budget."""
    if isinstance(p, HNil):
        return 1
    if isinstance(p, HOut):
        inner = ho_len(p.payload.body) if isinstance(p.payload, HAbs) else 0
        return 1 + inner + ho_len(p.cont)
    if isinstance(p, HIn):
        return 1 + ho_len(p.cont)
    if isinstance(p, HApp):
        return 1
    if isinstance(p, HPar):
        return 1 + ho_len(p.left) + ho_len(p.right)
    if isinstance(p, HRes):
        return ho_len(p.cont)
    if isinstance(p, HAbs):
        return ho_len(p.body)
    if isinstance(p, (HRec, HVar)):
        raise DecomposeError("recursion nodes have no prefix count here")
    raise DecomposeError(f"unknown higher-order node {p!r}")


def ho_subst(p: HOProcess, mapping) -> HOProcess:
    """Shadow-aware substitution; callers only ever map onto fresh names."""
    if not mapping:
        return p
    if isinstance(p, (HNil, HVar)):
        return p
    if isinstance(p, HOut):
        payload = p.payload
        if isinstance(payload, HAbs):
            inner = _ho_shadow(mapping, [b for b, _ in payload.params])
            payload = HAbs(payload.params, ho_subst(payload.body, inner))
        else:
            payload = tuple(sx.subst_expr(e, mapping) for e in payload)
        return HOut(_ho_name(p.subject, mapping), payload, ho_subst(p.cont, mapping))
    if isinstance(p, HIn):
        inner = _ho_shadow(mapping, [b for b, _ in p.binders])
        return HIn(_ho_name(p.subject, mapping), p.binders, ho_subst(p.cont, inner))
    if isinstance(p, HApp):
        return HApp(
            _ho_name(p.head, mapping),
            tuple(sx.subst_expr(e, mapping) for e in p.args),
        )
    if isinstance(p, HPar):
        return HPar(ho_subst(p.left, mapping), ho_subst(p.right, mapping))
    if isinstance(p, HRes):
        inner = _ho_shadow(mapping, [p.name])
        return HRes(p.name, p.annot, ho_subst(p.cont, inner))
    if isinstance(p, HRec):
        return HRec(p.var, ho_subst(p.body, mapping))
    raise DecomposeError(f"unknown higher-order node {p!r}")


def _ho_shadow(mapping, binders) -> dict:
    keys = {b.plain() for b in binders}
    return {k: v for k, v in mapping.items() if k not in keys}


def _ho_name(n: sx.Name, mapping) -> sx.Name:
    got = sx.subst_expr(sx.NameRef(n), mapping)
    if isinstance(got, sx.NameRef):
        return got.name
    raise DecomposeError(f"subject position needs a name, got {got}")


# ---------------------------------------------------------------------------
# Shared bookkeeping: fresh trigger names, per-channel session tracking, and
# the variables standing in for names inside shared factory values.

class _Fresh:
    def __init__(self) -> None:
        self.n = 0

    def __call__(self, base: str) -> sx.Name:
        self.n += 1
        return sx.trigger(base, self.n)


def _zvar(var: str) -> sx.Name:
    """The trigger a recursion instance holds for calling the next one."""
    return sx.trigger("z" + var, 1)


def _yvar(var: str) -> sx.Name:
    """The factory parameter carrying a fresh call session per instance."""
    return sx.trigger("y" + var, 0)


def _vmap(n: sx.Name) -> sx.Name:
    """Variable standing in for a name inside a shared factory value."""
    tag = ("d" if n.dual else "") + n.base
    return sx.trigger("x" + tag, n.index if n.index is not None else 0)


def _face_key(n: sx.Name) -> tuple:
    return (n.base, n.kind, n.dual)


class _Track:
    """Session state per channel face, keyed by base and polarity.

    Records the not-yet-mimicked part of each session, plus the declared
    type of every loop channel so fetch blocks and serve sessions can be
    rebuilt at any occurrence.
    """

    def __init__(self) -> None:
        self.faces: dict = {}
        self.loops: dict = {}

    def copy(self) -> "_Track":
        tr = _Track()
        tr.faces = dict(self.faces)
        tr.loops = dict(self.loops)
        return tr

    def register(self, n: sx.Name, t) -> None:
        self.faces[_face_key(n)] = t
        if ty.is_session(t) and ty.tr_state(t):
            self.loops[_face_key(n)] = t

    def face(self, n: sx.Name):
        return self.faces.get(_face_key(n))

    def loop_type(self, n: sx.Name):
        return self.loops.get(_face_key(n))

    def is_loop(self, n: sx.Name) -> bool:
        t = self.face(n)
        return t is not None and ty.is_session(t) and ty.tr_state(t)

    def head(self, n: sx.Name, want_out: bool) -> tuple:
        """Payload types of the next action on n; checks the direction."""
        t = self.face(n)
        if t is None:
            raise DecomposeError(f"no session information for {n}")
        head = ty.unfold(t) if isinstance(t, ty.TRec) else t
        need = ty.TOut if want_out else ty.TIn
        if not isinstance(head, need):
            raise DecomposeError(f"{n} : {t} does not fit this prefix")
        return head.payload

    def advance(self, n: sx.Name) -> dict:
        """Consume the head action; returns the successor substitution.

        Unindexed subjects (under the first encoding, which never renames)
        advance their face but have no successor to step to.
        """
        t = self.faces[_face_key(n)]
        head = ty.unfold(t) if isinstance(t, ty.TRec) else t
        self.faces[_face_key(n)] = head.cont
        if ty.tr_state(t) or n.index is None:
            return {}
        return ty.next_subst(n, t)

    def block(self, n: sx.Name) -> tuple:
        """Indexed run a sent channel travels as, with its minimal types."""
        t = self.face(n)
        if t is None:
            raise DecomposeError(f"no session information for {n}")
        if n.index is None:
            raise DecomposeError(f"{n} is not initialized")
        return ty.bname(n, t), ty.decompose_type_composed(t)

    def bind(self, n: sx.Name, want) -> tuple:
        """Expand a received binder into its indexed run and register it."""
        base = n.plain()
        if ty.is_session(want):
            if isinstance(want, ty.TShared):
                raise DecomposeError("shared payloads have no staged decomposition")
            parts = ty.decompose_type_composed(want)
            run = tuple(base.at(m + 1) for m in range(len(parts)))
            self.register(base, want)
        else:
            run = (base.at(1),)
        return run, {base: sx.NameRef(base.at(1))}


def _init_track(delta) -> _Track:
    track = _Track()
    for n, t in (delta or {}).items():
        track.register(n, t)
    return track


def _shuttle_parts(payload_types: tuple) -> tuple:
    """The five session layers a staged payload travels under, outermost
    first: trigger, handed session, redirect, inner trigger, delivery."""
    W = ty.shuttle_wrap(payload_types)
    S_a = W.items[0]
    S_x = S_a.payload[0]
    H_b = S_x.payload[0]
    S_w = H_b.items[0]
    return W, S_a, S_x, H_b, S_w


def _single(parts, what: str):
    if len(parts) != 1:
        raise DecomposeError(f"staged {what} prefixes carry exactly one value")
    return parts[0]


# ---------------------------------------------------------------------------
# First stage: name passing into abstraction passing.

@dataclass
class EncodingContext:
    """State threaded by the first encoding: the free-name tuple recorded
    for each recursion variable, the binders the auxiliary map must leave
    alone, and a fresh-name counter."""

    g: dict = field(default_factory=dict)
    sigma: frozenset = frozenset()
    fresh: int = 0

    def fresh_name(self, base: str) -> sx.Name:
        self.fresh += 1
        return sx.trigger(base, self.fresh)


def auxmap(p: HOProcess, sigma) -> HOProcess:
    """Close a value body over its free source names, variable for name.

    Trigger-kind names are already variables and stay put; `sigma` lists
    binders that must survive as themselves.
    """
    keep = {n.plain().channel_key() for n in sigma}
    mapping: dict = {}
    for n in ho_free_names(p):
        if n.kind != sx.SOURCE or n.channel_key() in keep:
            continue
        mapping[n] = sx.NameRef(_vmap(n))
    return ho_subst(p, mapping)


def encode_pi_to_ho(p: sx.Process, ctx: Optional[EncodingContext] = None,
                    track: Optional[_Track] = None) -> HOProcess:
    """Rewrite name passing into abstraction passing.

    Output prefixes send a small shuttle value, inputs apply the received
    value to a fresh session carrying the continuation, and recursion
    becomes a shared duplicator value fetched once per call.  With a
    session `track` the binder of each sent continuation is stamped with
    its payload type, which the trio stage needs for block widths.
    """
    if ctx is None:
        ctx = EncodingContext()
    return _enc(p, ctx, track, dict(ctx.g))


def _enc(p, ctx: EncodingContext, track, g: dict) -> HOProcess:
    if isinstance(p, sx.Nil):
        return HNil()
    if isinstance(p, sx.Out):
        w = _single(p.payload, "output")
        if track is not None:
            track.head(p.subject, want_out=True)
            track.advance(p.subject)
        z = ctx.fresh_name("z")
        x = ctx.fresh_name("x")
        value = HAbs(((z, None),), HIn(z, ((x, None),), HApp(x, (w,))))
        return HOut(p.subject, value, _enc(p.cont, ctx, track, g))
    if isinstance(p, sx.In):
        binder, want = _single(p.binders, "input")
        if track is not None:
            want = _single(track.head(p.subject, want_out=False), "input")
            track.advance(p.subject)
            if ty.is_session(want):
                track.register(binder.plain(), want)
        y = ctx.fresh_name("y")
        s = ctx.fresh_name("s")
        value = HAbs(((binder.plain(), want),), _enc(p.cont, ctx, track, g))
        return HIn(p.subject, ((y, None),), HRes(s, None, HPar(
            HApp(y, (sx.NameRef(s),)),
            HOut(s.bar(), value, HNil()),
        )))
    if isinstance(p, sx.Par):
        return HPar(_enc(p.left, ctx, track, g), _enc(p.right, ctx, track, g))
    if isinstance(p, sx.Res):
        if track is not None and p.annot is not None:
            track.register(p.name.plain(), p.annot)
            track.register(p.name.plain().bar(), ty.dual(p.annot))
        return HRes(p.name, p.annot, _enc(p.cont, ctx, track, g))
    if isinstance(p, sx.Rec):
        blocks: tuple = ()
        for n in sx.fn_sorted(p.body):
            if track is not None and track.face(n) is not None \
                    and ty.is_session(track.face(n)):
                run, _ = track.block(n)
                blocks += run
            else:
                blocks += (n,)
        g2 = dict(g)
        g2[p.var] = blocks
        zx = _zvar(p.var)
        y = ctx.fresh_name("y")
        s = ctx.fresh_name("s")
        snap = track.copy() if track is not None else None
        body_dup = _enc(p.body, ctx, snap, g2)
        body_main = _enc(p.body, ctx, track, g2)
        params = tuple((_vmap(n), None) for n in blocks) + ((y, None),)
        dup = HAbs(params, HIn(y, ((zx, None),), auxmap(body_dup, ctx.sigma)))
        return HRes(s, None, HPar(
            HOut(s.bar(), dup, HNil()),
            HIn(s, ((zx, None),), body_main),
        ))
    if isinstance(p, sx.Var):
        blocks = g.get(p.var)
        if blocks is None:
            raise DecomposeError(f"recursion variable {p.var} outside its loop")
        zx = _zvar(p.var)
        s = ctx.fresh_name("s")
        args = tuple(sx.NameRef(n) for n in blocks) + (sx.NameRef(s),)
        return HRes(s, None, HPar(
            HApp(zx, args),
            HOut(s.bar(), (sx.NameRef(zx),), HNil()),
        ))
    if isinstance(p, sx.Repl):
        return _enc(_expand_repl(p), ctx, track, g)
    if isinstance(p, (sx.Select, sx.Branch)):
        raise DecomposeError("choice has no staged decomposition")
    raise DecomposeError(f"cannot encode {type(p).__name__}")


# ---------------------------------------------------------------------------
# Last stage: abstraction passing back into name passing.

class _Dec:
    def __init__(self) -> None:
        self.fresh = _Fresh()

    def run(self, p: HOProcess) -> sx.Process:
        if isinstance(p, HNil):
            return sx.Nil()
        if isinstance(p, HOut):
            if isinstance(p.payload, HAbs):
                return self._out_value(p)
            return sx.Out(p.subject, p.payload, self.run(p.cont))
        if isinstance(p, HIn):
            binders = tuple((b, None) for b, _ in p.binders)
            return sx.In(p.subject, binders, self.run(p.cont))
        if isinstance(p, HApp):
            s = self.fresh("s")
            return sx.Res(s, None, sx.Out(
                p.head, (sx.NameRef(s),),
                sx.Out(s.bar(), p.args, sx.Nil()),
            ))
        if isinstance(p, HPar):
            return sx.Par(self.run(p.left), self.run(p.right))
        if isinstance(p, HRes):
            return sx.Res(p.name, p.annot, self.run(p.cont))
        if isinstance(p, HRec):
            return sx.Rec(p.var, self.run(p.body))
        if isinstance(p, HVar):
            return sx.Var(p.var)
        raise DecomposeError(f"unknown higher-order node {p!r}")

    def _out_value(self, p: HOut) -> sx.Process:
        value = p.payload
        a = self.fresh("a")
        y = self.fresh("y")
        binders = tuple((b, None) for b, _ in value.params)
        server: sx.Process = sx.In(a, ((y, None),), sx.In(
            y, binders, self.run(value.body),
        ))
        keys = {b.plain().channel_key() for b, _ in value.params}
        if all(n.channel_key() in keys for n in ho_free_names(value.body)):
            server = sx.Repl(server)
        return sx.Res(a, None, sx.Out(
            p.subject, (sx.NameRef(a),),
            sx.Par(self.run(p.cont), server),
        ))


def encode_ho_to_pi(p: HOProcess) -> sx.Process:
    """Compile abstraction passing away.

    A sent abstraction becomes a fresh trigger whose server runs the body,
    replicated only when the abstraction is closed; an application becomes
    a handshake over a fresh session.
    """
    return _Dec().run(p)


# ---------------------------------------------------------------------------
# Middle stage: trios for higher-order terms.

class _HoEmitter:
    def __init__(self, track: Optional[_Track], fresh: Optional[_Fresh] = None):
        self.track = track if track is not None else _Track()
        self.fresh = fresh if fresh is not None else _Fresh()

    def chan(self, k: int) -> sx.Name:
        return sx.prop(k)

    def lead(self, k: int, ctx: tuple, cont: HOProcess) -> HOProcess:
        return HIn(self.chan(k), tuple((x, None) for x in ctx), cont)

    def kick(self, k: int, names, cont: HOProcess) -> HOProcess:
        return HOut(self.chan(k).bar(), tuple(sx.NameRef(n) for n in names), cont)

    def subject_step(self, subject: sx.Name, want_out: bool) -> dict:
        """Advance the subject's session when it is tracked; loop subjects
        have no place in this stage."""
        if self.track.face(subject) is None:
            return {}
        if self.track.is_loop(subject):
            raise DecomposeError(f"loop channel {subject} has no trio image here")
        self.track.head(subject, want_out)
        return self.track.advance(subject)

    def expand_args(self, args: tuple) -> tuple:
        out: tuple = ()
        for e in args:
            if isinstance(e, sx.NameRef) and self.track.face(e.name) is not None \
                    and ty.is_session(self.track.face(e.name)):
                run, _ = self.track.block(e.name)
                out += tuple(sx.NameRef(n) for n in run)
            else:
                out += (e,)
        return out

    def go(self, k: int, ctx: tuple, p: HOProcess) -> list:
        if isinstance(p, HNil):
            return [self.lead(k, ctx, HNil())]
        if isinstance(p, HIn):
            return self._go_in(k, ctx, p)
        if isinstance(p, HOut):
            return self._go_out(k, ctx, p)
        if isinstance(p, HApp):
            return self._go_app(k, ctx, p)
        if isinstance(p, HPar):
            return self._go_par(k, ctx, p)
        if isinstance(p, HRes):
            return self._go_res(k, ctx, p)
        if isinstance(p, (HRec, HVar)):
            raise DecomposeError("recursion node encountered in the trio stage")
        raise DecomposeError(f"cannot break down {type(p).__name__}")

    def _go_in(self, k: int, ctx: tuple, p: HIn) -> list:
        binder, _ = _single(p.binders, "input")
        sigma = self.subject_step(p.subject, want_out=False)
        cont = ho_subst(p.cont, sigma)
        ctx2 = tuple(ho_fnb(cont, ctx)) + (binder,)
        trio = self.lead(k, ctx, HIn(
            p.subject, p.binders, self.kick(k + 1, ctx2, HNil()),
        ))
        return [trio] + self.go(k + 1, ctx2, cont)

    def _go_out(self, k: int, ctx: tuple, p: HOut) -> list:
        value = p.payload
        if not isinstance(value, HAbs):
            raise DecomposeError("name-passing output has no trio image")
        sigma = self.subject_step(p.subject, want_out=True)
        cont = ho_subst(p.cont, sigma)
        ctx2 = tuple(ho_fnb(cont, ctx))
        shuttle = self._shuttle_shape(value)
        if shuttle is not None:
            z1 = self.fresh("z")
            x1 = self.fresh("x")
            forward = HAbs(((z1, None),), self.kick(k + 1, (z1,), HNil()))
            trio = self.lead(k, ctx, HOut(
                p.subject, forward, self.kick(k + 3, ctx2, HNil()),
            ))
            t1 = self.lead(k + 1, (z1,), HIn(
                z1, ((x1, None),), self.kick(k + 2, (x1,), HNil()),
            ))
            t2 = self.lead(k + 2, (x1,), HApp(x1, self.expand_args(shuttle)))
            return [trio] + self.go(k + 3, ctx2, cont) + [t1, t2]
        hat, l = self._value(k + 1, ctx, value)
        trio = self.lead(k, ctx, HOut(
            p.subject, hat, self.kick(k + l + 1, ctx2, HNil()),
        ))
        return [trio] + self.go(k + l + 1, ctx2, cont)

    @staticmethod
    def _shuttle_shape(value: HAbs):
        """Match the output image \\z. z?(x).(x w); returns the payload."""
        if len(value.params) != 1:
            return None
        (z, _), body = value.params[0], value.body
        if not isinstance(body, HIn) or body.subject != z or len(body.binders) != 1:
            return None
        (x, _), app = body.binders[0], body.cont
        if isinstance(app, HApp) and app.head == x:
            return app.args
        return None

    def _value(self, k: int, ctx: tuple, value: HAbs) -> tuple:
        """Trio image of a sent abstraction: the body chained from slot k
        under the expanded binder block."""
        binders: tuple = ()
        sigma: dict = {}
        for b, want in value.params:
            if want is None:
                raise DecomposeError(f"value binder {b} carries no session information")
            run, step = self.track.bind(b, want)
            binders += run
            sigma.update(step)
        body = ho_subst(value.body, sigma)
        bctx = tuple(ho_fnb(body, ctx))
        comps = [self.kick(k, bctx, HNil())] + self.go(k, bctx, body)
        return HAbs(tuple((b, None) for b in binders), hpar(*comps)), ho_len(value)

    def _go_app(self, k: int, ctx: tuple, p: HApp) -> list:
        if self.track.is_loop(p.head):
            raise DecomposeError(f"loop channel {p.head} has no trio image here")
        return [self.lead(k, ctx, HApp(p.head, self.expand_args(p.args)))]

    def _go_par(self, k: int, ctx: tuple, p: HPar) -> list:
        left_ctx = tuple(ho_fnb(p.left, ctx))
        right_ctx = tuple(ho_fnb(p.right, ctx))
        l = ho_len(p.left)
        trio = self.lead(k, ctx, self.kick(
            k + 1, left_ctx, self.kick(k + 1 + l, right_ctx, HNil()),
        ))
        return [trio] + self.go(k + 1, left_ctx, p.left) + \
            self.go(k + 1 + l, right_ctx, p.right)

    def _go_res(self, k: int, ctx: tuple, p: HRes) -> list:
        if p.annot is None:
            # fresh handshake sessions stay width one and unindexed
            return [HRes(p.name, None, hpar(*self.go(k, ctx, p.cont)))]
        base = p.name.plain()
        parts = ty.decompose_type_composed(p.annot)
        self.track.register(base, p.annot)
        self.track.register(base.bar(), ty.dual(p.annot))
        run = tuple(base.at(m + 1) for m in range(len(parts)))
        cont = ho_subst(p.cont, {base: sx.NameRef(base.at(1))})
        out = hpar(*self.go(k, ctx, cont))
        for n, t in reversed(list(zip(run, parts))):
            out = HRes(n, t, out)
        return [out]


def breakdown_ho(k: int, xtilde, p: HOProcess,
                 track: Optional[_Track] = None,
                 fresh: Optional[_Fresh] = None) -> HOProcess:
    """Chain a higher-order term into trios starting at slot k."""
    em = _HoEmitter(track, fresh)
    return hpar(*em.go(k, tuple(xtilde), p))


# ---------------------------------------------------------------------------
# The fused route, one entry per source construct.

class _CompEmitter:
    def __init__(self, track: _Track, fresh: _Fresh):
        self.track = track
        self.fresh = fresh
        self.alloc: dict = {}

    def chan(self, k: int) -> sx.Name:
        return sx.prop(k)

    def note(self, k: int, types) -> None:
        if k in self.alloc:
            raise DecomposeError(f"chaining slot {k} allocated twice")
        if types is None or any(t is None for t in types):
            self.alloc[k] = None
        else:
            self.alloc[k] = ty.TIn(tuple(types), ty.TEnd())

    def shadow(self, k: int) -> None:
        if k in self.alloc:
            raise DecomposeError(f"chaining slot {k} allocated twice")
        self.alloc[k] = ty.TEnd()

    def lead(self, k: int, ctx: tuple, types, cont: sx.Process) -> sx.Process:
        self.note(k, types)
        return sx.In(self.chan(k), tuple((x, None) for x in ctx), cont)

    def kick(self, k: int, names, cont: sx.Process) -> sx.Process:
        payload = tuple(sx.NameRef(n) for n in names)
        return sx.Out(self.chan(k).bar(), payload, cont)

    @staticmethod
    def ctx_types(ctx: tuple, extra=()) -> list:
        # context entries are instance triggers, typed only dynamically
        return [None for _ in ctx] + list(extra)

    @staticmethod
    def keep(cont: sx.Process, ctx: tuple) -> tuple:
        """Context entries the continuation still needs.  An instance
        trigger stays live as long as its recursion variable occurs."""
        mentioned = {m.channel_key() for m in sx.fnb(cont, ctx)}
        zkeys = {_zvar(v).channel_key() for v in sx.free_vars(cont)}
        return tuple(c for c in ctx
                     if c.plain().channel_key() in mentioned
                     or c.plain().channel_key() in zkeys)

    def emit(self, k: int, ctx: tuple, p: sx.Process, g: dict) -> list:
        if isinstance(p, sx.Nil):
            return [self.lead(k, ctx, self.ctx_types(ctx), sx.Nil())]
        if isinstance(p, sx.Out):
            if self.track.is_loop(p.subject):
                return self._rec_out(k, ctx, p, g)
            return self._out(k, ctx, p, g)
        if isinstance(p, sx.In):
            if self.track.is_loop(p.subject):
                return self._rec_in(k, ctx, p, g)
            return self._in(k, ctx, p, g)
        if isinstance(p, sx.Par):
            return self._par(k, ctx, p, g)
        if isinstance(p, sx.Res):
            return self._res(k, ctx, p, g)
        if isinstance(p, sx.Rec):
            return self._rec(k, ctx, p, g)
        if isinstance(p, sx.Var):
            return self._var(k, ctx, p, g)
        if isinstance(p, sx.Repl):
            return self.emit(k, ctx, _expand_repl(p), g)
        if isinstance(p, (sx.Select, sx.Branch)):
            raise DecomposeError("choice is unsupported on the staged route")
        raise DecomposeError(f"cannot break down {type(p).__name__}")

    # -- one-shot communication --------------------------------------------

    def _payload_block(self, e) -> tuple:
        """Spread a sent channel over its indexed run; values ride alone."""
        if isinstance(e, sx.NameRef) and self.track.face(e.name) is not None \
                and ty.is_session(self.track.face(e.name)):
            run, _ = self.track.block(e.name)
            return tuple(sx.NameRef(n) for n in run)
        return (e,)

    def _out(self, k: int, ctx: tuple, p: sx.Out, g: dict) -> list:
        w = _single(p.payload, "output")
        want = _single(self.track.head(p.subject, want_out=True), "output")
        W, S_a, S_x, H_b, S_w = _shuttle_parts((want,))
        payload = self._payload_block(w)
        sigma = self.track.advance(p.subject)
        cont = sx.subst(p.cont, sigma)
        ctx2 = self.keep(cont, ctx)
        a = self.fresh("a")
        y = self.fresh("y")
        z1 = self.fresh("z")
        x1 = self.fresh("x")
        s = self.fresh("s")
        lead = self.lead(k, ctx, self.ctx_types(ctx), sx.Res(a, W, sx.Out(
            p.subject, (sx.NameRef(a),),
            sx.Par(
                self.kick(k + 3, ctx2, sx.Nil()),
                sx.In(a, ((y, None),), sx.In(
                    y, ((z1, None),), self.kick(k + 1, (z1,), sx.Nil()),
                )),
            ),
        )))
        t1 = self.lead(k + 1, (z1,), [S_x], sx.In(
            z1, ((x1, None),), self.kick(k + 2, (x1,), sx.Nil()),
        ))
        t2 = self.lead(k + 2, (x1,), [H_b], sx.Res(s, S_w, sx.Out(
            x1, (sx.NameRef(s),),
            sx.Out(s.bar(), payload, sx.Nil()),
        )))
        return [lead] + self.emit(k + 3, ctx2, cont, g) + [t1, t2]

    def _in(self, k: int, ctx: tuple, p: sx.In, g: dict) -> list:
        binder, _ = _single(p.binders, "input")
        want = _single(self.track.head(p.subject, want_out=False), "input")
        W, S_a, S_x, H_b, S_w = _shuttle_parts((want,))
        l = ty.degree(p.cont, "composed")
        sigma = dict(self.track.advance(p.subject))
        run, step = self.track.bind(binder, want)
        sigma.update(step)
        cont = sx.subst(p.cont, sigma)
        ctx2 = self.keep(cont, ctx)
        a2 = self.fresh("a")
        y = self.fresh("y")
        y2 = self.fresh("y")
        s = self.fresh("s")
        s1 = self.fresh("s")
        lead = self.lead(k, ctx, self.ctx_types(ctx), sx.In(
            p.subject, ((y, None),),
            self.kick(k + 1, ctx2 + (y,), sx.Nil()),
        ))
        mach1 = self.lead(k + 1, ctx2 + (y,), self.ctx_types(ctx2, [W]), self.kick(
            k + 2, (y,), self.kick(k + 3, ctx2, sx.Nil()),
        ))
        mach2 = self.lead(k + 2, (y,), [W], sx.Res(s, S_a, sx.Out(
            y, (sx.NameRef(s),),
            sx.Out(s.bar(), (sx.NameRef(s1),), sx.Nil()),
        )))
        inner = [self.kick(k + 4, ctx2, sx.Nil())] + self.emit(k + 4, ctx2, cont, g)
        mach3 = self.lead(k + 3, ctx2, self.ctx_types(ctx2), sx.Res(a2, H_b, sx.Out(
            s1.bar(), (sx.NameRef(a2),),
            sx.Par(
                self.kick(k + l + 4, (), sx.Nil()),
                sx.In(a2, ((y2, None),), sx.In(
                    y2, tuple((b, None) for b in run), sx.par(*inner),
                )),
            ),
        )))
        pair = self.lead(k + l + 4, (), (), sx.Nil())
        return [lead, sx.Res(s1, S_x, sx.par(mach1, mach2, mach3, pair))]

    def _par(self, k: int, ctx: tuple, p: sx.Par, g: dict) -> list:
        left_ctx = self.keep(p.left, ctx)
        right_ctx = self.keep(p.right, ctx)
        l = ty.degree(p.left, "composed")
        trio = self.lead(k, ctx, self.ctx_types(ctx), self.kick(
            k + 1, left_ctx, self.kick(k + 1 + l, right_ctx, sx.Nil()),
        ))
        return [trio] + self.emit(k + 1, left_ctx, p.left, g) + \
            self.emit(k + 1 + l, right_ctx, p.right, g)

    def _res(self, k: int, ctx: tuple, p: sx.Res, g: dict) -> list:
        if p.annot is None:
            raise DecomposeError(f"restriction of {p.name} needs an annotation")
        base = p.name.plain()
        parts = ty.decompose_type_composed(p.annot)
        self.track.register(base, p.annot)
        self.track.register(base.bar(), ty.dual(p.annot))
        run = tuple(base.at(m + 1) for m in range(len(parts)))
        cont = sx.subst(p.cont, {base: sx.NameRef(base.at(1))})
        body = sx.par(*self.emit(k, ctx, cont, g))
        return [sx.res(zip(run, parts), body)]

    # -- recursion ---------------------------------------------------------

    def _serve_types(self, n: sx.Name) -> tuple:
        t = self.track.loop_type(n)
        if t is None:
            raise DecomposeError(f"no loop declared for {n}")
        parts = ty.decompose_type_composed(t)
        serve = ty.TIn(parts, ty.TEnd())
        return parts, serve, ty.TShared((serve,))

    def _fetch_name(self, n: sx.Name) -> sx.Name:
        return sx.prop_recname(n.base, n.dual)

    def _reserve_names(self, r: sx.Name, names: tuple) -> sx.Process:
        """Serve the next fetch of r's block from the given names."""
        _, serve, _ = self._serve_types(r)
        b = self.fresh("b")
        s2 = self.fresh("s")
        return sx.In(self._fetch_name(r), ((b, None),), sx.Res(
            s2, serve, sx.Out(b, (sx.NameRef(s2),), sx.Out(
                s2.bar(), tuple(sx.NameRef(m) for m in names), sx.Nil(),
            )),
        ))

    def _rec_out(self, k: int, ctx: tuple, p: sx.Out, g: dict) -> list:
        r = p.subject
        w = _single(p.payload, "output")
        want = _single(self.track.head(r, want_out=True), "output")
        W, S_a, S_x, H_b, S_w = _shuttle_parts((want,))
        parts, serve, trig = self._serve_types(r)
        slot = ty.index_fn(self.track.face(r), "composed")
        payload = self._payload_block(w)
        self.track.advance(r)
        kept = self.keep(p.cont, ctx)
        a1 = self.fresh("a")
        a2 = self.fresh("a")
        y1 = self.fresh("y")
        y2 = self.fresh("y")
        z1 = self.fresh("z")
        x1 = self.fresh("x")
        s = self.fresh("s")
        zs = tuple(self.fresh("z") for _ in parts)
        self.shadow(k + 1)
        self.shadow(k + 2)
        machinery = sx.res(
            [(self.chan(k + 1), ty.TIn((), ty.TEnd())),
             (self.chan(k + 2), ty.TIn((H_b,), ty.TEnd()))],
            sx.par(
                self.kick(k + 1, (), sx.Nil()),
                sx.In(self.chan(k + 1), (), sx.In(
                    z1, ((x1, None),), self.kick(k + 2, (x1,), sx.Nil()),
                )),
                sx.In(self.chan(k + 2), ((x1, None),), sx.Res(s, S_w, sx.Out(
                    x1, (sx.NameRef(s),),
                    sx.Out(s.bar(), payload, sx.Nil()),
                ))),
            ),
        )
        work = sx.Res(a2, W, sx.Out(
            zs[slot - 1], (sx.NameRef(a2),),
            sx.Par(
                self.kick(k + 3, kept, self._reserve_names(r, zs)),
                sx.In(a2, ((y2, None),), sx.In(y2, ((z1, None),), machinery)),
            ),
        ))
        lead = self.lead(k, ctx, self.ctx_types(ctx), sx.Res(a1, trig, sx.Out(
            self._fetch_name(r).bar(), (sx.NameRef(a1),),
            sx.Par(
                sx.par(*self.emit(k + 3, kept, p.cont, g)),
                sx.In(a1, ((y1, None),), sx.In(
                    y1, tuple((z, None) for z in zs), work,
                )),
            ),
        )))
        return [lead]

    def _rec_in(self, k: int, ctx: tuple, p: sx.In, g: dict) -> list:
        r = p.subject
        binder, _ = _single(p.binders, "input")
        want = _single(self.track.head(r, want_out=False), "input")
        W, S_a, S_x, H_b, S_w = _shuttle_parts((want,))
        parts, serve, trig = self._serve_types(r)
        slot = ty.index_fn(self.track.face(r), "composed")
        l = ty.degree(p.cont, "composed")
        self.track.advance(r)
        run, step = self.track.bind(binder, want)
        cont = sx.subst(p.cont, step)
        kept = self.keep(cont, ctx)
        a1 = self.fresh("a")
        a2 = self.fresh("a")
        y1 = self.fresh("y")
        y2 = self.fresh("y")
        y3 = self.fresh("y")
        s = self.fresh("s")
        s1 = self.fresh("s")
        zs = tuple(self.fresh("z") for _ in parts)
        saved = self.alloc
        self.alloc = {}
        inner = [self.kick(k + 4, kept, sx.Nil())] + self.emit(k + 4, kept, cont, g)
        local = self.alloc
        self.alloc = saved
        pairs = [(self.chan(j), local.get(j)) for j in range(k + 4, k + l + 4)]
        for j in range(k + 4, k + l + 4):
            self.shadow(j)
        mach1 = self.lead(k + 1, (y3,), [W], self.kick(
            k + 2, (y3,), self.kick(k + 3, (), sx.Nil()),
        ))
        mach2 = self.lead(k + 2, (y3,), [W], sx.Res(s, S_a, sx.Out(
            y3, (sx.NameRef(s),),
            sx.Out(s.bar(), (sx.NameRef(s1),), sx.Nil()),
        )))
        mach3 = self.lead(k + 3, (), (), sx.Res(a2, H_b, sx.Out(
            s1.bar(), (sx.NameRef(a2),),
            sx.Par(
                self.kick(k + l + 4, (), sx.Nil()),
                sx.par(
                    self.lead(k + l + 4, (), (), sx.Nil()),
                    sx.In(a2, ((y2, None),), sx.In(
                        y2, tuple((n, None) for n in run),
                        sx.res(pairs, sx.par(*inner)),
                    )),
                ),
            ),
        )))
        listener = sx.In(a1, ((y1, None),), sx.In(
            y1, tuple((z, None) for z in zs),
            sx.In(zs[slot - 1], ((y3, None),),
                  self.kick(k + 1, (y3,), self._reserve_names(r, zs))),
        ))
        lead = self.lead(k, ctx, self.ctx_types(ctx), sx.Res(a1, trig, sx.Out(
            self._fetch_name(r).bar(), (sx.NameRef(a1),),
            sx.Par(
                sx.Res(s1, S_x, sx.par(mach1, mach2, mach3)),
                listener,
            ),
        )))
        return [lead]

    def _rec(self, k: int, ctx: tuple, p: sx.Rec, g: dict) -> list:
        if ctx:
            raise DecomposeError(
                "recursion under a prefix is outside the staged fragment")
        groups = []
        blocks: tuple = ()
        for n in sx.fn_sorted(p.body):
            if not self.track.is_loop(n):
                raise DecomposeError(
                    f"free name {n} of a recursion body is not loop-typed")
            run, _ = self.track.block(n)
            groups.append((n, run))
            blocks += run
        g2 = dict(g)
        g2[p.var] = tuple(groups)
        zx = _zvar(p.var)
        y1 = _yvar(p.var)
        a1 = self.fresh("a")
        yf = self.fresh("y")
        s1 = self.fresh("s")
        snap = self.track.copy()
        control = self.lead(k, (), (), self.kick(
            k + 1, (), self.kick(k + 3, (), sx.Nil()),
        ))
        self.note(k + 2, ())
        self.note(k + 3, ())
        body = self.emit(k + 4, (zx,), p.body, g2)
        factory = sx.Repl(sx.In(a1, ((yf, None),), sx.In(
            yf, tuple((_vmap(n), None) for n in blocks) + ((y1, None),),
            self._instance(p, g2, snap),
        )))
        spawn = self.lead(k + 1, (), (), sx.Res(a1, None, sx.Out(
            s1.bar(), (sx.NameRef(a1),),
            sx.par(
                self.kick(k + 2, (), sx.Nil()),
                sx.In(self.chan(k + 2), (), sx.Nil()),
                sx.In(self.chan(k + 3), (), sx.In(
                    s1, ((zx, None),), self.kick(k + 4, (zx,), sx.Nil()),
                )),
                sx.par(*body),
                factory,
            ),
        )))
        return [sx.Res(s1, None, sx.Par(control, spawn))]

    def _instance(self, p: sx.Rec, g: dict, snap: _Track) -> sx.Process:
        """One further copy of the loop body, chained from a fresh local
        namespace and re-serving every fetched channel."""
        em = _CompEmitter(snap.copy(), self.fresh)
        zx = _zvar(p.var)
        y1 = _yvar(p.var)
        servers = [
            em._reserve_names(n, tuple(_vmap(m) for m in run))
            for n, run in g[p.var]
        ]
        body = em.emit(2, (zx,), p.body, g)
        span = 1 + ty.degree(p.body, "composed")
        pump = sx.In(em.chan(1), (), sx.In(
            y1, ((zx, None),), em.kick(2, (zx,), sx.Nil()),
        ))
        em.note(1, ())
        missing = set(range(1, span + 1)) - set(em.alloc)
        if missing:
            raise DecomposeError(f"instance slots {sorted(missing)} never emitted")
        pairs = [(em.chan(j), em.alloc[j]) for j in range(1, span + 1)]
        return sx.res(pairs, sx.par(
            *servers, em.kick(1, (), sx.Nil()), pump, *body,
        ))

    def _var(self, k: int, ctx: tuple, p: sx.Var, g: dict) -> list:
        groups = g.get(p.var)
        if groups is None:
            raise DecomposeError(f"recursion variable {p.var} outside its loop")
        zx = _zvar(p.var)
        if tuple(c.plain().channel_key() for c in ctx) != (zx.channel_key(),):
            raise DecomposeError(
                "a recursion call's context must be its instance trigger")
        s1 = self.fresh("s")
        sp = self.fresh("s")
        control = self.lead(k, ctx, self.ctx_types(ctx), self.kick(
            k + 1, (zx,), self.kick(k + 2, (zx,), sx.Nil()),
        ))
        self.note(k + 1, None)
        self.note(k + 2, None)
        self.note(k + 3, ())
        sender = sx.In(self.chan(k + 2), ((zx, None),), sx.Out(
            s1.bar(), (sx.NameRef(zx),),
            self.kick(k + 3, (), sx.Nil()),
        ))
        pair = sx.In(self.chan(k + 3), (), sx.Nil())
        binds = []
        payload: tuple = ()
        for n, run in groups:
            a = self.fresh("a")
            yv = self.fresh("y")
            zs = tuple(self.fresh("z") for _ in run)
            binds.append((n, a, yv, zs))
            payload += tuple(sx.NameRef(z) for z in zs)
        inner: sx.Process = sx.Res(sp, None, sx.Out(
            zx, (sx.NameRef(sp),),
            sx.Out(sp.bar(), payload + (sx.NameRef(s1),), sx.Nil()),
        ))
        for i, (n, a, yv, zs) in enumerate(reversed(binds)):
            _, _, trig = self._serve_types(n)
            cont: sx.Process = sx.In(a, ((yv, None),), sx.In(
                yv, tuple((z, None) for z in zs), inner,
            ))
            if i == len(binds) - 1:
                cont = sx.par(sender, pair, cont)
            inner = sx.Res(a, trig, sx.Out(
                self._fetch_name(n).bar(), (sx.NameRef(a),), cont,
            ))
        fetch = sx.In(self.chan(k + 1), ((zx, None),), inner)
        return [sx.Res(s1, None, sx.par(control, fetch))]


def _source_checks(p: sx.Process, gamma, delta) -> sx.Process:
    for env in (gamma, delta):
        for n, t in (env or {}).items():
            try:
                ty.validate_source_type(t)
            except ty.TypeError_ as exc:
                raise DecomposeError(f"cannot decompose {n} : {t}: {exc}") from exc
    for n, t in (gamma or {}).items():
        raise DecomposeError(f"shared entry {n} has no staged decomposition")
    report = typecheck(gamma, delta, p)
    if not report.ok:
        where, rule, msg = report.failures[0]
        raise DecomposeError(f"source does not typecheck ({rule} at {where}: {msg})")
    p0 = _expand_repl(p)
    return sx.subst(p0, sx.init_subst(sx.free_names(p0)))


def decompose_composed(p: sx.Process, gamma, delta) -> sx.Process:
    """Full staged decomposition: kick-off, entry chain, fetch servers."""
    p1 = _source_checks(p, gamma, delta)
    track = _init_track(delta)
    fresh = _Fresh()
    em = _CompEmitter(track, fresh)

    free = {(m.base, m.kind) for m in sx.free_names(p1)}
    rnames = []
    servers = []
    for n, t in sorted((delta or {}).items(), key=lambda kv: str(kv[0])):
        if not (ty.is_session(t) and ty.tr_state(t)):
            continue
        if (n.base, n.kind) not in free:
            continue
        rnames.append(n)
        servers.append(em._reserve_names(n, ty.bname(n.at(1), t)))

    body = em.emit(1, (), p1, {})
    span = ty.degree(p1, "composed")
    missing = set(range(1, span + 1)) - set(em.alloc)
    if missing or set(em.alloc) - set(range(1, span + 1)):
        raise DecomposeError(
            f"chaining slots {sorted(em.alloc)} do not span 1..{span}")
    out = sx.par(em.kick(1, (), sx.Nil()), *body, *servers)
    for n in reversed(rnames):
        _, _, trig = em._serve_types(n)
        out = sx.Res(em._fetch_name(n), ty.TShared((trig,)), out)
    for k in reversed(range(1, span + 1)):
        out = sx.Res(em.chan(k), em.alloc[k], out)
    return out


def pipeline_composed(p: sx.Process, gamma, delta) -> sx.Process:
    """The three stages run literally; the fused route must agree with
    this up to alpha conversion on the recursion-free fragment."""
    p1 = _source_checks(p, gamma, delta)
    ctx = EncodingContext()
    h = encode_pi_to_ho(p1, ctx, _init_track(delta))
    span = ho_len(h)
    hb = breakdown_ho(1, (), h, _init_track(delta))
    out = sx.Par(sx.Out(sx.prop(1, dual=True), (), sx.Nil()), encode_ho_to_pi(hb))
    for k in reversed(range(1, span + 1)):
        out = sx.Res(sx.prop(k), None, out)
    return out
