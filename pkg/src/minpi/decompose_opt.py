"""Single-pass decomposition of processes into chains of minimal trios.

Every source action becomes one three-prefix process (a trio): receive the
current context tuple on a chaining channel, mimic the action on one slot
of the decomposed subject, pass the surviving context to the successor.
Recursion bodies become loops of recursive trios fed by a per-variable
control channel, so one decomposed process serves every iteration.  The
top-level entry point wraps the trios in annotated restrictions and a
kick-off send, ready for the type checker and the interpreter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from . import syntax as sx
from . import types as ty
from .typecheck import typecheck


class DecomposeError(Exception):
    """Raised when a process falls outside the decomposable fragment."""


@dataclass(frozen=True)
class BreakdownState:
    """Arguments threaded along the trio chain.

    `types` gives the minimal type of each context entry; `faces` gives the
    session type governing each channel a subject may use, keyed by any
    name on that channel (polarity significant).  Both default empty, which
    is enough for subjects whose faces are registered on the way down.
    """

    k: int
    context: tuple = ()
    g: Mapping = field(default_factory=dict)
    fresh: int = 0
    types: Mapping = field(default_factory=dict)
    faces: Mapping = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Channel bookkeeping.  A face is one polarity of one channel; its record
# holds the not-yet-mimicked part of the session type, so block widths,
# slot indices, and loop slots all read off the record at the occurrence.

def _face_key(n: sx.Name) -> tuple:
    return (n.base, n.kind, n.dual)


def _lin(t) -> bool:
    return ty.lin(t)


def _is_loop(t) -> bool:
    return ty.tr_state(t)


class _Emitter:
    def __init__(self, faces: dict, ntypes: dict, depth: int = 0):
        self.alloc: dict = {}
        self.faces = faces
        self.ntypes = ntypes
        self.depth = depth

    # -- naming ------------------------------------------------------------

    def chan(self, k: int, rec: bool) -> sx.Name:
        base = "c" + "'" * self.depth
        kind = sx.PROP_REC if rec else sx.PROP
        return sx.Name(base, k, False, kind)

    def lead(self, k: int, ctx, cont, rec: bool, shared: bool = False):
        if k in self.alloc:
            raise DecomposeError(f"chaining slot {k} allocated twice")
        kinds = "shared" if shared else ("rec" if rec else "lin")
        self.alloc[k] = (kinds, tuple(self.typeof(x) for x in ctx))
        binders = tuple((x, None) for x in ctx)
        return sx.In(self.chan(k, rec or shared), binders, cont)

    def kick(self, k: int, names, cont, rec: bool) -> sx.Process:
        payload = tuple(sx.NameRef(n) for n in names)
        return sx.Out(self.chan(k, rec).bar(), payload, cont)

    def typeof(self, n: sx.Name):
        t = self.ntypes.get(n)
        if t is None:
            raise DecomposeError(f"context entry {n} has no recorded type")
        return t

    def face(self, n: sx.Name) -> tuple:
        rec = self.faces.get(_face_key(n))
        if rec is None:
            raise DecomposeError(f"no session information for {n}")
        return rec

    def register_face(self, n: sx.Name, t) -> None:
        self.faces[_face_key(n)] = (t, _is_loop(t))

    def advance(self, n: sx.Name) -> None:
        t, loop = self.faces[_face_key(n)]
        head = ty.unfold(t) if isinstance(t, ty.TRec) else t
        self.faces[_face_key(n)] = (head.cont, loop)

    # -- context arithmetic ------------------------------------------------

    def slot(self, subject: sx.Name, t) -> int:
        """Which decomposed slot mimics the next action of this face."""
        if _is_loop(t):
            return ty.index_fn(t)
        return subject.index

    def block(self, n: sx.Name):
        """The run of decomposed names a delegated channel travels as."""
        t, _ = self.face(n)
        return ty.bname(n, t), ty.decompose_type_opt(t)


def _union(a, b) -> tuple:
    out = list(a)
    for n in b:
        if n not in out:
            out.append(n)
    return tuple(out)


def _drop(ctx, n) -> tuple:
    return tuple(x for x in ctx if x != n)


def _fresh_base(preferred: str, p: sx.Process) -> str:
    taken = {n.base for n in sx.free_names(p)}
    base = preferred
    while base in taken:
        base += "'"
    return base


def _polar_free(p: sx.Process):
    """Free name occurrences with their written polarity, in first-use order."""
    out: list = []
    _polar(p, out, set())
    return out


def _polar(p, acc, bound) -> None:
    def note(n):
        if n.plain().channel_key() not in bound and n not in acc:
            acc.append(n)

    if isinstance(p, (sx.Nil, sx.Var)):
        return
    if isinstance(p, sx.Out):
        note(p.subject)
        for e in p.payload:
            for n in sx.expr_names(e):
                note(n)
        _polar(p.cont, acc, bound)
    elif isinstance(p, sx.In):
        note(p.subject)
        inner = bound | {b.plain().channel_key() for b, _ in p.binders}
        _polar(p.cont, acc, inner)
    elif isinstance(p, sx.Select):
        note(p.subject)
        _polar(p.cont, acc, bound)
    elif isinstance(p, sx.Branch):
        note(p.subject)
        for _, q in p.branches:
            _polar(q, acc, bound)
    elif isinstance(p, sx.Par):
        _polar(p.left, acc, bound)
        _polar(p.right, acc, bound)
    elif isinstance(p, sx.Res):
        _polar(p.cont, acc, bound | {p.name.plain().channel_key()})
    elif isinstance(p, (sx.Rec, sx.Repl)):
        _polar(p.body, acc, bound)


# ---------------------------------------------------------------------------
# The breakdown proper

def _emit(em: _Emitter, k: int, ctx: tuple, p: sx.Process) -> sx.Process:
    if isinstance(p, sx.Nil):
        return em.lead(k, ctx, sx.Nil(), rec=False)
    if isinstance(p, sx.Out):
        return _emit_out(em, k, ctx, p)
    if isinstance(p, sx.In):
        return _emit_in(em, k, ctx, p)
    if isinstance(p, sx.Select):
        return _emit_select(em, k, ctx, p)
    if isinstance(p, sx.Branch):
        return _emit_branch(em, k, ctx, p)
    if isinstance(p, sx.Par):
        return _emit_par(em, k, ctx, p)
    if isinstance(p, sx.Res):
        return _emit_res(em, k, ctx, p)
    if isinstance(p, sx.Rec):
        return _emit_rec_binder(em, k, ctx, p)
    if isinstance(p, sx.Var):
        raise DecomposeError(f"recursion variable {p.var} outside its loop")
    raise DecomposeError(f"cannot break down {type(p).__name__}")


def _subject_step(em: _Emitter, p, want_out: bool):
    """Resolve subject face, mimic slot, payload types, and continuation
    substitution for a communication prefix."""
    subject = p.subject
    t, _ = em.face(subject)
    if isinstance(t, ty.TShared):
        return subject, t.items, {}, False
    head = ty.unfold(t) if isinstance(t, ty.TRec) else t
    need = ty.TOut if want_out else ty.TIn
    if not isinstance(head, need):
        raise DecomposeError(f"{subject} : {t} does not fit this prefix")
    slot = em.slot(subject, t)
    sigma = ty.next_subst(subject, t)
    spent = _lin(t)
    em.advance(subject)
    return subject.at(slot), head.payload, sigma, spent


def _emit_out(em: _Emitter, k: int, ctx: tuple, p: sx.Out) -> sx.Process:
    mimic, wants, sigma, spent = _subject_step(em, p, want_out=True)
    if len(p.payload) != len(wants):
        raise DecomposeError(f"{p.subject} sends {len(p.payload)} values")
    payload: tuple = ()
    for e, want in zip(p.payload, wants):
        if isinstance(e, sx.NameRef) and ty.is_session(want):
            names, _ = em.block(e.name)
            payload += tuple(sx.NameRef(n) for n in names)
        else:
            payload += (e,)
    cont = sx.subst(p.cont, sigma)
    cands = _drop(ctx, p.subject) if spent else ctx
    z = tuple(sx.fnb(cont, cands))
    trio = em.lead(
        k, ctx,
        sx.Out(mimic, payload, em.kick(k + 1, z, sx.Nil(), rec=False)),
        rec=False,
    )
    return sx.Par(trio, _emit(em, k + 1, z, cont))


def _bind_payload(em: _Emitter, binders, wants):
    """Expand received binders into indexed runs, registering their types."""
    fresh: tuple = ()
    sigma: dict = {}
    for (b, ann), want in zip(binders, wants):
        if ann is not None and not ty.teq(ann, want):
            raise DecomposeError(f"binder {b} annotated {ann}, payload is {want}")
        if ty.is_session(want) and not isinstance(want, ty.TShared):
            parts = ty.decompose_type_opt(want)
            run = tuple(b.plain().at(m + 1) for m in range(len(parts)))
            em.register_face(b.plain(), want)
            for n, m in zip(run, parts):
                em.ntypes[n] = m
        else:
            run = (b.plain().at(1),)
            em.ntypes[run[0]] = want
            if isinstance(want, ty.TShared):
                em.register_face(b.plain(), want)
        fresh += run
        sigma[b.plain()] = sx.NameRef(run[0])
    return fresh, sigma


def _emit_in(em: _Emitter, k: int, ctx: tuple, p: sx.In) -> sx.Process:
    mimic, wants, sigma, spent = _subject_step(em, p, want_out=False)
    if len(p.binders) != len(wants):
        raise DecomposeError(f"{p.subject} binds {len(p.binders)} names")
    fresh, bind_sigma = _bind_payload(em, p.binders, wants)
    sigma = {**sigma, **bind_sigma}
    cont = sx.subst(p.cont, sigma)
    cands = _union(_drop(ctx, p.subject) if spent else ctx, fresh)
    z = tuple(sx.fnb(cont, cands))
    trio = em.lead(
        k, ctx,
        sx.In(mimic, tuple((n, None) for n in fresh),
              em.kick(k + 1, z, sx.Nil(), rec=False)),
        rec=False,
    )
    return sx.Par(trio, _emit(em, k + 1, z, cont))


def _emit_select(em: _Emitter, k: int, ctx: tuple, p: sx.Select) -> sx.Process:
    subject = p.subject
    t, _ = em.face(subject)
    head = ty.unfold(t) if isinstance(t, ty.TRec) else t
    if not isinstance(head, ty.TSelect):
        raise DecomposeError(f"{subject} : {t} cannot select")
    offered = dict(head.branches)
    if p.label not in offered:
        raise DecomposeError(f"label {p.label} not offered by {t}")
    chosen = offered[p.label]
    plain_side = ty.dual(chosen) if subject.dual else chosen
    parts = ty.decompose_type_opt(plain_side)
    i = subject.index
    bound = tuple(subject.plain().at(i + 1 + m) for m in range(len(parts)))
    sent = tuple(sx.NameRef(n.bar() if not subject.dual else n) for n in bound)
    em.register_face(subject, chosen)
    sigma = {subject.plain(): sx.NameRef(subject.plain().at(i + 1))}
    cont = sx.subst(p.cont, sigma)
    z = tuple(sx.fnb(cont, _drop(ctx, subject)))
    inner = sx.Par(
        sx.Out(subject, sent, em.kick(k + 1, z, sx.Nil(), rec=False), aux=True),
        _emit(em, k + 1, z, cont),
    )
    trio = em.lead(
        k, ctx,
        sx.Select(subject, p.label, sx.res(tuple(zip(bound, parts)), inner)),
        rec=False,
    )
    return trio


def _emit_branch(em: _Emitter, k: int, ctx: tuple, p: sx.Branch) -> sx.Process:
    subject = p.subject
    t, _ = em.face(subject)
    head = ty.unfold(t) if isinstance(t, ty.TRec) else t
    if not isinstance(head, ty.TBranch):
        raise DecomposeError(f"{subject} : {t} cannot branch")
    typed = dict(head.branches)
    arms: tuple = ()
    for lab, body in p.branches:
        if lab not in typed:
            raise DecomposeError(f"label {lab} not in the type of {subject}")
        cont_t = typed[lab]
        parts = ty.decompose_type_opt(cont_t)
        ybase = _fresh_base("y", body)
        run = tuple(sx.Name(ybase, m + 1) for m in range(len(parts)))
        sub = _Emitter(dict(em.faces), dict(em.ntypes), em.depth + 1)
        sub.register_face(sx.Name(ybase), cont_t)
        for n, m in zip(run, parts):
            sub.ntypes[n] = m
        body1 = sx.subst(body, {subject.plain(): sx.NameRef(run[0])})
        inner_ctx = tuple(sx.fnb(body1, _union(_drop(ctx, subject), run)))
        trios = _emit(sub, 1, inner_ctx, body1)
        span = ty.degree(body, "opt")
        head_proc = sx.In(
            subject, tuple((n, None) for n in run),
            sub.kick(1, inner_ctx, sx.Nil(), rec=False),
            aux=True,
        )
        arm = sx.Par(head_proc, trios)
        for j in reversed(range(1, span + 1)):
            arm = sx.Res(sub.chan(j, rec=False), _chain_annot(sub, j), arm)
        arms += ((lab, arm),)
    return em.lead(k, ctx, sx.Branch(subject, arms), rec=False)


def _emit_par(em: _Emitter, k: int, ctx: tuple, p: sx.Par) -> sx.Process:
    l = ty.degree(p.left, "opt")
    y1 = tuple(sx.fnb(p.left, ctx))
    y2 = tuple(sx.fnb(p.right, ctx))
    trio = em.lead(
        k, ctx,
        em.kick(k + 1, y1, em.kick(k + l + 1, y2, sx.Nil(), rec=False), rec=False),
        rec=False,
    )
    left = _emit(em, k + 1, y1, p.left)
    right = _emit(em, k + l + 1, y2, p.right)
    return sx.Par(trio, sx.Par(left, right))


def _register_restriction(em: _Emitter, name: sx.Name, annot):
    """Faces, context names, and annotated binders for one restriction."""
    parts = ty.decompose_type_opt(annot)
    if isinstance(annot, ty.TShared):
        s1 = name.plain().at(1)
        em.register_face(name.plain(), annot)
        em.register_face(name.plain().bar(), annot)
        em.ntypes[s1] = parts[0]
        return (s1,), ((s1, parts[0]),)
    run = tuple(name.plain().at(m + 1) for m in range(len(parts)))
    em.register_face(name.plain(), annot)
    em.register_face(name.plain().bar(), ty.dual(annot))
    for n, m in zip(run, parts):
        em.ntypes[n] = m
        em.ntypes[n.bar()] = ty.dual(m)
    return run, tuple(zip(run, parts))


def _emit_res(em: _Emitter, k: int, ctx: tuple, p: sx.Res) -> sx.Process:
    if p.annot is None:
        raise DecomposeError(f"restriction of {p.name} needs a type annotation")
    run, binders = _register_restriction(em, p.name, p.annot)
    sigma = {p.name.plain(): sx.NameRef(run[0])}
    cont = sx.subst(p.cont, sigma)
    if not (isinstance(p.annot, ty.TRec) and ty.tr(p.annot)):
        return sx.res(binders, _emit(em, k, ctx, cont))
    # A restricted loop channel rides the context from here on, both ends.
    appended = _union(ctx, run + tuple(n.bar() for n in run))
    z = tuple(sx.fnb(cont, appended))
    trio = em.lead(k, ctx, em.kick(k + 1, z, sx.Nil(), rec=False), rec=False)
    return sx.res(binders, sx.Par(trio, _emit(em, k + 1, z, cont)))


def _emit_rec_binder(em: _Emitter, k: int, ctx: tuple, p: sx.Rec) -> sx.Process:
    if _has_rec(p.body):
        raise DecomposeError("nested recursion is not supported")
    blocks: tuple = ()
    for n in sorted(_polar_free(p.body), key=str):
        key = _face_key(n)
        if key not in em.faces:
            continue
        t, _ = em.faces[key]
        if isinstance(t, (ty.TShared, ty.TEnd)):
            continue
        blocks = _union(blocks, ty.bname(n, t))
    z = _union(ctx, blocks)
    g = {p.var: z}
    ztypes = tuple(em.typeof(n) for n in z)
    cvar = sx.prop_var(p.var)
    ybase = _fresh_base("y", p.body)
    yrun = tuple(sx.Name(ybase, m + 1) for m in range(len(z)))
    loop = sx.Rec(
        p.var,
        sx.In(cvar, tuple((n, None) for n in yrun),
              sx.Out(em.chan(k + 1, rec=True).bar(),
                     tuple(sx.NameRef(n) for n in yrun),
                     sx.Var(p.var))),
    )
    trio = em.lead(k, ctx, em.kick(k + 1, z, loop, rec=True), rec=False)
    body = _emit_rec(em, k + 1, z, p.body, g)
    annot = ty.TRec("t", ty.TIn(ztypes, ty.TVar("t")))
    return sx.Res(cvar, annot, sx.Par(trio, body))


def _has_rec(p) -> bool:
    if isinstance(p, (sx.Rec, sx.Repl)):
        return True
    if isinstance(p, (sx.Out, sx.In, sx.Select)):
        return _has_rec(p.cont)
    if isinstance(p, sx.Branch):
        return any(_has_rec(q) for _, q in p.branches)
    if isinstance(p, sx.Par):
        return _has_rec(p.left) or _has_rec(p.right)
    if isinstance(p, sx.Res):
        return _has_rec(p.cont)
    return False


# ---------------------------------------------------------------------------
# Recursive trios.  Each one is a loop serving its chaining channel once per
# iteration.  With an empty g the loop re-arms in parallel instead, so one
# trigger spawns one pass through the chain; the chain then behaves like a
# bank of servers, and its channels switch to unrestricted types to let each
# loop keep a send capability on its successor.

def _loop_trio(em, k, ctx, chain, g, var: str) -> sx.Process:
    if g:
        body = _seal(chain, sx.Var(var))
    else:
        body = sx.Par(_seal(chain, sx.Nil()), sx.Var(var))
    return sx.Rec(var, em.lead(k, ctx, body, rec=True, shared=not g))


def _seal(chain, tail):
    """Close a prefix chain built with a None placeholder continuation."""
    if chain is None:
        return tail
    if isinstance(chain, sx.Out):
        return sx.Out(chain.subject, chain.payload, _seal(chain.cont, tail), chain.aux)
    if isinstance(chain, sx.In):
        return sx.In(chain.subject, chain.binders, _seal(chain.cont, tail), chain.aux)
    raise DecomposeError("recursive trios chain only plain prefixes")


def _emit_rec(em: _Emitter, k: int, ctx: tuple, p: sx.Process, g: dict) -> sx.Process:
    gnames = next(iter(g.values())) if g else ()
    if isinstance(p, sx.Var):
        if p.var not in g:
            raise DecomposeError(f"recursion variable {p.var} not provided for")
        chain = sx.Out(sx.prop_var(p.var).bar(),
                       tuple(sx.NameRef(n) for n in ctx), None)
        return _loop_trio(em, k, ctx, chain, g, p.var)
    if isinstance(p, sx.Nil):
        return _loop_trio(em, k, ctx, None, g, "X")
    if isinstance(p, sx.Out):
        mimic, wants, sigma, spent = _subject_step(em, p, want_out=True)
        payload: tuple = ()
        for e, want in zip(p.payload, wants):
            if isinstance(e, sx.NameRef) and ty.is_session(want):
                names, _ = em.block(e.name)
                payload += tuple(sx.NameRef(n) for n in names)
            else:
                payload += (e,)
        cont = sx.subst(p.cont, sigma)
        cands = _drop(ctx, p.subject) if spent else ctx
        z = _union(gnames, sx.fnb(cont, cands))
        chain = sx.Out(mimic, payload,
                       em.kick(k + 1, z, None, rec=True))
        trio = _loop_trio(em, k, ctx, chain, g, "X")
        return sx.Par(trio, _emit_rec(em, k + 1, z, cont, g))
    if isinstance(p, sx.In):
        mimic, wants, sigma, spent = _subject_step(em, p, want_out=False)
        fresh, bind_sigma = _bind_payload(em, p.binders, wants)
        cont = sx.subst(p.cont, {**sigma, **bind_sigma})
        cands = _union(_drop(ctx, p.subject) if spent else ctx, fresh)
        z = _union(gnames, sx.fnb(cont, cands))
        chain = sx.In(mimic, tuple((n, None) for n in fresh),
                      em.kick(k + 1, z, None, rec=True))
        trio = _loop_trio(em, k, ctx, chain, g, "X")
        return sx.Par(trio, _emit_rec(em, k + 1, z, cont, g))
    if isinstance(p, sx.Par):
        in_left = _holds_var(p.left, g)
        in_right = _holds_var(p.right, g)
        if in_left and in_right:
            raise DecomposeError("recursion variable shared between branches")
        q1, q2 = (p.left, p.right) if in_left or not in_right else (p.right, p.left)
        l = ty.degree(q1, "opt")
        y1 = _union(gnames, sx.fnb(q1, ctx))
        y2 = tuple(sx.fnb(q2, ctx))
        var = "X"
        body = sx.Par(
            em.kick(k + 1, y1, sx.Var(var), rec=True),
            em.kick(k + l + 1, y2, sx.Nil(), rec=True),
        )
        trio = sx.Rec(var, em.lead(k, ctx, body, rec=True, shared=not g))
        left = _emit_rec(em, k + 1, y1, q1, g)
        right = _emit_rec(em, k + l + 1, y2, q2, {})
        return sx.Par(trio, sx.Par(left, right))
    if isinstance(p, sx.Res):
        if p.annot is None:
            raise DecomposeError(f"restriction of {p.name} needs a type annotation")
        run, binders = _register_restriction(em, p.name, p.annot)
        cont = sx.subst(p.cont, {p.name.plain(): sx.NameRef(run[0])})
        appended = run if isinstance(p.annot, ty.TShared) else run + tuple(
            n.bar() for n in run)
        z = _union(gnames, sx.fnb(cont, _union(ctx, appended)))
        chain = em.kick(k + 1, z, None, rec=True)
        trio = sx.Rec("X", sx.res(binders, em.lead(k, ctx, _seal(
            chain, sx.Var("X")) if g else sx.Par(_seal(chain, sx.Nil()),
                                                 sx.Var("X")),
            rec=True, shared=not g)))
        return sx.Par(trio, _emit_rec(em, k + 1, z, cont, g))
    if isinstance(p, (sx.Select, sx.Branch)):
        raise DecomposeError("labeled choice under recursion is not supported")
    if isinstance(p, sx.Rec):
        raise DecomposeError("nested recursion is not supported")
    raise DecomposeError(f"cannot break down {type(p).__name__} under recursion")


def _holds_var(p, g: dict) -> bool:
    return any(v in sx.free_vars(p) for v in g)


# ---------------------------------------------------------------------------
# Public operations

def indexed_pred(ys, xs, gamma, delta) -> bool:
    """True when ys is exactly the decomposed runs of the names in xs."""
    expect: tuple = ()
    for z in xs:
        t = _env_lookup(z, gamma, delta)
        if t is None or z.index is None:
            return False
        expect += ty.bname(z, t)
    return tuple(ys) == expect


def _env_lookup(z, gamma, delta):
    for env in (delta or {}, gamma or {}):
        for key in (z, z.plain(), z.plain().at(None)):
            if key in env:
                return env[key]
    return None


def _state_emitter(st: BreakdownState) -> _Emitter:
    faces: dict = {}
    for n, t in dict(st.faces).items():
        faces[_face_key(n)] = (t, _is_loop(t))
    em = _Emitter(faces, dict(st.types), st.fresh)
    return em


def breakdown(st: BreakdownState, p: sx.Process) -> sx.Process:
    """Trio chain for one process under an explicit state."""
    if not sx.initialized(p):
        raise DecomposeError("breakdown needs an initialized process")
    em = _state_emitter(st)
    return _emit(em, st.k, tuple(st.context), p)


def breakdown_rec(st: BreakdownState, p: sx.Process) -> sx.Process:
    """Recursive trio chain for the body of a loop."""
    if not sx.initialized(p):
        raise DecomposeError("breakdown needs an initialized process")
    em = _state_emitter(st)
    return _emit_rec(em, st.k, tuple(st.context), p, dict(st.g))


def _expand_repl(p: sx.Process) -> sx.Process:
    if isinstance(p, sx.Repl):
        body = _expand_repl(p.body)
        var = "X"
        while var in sx.free_vars(body):
            var += "'"
        return sx.Rec(var, sx.Par(body, sx.Var(var)))
    if isinstance(p, sx.Out):
        return sx.Out(p.subject, p.payload, _expand_repl(p.cont), p.aux)
    if isinstance(p, sx.In):
        return sx.In(p.subject, p.binders, _expand_repl(p.cont), p.aux)
    if isinstance(p, sx.Select):
        return sx.Select(p.subject, p.label, _expand_repl(p.cont))
    if isinstance(p, sx.Branch):
        return sx.Branch(p.subject, tuple(
            (l, _expand_repl(q)) for l, q in p.branches))
    if isinstance(p, sx.Par):
        return sx.Par(_expand_repl(p.left), _expand_repl(p.right))
    if isinstance(p, sx.Res):
        return sx.Res(p.name, p.annot, _expand_repl(p.cont))
    if isinstance(p, sx.Rec):
        return sx.Rec(p.var, _expand_repl(p.body))
    return p


def _chain_annot(em: _Emitter, k: int):
    kind, payload = em.alloc[k]
    if kind == "lin":
        return ty.TIn(payload, ty.TEnd())
    if kind == "rec":
        return ty.TRec("t", ty.TIn(payload, ty.TVar("t")))
    return ty.TShared(payload)


def decompose(p: sx.Process, gamma, delta) -> sx.Process:
    """Full decomposition: kick-off, trio chain, annotated restrictions."""
    for env in (gamma, delta):
        for n, t in (env or {}).items():
            try:
                ty.validate_source_type(t)
            except ty.TypeError_ as exc:
                raise DecomposeError(f"cannot decompose {n} : {t}: {exc}") from exc
    report = typecheck(gamma, delta, p)
    if not report.ok:
        where, rule, msg = report.failures[0]
        raise DecomposeError(f"source does not typecheck ({rule} at {where}: {msg})")
    p0 = _expand_repl(p)
    p1 = sx.subst(p0, sx.init_subst(sx.free_names(p0)))

    faces: dict = {}
    ntypes: dict = {}
    for n, t in (delta or {}).items():
        faces[_face_key(n)] = (t, _is_loop(t))
    for n, t in (gamma or {}).items():
        faces[_face_key(n.plain())] = (t, False)
        faces[_face_key(n.plain().bar())] = (t, False)
    free = sx.free_names(p0)
    r: tuple = ()
    for n, t in sorted((delta or {}).items(), key=lambda kv: str(kv[0])):
        if ty.is_value_type(t):
            ntypes[n.at(1)] = t
            continue
        if not _is_loop(t):
            continue
        if n.plain().channel_key() not in {m.channel_key() for m in free}:
            continue
        run = ty.bname(n.at(1), t)
        for m, mt in zip(run, ty.decompose_type_opt(t)):
            ntypes[m] = mt
        r += run

    em = _Emitter(faces, ntypes)
    body = _emit(em, 1, r, p1)
    span = ty.degree(p1, "opt")
    missing = set(range(1, span + 1)) - set(em.alloc)
    if missing or set(em.alloc) - set(range(1, span + 1)):
        raise DecomposeError(f"chaining slots {sorted(em.alloc)} do not span 1..{span}")
    out = sx.Par(em.kick(1, r, sx.Nil(), rec=False), body)
    for k in reversed(range(1, span + 1)):
        kind, _ = em.alloc[k]
        name = em.chan(k, rec=(kind != "lin"))
        out = sx.Res(name, _chain_annot(em, k), out)
    return out


def init_env(env: Mapping) -> dict:
    """Index every environment key at 1, ready for decomposition."""
    out: dict = {}
    for n, t in (env or {}).items():
        out[n if n.index is not None else n.at(1)] = t
    return out
