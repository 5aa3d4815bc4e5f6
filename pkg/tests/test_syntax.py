from minpi.syntax import (
    Add,
    Branch,
    In,
    IntLit,
    Name,
    NameRef,
    Neg,
    Nil,
    Out,
    Par,
    Rec,
    Res,
    Select,
    Var,
    alpha_eq,
    fnb,
    free_names,
    par,
    prop,
    prop_rec,
    prop_recname,
    prop_var,
    res,
    subst,
    subst_var,
    trigger,
)


def n(base, index=None, dual=False):
    return Name(base, index, dual)


def test_name_printing():
    assert str(n("u")) == "u"
    assert str(n("u", 3)) == "u@3"
    assert str(n("u", 3, dual=True)) == "~u@3"
    assert str(prop(7)) == "c@7"
    assert str(prop(7, dual=True)) == "~c@7"
    assert str(prop_rec(4)) == "cr@4"
    assert str(prop_recname("r")) == "cr@r"
    assert str(prop_var("X", dual=True)) == "~crX@X"
    assert str(trigger("a", 2)) == "a^2"


def test_bar_is_involution():
    x = n("u", 1)
    assert x.bar().bar() == x
    assert x.bar().plain() == x


def test_generated_flag():
    assert not n("u", 1).generated
    assert prop(1).generated
    assert trigger("s", 1).generated


def test_par_right_nested():
    a, b, c = Nil(), Var("X"), Nil()
    p = par(a, b, c)
    assert isinstance(p, Par)
    assert p.left is a
    assert isinstance(p.right, Par)


def test_res_folds_pairs_and_bare_names():
    p = res([n("a"), (n("b"), None)], Nil())
    assert isinstance(p, Res) and p.name == n("a")
    assert isinstance(p.cont, Res) and p.cont.name == n("b")


def test_free_names_through_binders():
    p = In(n("u", 1), ((n("x"), None),), Out(n("x"), (NameRef(n("y")),), Nil()))
    free = free_names(p)
    assert n("u", 1) in free
    assert n("y") in free
    assert n("x") not in free


def test_free_names_dual_occurrence_counts_plain():
    p = Out(n("u", 1, dual=True), (), Nil())
    assert free_names(p) == {n("u", 1)}


def test_fnb_matches_on_base_across_indexes():
    p = Out(n("u", 3), (), Nil())
    kept = fnb(p, [n("u", 2), n("v", 1)])
    assert kept == [n("u", 2)]


def test_fnb_keeps_candidate_order():
    p = Par(Out(n("b"), (), Nil()), Out(n("a"), (), Nil()))
    assert fnb(p, [n("a"), n("b"), n("z")]) == [n("a"), n("b")]


def test_subst_subject_and_payload():
    p = Out(n("u"), (NameRef(n("v")),), Nil())
    q = subst(p, {n("u"): NameRef(n("w", 1)), n("v"): IntLit(5)})
    assert q == Out(n("w", 1), (IntLit(5),), Nil())


def test_subst_dual_occurrence_gets_dual_value():
    p = Out(n("u", dual=True), (), Nil())
    q = subst(p, {n("u"): NameRef(n("w", 2))})
    assert q.subject == n("w", 2, dual=True)


def test_subst_shadowed_by_binder():
    p = In(n("u"), ((n("x"), None),), Out(n("x"), (), Nil()))
    q = subst(p, {n("x"): NameRef(n("z"))})
    assert q.cont.subject == n("x")


def test_subst_preserves_aux():
    p = Out(n("u"), (), Nil(), aux=True)
    assert subst(p, {n("u"): NameRef(n("v"))}).aux


def test_subst_var_replaces_only_free_occurrences():
    body = Par(Var("X"), Rec("X", Var("X")))
    got = subst_var(body, "X", Nil())
    assert got == Par(Nil(), Rec("X", Var("X")))


def test_alpha_eq_renames_binders():
    p = In(n("u"), ((n("x"), None),), Out(n("x"), (), Nil()))
    q = In(n("u"), ((n("y"), None),), Out(n("y"), (), Nil()))
    assert alpha_eq(p, q)


def test_alpha_eq_respects_free_names():
    p = Out(n("u"), (), Nil())
    q = Out(n("v"), (), Nil())
    assert not alpha_eq(p, q)


def test_alpha_eq_restriction_and_recursion():
    p = Res(n("a"), None, Rec("X", Out(n("a"), (), Var("X"))))
    q = Res(n("b"), None, Rec("Y", Out(n("b"), (), Var("Y"))))
    assert alpha_eq(p, q)


def test_alpha_eq_polarity_matters():
    p = Out(n("u", 1), (), Nil())
    assert not alpha_eq(p, Out(n("u", 1, dual=True), (), Nil()))


def test_alpha_eq_ignores_aux():
    p = Out(n("u"), (), Nil(), aux=True)
    q = Out(n("u"), (), Nil())
    assert alpha_eq(p, q)


def test_alpha_eq_expressions():
    p = Out(n("u"), (Add(NameRef(n("x")), IntLit(1)),), Nil())
    q = Out(n("u"), (Add(NameRef(n("x")), IntLit(1)),), Nil())
    r = Out(n("u"), (Neg(NameRef(n("x"))),), Nil())
    assert alpha_eq(p, q)
    assert not alpha_eq(p, r)


def test_process_printing_round():
    p = Res(
        n("u"),
        None,
        Par(
            Select(n("u"), "add", Nil()),
            Branch(n("u", dual=True), (("add", Nil()), ("neg", Nil()))),
        ),
    )
    s = str(p)
    assert "u+add" in s
    assert "~u&{add: 0, neg: 0}" in s
