import pytest

from minpi.syntax import (
    In,
    Name,
    NameRef,
    Nil,
    Out,
    Par,
    Rec,
    Res,
    Succ,
    Var,
)
from minpi.types import (
    TBool,
    TBranch,
    TEnd,
    TIn,
    TInt,
    TOut,
    TRec,
    TSelect,
    TShared,
    TVar,
    TypeError_,
    decompose_env,
    decompose_type_composed,
    decompose_type_opt,
    degree,
    dual,
    index_fn,
    is_minimal,
    lin,
    shuttle_wrap,
    teq,
    tr,
    tr_state,
    unfold,
    validate_source_type,
)

INT = TInt()
END = TEnd()

# ?Int.!Bool.end and its dual, the pair from the delegation example.
T_IN_OUT = TIn((INT,), TOut((TBool(),), END))
T_DUAL = TOut((INT,), TIn((TBool(),), END))

# mu t.?Int.!Int.t, the echo-style loop.
LOOP = TRec("t", TIn((INT,), TOut((INT,), TVar("t"))))


def test_dual_swaps_every_action():
    assert dual(T_IN_OUT) == T_DUAL
    assert dual(TSelect((("add", END),))) == TBranch((("add", END),))


def test_dual_is_involution():
    for t in (T_IN_OUT, LOOP, TShared((LOOP,)), TBranch((("a", T_DUAL),))):
        assert dual(dual(t)) == t


def test_unfold_loop():
    got = unfold(LOOP)
    assert got == TIn((INT,), TOut((INT,), LOOP))


def test_tr_holds_only_for_plain_loops():
    assert tr(LOOP)
    assert not tr(T_IN_OUT)
    assert not tr(TRec("t", TIn((INT,), TEnd())))


def test_tr_state_covers_partial_unfoldings():
    assert tr_state(TOut((INT,), LOOP))
    assert not tr_state(T_IN_OUT)


def test_lin_excludes_loops_and_end():
    assert lin(T_IN_OUT)
    assert not lin(LOOP)
    assert not lin(TOut((INT,), LOOP))
    assert not lin(END)


def test_teq_renames_loop_variables():
    other = TRec("s", TIn((INT,), TOut((INT,), TVar("s"))))
    assert teq(LOOP, other)
    assert not teq(LOOP, dual(LOOP))


def test_decompose_opt_two_prefixes():
    assert decompose_type_opt(T_IN_OUT) == (
        TIn((INT,), END),
        TOut((TBool(),), END),
    )


def test_decompose_opt_end_and_values():
    assert decompose_type_opt(END) == (END,)
    assert decompose_type_opt(INT) == (INT,)


def test_decompose_opt_delegation_payload():
    got = decompose_type_opt(TOut((T_DUAL,), END))
    assert got == (TOut((TOut((INT,), END), TIn((TBool(),), END)), END),)


def test_decompose_opt_loop():
    s = TRec("t", TIn((INT,), TIn((TBool(),), TOut((TBool(),), TVar("t")))))
    assert decompose_type_opt(s) == (
        TRec("t", TIn((INT,), TVar("t"))),
        TRec("t", TIn((TBool(),), TVar("t"))),
        TRec("t", TOut((TBool(),), TVar("t"))),
    )


def test_decompose_opt_unfolded_state_matches_folded():
    s = TRec("t", TIn((INT,), TIn((TBool(),), TOut((TBool(),), TVar("t")))))
    partial = TIn((TBool(),), TOut((TBool(),), s))
    assert decompose_type_opt(partial) == decompose_type_opt(s)


def test_decompose_opt_choice():
    add = TIn((INT,), TIn((INT,), TOut((INT,), END)))
    neg = TIn((INT,), TOut((INT,), END))
    got = decompose_type_opt(TBranch((("add", add), ("neg", neg))))
    assert got == (
        TBranch((
            ("add", TIn((TIn((INT,), END), TIn((INT,), END), TOut((INT,), END)), END)),
            ("neg", TIn((TIn((INT,), END), TOut((INT,), END)), END)),
        )),
    )


def test_decompose_opt_shared():
    got = decompose_type_opt(TShared((T_IN_OUT,)))
    assert got == (TShared((TIn((INT,), END), TOut((TBool(),), END))),)


def test_decompose_opt_rejects_non_tail_recursion():
    with pytest.raises(TypeError_):
        decompose_type_opt(TRec("t", TIn((INT,), TEnd())))


def test_shuttle_wrap_shape():
    w = shuttle_wrap((INT,))
    assert w == TShared((
        TIn((TIn((TShared((TIn((INT,), END),)),), END),), END),
    ))


def test_decompose_composed_two_prefixes():
    m1, m2 = decompose_type_composed(T_IN_OUT)
    assert m1 == TIn((shuttle_wrap((INT,)),), END)
    assert m2 == TOut((shuttle_wrap((TBool(),)),), END)


def test_decompose_composed_end():
    assert decompose_type_composed(END) == (END,)


def test_decompose_composed_loop():
    got = decompose_type_composed(LOOP)
    w = shuttle_wrap((INT,))
    assert got == (
        TRec("t", TIn((w,), TVar("t"))),
        TRec("t", TOut((w,), TVar("t"))),
    )


def test_decompose_composed_session_payload_nests_translation():
    got = decompose_type_composed(TOut((T_DUAL,), END))
    inner = decompose_type_composed(T_DUAL)
    shell = got[0].payload[0]
    assert isinstance(shell, TShared)
    step4 = shell.items[0]
    step3 = step4.payload[0]
    step2 = step3.payload[0]
    step1 = step2.items[0]
    assert step1.payload == inner


def test_decompose_composed_counts_match_direct():
    for s in (T_IN_OUT, T_DUAL, LOOP, TOut((T_DUAL,), END)):
        assert len(decompose_type_composed(s)) == len(decompose_type_opt(s))


def test_decompose_composed_rejects_choice():
    with pytest.raises(TypeError_):
        decompose_type_composed(TSelect((("a", END),)))


def test_decompose_env_opt():
    u1 = Name("u", 1)
    gamma, delta = decompose_env({}, {u1: TOut((T_DUAL,), END)}, "opt")
    assert gamma == {}
    assert delta == {u1: TOut((TOut((INT,), END), TIn((TBool(),), END)), END)}


def test_decompose_env_spreads_loops():
    r1 = Name("r", 1)
    gamma, delta = decompose_env({}, {r1: LOOP}, "opt")
    assert delta == {
        Name("r", 1): TRec("t", TIn((INT,), TVar("t"))),
        Name("r", 2): TRec("t", TOut((INT,), TVar("t"))),
    }


def test_decompose_env_rejects_unindexed():
    with pytest.raises(TypeError_):
        decompose_env({}, {Name("u"): END}, "opt")


def test_decompose_env_shared_entry_keeps_name():
    a = Name("a", 1)
    gamma, _ = decompose_env({a: TShared((T_IN_OUT,))}, {}, "opt")
    assert gamma == {a: TShared((TIn((INT,), END), TOut((TBool(),), END)))}


def test_index_fn_folded():
    assert index_fn(LOOP) == 1


def test_index_fn_mid_cycle():
    assert index_fn(TOut((INT,), LOOP)) == 2


def test_index_fn_full_unfold_agrees():
    assert index_fn(unfold(LOOP)) == index_fn(LOOP)


def test_index_fn_modes_agree():
    for s in (LOOP, TOut((INT,), LOOP)):
        assert index_fn(s, "opt") == index_fn(s, "composed")


def test_index_fn_rejects_non_recursive():
    with pytest.raises(TypeError_):
        index_fn(T_IN_OUT)


def _p_ex():
    u, w = Name("u"), Name("w")
    a = Out(
        u,
        (NameRef(w),),
        In(w.bar(), ((Name("t"), None),), Out(w.bar(), (Succ(NameRef(Name("t"))),), Nil())),
    )
    b = In(
        u.bar(),
        ((Name("x"), None),),
        Out(Name("x"), (NameRef(Name("v")),), In(Name("x"), ((Name("b"), None),), Nil())),
    )
    return Res(u, TOut((T_DUAL,), END), Par(a, b))


def test_degree_nil_both_modes():
    assert degree(Nil(), "opt") == 1
    assert degree(Nil(), "composed") == 1


def test_degree_opt_example():
    assert degree(_p_ex(), "opt") == 9


def test_degree_composed_example():
    assert degree(_p_ex(), "composed") == 27


def test_degree_composed_single_send():
    assert degree(Out(Name("u"), (NameRef(Name("x")),), Nil()), "composed") == 4
    assert degree(Out(Name("u"), (NameRef(Name("x")),), Nil()), "opt") == 2


def test_degree_composed_loop_process():
    r = Name("r")
    p = Rec("X", In(r, ((Name("w"), None),), Out(r, (NameRef(Name("w")),), Var("X"))))
    assert degree(p, "composed") == 16
    assert degree(p, "opt") == 4


def test_degree_opt_restriction_pays_for_loops_only():
    inner = Out(Name("s"), (NameRef(Name("x")),), Nil())
    assert degree(Res(Name("s"), T_DUAL, inner), "opt") == 2
    assert degree(Res(Name("r"), LOOP, inner), "opt") == 3


def test_is_minimal_basics():
    assert is_minimal(END)
    assert is_minimal(TOut((INT,), END))
    assert not is_minimal(TOut((INT,), TIn((TBool(),), END)))


def test_is_minimal_loop_and_shared():
    assert is_minimal(TRec("t", TIn((INT,), TVar("t"))))
    assert is_minimal(TShared((TIn((INT,), END),)))
    assert not is_minimal(TRec("t", TIn((INT,), TOut((INT,), TVar("t")))))


def test_is_minimal_choice_single_action_branches():
    ok = TBranch((("add", TIn((TIn((INT,), END),), END)),))
    bad = TBranch((("add", TIn((INT,), TIn((INT,), END))),))
    assert is_minimal(ok)
    assert not is_minimal(bad)


def test_decomposition_outputs_are_minimal():
    samples = [
        T_IN_OUT,
        TOut((T_DUAL,), END),
        LOOP,
        TBranch((("a", T_IN_OUT),)),
        TShared((T_IN_OUT,)),
    ]
    for s in samples:
        for m in decompose_type_opt(s):
            assert is_minimal(m)
    for s in (T_IN_OUT, TOut((T_DUAL,), END), LOOP):
        for m in decompose_type_composed(s):
            assert is_minimal(m)


def test_validate_source_type_accepts_fragment():
    validate_source_type(TOut((T_DUAL,), END))
    validate_source_type(LOOP)
    validate_source_type(TShared((LOOP,)))


def test_validate_source_type_rejects_midspine_recursion():
    with pytest.raises(TypeError_):
        validate_source_type(TIn((INT,), LOOP))


def test_validate_source_type_rejects_free_variables():
    with pytest.raises(TypeError_):
        validate_source_type(TVar("t"))
