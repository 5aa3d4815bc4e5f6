import pytest

from minpi.decompose_opt import (
    BreakdownState,
    DecomposeError,
    breakdown,
    breakdown_rec,
    decompose,
    indexed_pred,
    init_env,
)
from minpi.parser import parse_env, parse_process, parse_type
from minpi.syntax import Name, alpha_eq, free_names, prop
from minpi.types import decompose_env
from minpi.typecheck import check_minimality, typecheck

W = "!(Int). ?(Int). end"

DELEG_SRC = (
    "(new u: !(" + W + "). end)"
    "(u!(w). ~w?(t). ~w!(succ t). 0 | ~u?(x). x!(5). x?(b). 0)"
)
DELEG_ENV = "w : !(Int). ?(Int). end\n~w : ?(Int). !(Int). end"

MATH_SRC = """
(new u: &{add: ?(Int). ?(Int). !(Int). end, neg: ?(Int). !(Int). end})(
  u&{add: u?(a). u?(b). u!(a + b). 0, neg: u?(a). u!(-a). 0}
| ~u+add. ~u!(16). ~u!(26). ~u?(r). 0)
"""

ECHO_SRC = "rec X. r?(z). r!(-z). X"
ECHO_ENV = "r : mu t. ?(Int). !(Int). t"

SERVER_SRC = (
    "(new a: <?(Int). end>)"
    "(*a?(y). y?(v). 0 | (new s: ?(Int). end)(a!(s). ~s!(3). 0))"
)


def run(src, envtext=""):
    gamma, delta = parse_env(envtext)
    return decompose(parse_process(src), gamma, delta), gamma, delta


def assert_same(got, expected_src):
    want = parse_process(expected_src)
    assert alpha_eq(got, want), f"\ngot:  {got}\nwant: {want}"


# ---------------------------------------------------------------------------
# Whole-process goldens

def test_nil_becomes_one_trio_and_a_kick():
    got, _, _ = run("0")
    assert_same(got, "(new c@1: ?(). end)(~c@1!(). 0 | c@1?(). 0)")


def test_delegation_chain():
    got, _, _ = run(DELEG_SRC, DELEG_ENV)
    assert_same(got, """
    (new c@1: ?().end) (new c@2: ?().end) (new c@3: ?().end)
    (new c@4: ?(Int).end) (new c@5: ?().end) (new c@6: ?().end)
    (new c@7: ?(!(Int).end, ?(Int).end).end) (new c@8: ?(?(Int).end).end)
    (new c@9: ?().end)
    (~c@1!().0
    | (new u@1: !(!(Int).end, ?(Int).end).end)
      (c@1?().~c@2!().~c@6!().0
      | ((c@2?().u@1!(w@1, w@2).~c@3!().0
         | (c@3?().~w@1?(t@1).~c@4!(t@1).0
           | (c@4?(t@1).~w@2!(succ t@1).~c@5!().0 | c@5?().0)))
        | (c@6?().~u@1?(x@1, x@2).~c@7!(x@1, x@2).0
          | (c@7?(x@1, x@2).x@1!(5).~c@8!(x@2).0
            | (c@8?(x@2).x@2?(b@1).~c@9!().0 | c@9?().0))))))
    """)


def test_delegation_spends_the_subject_but_keeps_the_rest():
    # After x@1 fires, only x@2 survives into the next context.
    got, _, _ = run(DELEG_SRC, DELEG_ENV)
    text = str(got)
    assert "~c@7!(x@1, x@2)" in text
    assert "~c@8!(x@2)" in text


def test_math_server_choice():
    got, _, _ = run(MATH_SRC)
    assert_same(got, """
    (new c@1: ?().end) (new c@2: ?().end) (new c@3: ?().end)
    (new c@4: ?().end) (new c@5: ?().end) (new c@6: ?().end)
    (new c@7: ?().end)
    (~c@1!().0
    | (new u@1: &{add: ?(?(Int).end, ?(Int).end, !(Int).end).end,
                  neg: ?(?(Int).end, !(Int).end).end})
      (c@1?().~c@2!().~c@3!().0
      | (c@2?().u@1&{
          add: (new c'@1: ?(?(Int).end, ?(Int).end, !(Int).end).end)
               (new c'@2: ?(?(Int).end, !(Int).end, Int).end)
               (new c'@3: ?(!(Int).end, Int, Int).end)
               (new c'@4: ?().end)
               (u@1?(y@1, y@2, y@3).~c'@1!(y@1, y@2, y@3).0
               | (c'@1?(y@1, y@2, y@3).y@1?(a@1).~c'@2!(y@2, y@3, a@1).0
                 | (c'@2?(y@2, y@3, a@1).y@2?(b@1).~c'@3!(y@3, a@1, b@1).0
                   | (c'@3?(y@3, a@1, b@1).y@3!(a@1 + b@1).~c'@4!().0
                     | c'@4?().0)))),
          neg: (new c'@1: ?(?(Int).end, !(Int).end).end)
               (new c'@2: ?(!(Int).end, Int).end)
               (new c'@3: ?().end)
               (u@1?(y@1, y@2).~c'@1!(y@1, y@2).0
               | (c'@1?(y@1, y@2).y@1?(a@1).~c'@2!(y@2, a@1).0
                 | (c'@2?(y@2, a@1).y@2!(-a@1).~c'@3!().0 | c'@3?().0)))}
        | c@3?().~u@1+add.
          (new u@2: ?(Int).end) (new u@3: ?(Int).end) (new u@4: !(Int).end)
          (~u@1!(u@2, u@3, u@4).~c@4!().0
          | (c@4?().~u@2!(16).~c@5!().0
            | (c@5?().~u@3!(26).~c@6!().0
              | (c@6?().~u@4?(r@1).~c@7!().0 | c@7?().0)))))))
    """)


def test_echo_loop():
    got, _, _ = run(ECHO_SRC, ECHO_ENV)
    assert_same(got, """
    (new c@1: ?(mu t. ?(Int). t, mu t. !(Int). t). end)
    (new cr@2: mu t. ?(mu t. ?(Int). t, mu t. !(Int). t). t)
    (new cr@3: mu t. ?(mu t. ?(Int). t, mu t. !(Int). t, Int). t)
    (new cr@4: mu t. ?(mu t. ?(Int). t, mu t. !(Int). t). t)
    (~c@1!(r@1, r@2).0
    | (new crX@X: mu t. ?(mu t. ?(Int). t, mu t. !(Int). t). t)
      (c@1?(r@1, r@2).~cr@2!(r@1, r@2).
         rec X. crX@X?(y@1, y@2).~cr@2!(y@1, y@2).X
      | ((rec X. cr@2?(r@1, r@2).r@1?(z@1).~cr@3!(r@1, r@2, z@1).X)
        | ((rec X. cr@3?(r@1, r@2, z@1).r@2!(-z@1).~cr@4!(r@1, r@2).X)
          | (rec X. cr@4?(r@1, r@2).~crX@X!(r@1, r@2).X)))))
    """)


def test_echo_loop_slots_follow_the_protocol_position():
    # The written subject never advances on a loop channel; the mimicked
    # slot does, jumping from r@1 to r@2 between the two actions.
    got, _, _ = run(ECHO_SRC, ECHO_ENV)
    text = str(got)
    assert "r@1?(z@1)" in text
    assert "r@2!(-z@1)" in text
    assert "~cr@3!(r@1, r@2, z@1)" in text


def test_replicated_server_uses_unrestricted_chains():
    got, _, _ = run(SERVER_SRC)
    text = str(got)
    # The spawning side keeps a loop chain, the spawned chain goes shared.
    assert "(new cr@5: <>)" in text
    assert "(new cr@6: <?(Int).end>)" in text
    assert "rec X.cr@5?().(a@1?(y@1).~cr@6!(y@1).0 | X)" in text
    assert "rec X.cr@6?(y@1).(y@1?(v@1).~cr@7!().0 | X)" in text


# ---------------------------------------------------------------------------
# The two chain builders on their own

def u(i, dual=False):
    return Name("u", i, dual)


def test_breakdown_resumes_mid_chain():
    # The receiving half of the delegation example, entered at slot 6.
    st = BreakdownState(k=6, faces={u(1, dual=True): parse_type("?(" + W + "). end")})
    got = breakdown(st, parse_process("~u@1?(x). x!(5). x?(b). 0"))
    assert_same(got, """
    c@6?().~u@1?(x@1, x@2).~c@7!(x@1, x@2).0
    | (c@7?(x@1, x@2).x@1!(5).~c@8!(x@2).0
      | (c@8?(x@2).x@2?(b@1).~c@9!().0 | c@9?().0))
    """)


def test_breakdown_rejects_uninitialized_input():
    st = BreakdownState(k=1)
    with pytest.raises(DecomposeError):
        breakdown(st, parse_process("u!(3). 0"))


def test_breakdown_rec_builds_looping_trios():
    loop = parse_type("mu t. ?(Int). !(Int). t")
    r1, r2 = Name("r", 1), Name("r", 2)
    st = BreakdownState(
        k=2,
        context=(r1, r2),
        g={"X": (r1, r2)},
        types={r1: parse_type("mu t. ?(Int). t"), r2: parse_type("mu t. !(Int). t")},
        faces={Name("r"): loop},
    )
    got = breakdown_rec(st, parse_process("r@1?(z). r@1!(-z). X"))
    assert_same(got, """
    (rec X. cr@2?(r@1, r@2).r@1?(z@1).~cr@3!(r@1, r@2, z@1).X)
    | ((rec X. cr@3?(r@1, r@2, z@1).r@2!(-z@1).~cr@4!(r@1, r@2).X)
      | (rec X. cr@4?(r@1, r@2).~crX@X!(r@1, r@2).X))
    """)


def test_breakdown_rec_variable_alone():
    r1 = Name("r", 1)
    st = BreakdownState(
        k=4, context=(r1,), g={"X": (r1,)},
        types={r1: parse_type("mu t. ?(Int). t")},
    )
    got = breakdown_rec(st, parse_process("X"))
    assert_same(got, "rec X. cr@4?(r@1).~crX@X!(r@1).X")


def test_breakdown_rec_rejects_a_variable_it_was_not_told_about():
    st = BreakdownState(k=1, context=(), g={})
    with pytest.raises(DecomposeError):
        breakdown_rec(st, parse_process("X"))


# ---------------------------------------------------------------------------
# indexed_pred

def test_indexed_pred_accepts_empty():
    assert indexed_pred((), (), {}, {})


def test_indexed_pred_expands_by_width():
    w1, w2 = Name("w", 1), Name("w", 2)
    delta = {w1: parse_type("?(Int). !(Bool). end")}
    assert indexed_pred((w1, w2), (w1,), {}, delta)
    assert not indexed_pred((w1,), (w1,), {}, delta)


def test_indexed_pred_rejects_unknown_names():
    w1 = Name("w", 1)
    assert not indexed_pred((w1,), (w1,), {}, {})


# ---------------------------------------------------------------------------
# Static correctness: results typecheck under the decomposed environments

CASES = [
    ("0", ""),
    (DELEG_SRC, DELEG_ENV),
    (MATH_SRC, ""),
    (ECHO_SRC, ECHO_ENV),
    (SERVER_SRC, ""),
]


@pytest.mark.parametrize("src,envtext", CASES, ids=["nil", "deleg", "math", "echo", "server"])
def test_decomposition_typechecks_minimal(src, envtext):
    gamma, delta = parse_env(envtext)
    got = decompose(parse_process(src), gamma, delta)
    gamma2, delta2 = decompose_env(init_env(gamma), init_env(delta), "opt")
    report = typecheck(gamma2, delta2, got)
    assert report.ok, report.failures
    assert check_minimality(gamma2, delta2)


@pytest.mark.parametrize("src,envtext", CASES, ids=["nil", "deleg", "math", "echo", "server"])
def test_chain_names_span_the_degree(src, envtext):
    gamma, delta = parse_env(envtext)
    got = decompose(parse_process(src), gamma, delta)
    slots = set()
    while hasattr(got, "name") and got.name.generated:
        assert got.name.base == "c"
        slots.add(got.name.index)
        got = got.cont
    assert slots == set(range(1, len(slots) + 1))


def test_free_names_survive_decomposition():
    got, _, _ = run(DELEG_SRC, DELEG_ENV)
    bases = {n.base for n in free_names(got)}
    assert bases == {"w"}


# ---------------------------------------------------------------------------
# Errors

def test_decompose_rejects_ill_typed_source():
    with pytest.raises(DecomposeError, match="typecheck"):
        decompose(parse_process("(new u: !(Int). end)(u!(true). 0 | ~u?(x). 0)"), {}, {})


def test_decompose_rejects_nested_recursion():
    gamma, delta = parse_env(ECHO_ENV)
    p = parse_process("rec X. rec Y. r?(z). r!(-z). X")
    with pytest.raises(DecomposeError, match="[Nn]ested"):
        decompose(p, gamma, delta)


def test_decompose_rejects_environments_outside_the_fragment():
    gamma, delta = parse_env("r : mu t. +{go: !(Int). t}")
    p = parse_process("rec X. r+go. r!(1). X")
    with pytest.raises(DecomposeError, match="tail recursive"):
        decompose(p, gamma, delta)


def test_breakdown_rec_rejects_choice():
    r1 = Name("r", 1)
    st = BreakdownState(
        k=1, context=(r1,), g={"X": (r1,)},
        types={r1: parse_type("+{go: end}")},
        faces={Name("r"): parse_type("+{go: end}")},
    )
    with pytest.raises(DecomposeError, match="choice"):
        breakdown_rec(st, parse_process("r@1+go. X"))


def test_restriction_needs_an_annotation():
    st = BreakdownState(k=1)
    with pytest.raises(DecomposeError, match="annotation"):
        breakdown(st, parse_process("(new s) (new c@9: ?(). end) 0"))
