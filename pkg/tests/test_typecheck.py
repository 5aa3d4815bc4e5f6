import pytest

from minpi.parser import parse_env, parse_process, parse_type
from minpi.syntax import Name
from minpi.types import TEnd, decompose_env, dual, teq
from minpi.typecheck import (
    CheckReport,
    check_minimality,
    env_balanced,
    env_confluent,
    env_reduce,
    typecheck,
)

MATH_SRV = "&{add: ?(Int). ?(Int). !(Int). end, neg: ?(Int). !(Int). end}"
MATH_Q = "u&{add: u?(a). u?(b). u!(a + b). 0, neg: u?(a). u!(-a). 0}"
MATH_R = "~u+add. ~u!(16). ~u!(26). ~u?(r). 0"


def test_nil_ok():
    report = typecheck({}, {}, parse_process("0"))
    assert report.ok
    assert report.residual_delta == {}


def test_math_server_closed():
    p = parse_process(f"(new u: {MATH_SRV})({MATH_Q} | {MATH_R})")
    report = typecheck({}, {}, p)
    assert report.ok, report.failures


def test_math_server_open():
    p = parse_process(f"{MATH_Q} | {MATH_R}")
    gamma, delta = parse_env(f"u : {MATH_SRV}\n~u : {str(dual(parse_type(MATH_SRV)))}")
    report = typecheck(gamma, delta, p)
    assert report.ok, report.failures


def test_both_sides_claim_name():
    p = parse_process("s!(1). 0 | s!(2). 0")
    _, delta = parse_env("s : !(Int). end")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert report.failures[0][1] == "Par"


def test_unfinished_session_reported():
    p = parse_process("u!(5). 0")
    _, delta = parse_env("u : !(Int). ?(Bool). end")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert report.failures[0][1] == "Nil"
    left = report.residual_delta[Name("u")]
    assert teq(left, parse_type("?(Bool). end"))


def test_delegation_roundtrip():
    p = parse_process(
        "(new u: !(!(Int). ?(Int). end). end)"
        "(u!(w). ~w?(t). ~w!(succ t). 0 | ~u?(x). x!(5). x?(b). 0)"
    )
    _, delta = parse_env("w : !(Int). ?(Int). end\n~w : ?(Int). !(Int). end")
    report = typecheck({}, delta, p)
    assert report.ok, report.failures


def test_delegated_name_unavailable():
    p = parse_process("u!(w). 0")
    _, delta = parse_env("u : !(!(Int). end). end")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert "delegation" in report.failures[0][2]


def test_recursive_loop():
    p = parse_process("rec X. r?(z). r!(-z). X")
    _, delta = parse_env("r : mu t.?(Int). !(Int). t")
    report = typecheck({}, delta, p)
    assert report.ok, report.failures


def test_recursion_snapshot_mismatch():
    p = parse_process("rec X. r?(z). X")
    _, delta = parse_env("r : mu t.?(Int). !(Int). t")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert report.failures[0][1] == "RVar"


def test_succ_rejects_bool():
    p = parse_process("u!(succ b). 0")
    _, delta = parse_env("u : !(Int). end\nb : Bool")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert "succ" in report.failures[0][2]


def test_addition_types():
    p = parse_process("u!(1 + x). 0")
    _, delta = parse_env("u : !(Int). end\nx : Int")
    assert typecheck({}, delta, p).ok


def test_unbound_subject():
    report = typecheck({}, {}, parse_process("u!(1). 0"))
    assert not report.ok
    assert "unbound" in report.failures[0][2]


def test_arity_mismatch():
    p = parse_process("u!(1, 2). 0")
    _, delta = parse_env("u : !(Int). end")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert "carries" in report.failures[0][2]


def test_branch_label_mismatch():
    p = parse_process("u&{add: 0}")
    _, delta = parse_env("u : &{add: end, neg: end}")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert report.failures[0][1] == "Bra"


def test_selecting_missing_label():
    p = parse_process("u+mul. 0")
    _, delta = parse_env("u : +{add: end}")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert report.failures[0][1] == "Sel"


def test_shared_accept_request():
    p = parse_process(
        "(new a: <?(Int). end>)"
        "(*a?(y). y?(v). 0 | (new s: ?(Int). end)(a!(s). ~s!(3). 0))"
    )
    report = typecheck({}, {}, p)
    assert report.ok, report.failures


def test_replication_rejects_linear_capture():
    p = parse_process("*s!(1). 0")
    _, delta = parse_env("s : !(Int). end")
    report = typecheck({}, delta, p)
    assert not report.ok
    assert report.failures[0][1] == "Repl"


def test_restriction_requires_annotation():
    report = typecheck({}, {}, parse_process("(new s) ~s?(v). 0 | s!(1). 0"))
    assert not report.ok
    assert report.failures[0][1] == "ResS"


# ---------------------------------------------------------------------------
# Environment balance, reduction, confluence


def test_balanced_pair():
    _, delta = parse_env("s : !(Int). end\n~s : ?(Int). end")
    assert env_balanced(delta)


def test_unbalanced_pair():
    _, delta = parse_env("s : !(Int). end\n~s : ?(Bool). end")
    assert not env_balanced(delta)


def test_env_reduce_fires_one_pair():
    _, delta = parse_env("s : !(Int). end\n~s : ?(Int). end")
    out = env_reduce(delta)
    assert teq(out[Name("s")], TEnd())
    assert teq(out[Name("s").bar()], TEnd())


def test_env_reduce_stuck_is_identity():
    _, delta = parse_env("s : end\n~s : end")
    assert env_reduce(delta) == delta


def test_env_confluence():
    _, d1 = parse_env("s1 : !(Bool). end\ns2 : ?(Int). end\n~s2 : !(Int). end")
    _, d2 = parse_env(
        "s1 : !(Bool). end\ns2 : !(Bool). ?(Int). end\n~s2 : ?(Bool). !(Int). end"
    )
    assert env_confluent(d1, d2)


def test_non_confluent_envs():
    _, d1 = parse_env("s : !(Int). end")
    _, d2 = parse_env("s : !(Bool). end")
    assert not env_confluent(d1, d2)


def test_minimality_check():
    assert check_minimality({}, {})
    _, fat = parse_env("u : !(Int). ?(Bool). end")
    assert not check_minimality({}, fat)
    gamma, delta = parse_env("u@1 : !(Int). ?(Bool). end")
    g2, d2 = decompose_env(gamma, delta, mode="opt")
    assert check_minimality(g2, d2)
