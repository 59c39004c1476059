import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import path_coefficients, random_dag
from flipforge.ir import FINAL, DataflowEdge
from flipforge.propagation import (DanglingEdge, TotalSdcSpec, compose, evaluate, specialize)


def spec(iid, K, inputs=("i",), outputs=("o",)):
    return TotalSdcSpec(iid, list(inputs), list(outputs), K,
                        [(iid, k) for k in range(len(outputs))])


def E(a, b):
    return DataflowEdge(tuple(a), tuple(b))


def test_chain():
    edges = [E(("A#1", "o"), ("B#1", "i")), E(("B#1", "o"), (FINAL, "out"))]
    e2e = compose(edges, [spec("A#1", [[2.0]]), spec("B#1", [[3.0]])], ["A#1", "B#1"], ["out"])
    assert e2e.forms["out"] == {("A#1", 0): 3.0, ("B#1", 0): 1.0}
    assert e2e.render() == "d(out) <= 3*phi[A#1.0] + phi[B#1.0]"
    assert specialize(e2e, "A#1").coeffs == {"out": [3.0]}


def test_single_section():
    e2e = compose([E(("S#1", "o"), (FINAL, "out"))], [spec("S#1", [], inputs=())])
    assert e2e.forms == {"out": {("S#1", 0): 1.0}}


def test_two_outputs_specialize():
    edges = [E(("A#1", "p"), (FINAL, "x")), E(("A#1", "q"), (FINAL, "x"))]
    e2e = compose(edges, [spec("A#1", [[], []], inputs=(), outputs=("p", "q"))])
    assert specialize(e2e, "A#1").coeffs == {"x": [1.0, 1.0]}


def test_bottom_is_always_inf():
    e2e = compose([E(("S#1", "o"), (FINAL, "out"))], [spec("S#1", [], inputs=())])
    f = specialize(e2e, "bottom")
    assert f.always_inf and evaluate(f, []) == {"out": math.inf}


def test_evaluate_conventions():
    e2e = compose([E(("A#1", "p"), (FINAL, "x"))],
                  [spec("A#1", [[], []], inputs=(), outputs=("p", "q"))])
    f = specialize(e2e, "A#1")
    assert evaluate(f, [0.5, math.inf]) == {"x": 0.5}  # 0 * inf == 0
    assert evaluate({"a": 3.0}, {"a": 0.5}) == 1.5
    assert evaluate({"a": 2.0}, {"a": math.inf}) == math.inf
    assert evaluate({"a": 0.0}, {"a": math.inf}) == 0.0
    with pytest.raises(ValueError):
        evaluate({"a": 1.0}, {"a": -1.0})


def test_dangling_edge():
    with pytest.raises(DanglingEdge, match="dangling dataflow edge"):
        compose([E(("A#1", "o"), ("B#1", "i"))], [spec("B#1", [[1.0]])], ["B#1"], ["out"])
    with pytest.raises(DanglingEdge):
        compose([E(("A#1", "o"), ("B#1", "zz"))], [spec("A#1", [[]], inputs=()),
                                                  spec("B#1", [[1.0]])], ["A#1", "B#1"], ["o"])


def test_lu_shaped_chain():
    ids = [f"s{n}#{k}" for k in (1, 2) for n in range(1, 5)]
    Ks = [4.5, 1.3, 2.0, 3.1, 1.0, 2.2, 1.7, 1.25]
    edges = [E((a, "o"), (b, "i")) for a, b in zip(ids, ids[1:])]
    edges.append(E((ids[-1], "o"), (FINAL, "A")))
    specs = [spec(i, [[k]]) for i, k in zip(ids, Ks)]
    e2e = compose(edges, specs, ids, ["A"])
    coeffs = [e2e.forms["A"][(i, 0)] for i in ids]
    assert coeffs[-1] == 1.0
    assert all(a >= b for a, b in zip(coeffs, coeffs[1:]))
    assert coeffs[0] == pytest.approx(math.prod(Ks[1:]))


@given(st.integers(0, 2**32 - 1))
def test_matches_path_oracle(seed):
    edges, specs, order, finals = random_dag(random.Random(seed))
    e2e = compose(edges, specs, order, finals)
    want = path_coefficients(edges, specs, finals)
    for lam in finals:
        for sym, c in want[lam].items():
            assert e2e.forms[lam].get(sym, 0.0) == pytest.approx(c, rel=1e-9, abs=1e-12)
        assert all(c >= 0 for c in e2e.forms[lam].values())


@given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_topological_order_independent(seed, shuffler):
    edges, specs, order, finals = random_dag(random.Random(seed))
    preds = {iid: set() for iid in order}
    for e in edges:
        if e.dst[0] != FINAL:
            preds[e.dst[0]].add(e.src[0])
    # random topological order
    done = []
    left = list(order)
    while left:
        ready = [i for i in left if preds[i] <= set(done)]
        pick = shuffler.choice(ready)
        done.append(pick)
        left.remove(pick)
    a = compose(edges, specs, order, finals)
    b = compose(edges, specs, done, finals)
    for lam in finals:
        assert a.forms[lam].keys() == b.forms[lam].keys()
        for s in a.forms[lam]:
            assert a.forms[lam][s] == pytest.approx(b.forms[lam][s], rel=1e-12)
