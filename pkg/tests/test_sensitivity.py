import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import R, golden, make
from flipforge.interp import run_golden
from flipforge.sensitivity import (NotPerturbationStable, SensitivityConfig, estimate_spec,
                                   totalize)

BODY = """
.entry start
.roi start done
.section s b e
.mem 0 1 {bank} {x}
.mem 1 1 {bank} 0
start:
b: section-begin
{code}
e: section-end
done:
    halt
"""


def section(code, x=2.0, bank="float", mem=2):
    src = BODY.format(code=code, x=x, bank=bank)
    if mem > 2:
        src = src.replace(".mem 1 1", f".mem 1 {mem - 1}")
    p, lay = make(src, [{"id": "s", "inputs": [R("i", 0, bank=bank)],
                         "outputs": [R("o", 1, bank=bank)]}], [R("o", 1, bank=bank)],
                  [(("s#1", "o"), ("final", "o"))])
    return run_golden(p, lay)


SCALE = "    ld f0, [0]\n    ldf f1, 3.2\n    fmul f0, f0, f1\n    st [1], f0"
COPY = "    ld f0, [0]\n    st [1], f0"
SQUARE = "    ld f0, [0]\n    fmul f0, f0, f0\n    st [1], f0"


def K(tr, **kw):
    return estimate_spec(tr, "s#1", SensitivityConfig(**kw)).K[0][0]


@pytest.mark.parametrize("samples", [1, 2, 100])
def test_linear_section(samples):
    assert K(section(SCALE), samples=samples) == pytest.approx(3.2, abs=1e-9)


def test_identity_section():
    assert K(section(COPY), samples=50) == pytest.approx(1.0, abs=1e-12)


def test_square_section():
    k = K(section(SQUARE), samples=4000, phi_max=0.01)
    assert 4.0 <= k <= 4.01


@given(st.floats(-100, 100), st.floats(1e-4, 1.0))
@settings(max_examples=25)
def test_square_never_overestimates(x, phi):
    k = K(section(SQUARE, x=x), samples=64, phi_max=phi)
    # analytic local Lipschitz constant over the ball, plus rounding slack
    assert k <= (2 * abs(x) + phi) * (1 + 1e-9) + 1e-12


def test_integer_section():
    code = "    ld r0, [0]\n    imul r0, r0, 7\n    st [1], r0"
    assert K(section(code, x=3, bank="int"), samples=20) == 7.0


def test_reproducible_and_job_independent():
    tr = section(SQUARE)
    a = estimate_spec(tr, "s#1", SensitivityConfig(samples=3000, seed=5))
    b = estimate_spec(tr, "s#1", SensitivityConfig(samples=3000, seed=5), jobs=3)
    assert a.K == b.K
    assert estimate_spec(tr, "s#1", SensitivityConfig(samples=3000, seed=6)).K != a.K


@given(st.integers(1, 2500))
@settings(max_examples=15)
def test_more_samples_never_lower(n):
    tr = section(SQUARE)
    assert K(tr, samples=2 * n) >= K(tr, samples=n)


def test_unstable_section():
    # only the golden input addresses a valid word; every perturbation traps
    code = "    ld r0, [0]\n    imul r0, r0, 1000\n    isub r0, r0, 4995\n" \
           "    ld r1, [r0]\n    st [1], r1"
    tr = section(code, x=5, bank="int", mem=6)
    with pytest.raises(NotPerturbationStable, match="not perturbation-stable"):
        K(tr, samples=32)


@pytest.mark.parametrize("name,expected", [
    ("affine", {"lin1#1": [[5]], "lin2#1": [[3]], "lin3#1": [[3, 5]], "lin4#1": [[3, 2]]}),
    ("affine_f", {"lin1#1": [[2]], "lin2#1": [[4]], "lin3#1": [[2, 0.25]],
                  "lin4#1": [[0.5, 8]]}),
])
def test_affine_benchmarks_exact(name, expected):
    tr = golden(name)
    for iid, k in expected.items():
        got = estimate_spec(tr, iid, SensitivityConfig(samples=600)).K
        assert got[0] == pytest.approx(k[0], rel=1e-9)


def test_totalize_shapes():
    tr = section(SCALE)
    spec = estimate_spec(tr, "s#1", SensitivityConfig(samples=8))
    t = totalize(spec)
    assert t.symbols == [("s#1", 0)] and t.inputs == ["i"]
    src = totalize(type(spec)("a#1", [], ["o", "p"], [[], []]))
    assert src.symbols == [("a#1", 0), ("a#1", 1)] and src.K == [[], []]
