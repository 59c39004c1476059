import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import R, make
from flipforge.baseline import (FULL, INCREMENTAL, AdjustState, achieved_value, adjust_target,
                                categories, error_range, step_modification, utility)
from flipforge.interp import (BOTTOM, ROI, PruneConfig, enumerate_sites, run_campaign,
                              run_golden, run_shared)
from flipforge.propagation import compose, specialize
from flipforge.protection import (Knapsack, ProtectionModel, _eps_vector, mono_sdc_bad, sdc_bad,
                                  solve_knapsack)
from flipforge.sensitivity import SensitivityConfig, estimate_spec, totalize
from test_protection import outcomes, sites

counts8 = st.lists(st.integers(0, 10**6), min_size=8, max_size=8).map(
    lambda v: dict(zip("ABCDEFGH", v)))


def test_error_range_example():
    lo, calc, hi = error_range({"A": 8, "C": 1, "D": 1, "E": 1}, 0.5)
    assert lo == pytest.approx(8.5 / 9.5, abs=1e-12)
    assert calc == pytest.approx(0.9, abs=1e-12)
    assert hi == pytest.approx(9.5 / 10.5, abs=1e-12)


def test_error_range_all_protected():
    assert error_range({"A": 5, "C": 2}, 0.3) == (1.0, 1.0, 1.0)
    assert error_range({}, 0.04) == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        error_range({"A": 1}, 1.5)


@given(counts8, st.floats(0, 1))
def test_error_range_ordered(c, r):
    lo, calc, hi = error_range(c, r)
    assert lo <= calc * (1 + 1e-12) and calc <= hi * (1 + 1e-12)
    assert 0 <= lo and hi <= 1


@given(counts8)
def test_error_range_collapses_at_r0(c):
    lo, calc, hi = error_range(c, 0.0)
    assert lo == pytest.approx(calc, abs=1e-12) and hi == pytest.approx(calc, abs=1e-12)


def mono_set(weights):
    """One monolithic site per pc carrying the pc's SDC-Bad weight (weight 0 -> masked)."""
    pcs = sorted(weights)
    ss = sites(ROI, pcs, [max(weights[p], 1) for p in pcs])
    tags = [1 if weights[p] else 0 for p in pcs]
    oc = outcomes(ss, tags, [[1.0 if weights[p] else 0.0] for p in pcs])
    return ss, oc


def test_achieved_value_examples():
    ss, oc = mono_set({p: 1 for p in range(10)})
    th = {"o": 0.0}
    assert achieved_value(list(range(10)), ss, oc, th) == (1.0, False)
    assert achieved_value(list(range(9)), ss, oc, th) == (0.9, False)
    assert achieved_value([], ss, oc, th) == (0.0, False)
    ss, oc = mono_set({1: 0, 2: 0})
    assert achieved_value([], ss, oc, th) == (1.0, True)


def masking_case():
    """Compositional values spread evenly; monolithically pc 9 hides 12% of the
    SDC-Bad weight that the others lose to downstream masking."""
    comp = ProtectionModel({p: 10 for p in range(10)}, {**{p: 1 for p in range(9)}, 9: 100},
                           109)
    mono = {p: 10 for p in range(8)}
    mono[8] = 8
    mono[9] = 12
    return comp, mono_set(mono)


def test_adjust_raises_target_under_masking():
    comp, (ss, oc) = masking_case()
    th = {"o": 0.0}
    sel = solve_knapsack(comp, 0.9)
    assert achieved_value(sel, ss, oc, th)[0] == pytest.approx(0.88)
    a = adjust_target(comp, ss, oc, th, 0.9)
    assert a.reached and a.adjusted > Fraction(9, 10)
    assert achieved_value(Knapsack(comp).solve(0.9, a.adjusted), ss, oc, th)[0] >= 0.9
    # the scan returns the smallest sufficient target
    below = Fraction(a.adjusted.numerator - 1, a.adjusted.denominator)
    assert achieved_value(Knapsack(comp).solve(0.9, below), ss, oc, th)[0] < 0.9


def test_adjust_full_target_stays_full():
    comp, (ss, oc) = masking_case()
    a = adjust_target(comp, ss, oc, {"o": 0.0}, 1.0)
    assert a.adjusted == 1 and a.achieved == 1.0


def test_adjust_unreachable_is_flagged():
    comp = ProtectionModel({0: 5}, {0: 1, 1: 1}, 2)
    ss, oc = mono_set({0: 1, 1: 3})
    a = adjust_target(comp, ss, oc, {"o": 0.0}, 0.9)
    assert not a.reached and a.adjusted == 1


@given(st.lists(st.integers(0, 20), min_size=1, max_size=10), st.integers(1, 4),
       st.floats(0, 0.99))
def test_superset_labels_never_raise_target(mono_w, scale, t):
    # every monolithic SDC-Bad site is also compositional SDC-Bad, with the
    # same proportion of extra compositional labels on every pc
    mono = dict(enumerate(mono_w))
    comp = ProtectionModel({p: w * scale for p, w in mono.items() if w},
                           {p: 1 + p % 3 for p in mono}, 30)
    ss, oc = mono_set(mono)
    a = adjust_target(comp, ss, oc, {"o": 0.0}, t)
    assert a.reached and a.adjusted <= Fraction(str(t))


def test_step_modification():
    st2 = AdjustState(2)
    assert step_modification(st2) == FULL  # fresh program
    assert [step_modification(st2) for _ in range(3)] == [INCREMENTAL, FULL, INCREMENTAL]
    st1 = AdjustState(1)
    assert [step_modification(st1) for _ in range(4)] == [FULL] * 4
    assert step_modification(st2, fresh=True) == FULL
    with pytest.raises(ValueError):
        AdjustState(0)


def test_adjust_state_json_keeps_fractions():
    s = AdjustState(3, 1, {"0.9": "7/23"})
    again = AdjustState.from_json(s.to_json())
    assert again == s and Fraction(again.adjusted["0.9"]) == Fraction(7, 23)


SINGLE = """
.entry start
.roi start done
.section lin b e
.mem 0 2 int 4 -9
.mem 2 1 int 0
start:
b: section-begin
    ld r1, [0]
    ld r2, [1]
    imul r1, r1, 3
    imul r2, r2, 2
    iadd r3, r1, r2
    st [2], r3
e: section-end
done:
    halt
"""


def _pipeline(p, lay, th):
    tr = run_golden(p, lay)
    sec = {i.id: enumerate_sites(tr, i.id) for i in tr.instances}
    whole = enumerate_sites(tr, ROI)
    mono, comp, _ = run_shared(tr, whole, sec)
    specs = [totalize(estimate_spec(tr, i.id, SensitivityConfig(samples=256)))
             for i in tr.instances]
    e2e = compose(lay.dataflow, specs, tr.order)
    return tr, whole, mono, sec, comp, e2e


def test_single_section_labels_agree():
    p, lay = make(SINGLE, [{"id": "lin", "inputs": [R("x", 0, 2, "int")],
                            "outputs": [R("o", 2, bank="int")]}], [R("o", 2, bank="int")],
                  [(("lin#1", "o"), ("final", "o"))])
    for eps in (0.0, 5.0, 1e6):
        tr, whole, mono, sec, comp, e2e = _pipeline(p, lay, eps)
        eps_v = np.array([eps])
        c_bad = sdc_bad(specialize(e2e, "lin#1"), comp["lin#1"], eps_v)
        m_bad = mono_sdc_bad(mono, eps_v)
        pos = whole.position_of()
        idx = [pos[int(i)] for i in sec["lin#1"].ids]
        assert np.array_equal(c_bad, m_bad[idx])


SQUASH = """
.entry start
.roi start done
.section a ab ae
.section b bb be
.mem 0 1 float 1.25
.mem 1 2 float 0.0
start:
ab: section-begin
    ld f1, [0]
    fadd f1, f1, f1
    st [1], f1
ae: section-end
    ldi r9, 3
bb: section-begin
    ld f1, [1]
    ldf f2, 7.0
    st [2], f2
be: section-end
done:
    halt
"""


def _squash():
    return make(SQUASH, [{"id": "a", "inputs": [R("x", 0)], "outputs": [R("y", 1)]},
                         {"id": "b", "inputs": [R("y", 1)], "outputs": [R("z", 2)]}],
                [R("z", 2)], [(("a#1", "y"), ("b#1", "y")), (("b#1", "z"), ("final", "z"))])


def test_downstream_overwrite_masks_monolithically():
    p, lay = _squash()
    tr, whole, mono, sec, comp, e2e = _pipeline(p, lay, 0.0)
    a = comp["a#1"]
    pos = whole.position_of()
    m_tags = mono.tags[[pos[int(i)] for i in sec["a#1"].ids]]
    both = (a.tags == 1) & (m_tags == 0)
    assert both.any()
    assert (m_tags == 0).all()


def test_bottom_sites_get_real_outcomes():
    p, lay = _squash()
    tr, whole, mono, sec, comp, e2e = _pipeline(p, lay, 0.0)
    bot = enumerate_sites(tr, BOTTOM)
    assert len(bot) == 64  # ldi r9 between the sections
    pos = whole.position_of()
    rows = [pos[int(i)] for i in bot.ids]
    assert (mono.tags[rows] == 0).all() and np.isfinite(mono.r[rows]).all()
    assert specialize(e2e, BOTTOM).always_inf


def test_utility_fields():
    comp, (ss, oc) = masking_case()
    mono_model = ProtectionModel({p: 10 for p in range(10)}, comp.cost, comp.roi_count)
    ff, mo = solve_knapsack(comp, 0.9), solve_knapsack(mono_model, 0.9)
    u = utility(ff, mo, ss, oc, {"o": 0.0}, 0.04)
    assert u.v_loss == pytest.approx(0.9 - u.v_achv)
    assert u.c_excess == pytest.approx(u.c_ff - u.c_mono)
    assert sum(u.counts.values()) == int(ss.weight.sum())
    assert u.v_min <= u.v_calc <= u.v_max
    assert u.counts == categories(ff, ss, oc, {"o": 0.0})
    assert math.isclose(u.v_calc, u.v_achv)  # prune off: calc equals the truth
    assert _eps_vector({"o": 0.5}, ["o"]).tolist() == [0.5]


def test_prune_on_categories_cover_all_weight():
    p, lay = _squash()
    tr = run_golden(p, lay)
    whole = enumerate_sites(tr, ROI, PruneConfig(True))
    mono = run_campaign(tr, whole)
    c = categories([], whole, mono, {"z": 0.0})
    assert sum(c.values()) == len(whole)
