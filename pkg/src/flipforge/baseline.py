"""Monolithic ground truth, utility metrics, error range and target adjustment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .interp import ROI, GoldenTrace, Outcomes, SiteSet, run_campaign
from .ir import DetectorConfig
from .propagation import EndToEndSpec
from .protection import (Knapsack, ProtectionModel, Selection, _eps_vector,
                         compute_values, mono_sdc_bad, required_units)

DEFAULT_R = 0.04
CATEGORIES = "ABCDEFGH"


def run_monolithic(tr: GoldenTrace, sites: SiteSet, detector: DetectorConfig | None = None,
                   jobs: int = 1, engine=None) -> Outcomes:
    """Whole-roi campaign classified against the final outputs."""
    return run_campaign(tr, sites, ROI, detector, jobs, engine)


def mono_bad_weights(sites: SiteSet, mono: Outcomes, thresholds) -> tuple[np.ndarray, np.ndarray]:
    eps = _eps_vector(thresholds, mono.outputs)
    bad = mono_sdc_bad(mono, eps)
    return bad, sites.weight


def achieved_value(selection: Selection | list[int], sites: SiteSet, mono: Outcomes,
                   thresholds) -> tuple[float, bool]:
    """Weight share of monolithic SDC-Bad sites whose pc is protected.

    Returns (value, no_bad) where ``no_bad`` flags the empty case, defined
    as value 1.
    """
    pcs = selection.pcs if isinstance(selection, Selection) else selection
    bad, w = mono_bad_weights(sites, mono, thresholds)
    tot = int(w[bad].sum())
    if tot == 0:
        return 1.0, True
    prot = np.isin(sites.pc, np.array(sorted(pcs), dtype=np.int64))
    return int(w[bad & prot].sum()) / tot, False


def categories(selection: Selection | list[int], sites: SiteSet, mono: Outcomes,
               thresholds) -> dict[str, int]:
    """Weighted site counts A..H: protected/unprotected x injected/pruned x
    SDC-Bad/other, all from the monolithic labels."""
    pcs = selection.pcs if isinstance(selection, Selection) else selection
    bad, w = mono_bad_weights(sites, mono, thresholds)
    prot = np.isin(sites.pc, np.array(sorted(pcs), dtype=np.int64))
    inj = ~mono.inferred
    out = {}
    for name, (p, i, b) in zip(CATEGORIES, [(1, 1, 1), (1, 1, 0), (1, 0, 1), (1, 0, 0),
                                            (0, 1, 1), (0, 1, 0), (0, 0, 1), (0, 0, 0)]):
        m = (prot == bool(p)) & (inj == bool(i)) & (bad == bool(b))
        out[name] = int(w[m].sum())
    return out


def _ratio(num: float, den: float) -> float:
    # no SDC-Bad anywhere means protection is trivially complete
    return num / den if den > 0 else 1.0


def error_range(counts: dict[str, int], R: float = DEFAULT_R) -> tuple[float, float, float]:
    """(v_min, v_calc, v_max) for category counts and misprediction rate R."""
    if not 0 <= R <= 1:
        raise ValueError("R must lie in [0, 1]")
    A, B, C, D, E, F, G, H = (counts.get(k, 0) for k in CATEGORIES)
    del B, F
    lo_num = A + (1 - R) * C
    v_min = _ratio(lo_num, lo_num + E + G + R * H)
    hi_num = A + C + R * D
    v_max = _ratio(hi_num, hi_num + E + (1 - R) * G)
    v_calc = _ratio(A + C, A + C + E + G)
    return v_min, v_calc, v_max


@dataclass
class AdjustResult:
    target: float
    adjusted: Fraction
    achieved: float
    reached: bool  # False when even the full selection misses the target


def adjust_target(model: ProtectionModel, sites: SiteSet, mono: Outcomes, thresholds,
                  v_trgt, knapsack: Knapsack | None = None) -> AdjustResult:
    """Smallest knapsack target whose selection reaches ``v_trgt`` under the
    monolithic labels.

    Every required raw value 0..total is a candidate; all selections are
    rebuilt at once and scanned from the bottom, so no monotonicity of the
    achieved value is assumed.
    """
    ks = knapsack or Knapsack(model)
    tgt = Fraction(str(v_trgt)) if isinstance(v_trgt, float) else Fraction(v_trgt)
    if tgt >= 1:
        sel = ks.solve(1.0)
        ach, _ = achieved_value(sel, sites, mono, thresholds)
        return AdjustResult(float(v_trgt), Fraction(1), ach, ach >= 1.0)
    bad, w = mono_bad_weights(sites, mono, thresholds)
    mono_tot = int(w[bad].sum())
    if mono_tot == 0 or ks.total == 0:
        return AdjustResult(float(v_trgt), Fraction(0) if mono_tot == 0 else Fraction(1),
                            1.0 if mono_tot == 0 else 0.0, mono_tot == 0)
    need_mono = math.ceil(tgt * mono_tot)
    # monolithic SDC-Bad weight per knapsack item
    bp, bw = sites.pc[bad], w[bad]
    up, inv = np.unique(bp, return_inverse=True)
    sums = np.bincount(inv, weights=bw).astype(np.int64)
    per_pc = dict(zip(up.tolist(), sums.tolist()))
    item_w = np.array([per_pc.get(p, 0) for p in ks.pcs], dtype=np.int64)
    inc = ks.selection_matrix()
    ach = inc.astype(np.int64) @ item_w
    hit = np.flatnonzero(ach >= need_mono)
    if len(hit) == 0:
        return AdjustResult(float(v_trgt), Fraction(1), float(ach[-1]) / mono_tot, False)
    R = int(hit[0])
    # every target in ((R-1)/total, R/total] selects the same set; keep the
    # original one when it is in that class
    adj = tgt if required_units(tgt, ks.total) == R else Fraction(R, ks.total)
    return AdjustResult(float(v_trgt), adj, float(ach[R]) / mono_tot, True)


def monolithic_model(tr: GoldenTrace, sites: SiteSet, mono: Outcomes, thresholds,
                     costs: dict[int, int]) -> ProtectionModel:
    """Protection model built from the monolithic labels (one section spanning
    the whole roi with the identity end-to-end map)."""
    eps = _eps_vector(thresholds, mono.outputs)
    bad = mono_sdc_bad(mono, eps)
    raw: dict[int, int] = {}
    if bad.any():
        up, inv = np.unique(sites.pc[bad], return_inverse=True)
        sums = np.bincount(inv, weights=sites.weight[bad]).astype(np.int64)
        raw = {int(p): int(s) for p, s in zip(up, sums) if s > 0}
    th = {lam: float(e) for lam, e in zip(mono.outputs, eps)}
    return ProtectionModel(raw, dict(costs), tr.roi_count, th)


@dataclass
class UtilityReport:
    v_trgt: float
    v_trgt_adj: float | None
    v_achv: float
    v_loss: float
    c_ff: float
    c_mono: float
    c_excess: float
    counts: dict[str, int]
    R: float
    v_min: float
    v_calc: float
    v_max: float
    within_error_range: bool
    no_sdc_bad: bool = False
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {"v_trgt": self.v_trgt, "v_trgt_adj": self.v_trgt_adj, "v_achv": self.v_achv,
             "v_loss": self.v_loss, "c_ff": self.c_ff, "c_mono": self.c_mono,
             "c_excess": self.c_excess, "counts": self.counts, "R": self.R,
             "v_min": self.v_min, "v_calc": self.v_calc, "v_max": self.v_max,
             "within_error_range": self.within_error_range, "no_sdc_bad": self.no_sdc_bad}
        d.update(self.extra)
        return d


def utility(sel_ff: Selection, sel_mono: Selection, sites: SiteSet, mono: Outcomes,
            thresholds, R: float = DEFAULT_R) -> UtilityReport:
    v_achv, none = achieved_value(sel_ff, sites, mono, thresholds)
    counts = categories(sel_ff, sites, mono, thresholds)
    v_min, v_calc, v_max = error_range(counts, R)
    return UtilityReport(sel_ff.target, sel_ff.adjusted_target, v_achv, sel_ff.target - v_achv,
                         sel_ff.normalized_cost, sel_mono.normalized_cost,
                         sel_ff.normalized_cost - sel_mono.normalized_cost, counts, R,
                         v_min, v_calc, v_max, v_max >= sel_ff.target, none)


# --------------------------------------------------------------------------
# periodic re-adjustment across program versions

FULL = "full+adjust"
INCREMENTAL = "incremental"


@dataclass
class AdjustState:
    """``m_adj`` counts modifications since the last adjustment, including
    the one being analyzed; it starts at ``P_adj`` so a fresh program gets a
    full analysis."""

    P_adj: int = 1
    m_adj: int | None = None
    adjusted: dict[str, str] = field(default_factory=dict)  # target -> exact fraction

    def __post_init__(self):
        if self.P_adj < 1:
            raise ValueError("P_adj must be >= 1")

    def to_json(self) -> dict:
        return {"P_adj": self.P_adj, "m_adj": self.m_adj, "adjusted": self.adjusted}

    @classmethod
    def from_json(cls, d: dict) -> "AdjustState":
        return cls(int(d["P_adj"]), d.get("m_adj"), {k: str(v) for k, v in
                                                      d.get("adjusted", {}).items()})


def step_modification(state: AdjustState, fresh: bool = False) -> str:
    """Decide the analysis mode for the next program version."""
    if fresh or state.m_adj is None:
        state.m_adj = 0
        return FULL
    state.m_adj += 1
    if state.m_adj >= state.P_adj:
        state.m_adj = 0
        return FULL
    return INCREMENTAL


__all__ = ["run_monolithic", "achieved_value", "categories", "error_range", "adjust_target",
           "monolithic_model", "utility", "UtilityReport", "AdjustState", "step_modification",
           "compute_values", "EndToEndSpec", "required_units"]
