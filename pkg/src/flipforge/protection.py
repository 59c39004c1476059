"""Per-instruction protection value and minimum-cost selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .interp import TAG_MASKED, TAG_SDC, Outcomes, SiteSet
from .propagation import EndToEndSpec, SpecializedForm, specialize

MAX_TABLE = 60_000_000


class InfeasibleTarget(ValueError):
    pass


def _eps_vector(thresholds, names: list[str]) -> np.ndarray:
    if isinstance(thresholds, (int, float)):
        return np.full(len(names), float(thresholds))
    return np.array([float(thresholds.get(n, thresholds.get("*", 0.0))) for n in names])


def bounds_matrix(form: SpecializedForm, r: np.ndarray) -> np.ndarray:
    """Evaluate a specialized form for many sites at once: [n, n_lambda].

    Uses 0 * inf = 0 (a zero coefficient means the output is unreachable).
    """
    lams = list(form.coeffs)
    n = r.shape[0]
    if form.always_inf:
        return np.full((n, len(lams)), math.inf)
    A = np.array([form.coeffs[lam] for lam in lams], dtype=np.float64).reshape(len(lams), -1)
    if A.shape[1] != r.shape[1]:
        raise ValueError("form and outcome dimensions differ")
    inf = np.isinf(r)
    fin = np.where(inf, 0.0, r)
    with np.errstate(over="ignore", invalid="ignore"):
        out = fin @ A.T
    reach = (inf.astype(np.float64) @ (A.T > 0).astype(np.float64)) > 0
    out[reach] = math.inf
    return out


def sdc_bad(form: SpecializedForm, outcomes: Outcomes, eps: np.ndarray) -> np.ndarray:
    """Per-site flag: not detected and some end-to-end bound exceeds eps."""
    live = (outcomes.tags == TAG_SDC) | (outcomes.tags == TAG_MASKED)
    if form.always_inf:
        return np.ones(len(outcomes), dtype=bool)
    b = bounds_matrix(form, outcomes.r)
    return live & (b > eps[None, :]).any(axis=1)


def mono_sdc_bad(outcomes: Outcomes, eps: np.ndarray) -> np.ndarray:
    return (outcomes.tags == TAG_SDC) & (outcomes.r > eps[None, :]).any(axis=1)


@dataclass
class ProtectionModel:
    raw: dict[int, int]  # pc -> SDC-Bad weight units
    cost: dict[int, int]  # pc -> dynamic instance count in roi
    roi_count: int
    thresholds: dict[str, float] = field(default_factory=dict)

    @property
    def total_raw(self) -> int:
        return sum(self.raw.values())

    def value(self, pc: int) -> float:
        t = self.total_raw
        return self.raw.get(pc, 0) / t if t else 0.0

    def values(self) -> dict[int, float]:
        return {pc: self.value(pc) for pc in sorted(self.cost)}

    def to_json(self) -> dict:
        return {"total_raw": self.total_raw, "roi_count": self.roi_count,
                "pcs": [{"pc": pc, "raw": self.raw.get(pc, 0), "value": self.value(pc),
                         "cost": c} for pc, c in sorted(self.cost.items())]}


def compute_values(outcomes: dict[str, Outcomes], sites: dict[str, SiteSet],
                   e2e: EndToEndSpec, thresholds, costs: dict[int, int],
                   bottom: SiteSet | None = None, roi_count: int | None = None
                   ) -> ProtectionModel:
    """Accumulate the weight of every SDC-Bad site onto its static pc.

    ``outcomes``/``sites`` are keyed by instance id; ``bottom`` holds the
    sites outside every instance, which always count.
    """
    eps = _eps_vector(thresholds, e2e.outputs)
    raw: dict[int, int] = {}

    def add(ss: SiteSet, mask: np.ndarray) -> None:
        pcs = ss.pc[mask]
        w = ss.weight[mask]
        if len(pcs) == 0:
            return
        up, inv = np.unique(pcs, return_inverse=True)
        sums = np.bincount(inv, weights=w).astype(np.int64)
        for pc, s in zip(up.tolist(), sums.tolist()):
            raw[pc] = raw.get(pc, 0) + int(s)

    for iid, ss in sites.items():
        if iid not in outcomes:
            raise KeyError(f"site set {iid} lacks outcomes")
        oc = outcomes[iid]
        if len(oc) != len(ss) or not np.array_equal(oc.ids, ss.ids):
            raise KeyError(f"outcomes of {iid} do not cover its sites")
        add(ss, sdc_bad(specialize(e2e, iid), oc, eps))
    if bottom is not None and len(bottom):
        add(bottom, np.ones(len(bottom), dtype=bool))
    th = {lam: float(e) for lam, e in zip(e2e.outputs, eps)}
    raw = {pc: v for pc, v in raw.items() if v > 0}
    total_cost = roi_count if roi_count is not None else sum(costs.values())
    return ProtectionModel(raw, dict(costs), total_cost, th)


# --------------------------------------------------------------------------
# knapsack


@dataclass
class Selection:
    target: float
    pcs: list[int]
    value_raw: int
    value: float
    cost: int
    normalized_cost: float
    adjusted_target: float | None = None

    def to_json(self) -> dict:
        return {"target": self.target, "adjusted_target": self.adjusted_target,
                "pcs": self.pcs, "value": self.value, "value_raw": self.value_raw,
                "cost": self.cost, "normalized_cost": self.normalized_cost}


def required_units(v_trgt, total: int) -> int:
    """ceil(v_trgt * total) computed exactly."""
    if not isinstance(v_trgt, Fraction):
        v_trgt = Fraction(str(v_trgt)) if isinstance(v_trgt, float) else Fraction(v_trgt)
    if v_trgt < 0 or v_trgt > 1:
        raise InfeasibleTarget(f"target {v_trgt} outside [0, 1]")
    return math.ceil(v_trgt * total)


class Knapsack:
    """Minimum-cost selection over integer raw-value units.

    ``D[i][u]`` is the smallest key ``cost * (n + 1) + count`` for reaching at
    least ``u`` raw units with items ``i..n-1`` (ascending pc order), so the
    key orders by cost first and instruction count second. Members are rebuilt
    front to back, taking a pc whenever taking it stays optimal, which picks
    the lexicographically smallest set among the ties.
    """

    def __init__(self, model: ProtectionModel):
        self.model = model
        self.pcs = sorted(model.raw)
        n = len(self.pcs)
        self.v = np.array([model.raw[p] for p in self.pcs], dtype=np.int64)
        c = np.array([model.cost[p] for p in self.pcs], dtype=np.int64)
        if (c < 1).any():
            raise ValueError("every protected pc needs a positive cost")
        self.c = c
        self.total = int(self.v.sum())
        if (n + 1) * (self.total + 1) > MAX_TABLE:
            raise ValueError("knapsack table too large")
        self.key = c * (n + 1) + 1
        big = int(self.key.sum()) + 1
        dtype = np.int32 if big < 2**31 - 1 else np.int64
        D = np.empty((n + 1, self.total + 1), dtype=dtype)
        D[n] = big
        D[n, 0] = 0
        u = np.arange(self.total + 1)
        for i in range(n - 1, -1, -1):
            rest = D[i + 1][np.maximum(u - self.v[i], 0)].astype(np.int64) + self.key[i]
            D[i] = np.minimum(D[i + 1], np.minimum(rest, big))
        self.D = D
        self.big = big

    def members(self, need: int) -> list[int]:
        if need > self.total:
            raise InfeasibleTarget("target exceeds total value")
        out = []
        for i in range(len(self.pcs)):
            if need <= 0:
                break
            best = int(self.D[i][need])
            if int(self.key[i]) + int(self.D[i + 1][max(need - int(self.v[i]), 0)]) == best:
                out.append(self.pcs[i])
                need -= int(self.v[i])
        return out

    def solve(self, v_trgt, adjusted=None) -> Selection:
        tgt = adjusted if adjusted is not None else v_trgt
        need = required_units(tgt, self.total)
        pcs = self.members(need)
        raw = sum(self.model.raw[p] for p in pcs)
        cost = sum(self.model.cost[p] for p in pcs)
        return Selection(float(v_trgt), pcs, raw, raw / self.total if self.total else 0.0,
                         cost, cost / self.model.roi_count if self.model.roi_count else 0.0,
                         None if adjusted is None else float(adjusted))

    def selection_matrix(self) -> np.ndarray:
        """Member masks for every required value 0..total at once: [total+1, n]."""
        n = len(self.pcs)
        need = np.arange(self.total + 1, dtype=np.int64)
        inc = np.zeros((self.total + 1, n), dtype=bool)
        for i in range(n):
            best = self.D[i][need].astype(np.int64)
            alt = self.key[i] + self.D[i + 1][np.maximum(need - self.v[i], 0)].astype(np.int64)
            take = (need > 0) & (alt == best)
            inc[:, i] = take
            need = np.where(take, np.maximum(need - self.v[i], 0), need)
        return inc


def solve_knapsack(model: ProtectionModel, v_trgt) -> Selection:
    return Knapsack(model).solve(v_trgt)


def sweep(model: ProtectionModel, targets) -> list[Selection]:
    ks = Knapsack(model)
    return [ks.solve(t) for t in targets]
