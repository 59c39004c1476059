"""Golden execution, error-site enumeration and bitflip injection campaigns."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _pykernel as pk
from . import kernel
from .ir import (FINAL, DetectorConfig, Program, Region, SectionLayout,
                 effective_outputs, instance_id, merge_regions)

CK_INTERVAL = 64
TIMEOUT_FACTOR = 5
DEFAULT_STEP_CAP = 10_000_000

SLOT_NAMES = ("src0", "src1", "dst")
TAGS = ("masked", "sdc", "crash", "timeout", "detected")
TAG_MASKED, TAG_SDC, TAG_CRASH, TAG_TIMEOUT, TAG_DETECTED = range(5)
ROI = "roi"
BOTTOM = "bottom"


class InvalidBenchmark(RuntimeError):
    """The golden run traps, does not halt, or violates the layout."""


class LayoutViolation(InvalidBenchmark):
    pass


@dataclass
class Instance:
    """One dynamic instance of a static section in the golden run."""

    id: str
    sid: str
    k: int
    index: int
    begin_dyn: int
    end_dyn: int
    ck: int  # checkpoint index holding the state at begin_dyn
    end_ck: int  # checkpoint index holding the state just after end_dyn
    inputs: list[Region]
    outputs: list[Region]  # effective outputs
    live_in: list[tuple[int, int]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.end_dyn - self.begin_dyn + 1


@dataclass
class PruneConfig:
    enabled: bool = True

    def to_json(self) -> dict:
        return {"enabled": self.enabled}


@dataclass
class GoldenTrace:
    program: Program
    layout: SectionLayout
    code: np.ndarray
    pcs: np.ndarray  # pc per dyn index
    in_roi: np.ndarray  # bool per dyn index
    inst_of: np.ndarray  # instance index per dyn, -1 when outside every instance
    store_addr: np.ndarray  # -1 when the instruction is not a store
    slot_dyn: np.ndarray
    slot_idx: np.ndarray
    slot_reg: np.ndarray
    slot_val: np.ndarray  # uint64 operand bits
    instances: list[Instance]
    ck_dyn: np.ndarray
    ck_pc: np.ndarray
    ck_roi: np.ndarray
    ck_ireg: np.ndarray
    ck_freg: np.ndarray
    ck_mem: np.ndarray
    final_mem: np.ndarray
    total_dyn: int
    roi_count: int
    _sites: "SiteSet | None" = None

    def instance(self, iid: str) -> Instance:
        for inst in self.instances:
            if inst.id == iid:
                return inst
        raise KeyError(f"unknown instance {iid!r}")

    @property
    def order(self) -> list[str]:
        return [i.id for i in self.instances]

    def counts(self) -> dict[str, int]:
        """Dynamic roi instruction count per scope."""
        out = {inst.id: int(np.count_nonzero(self.in_roi[inst.begin_dyn:inst.end_dyn + 1]))
               for inst in self.instances}
        out[BOTTOM] = int(np.count_nonzero(self.in_roi & (self.inst_of < 0)))
        out[ROI] = self.roi_count
        return out

    def pc_counts(self) -> dict[int, int]:
        """Dynamic instance count of every static pc inside the roi."""
        pcs, cnt = np.unique(self.pcs[self.in_roi], return_counts=True)
        return {int(p): int(c) for p, c in zip(pcs, cnt)}

    def region_values(self, ck: int, regions) -> list[list[int]]:
        mem = self.ck_mem[ck]
        return [[int(mem[w]) for w in r.words()] for r in regions]

    def final_outputs(self) -> list[Region]:
        return list(self.layout.final_outputs)


# --------------------------------------------------------------------------
# golden run


def _start_state(p: Program) -> dict:
    return {"pc": p.entry, "dyn": 0, "roi": 0, "ir": [0] * 32, "fr": [0.0] * 32,
            "mem": list(p.memory)}


def run_golden(p: Program, layout: SectionLayout, step_cap: int = DEFAULT_STEP_CAP,
               check_layout: bool = True) -> GoldenTrace:
    """Execute the program once, recording the trace, checkpoints and the
    section instance structure."""
    code_np = pk.encode(p)
    code = [tuple(int(v) for v in row) for row in code_np]
    st = _start_state(p)
    trace: list = []
    ev = pk.run(code, st, roi=p.roi, total_limit=step_cap, trace=trace)
    if ev != pk.EV_HALT:
        why = {pk.EV_CRASH: "traps", pk.EV_ABORT: "aborts"}.get(ev, "exceeds the step cap")
        raise InvalidBenchmark(f"invalid benchmark: golden run {why}")
    final_mem = st["mem"]
    total = st["dyn"]
    pcs = np.fromiter((rec[1] for rec in trace), dtype=np.int64, count=total)
    roi_lo, roi_hi = p.roi
    in_roi = (pcs >= roi_lo) & (pcs < roi_hi)

    # instance structure
    begin_of = {b: sid for sid, (b, e) in p.sections.items()}
    end_of = {e: sid for sid, (b, e) in p.sections.items()}
    inst_of = np.full(total, -1, dtype=np.int64)
    spans: list[tuple[str, int, int, int]] = []
    seen: dict[str, int] = {}
    open_sid = None
    open_begin = 0
    for d in range(total):
        pc = int(pcs[d])
        if pc in begin_of:
            if open_sid is not None:
                raise InvalidBenchmark(f"invalid benchmark: section {begin_of[pc]} begins "
                                       f"inside {open_sid}")
            open_sid = begin_of[pc]
            open_begin = d
        elif pc in end_of:
            if open_sid != end_of[pc]:
                raise InvalidBenchmark(f"invalid benchmark: unmatched section-end of {end_of[pc]}")
            seen[open_sid] = seen.get(open_sid, 0) + 1
            spans.append((open_sid, seen[open_sid], open_begin, d))
            inst_of[open_begin:d + 1] = len(spans) - 1
            open_sid = None
    if open_sid is not None:
        raise InvalidBenchmark(f"invalid benchmark: section {open_sid} never ends")

    # checkpoints: regular interval plus instance boundaries
    ck_set = set(range(0, total, CK_INTERVAL))
    for _, _, b, e in spans:
        ck_set.add(b)
        ck_set.add(e + 1)
    ck_list = sorted(ck_set)
    ck_pc, ck_roi, ck_ir, ck_fr, ck_mem = [], [], [], [], []
    st3 = _start_state(p)
    for d in ck_list:
        if d > st3["dyn"]:
            _advance(code, st3, p.roi, d)
        ck_pc.append(st3["pc"])
        ck_roi.append(st3["roi"])
        ck_ir.append(list(st3["ir"]))
        ck_fr.append(list(st3["fr"]))
        ck_mem.append(list(st3["mem"]))
    ck_index = {d: i for i, d in enumerate(ck_list)}

    # trace records -> slot arrays and store addresses
    sd, si, sr, sv = [], [], [], []
    store_addr = np.full(total, -1, dtype=np.int64)
    for d, rec in enumerate(trace):
        vals = rec[0]
        if rec[3]:
            store_addr[d] = rec[2]
        if not in_roi[d] or not vals:
            continue
        for (name, u), v in zip(p.instructions[int(pcs[d])].slots(), vals):
            sd.append(d)
            si.append(2 if name == "dst" else int(name[3]))
            sr.append(u)
            sv.append(v)

    mem_size = p.mem_size
    instances = []
    for idx, (sid, k, b, e) in enumerate(spans):
        try:
            sec = layout.section(sid)
        except KeyError:
            raise LayoutViolation(f"layout violation: section {sid} missing from layout") from None
        outs = effective_outputs(sec, layout, mem_size)
        inst = Instance(instance_id(sid, k), sid, k, idx, b, e, ck_index[b], ck_index[e + 1],
                        list(sec.inputs), outs)
        inst.live_in = _live_in(p, pcs, sr, sd, si, sv, b, e)
        instances.append(inst)
        if check_layout:
            for d in range(b, e + 1):
                a = int(store_addr[d])
                if a >= 0 and not any(r.addr <= a < r.end for r in outs):
                    raise LayoutViolation(
                        f"layout violation: section {sid} (instance {inst.id}) stores to word "
                        f"{a} outside its effective outputs at pc {int(pcs[d])}")

    tr = GoldenTrace(
        program=p, layout=layout, code=code_np, pcs=pcs, in_roi=in_roi, inst_of=inst_of,
        store_addr=store_addr,
        slot_dyn=np.array(sd, dtype=np.int64), slot_idx=np.array(si, dtype=np.int64),
        slot_reg=np.array(sr, dtype=np.int64), slot_val=np.array(sv, dtype=np.uint64),
        instances=instances,
        ck_dyn=np.array(ck_list, dtype=np.int64), ck_pc=np.array(ck_pc, dtype=np.int64),
        ck_roi=np.array(ck_roi, dtype=np.int64),
        ck_ireg=np.array(ck_ir, dtype=np.int64).reshape(len(ck_list), 32),
        ck_freg=np.array(ck_fr, dtype=np.float64).reshape(len(ck_list), 32),
        ck_mem=np.array(ck_mem, dtype=np.uint64).reshape(len(ck_list), mem_size),
        final_mem=np.array(final_mem, dtype=np.uint64), total_dyn=total,
        roi_count=int(np.count_nonzero(in_roi)))
    _check_detector_on_golden(tr)
    return tr


def _advance(code, st, roi, target_dyn):
    # the step limit doubles as a pause point: stops with dyn == target_dyn
    pk.run(code, st, roi=roi, total_limit=target_dyn - 1)


def _live_in(p, pcs, sr, sd, si, sv, b, e):
    # registers read inside [b, e] before being written there
    lo = np.searchsorted(np.asarray(sd, dtype=np.int64), b, side="left") if sd else 0
    written: set[int] = set()
    out: dict[int, int] = {}
    j = int(lo)
    n = len(sd)
    while j < n and sd[j] <= e:
        d = sd[j]
        # all slots of one dyn index are contiguous: sources first, then dst
        while j < n and sd[j] == d:
            u = sr[j]
            if si[j] == 2:
                written.add(u)
            elif u not in written and u not in out:
                out[u] = int(sv[j])
            j += 1
    return sorted(out.items())


def _check_detector_on_golden(tr: GoldenTrace) -> None:
    det = tr.layout.detector
    if not det.enabled:
        return
    for scope in [ROI] + [i.id for i in tr.instances]:
        spec = output_spec(tr, scope, det)
        fired = pk.measure(
            _scope_golden_mem(tr, scope), spec.words.tolist(), spec.widx.tolist(),
            spec.gold.tolist(), spec.isf.tolist(), spec.lo.tolist(), spec.hi.tolist(),
            len(spec.regions), 1, int(det.finite), [0.0] * len(spec.regions))
        if fired:
            raise InvalidBenchmark(f"invalid benchmark: detector fires on golden outputs of {scope}")


def _scope_golden_mem(tr: GoldenTrace, scope: str) -> list[int]:
    if scope == ROI:
        return tr.final_mem.tolist()
    return tr.ck_mem[tr.instance(scope).end_ck].tolist()


# --------------------------------------------------------------------------
# output specs


@dataclass
class OutputSpec:
    regions: list[Region]
    words: np.ndarray
    widx: np.ndarray
    gold: np.ndarray
    isf: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def _ranges_for(regions: list[Region], named: list[Region], det: DetectorConfig):
    lo, hi = [], []
    for r in regions:
        for w in r.words():
            a, b = -math.inf, math.inf
            for nr in named:
                if nr.name in det.ranges and nr.addr <= w < nr.end:
                    a, b = det.ranges[nr.name]
            lo.append(a)
            hi.append(b)
    return lo, hi


def output_spec(tr: GoldenTrace, scope: str, det: DetectorConfig | None = None) -> OutputSpec:
    """Golden values and metric descriptors for the outputs of ``scope``."""
    det = det if det is not None else tr.layout.detector
    if scope in (ROI, BOTTOM, FINAL):
        regions = list(tr.layout.final_outputs)
        named = regions
        mem = tr.final_mem
    else:
        inst = tr.instance(scope)
        regions = inst.outputs
        named = list(tr.layout.section(inst.sid).outputs)
        mem = tr.ck_mem[inst.end_ck]
    tags = tr.program.tags
    words, widx = [], []
    for k, r in enumerate(regions):
        for w in r.words():
            words.append(w)
            widx.append(k)
    lo, hi = _ranges_for(regions, named, det)
    w_arr = np.array(words, dtype=np.int64)
    return OutputSpec(regions, w_arr, np.array(widx, dtype=np.int64),
                      mem[w_arr].astype(np.uint64) if len(words) else np.zeros(0, np.uint64),
                      np.array([tags[w] == "float" for w in words], dtype=np.uint8),
                      np.array(lo, dtype=np.float64), np.array(hi, dtype=np.float64))


# --------------------------------------------------------------------------
# error sites


@dataclass(frozen=True)
class ErrorSite:
    id: int
    dyn: int
    pc: int
    slot: str
    reg: int  # unified register id
    bank: str
    bit: int
    prune: str  # pilot | pruned | individual
    pilot: int
    p: float

    def to_json(self) -> dict:
        reg = f"r{self.reg}" if self.reg < 32 else f"f{self.reg - 32}"
        return {"id": self.id, "dyn": self.dyn, "pc": self.pc, "slot": self.slot,
                "reg": reg, "bit": self.bit,
                "prune": self.prune if self.prune != "pruned" else f"pruned:{self.pilot}"}


@dataclass
class SiteSet:
    """Columnar error-site table for one scope; ``ids`` are whole-roi ids."""

    scope: str
    ids: np.ndarray
    dyn: np.ndarray
    pc: np.ndarray
    slot: np.ndarray
    reg: np.ndarray
    bit: np.ndarray
    value: np.ndarray
    inst: np.ndarray
    pilot: np.ndarray  # whole-roi id of the class pilot (== ids when injected)
    weight: np.ndarray
    pruned: bool

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def p(self) -> np.ndarray:
        tot = float(self.weight.sum())
        return self.weight / tot if tot else self.weight.astype(np.float64)

    @property
    def is_pilot(self) -> np.ndarray:
        return self.pilot == self.ids

    def pilot_positions(self) -> np.ndarray:
        return np.flatnonzero(self.is_pilot)

    def position_of(self) -> dict[int, int]:
        return {int(i): n for n, i in enumerate(self.ids)}

    def site(self, n: int) -> ErrorSite:
        sid = int(self.ids[n])
        pil = int(self.pilot[n])
        if not self.pruned:
            status = "individual"
        else:
            status = "pilot" if pil == sid else "pruned"
        reg = int(self.reg[n])
        return ErrorSite(sid, int(self.dyn[n]), int(self.pc[n]), SLOT_NAMES[int(self.slot[n])],
                         reg, "int" if reg < 32 else "float", int(self.bit[n]), status, pil,
                         float(self.p[n]))

    def __iter__(self):
        for n in range(len(self)):
            yield self.site(n)

    def subset(self, mask: np.ndarray, scope: str) -> "SiteSet":
        return SiteSet(scope, self.ids[mask], self.dyn[mask], self.pc[mask], self.slot[mask],
                       self.reg[mask], self.bit[mask], self.value[mask], self.inst[mask],
                       self.pilot[mask], self.weight[mask], self.pruned)


def _all_sites(tr: GoldenTrace) -> SiteSet:
    if tr._sites is None:
        ns = len(tr.slot_dyn)
        rep = lambda a: np.repeat(a, 64)  # noqa: E731
        bits = np.tile(np.arange(64, dtype=np.int64), ns)
        dyn = rep(tr.slot_dyn)
        tr._sites = SiteSet(
            ROI, np.arange(ns * 64, dtype=np.int64), dyn, tr.pcs[dyn] if ns else dyn,
            rep(tr.slot_idx), rep(tr.slot_reg), bits, rep(tr.slot_val),
            tr.inst_of[dyn] if ns else dyn, np.arange(ns * 64, dtype=np.int64),
            np.ones(ns * 64, dtype=np.int64), False)
    return tr._sites


def _assign_pilots(s: SiteSet) -> np.ndarray:
    n = len(s)
    if n == 0:
        return s.ids.copy()
    k1 = (s.pc << 8) | (s.slot << 6) | s.bit
    order = np.lexsort((s.ids, s.value, k1))
    k1o, vo = k1[order], s.value[order]
    start = np.ones(n, dtype=bool)
    start[1:] = (k1o[1:] != k1o[:-1]) | (vo[1:] != vo[:-1])
    group_first = np.maximum.accumulate(np.where(start, np.arange(n), 0))
    pil = np.empty(n, dtype=np.int64)
    pil[order] = s.ids[order][group_first]
    return pil


def enumerate_sites(tr: GoldenTrace, scope: str = ROI, prune: PruneConfig | None = None,
                    weights: dict[int, int] | None = None) -> SiteSet:
    """Error sites of ``scope``: an instance id, ``"roi"`` or ``"bottom"``.

    ``weights`` optionally maps pcs to integer site weights (default 1).
    """
    prune = prune or PruneConfig(False)
    base = _all_sites(tr)
    if scope == ROI:
        s = base.subset(np.ones(len(base), dtype=bool), ROI)
    elif scope == BOTTOM:
        s = base.subset(base.inst < 0, BOTTOM)
    else:
        s = base.subset(base.inst == tr.instance(scope).index, scope)
    if weights:
        s.weight = np.array([weights.get(int(pc), 1) for pc in s.pc], dtype=np.int64)
    if prune.enabled:
        s.pilot = _assign_pilots(s)
        s.pruned = True
    return s


# --------------------------------------------------------------------------
# outcomes


@dataclass
class Outcomes:
    """Per-site classified results for one scope, ordered like the site set."""

    scope: str
    ids: np.ndarray
    tags: np.ndarray  # uint8 codes into TAGS
    r: np.ndarray  # float64 [n, n_outputs]
    inferred: np.ndarray  # bool
    outputs: list[str]
    runs: int = 0  # injection runs executed to produce this table

    def __len__(self) -> int:
        return len(self.ids)

    def tag(self, n: int) -> str:
        return TAGS[int(self.tags[n])]

    def records(self, sites: SiteSet):
        for n in range(len(self)):
            site = sites.site(n)
            yield {"site": site.to_json(), "outcome": self.tag(n),
                   "r": [_jnum(x) for x in self.r[n]],
                   "inferred": bool(self.inferred[n])}


def _jnum(x: float):
    if math.isinf(x):
        return "inf"
    return float(x)


def _classify(status: np.ndarray, r: np.ndarray) -> np.ndarray:
    tags = np.full(len(status), TAG_MASKED, dtype=np.uint8)
    done = status == kernel.ST_DONE
    anyr = (r > 0).any(axis=1) if r.shape[1] else np.zeros(len(status), dtype=bool)
    tags[done & anyr] = TAG_SDC
    tags[status == kernel.ST_CRASH] = TAG_CRASH
    tags[status == kernel.ST_TIMEOUT] = TAG_TIMEOUT
    tags[status == kernel.ST_DETECTED] = TAG_DETECTED
    if (status == kernel.ST_NOTRUN).any():
        raise RuntimeError("internal: site not locatable in replay (trace/site mismatch)")
    r = r.copy()
    r[tags != TAG_SDC] = 0.0
    return tags, r


@dataclass
class _Batch:
    sec_status: np.ndarray
    sec_r: np.ndarray
    fin_status: np.ndarray
    fin_r: np.ndarray


def _limits(tr: GoldenTrace) -> tuple[int, int]:
    roi_limit = TIMEOUT_FACTOR * max(tr.roi_count, 1)
    total_limit = TIMEOUT_FACTOR * max(tr.total_dyn, 1) + 1024
    return roi_limit, total_limit


def _inject(tr: GoldenTrace, dyn, reg, slot, bit, inst: Instance | None, to_halt: bool,
            det: DetectorConfig, jobs: int = 1, engine=None, converge: bool = True) -> _Batch:
    eng = engine or kernel
    n = len(dyn)
    roi_limit, total_limit = _limits(tr)
    if inst is not None:
        sec = output_spec(tr, inst.id, det)
        sec_end = int(tr.pcs[inst.end_dyn])
        params_sec = (sec_end, inst.begin_dyn, TIMEOUT_FACTOR * inst.count)
    else:
        sec = OutputSpec([], *(np.zeros(0, t) for t in (np.int64, np.int64, np.uint64,
                                                         np.uint8, np.float64, np.float64)))
        params_sec = (-1, 0, -1)
    fin = output_spec(tr, ROI, det)
    params = np.array([tr.program.roi[0], tr.program.roi[1], total_limit, roi_limit,
                       *params_sec, int(to_halt), int(det.enabled), int(det.finite),
                       int(converge)], dtype=np.int64)
    site_ck = np.searchsorted(tr.ck_dyn, dyn, side="right") - 1
    out = _Batch(np.full(n, kernel.ST_NOTRUN, np.uint8), np.zeros((n, len(sec.regions))),
                 np.full(n, kernel.ST_NOTRUN, np.uint8), np.zeros((n, len(fin.regions))))
    isdst = (slot == 2).astype(np.uint8)

    def work(lo: int, hi: int) -> None:
        eng.inject_batch(
            tr.code, tr.ck_dyn, tr.ck_pc, tr.ck_roi, tr.ck_ireg, tr.ck_freg, tr.ck_mem,
            np.ascontiguousarray(site_ck[lo:hi], dtype=np.int64),
            np.ascontiguousarray(dyn[lo:hi], dtype=np.int64),
            np.ascontiguousarray(reg[lo:hi], dtype=np.int64), isdst[lo:hi],
            np.ascontiguousarray(bit[lo:hi], dtype=np.int64), params,
            sec.words, sec.widx, sec.gold, sec.isf, sec.lo, sec.hi,
            fin.words, fin.widx, fin.gold, fin.isf, fin.lo, fin.hi,
            out.sec_status[lo:hi], out.sec_r[lo:hi], out.fin_status[lo:hi], out.fin_r[lo:hi])

    if n == 0:
        return out
    jobs = max(1, int(jobs))
    if jobs == 1 or n < 2 * jobs:
        work(0, n)
    else:
        bounds = np.linspace(0, n, jobs + 1).astype(int)
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(lambda ab: work(*ab), zip(bounds[:-1], bounds[1:])))
    return out


def _expand(sites: SiteSet, pil_pos: np.ndarray, status: np.ndarray, r: np.ndarray,
            scope: str, outputs: list[str]) -> Outcomes:
    tags, rr = _classify(status, r)
    return expand_pilots(sites, pil_pos, tags, rr, scope, outputs)


def expand_pilots(sites: SiteSet, pil_pos: np.ndarray, tags: np.ndarray, rr: np.ndarray,
                  scope: str, outputs: list[str]) -> Outcomes:
    """Copy classified pilot results onto every member of their class."""
    n = len(sites)
    if sites.pruned:
        idx_of_pilot = np.searchsorted(sites.ids[pil_pos], sites.pilot)
        full_tags = tags[idx_of_pilot]
        full_r = rr[idx_of_pilot]
        inferred = ~sites.is_pilot
    else:
        full_tags, full_r = tags, rr
        inferred = np.zeros(n, dtype=bool)
    return Outcomes(scope, sites.ids.copy(), full_tags, full_r, inferred, outputs,
                    runs=len(pil_pos))


def run_campaign(tr: GoldenTrace, sites: SiteSet, scope: str | None = None,
                 detector: DetectorConfig | None = None, jobs: int = 1,
                 engine=None) -> Outcomes:
    """Inject every pilot/individual site of ``sites`` and classify against the
    scope outputs; pruned sites copy their pilot's record."""
    scope = scope or sites.scope
    det = detector if detector is not None else tr.layout.detector
    pil = sites.pilot_positions()
    if scope in (ROI, BOTTOM):
        b = _inject(tr, sites.dyn[pil], sites.reg[pil], sites.slot[pil], sites.bit[pil],
                    None, True, det, jobs, engine)
        names = [r.name for r in tr.layout.final_outputs]
        return _expand(sites, pil, b.fin_status, b.fin_r, scope, names)
    inst = tr.instance(scope)
    b = _inject(tr, sites.dyn[pil], sites.reg[pil], sites.slot[pil], sites.bit[pil],
                inst, False, det, jobs, engine)
    return _expand(sites, pil, b.sec_status, b.sec_r, scope, [r.name for r in inst.outputs])


def run_shared(tr: GoldenTrace, mono: SiteSet, sections: dict[str, SiteSet],
               detector: DetectorConfig | None = None, jobs: int = 1, engine=None
               ) -> tuple[Outcomes, dict[str, Outcomes], int]:
    """Classify section-boundary and final outputs in the same replay.

    Returns the monolithic outcomes, per-instance outcomes and the number of
    injection runs executed.
    """
    det = detector if detector is not None else tr.layout.detector
    base = _all_sites(tr)
    mono_ids = mono.ids[mono.pilot_positions()]
    mono_inst = base.inst[mono_ids]
    mono_pil = set(mono_ids.tolist())
    fin_status = {}
    fin_r = {}
    sec_results: dict[str, Outcomes] = {}
    runs = 0
    groups = [(inst, sections.get(inst.id)) for inst in tr.instances]
    for inst, ss in groups:
        sec_pil = set()
        if ss is not None:
            sec_pil = set(ss.ids[ss.pilot_positions()].tolist())
        ids = sorted(sec_pil | set(mono_ids[mono_inst == inst.index].tolist()))
        if not ids:
            if ss is not None:
                sec_results[inst.id] = _expand(ss, ss.pilot_positions(), np.zeros(0, np.uint8),
                                               np.zeros((0, len(inst.outputs))), inst.id,
                                               [r.name for r in inst.outputs])
            continue
        ida = np.array(ids, dtype=np.int64)
        b = _inject(tr, base.dyn[ida], base.reg[ida], base.slot[ida], base.bit[ida], inst,
                    True, det, jobs, engine)
        runs += len(ids)
        for j, sid in enumerate(ids):
            fin_status[sid] = b.fin_status[j]
            fin_r[sid] = b.fin_r[j]
        if ss is not None:
            where = {sid: j for j, sid in enumerate(ids)}
            pp = ss.pilot_positions()
            sel = np.array([where[int(ss.ids[p])] for p in pp], dtype=np.int64)
            sec_results[inst.id] = _expand(ss, pp, b.sec_status[sel], b.sec_r[sel], inst.id,
                                           [r.name for r in inst.outputs])
    rest = sorted(i for i in mono_pil if i not in fin_status)
    if rest:
        ida = np.array(rest, dtype=np.int64)
        b = _inject(tr, base.dyn[ida], base.reg[ida], base.slot[ida], base.bit[ida], None,
                    True, det, jobs, engine)
        runs += len(rest)
        for j, sid in enumerate(rest):
            fin_status[sid] = b.fin_status[j]
            fin_r[sid] = b.fin_r[j]
    pp = mono.pilot_positions()
    nfin = len(tr.layout.final_outputs)
    st = np.array([fin_status[int(mono.ids[p])] for p in pp], dtype=np.uint8)
    rr = np.array([fin_r[int(mono.ids[p])] for p in pp], dtype=np.float64).reshape(len(pp), nfin)
    mono_out = _expand(mono, pp, st, rr, ROI, [r.name for r in tr.layout.final_outputs])
    return mono_out, sec_results, runs


def inject_and_run(tr: GoldenTrace, site: ErrorSite, scope: str = ROI,
                   detector: DetectorConfig | None = None, engine=None) -> tuple[str, list[float]]:
    """Inject a single site and return (outcome tag, magnitudes)."""
    det = detector if detector is not None else tr.layout.detector
    slot = {"src0": 0, "src1": 1, "dst": 2}[site.slot]
    arr = lambda v: np.array([v], dtype=np.int64)  # noqa: E731
    # convergence shortcut disabled so the replay runs to the scope end
    inst = None if scope in (ROI, BOTTOM) else tr.instance(scope)
    b = _inject(tr, arr(site.dyn), arr(site.reg), arr(slot), arr(site.bit), inst,
                inst is None, det, 1, engine, converge=False)
    status, r = (b.fin_status, b.fin_r) if inst is None else (b.sec_status, b.sec_r)
    tags, rr = _classify(status, r)
    return TAGS[int(tags[0])], [float(x) for x in rr[0]]


# --------------------------------------------------------------------------
# dataflow derivation helpers


def derive_dataflow(tr: GoldenTrace) -> list:
    """Dataflow edges implied by the golden run.

    For each input word of each instance the last golden writer instance is a
    producer; every earlier instance whose effective outputs contain the word
    could corrupt it too, so those are producers as well.
    """
    from .ir import DataflowEdge

    edges = set()
    last_writer: dict[int, int] = {}
    order = tr.instances

    def producers(word: int, before: int, writer: int | None):
        out = set()
        if writer is not None:
            out.add(writer)
        for inst in order[:before]:
            if any(r.addr <= word < r.end for r in inst.outputs):
                out.add(inst.index)
        return out

    def region_name(inst: Instance, word: int) -> str:
        for r in inst.outputs:
            if r.addr <= word < r.end:
                return r.name
        raise LayoutViolation(f"layout violation: {inst.id} wrote word {word} outside outputs")

    d = 0
    for inst in order:
        for dd in range(d, inst.begin_dyn):
            a = int(tr.store_addr[dd])
            if a >= 0:
                last_writer.pop(a, None)
        for r in inst.inputs:
            for w in r.words():
                for pidx in producers(w, inst.index, last_writer.get(w)):
                    pi = order[pidx]
                    edges.add(((pi.id, region_name(pi, w)), (inst.id, r.name)))
        for dd in range(inst.begin_dyn, inst.end_dyn + 1):
            a = int(tr.store_addr[dd])
            if a >= 0:
                last_writer[a] = inst.index
        d = inst.end_dyn + 1
    for r in tr.layout.final_outputs:
        for w in r.words():
            for pidx in producers(w, len(order), last_writer.get(w)):
                pi = order[pidx]
                edges.add(((pi.id, region_name(pi, w)), (FINAL, r.name)))
    pos = {i.id: i.index for i in order}
    key = lambda e: (pos[e[0][0]], e[0][1], pos.get(e[1][0], len(order)), e[1][1])  # noqa: E731
    return [DataflowEdge(s, t) for s, t in sorted(edges, key=key)]


def derive_future_use(p: Program, layout: SectionLayout, tr: GoldenTrace | None = None
                      ) -> dict[str, list[Region]]:
    """Input regions of a section that later instances read again."""
    tr = tr or run_golden(p, layout, check_layout=False)
    out: dict[str, list[Region]] = {}
    for inst in tr.instances:
        later = [j for j in tr.instances if j.index > inst.index]
        for r in inst.inputs:
            if any(any(r.overlaps(q) for q in j.inputs) for j in later):
                cur = out.setdefault(inst.sid, [])
                if r not in cur:
                    cur.append(r)
    return {k: merge_regions(v) for k, v in out.items()}


def static_live_in(p: Program, sid: str) -> list[int]:
    """Unified registers that some path through the section may read before
    writing. Faults cannot change register fields or branch targets, so
    these are the only registers whose entry values can matter."""
    from .ir import BRANCHES

    b, e = p.sections[sid]
    full = frozenset(range(64))
    defined: dict[int, frozenset] = {b: frozenset()}
    work = [b]
    live: set[int] = set()
    while work:
        pc = work.pop()
        cur = defined[pc]
        ins = p.instructions[pc]
        for bank, r in ins.sources():
            u = r + (32 if bank == "f" else 0)
            if u not in cur:
                live.add(u)
        d = ins.dst_unified()
        out = cur | {d} if d >= 0 else cur
        if ins.op in ("send", "halt", "abort"):
            succ = []
        elif ins.op == "jmp":
            succ = [ins.imm]
        elif ins.op in BRANCHES:
            succ = [ins.imm, pc + 1]
        else:
            succ = [pc + 1]
        for nx in succ:
            if not b <= nx <= e:
                continue
            old = defined.get(nx, full)
            new = old & out
            if nx not in defined or new != old:
                defined[nx] = new
                work.append(nx)
    return sorted(live)


def instance_fingerprint(tr: GoldenTrace, inst: Instance) -> dict:
    """Canonical description of everything an instance's analysis depends on.

    Branch targets are stored relative to the section start so that moving a
    section without changing it keeps the fingerprint.
    """
    from .ir import BRANCHES

    b, e = tr.program.sections[inst.sid]
    code = []
    for ins in tr.program.instructions[b:e + 1]:
        imm = ins.imm - b if ins.op in BRANCHES else ins.imm
        code.append([ins.op, ins.a, ins.b, ins.c, imm])
    mem = tr.ck_mem[inst.ck]
    tags = tr.program.tags

    def region(r: Region) -> list:
        return [r.name, r.addr, r.length, [int(mem[w]) for w in r.words()],
                "".join("f" if tags[w] == "float" else "i" for w in r.words())]

    ck = inst.ck
    regs = [[u, int(tr.ck_ireg[ck][u]) if u < 32
             else int(tr.ck_freg[ck][u - 32:u - 31].view(np.uint64)[0])]
            for u in static_live_in(tr.program, inst.sid)]
    return {"code": code, "live_in": regs,
            "inputs": [region(r) for r in inst.inputs],
            "outputs": [region(r) for r in inst.outputs]}
