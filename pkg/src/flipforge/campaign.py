"""Pipeline orchestration, the content-addressed section store and
incremental re-analysis across program versions."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import kernel
from .baseline import (FULL, INCREMENTAL, AdjustState, adjust_target, monolithic_model,
                       step_modification, utility)
from .interp import (BOTTOM, ROI, TAGS, GoldenTrace, Outcomes, PruneConfig, SiteSet,
                     enumerate_sites, expand_pilots, instance_fingerprint, run_campaign,
                     run_golden, run_shared)
from .ir import ISA_VERSION, DetectorConfig, Program, SectionLayout, print_program
from .propagation import EndToEndSpec, compose
from .protection import Knapsack, ProtectionModel, compute_values
from .sensitivity import (AffineSdcSpec, SensitivityConfig, content_seed, estimate_spec,
                          totalize)

log = logging.getLogger(__name__)

REPORT_SCHEMA = "flipforge.report/1"
ENTRY_SCHEMA = "flipforge.entry/1"
MANIFEST_SCHEMA = "flipforge.manifest/1"
ACCOUNT_SCHEMA = "flipforge.accounting/1"
DEFAULT_TARGETS = (0.90, 0.95, 0.99, 1.00)
MODES = ("compositional", "monolithic", "both")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"[{stage}] {err}")
        self.stage = stage
        self.cause = err


class LayoutDrift(ValueError):
    pass


@dataclass
class AnalysisConfig:
    thresholds: dict[str, float] = field(default_factory=lambda: {"*": 0.0})
    targets: tuple[float, ...] = DEFAULT_TARGETS
    prune: bool = True
    R: float = 0.04
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    detector: DetectorConfig | None = None  # None: the layout's own detector
    mode: str = "compositional"
    shared: bool = True  # one replay per site for both labels when mode is "both"
    P_adj: int = 1
    jobs: int = 1
    engine: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if any(not 0 <= t <= 1 for t in self.targets):
            raise ValueError("targets must lie in [0, 1]")
        if any(e < 0 for e in self.thresholds.values()):
            raise ValueError("thresholds must be non-negative")
        if not 0 <= self.R <= 1:
            raise ValueError("R must lie in [0, 1]")
        self.targets = tuple(sorted(float(t) for t in self.targets))

    def report_json(self) -> dict:
        """Settings that influence results (worker count and engine do not)."""
        return {"thresholds": dict(sorted(self.thresholds.items())),
                "targets": list(self.targets), "prune": self.prune, "R": self.R,
                "sensitivity": self.sensitivity.to_json(),
                "detector": None if self.detector is None else self.detector.to_json(),
                "mode": self.mode, "P_adj": self.P_adj}


# --------------------------------------------------------------------------
# json helpers


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, Fraction):
        return float(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n"


def _unfloat(x):
    return math.inf if x == "inf" else float(x)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256(obj) -> str:
    blob = json.dumps(_clean(obj), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# --------------------------------------------------------------------------
# store


def section_key(tr: GoldenTrace, inst, cfg: AnalysisConfig, det: DetectorConfig) -> str:
    """Content key of one instance analysis: section code, declared input
    values, registers the section may read, and every analysis setting."""
    return sha256({"isa": ISA_VERSION, "fingerprint": instance_fingerprint(tr, inst),
                   "detector": det.to_json(),
                   "prune": {"enabled": cfg.prune}, "sensitivity": cfg.sensitivity.to_json()})


class Store:
    """Directory store: one JSON file per section entry plus a manifest."""

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        self.manifest = {"schema": MANIFEST_SCHEMA, "entries": {}}
        if self.root is not None:
            mp = self.root / "manifest.json"
            if mp.exists():
                self.manifest = json.loads(mp.read_text())

    def get(self, key: str) -> dict | None:
        if self.root is None:
            return None
        p = self.root / f"{key}.json"
        if not p.exists():
            return None
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError:
            log.warning("ignoring unreadable store entry %s", p.name)
            return None
        return d if d.get("schema") == ENTRY_SCHEMA else None

    def put(self, key: str, entry: dict) -> None:
        if self.root is None:
            return
        atomic_write(self.root / f"{key}.json", dumps(entry))
        self.manifest["entries"][key] = {"instance": entry["instance"], "sites": entry["sites"],
                                         "runs": entry["runs"]}

    def flush(self) -> None:
        if self.root is not None:
            atomic_write(self.root / "manifest.json", dumps(self.manifest))

    def state_path(self, lineage: str) -> Path | None:
        return None if self.root is None else self.root / "lineage" / f"{lineage}.json"

    def entries(self) -> dict:
        return dict(self.manifest["entries"])

    def clear(self) -> int:
        if self.root is None or not self.root.exists():
            return 0
        n = 0
        for p in self.root.glob("*.json"):
            if p.name != "manifest.json":
                p.unlink()
                n += 1
        for p in (self.root / "lineage").glob("*.json") if (self.root / "lineage").exists() \
                else []:
            p.unlink()
        self.manifest = {"schema": MANIFEST_SCHEMA, "entries": {}}
        self.flush()
        return n


def _entry_from(inst, ss: SiteSet, oc: Outcomes, spec: AffineSdcSpec, golden: list) -> dict:
    pil = ss.pilot_positions()
    tags = oc.tags[pil]
    sdc = [[int(n), *oc.r[p].tolist()] for n, p in enumerate(pil) if tags[n] == 1]
    return {"schema": ENTRY_SCHEMA, "instance": inst.id, "sites": len(ss), "runs": len(pil),
            "pilots": "".join(str(int(t)) for t in tags), "sdc": sdc,
            "spec": spec.to_json(), "golden": golden}


def _outcomes_from(entry: dict, ss: SiteSet, inst) -> Outcomes:
    pil = ss.pilot_positions()
    if entry["sites"] != len(ss) or entry["runs"] != len(pil):
        raise KeyError("entry does not match the site set")
    tags = np.frombuffer(entry["pilots"].encode(), dtype=np.uint8) - ord("0")
    nout = len(inst.outputs)
    r = np.zeros((len(pil), nout))
    for row in entry["sdc"]:
        r[row[0]] = [_unfloat(x) for x in row[1:]]
    oc = expand_pilots(ss, pil, tags.astype(np.uint8), r, inst.id,
                       [x.name for x in inst.outputs])
    oc.runs = 0
    return oc


def _golden_outputs(tr: GoldenTrace, inst) -> list:
    mem = tr.ck_mem[inst.end_ck]
    return [[int(mem[w]) for w in r.words()] for r in inst.outputs]


# --------------------------------------------------------------------------
# pipeline


@dataclass
class CampaignReport:
    version: str
    report: dict
    accounting: dict
    trace: GoldenTrace | None = None
    sites: dict[str, SiteSet] = field(default_factory=dict)
    outcomes: dict[str, Outcomes] = field(default_factory=dict)
    bottom: SiteSet | None = None
    specs: dict[str, AffineSdcSpec] = field(default_factory=dict)
    e2e: EndToEndSpec | None = None
    model: ProtectionModel | None = None
    mono_sites: SiteSet | None = None
    mono: Outcomes | None = None
    selections: list = field(default_factory=list)

    def write(self, out_dir: str | Path) -> Path:
        d = Path(out_dir) / self.version
        atomic_write(d / "report.json", dumps(self.report))
        atomic_write(d / "accounting.json", dumps(self.accounting))
        if self.e2e is not None:
            atomic_write(d / "e2e.txt", self.e2e.render() + "\n")
        return d


def _stage(name):
    def deco(fn):
        def wrapped(*a, **kw):
            try:
                return fn(*a, **kw)
            except PipelineError:
                raise
            except Exception as e:  # annotate with the failing stage
                raise PipelineError(name, e) from e
        return wrapped
    return deco


def _engine(cfg: AnalysisConfig):
    return kernel.get_engine(cfg.engine) if cfg.engine else None


def _tag_weights(sites: SiteSet, oc: Outcomes) -> dict[str, int]:
    return {t: int(sites.weight[oc.tags == n].sum()) for n, t in enumerate(TAGS)}


def _thresholds_for(cfg: AnalysisConfig, names: list[str]) -> dict[str, float]:
    th = {}
    for n in names:
        th[n] = float(cfg.thresholds.get(n, cfg.thresholds.get("*", 0.0)))
    return th


def analyze(program: Program, layout: SectionLayout, cfg: AnalysisConfig | None = None,
            store: Store | str | Path | None = None, version: str = "v0",
            benchmark: str | None = None, lineage: str | None = None,
            out_dir: str | Path | None = None) -> CampaignReport:
    """Run the full pipeline on one program version.

    With ``lineage`` the periodic adjustment schedule is tracked in the store:
    full versions run the monolithic analysis and re-adjust the targets,
    the others reuse the stored adjusted targets.
    """
    cfg = cfg or AnalysisConfig()
    if not isinstance(store, Store):
        store = Store(store)
    eng = _engine(cfg)
    tr = _stage("golden")(run_golden)(program, layout)
    det = cfg.detector if cfg.detector is not None else layout.detector
    finals = [r.name for r in layout.final_outputs]
    th = _thresholds_for(cfg, finals)

    state = None
    amode = cfg.mode
    if lineage is not None:
        sp = store.state_path(lineage)
        state = (AdjustState.from_json(json.loads(sp.read_text()))
                 if sp is not None and sp.exists() else AdjustState(cfg.P_adj))
        state.P_adj = cfg.P_adj
        step = step_modification(state)
        amode = "both" if step == FULL else "compositional"
    run_mono = amode in ("monolithic", "both")
    run_comp = amode in ("compositional", "both")

    prune = PruneConfig(cfg.prune)
    acct = {"schema": ACCOUNT_SCHEMA, "version": version, "instances": {},
            "executed": 0, "reused": 0, "stale": 0, "monolithic_runs": 0,
            "shared_replays": 0, "engine": cfg.engine or kernel.engine_name()}
    rep = CampaignReport(version, {}, acct, tr)

    sites = {inst.id: enumerate_sites(tr, inst.id, prune) for inst in tr.instances}
    bottom = enumerate_sites(tr, BOTTOM, prune)
    rep.sites, rep.bottom = sites, bottom
    keys = {inst.id: section_key(tr, inst, cfg, det) for inst in tr.instances}
    cached: dict[str, dict] = {}
    if run_comp:
        for inst in tr.instances:
            e = store.get(keys[inst.id])
            if e is not None and e.get("golden") != _golden_outputs(tr, inst):
                acct["stale"] += 1
                log.warning("store entry for %s has mismatching golden outputs", inst.id)
                e = None
            if e is not None:
                cached[inst.id] = e

    mono_sites = enumerate_sites(tr, ROI, prune)
    acct["monolithic_pilots"] = len(mono_sites.pilot_positions())
    outcomes: dict[str, Outcomes] = {}
    for iid, e in cached.items():
        outcomes[iid] = _outcomes_from(e, sites[iid], tr.instance(iid))
    misses = [i for i in tr.instances if run_comp and i.id not in cached]

    mono = None
    if run_mono and run_comp and cfg.shared:
        mono, secs, runs = _stage("campaign")(run_shared)(
            tr, mono_sites, {i.id: sites[i.id] for i in misses}, det, cfg.jobs, eng)
        outcomes.update(secs)
        acct["shared_replays"] = runs
        acct["monolithic_runs"] = mono.runs
    else:
        for inst in misses:
            outcomes[inst.id] = _stage("campaign")(run_campaign)(
                tr, sites[inst.id], inst.id, det, cfg.jobs, eng)
        if run_mono:
            mono = _stage("monolithic")(run_campaign)(tr, mono_sites, ROI, det, cfg.jobs, eng)
            acct["monolithic_runs"] = mono.runs

    specs: dict[str, AffineSdcSpec] = {}
    if run_comp:
        for inst in tr.instances:
            if inst.id in cached:
                specs[inst.id] = AffineSdcSpec.from_json(cached[inst.id]["spec"])
            else:
                specs[inst.id] = _stage("sensitivity")(estimate_spec)(
                    tr, inst.id, cfg.sensitivity, cfg.jobs, eng,
                    content_seed(instance_fingerprint(tr, inst)))
        for inst in tr.instances:
            ss, oc = sites[inst.id], outcomes[inst.id]
            hit = inst.id in cached
            n_pil = len(ss.pilot_positions())
            acct["instances"][inst.id] = {"key": keys[inst.id], "sites": len(ss),
                                          "runs": n_pil, "reused": hit}
            if hit:
                acct["reused"] += n_pil
            else:
                acct["executed"] += n_pil
                store.put(keys[inst.id], _entry_from(inst, ss, oc, specs[inst.id],
                                                     _golden_outputs(tr, inst)))
        store.flush()
    acct["fresh"] = sum(v["runs"] for v in acct["instances"].values())
    acct["reanalyzed"] = sorted((k for k, v in acct["instances"].items() if not v["reused"]),
                                key=lambda k: tr.instance(k).index)

    costs = tr.pc_counts()
    report = {"schema": REPORT_SCHEMA, "benchmark": benchmark, "version": version,
              "program_sha256": hashlib.sha256(print_program(program).encode()).hexdigest(),
              "universe": universe(program, layout, cfg), "config": cfg.report_json(),
              "analysis_mode": amode if state is None else (FULL if run_mono else INCREMENTAL),
              "roi_count": tr.roi_count, "total_dyn": tr.total_dyn,
              "thresholds": th, "costs": {str(k): v for k, v in sorted(costs.items())}}

    model = None
    ks = None
    if run_comp:
        e2e = _stage("compose")(compose)(
            layout.dataflow, [totalize(specs[i.id], i.id) for i in tr.instances],
            tr.order, finals)
        model = _stage("values")(compute_values)(
            outcomes, sites, e2e, th, costs, bottom, tr.roi_count)
        ks = Knapsack(model)
        rep.e2e, rep.model = e2e, model
        report["instances"] = [
            {"id": i.id, "section": i.sid, "dyn": [i.begin_dyn, i.end_dyn],
             "sites": len(sites[i.id]), "pilots": len(sites[i.id].pilot_positions()),
             "inputs": [r.to_json() for r in i.inputs],
             "outputs": [r.to_json() for r in i.outputs],
             "K": specs[i.id].K, "discarded": specs[i.id].discarded,
             "outcomes": _tag_weights(sites[i.id], outcomes[i.id])} for i in tr.instances]
        report["bottom"] = {"sites": len(bottom), "weight": int(bottom.weight.sum())}
        report["e2e"] = e2e.to_json()
        report["model"] = model.to_json()
    rep.outcomes = outcomes
    rep.specs = specs

    selections = []
    if run_comp:
        stored = state.adjusted if state is not None and not run_mono else {}
        for t in cfg.targets:
            adj = stored.get(repr(t))
            selections.append(ks.solve(t, None if adj is None else Fraction(adj)))
    if run_mono:
        rep.mono_sites, rep.mono = mono_sites, mono
        mmodel = monolithic_model(tr, mono_sites, mono, th, costs)
        mks = Knapsack(mmodel)
        msel = [mks.solve(t) for t in cfg.targets]
        report["monolithic"] = {"sites": len(mono_sites),
                                "pilots": len(mono_sites.pilot_positions()),
                                "outcomes": _tag_weights(mono_sites, mono),
                                "model": mmodel.to_json(),
                                "selections": [s.to_json() for s in msel]}
        if run_comp:
            util = []
            adjusted = []
            fracs = {}
            for t, sel, ms in zip(cfg.targets, selections, msel):
                raw_u = utility(sel, ms, mono_sites, mono, th, cfg.R)
                a = _stage("adjust")(adjust_target)(model, mono_sites, mono, th, t, ks)
                asel = ks.solve(t, a.adjusted)
                fracs[repr(t)] = str(a.adjusted)
                adj_u = utility(asel, ms, mono_sites, mono, th, cfg.R)
                util.append({"target": t, "unadjusted": raw_u.to_json(),
                             "adjusted": adj_u.to_json(), "adjust_reached": a.reached})
                adjusted.append(asel)
            report["utility"] = util
            report["unadjusted_selections"] = [s.to_json() for s in selections]
            selections = adjusted
            if state is not None:
                state.adjusted = fracs
    if run_comp:
        report["selections"] = [s.to_json() for s in selections]
    elif run_mono:
        report["selections"] = report["monolithic"]["selections"]
    rep.selections = selections
    if state is not None:
        report["adjust_state"] = state.to_json()
        sp = store.state_path(lineage)
        if sp is not None:
            atomic_write(sp, dumps(state.to_json()))
    acct.update(account(acct))
    rep.report = report
    if out_dir is not None:
        rep.write(out_dir)
    return rep


def universe(program: Program, layout: SectionLayout, cfg: AnalysisConfig) -> str:
    """Identifier of the site universe: reports are comparable iff equal."""
    return sha256({"program": print_program(program), "layout": layout.to_json(),
                   "prune": cfg.prune})


def diff_sections(old: GoldenTrace, new: GoldenTrace) -> list[str]:
    """Instances of ``new`` whose code or golden inputs differ from ``old``."""
    if sorted(old.program.sections) != sorted(new.program.sections):
        raise LayoutDrift("layout drift: section ids differ between versions")
    before = {i.id: instance_fingerprint(old, i) for i in old.instances}
    out = []
    for inst in new.instances:
        if before.get(inst.id) != instance_fingerprint(new, inst):
            out.append(inst.id)
    return out


def account(acct: dict) -> dict:
    """Run-count speedups of an analysis relative to a fresh one."""
    fresh = acct.get("fresh", acct["executed"] + acct["reused"])
    ex = acct["executed"]

    def ratio(a, b):
        if b == 0:
            return math.inf if a > 0 else 1.0
        return a / b

    mono = acct.get("monolithic_pilots", acct.get("monolithic_runs", 0))
    return {"speedup": ratio(fresh, ex), "monolithic_ratio": ratio(mono, ex),
            "reconciles": acct["executed"] + acct["reused"] == fresh}
