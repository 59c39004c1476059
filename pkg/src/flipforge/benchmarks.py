"""Shipped benchmark corpus: loading, golden verification and coverage."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .interp import GoldenTrace, run_golden
from .ir import Program, SectionLayout, bits2f, load_program
from .sensitivity import SensitivityConfig

ENV_VAR = "FLIPFORGE_BENCH"
FLOAT_TOL = 1e-12


class BenchmarkError(RuntimeError):
    pass


def bench_root(root: str | Path | None = None) -> Path:
    """Benchmark directory: explicit argument, $FLIPFORGE_BENCH, or the
    ``bench`` directory of the source checkout."""
    if root is not None:
        return Path(root)
    if os.environ.get(ENV_VAR):
        return Path(os.environ[ENV_VAR])
    here = Path(__file__).resolve()
    for parent in here.parents:
        if (parent / "bench").is_dir():
            return parent / "bench"
    raise BenchmarkError(f"benchmark directory not found; set {ENV_VAR}")


@dataclass
class Variant:
    name: str
    kind: str  # small | large | error-detection
    program: Program
    layout: SectionLayout
    preserves: str = "exact"  # exact | tolerance
    tolerance: float = 0.0
    modified: list[str] = field(default_factory=list)
    expected: dict[str, list] | None = None
    coverage_exempt: bool = False
    duplicated: str | None = None
    doc: str = ""


@dataclass
class Benchmark:
    name: str
    description: str
    program: Program
    layout: SectionLayout
    expected: dict[str, list]
    thresholds: dict[str, float]
    sensitivity: SensitivityConfig
    targets: tuple[float, ...]
    coverage: bool = True
    variants: dict[str, Variant] = field(default_factory=dict)
    path: Path | None = None

    @property
    def detector(self):
        return self.layout.detector

    def version(self, variant: str | None = None) -> tuple[Program, SectionLayout]:
        if variant in (None, "none", "base"):
            return self.program, self.layout
        if variant not in self.variants:
            raise KeyError(f"{self.name} has no variant {variant!r}")
        v = self.variants[variant]
        return v.program, v.layout

    def config(self, **overrides):
        """Analysis settings declared by the benchmark, with overrides."""
        from .campaign import AnalysisConfig

        kw = {"thresholds": dict(self.thresholds), "targets": self.targets,
              "sensitivity": self.sensitivity}
        kw.update(overrides)
        return AnalysisConfig(**kw)


class BenchmarkSuite(dict):
    """Benchmarks by name, in a fixed order."""

    def names(self) -> list[str]:
        return list(self.keys())


def _load_one(d: Path) -> Benchmark:
    meta = json.loads((d / "meta.json").read_text())
    prog = load_program(d / meta.get("source", "prog.asm"))
    layout = SectionLayout.load(d / meta.get("layout", "layout.json"))
    variants = {}
    for name, vm in sorted(meta.get("variants", {}).items()):
        vl = SectionLayout.load(d / vm["layout"]) if vm.get("layout") else layout
        variants[name] = Variant(name, vm["kind"], load_program(d / vm["source"]), vl,
                                 vm.get("preserves", "exact"), float(vm.get("tolerance", 0.0)),
                                 list(vm.get("modified", [])), vm.get("expected"),
                                 bool(vm.get("coverage_exempt", False)), vm.get("duplicated"),
                                 vm.get("doc", ""))
    return Benchmark(meta.get("name", d.name), meta.get("description", ""), prog, layout,
                     meta["expected"], {k: float(v) for k, v in meta["thresholds"].items()},
                     SensitivityConfig.from_json(meta.get("sensitivity", {})),
                     tuple(meta.get("targets", (0.9, 0.95, 0.99, 1.0))),
                     bool(meta.get("coverage", True)), variants, d)


def build_suite(root: str | Path | None = None, names: list[str] | None = None
                ) -> BenchmarkSuite:
    base = bench_root(root)
    dirs = sorted(p for p in base.iterdir() if (p / "meta.json").exists())
    suite = BenchmarkSuite()
    for d in dirs:
        if names is None or d.name in names:
            b = _load_one(d)
            suite[b.name] = b
    if names is not None:
        missing = set(names) - set(suite)
        if missing:
            raise BenchmarkError(f"unknown benchmark(s): {', '.join(sorted(missing))}")
    return suite


def final_values(tr: GoldenTrace) -> dict[str, list]:
    """Final output regions decoded by bank."""
    out = {}
    for r in tr.layout.final_outputs:
        words = tr.final_mem[r.addr:r.end]
        if r.bank == "float":
            out[r.name] = [bits2f(int(w)) for w in words]
        else:
            out[r.name] = [int(np.int64(np.uint64(w))) for w in words]
    return out


@dataclass
class GoldenCheck:
    name: str
    ok: bool
    message: str = ""


def compare_outputs(name: str, got: dict[str, list], expected: dict[str, list], banks,
                    tol: float = FLOAT_TOL) -> GoldenCheck:
    for region, vals in expected.items():
        if region not in got:
            return GoldenCheck(name, False, f"{name}: no output region {region}")
        g = got[region]
        if len(g) != len(vals):
            return GoldenCheck(name, False, f"{name}: {region} has {len(g)} words, "
                                            f"expected {len(vals)}")
        for i, (a, b) in enumerate(zip(g, vals)):
            if banks.get(region) == "int":
                bad = int(a) != int(b)
            else:
                bad = not abs(float(a) - float(b)) <= tol
            if bad:
                return GoldenCheck(name, False, f"{name}: output {region}[{i}] = {a!r}, "
                                                f"expected {b!r}")
    return GoldenCheck(name, True)


def verify_goldens(suite: BenchmarkSuite, variants: bool = True) -> list[GoldenCheck]:
    """Run every benchmark (and variant) and compare its final outputs with the
    stored expectations: exact for integer regions, within 1e-12 for floats."""
    results = []
    for b in suite.values():
        versions = [(b.name, None, b.expected, FLOAT_TOL)]
        if variants:
            for v in b.variants.values():
                tol = max(FLOAT_TOL, v.tolerance) if v.preserves == "tolerance" else FLOAT_TOL
                versions.append((f"{b.name}/{v.name}", v.name, v.expected or b.expected, tol))
        for label, vname, exp, tol in versions:
            prog, layout = b.version(vname)
            try:
                tr = run_golden(prog, layout)
            except Exception as e:  # report rather than abort the whole sweep
                results.append(GoldenCheck(label, False, f"{label}: {e}"))
                continue
            banks = {r.name: r.bank for r in layout.final_outputs}
            results.append(compare_outputs(label, final_values(tr), exp, banks, tol))
    return results


def uncovered_pcs(tr: GoldenTrace) -> list[int]:
    """Static roi instructions never executed by the golden run."""
    lo, hi = tr.program.roi
    seen = set(np.unique(tr.pcs[tr.in_roi]).tolist())
    return [pc for pc in range(lo, hi) if pc not in seen]


def check_coverage(suite: BenchmarkSuite) -> dict[str, list[int]]:
    """Uncovered roi pcs per benchmark version that is subject to coverage."""
    out = {}
    for b in suite.values():
        if not b.coverage:
            continue
        out[b.name] = uncovered_pcs(run_golden(b.program, b.layout))
        for v in b.variants.values():
            if not v.coverage_exempt:
                out[f"{b.name}/{v.name}"] = uncovered_pcs(run_golden(v.program, v.layout))
    return out
