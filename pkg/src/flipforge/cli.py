"""flipforge command line: analyze, compare, render-curve, cache."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .campaign import (DEFAULT_TARGETS, MODES, AnalysisConfig, PipelineError, Store, analyze,
                       dumps)
from .ir import AsmError, DetectorConfig, SectionLayout, load_program
from .sensitivity import PATTERNS, SensitivityConfig

STORE_ENV = "FLIPFORGE_STORE"
EXIT_CONFIG = 1
EXIT_PIPELINE = 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    program: str | None = None
    layout: str | None = None
    thresholds: dict[str, float] = field(default_factory=lambda: {"*": 0.0})
    targets: list[float] = field(default_factory=lambda: list(DEFAULT_TARGETS))
    prune: bool = True
    R: float = 0.04
    phi_max: float = 0.01
    samples: int = 4096
    pattern: str = "mixed"
    detector: str | None = None  # JSON file; default is the layout's own detector
    mode: str = "compositional"
    P_adj: int = 1
    store: str | None = None
    seed: int = 0
    out: str = "out"
    version: str = "v0"
    lineage: str | None = None
    benchmark: str | None = None
    jobs: int = 1
    engine: str | None = None

    def validate(self) -> None:
        if not self.program or not self.layout:
            raise ConfigError("--program and --layout are required")
        for p in (self.program, self.layout, self.detector):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"no such file: {p}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.targets or any(not 0 <= t <= 1 for t in self.targets):
            raise ConfigError("targets must lie in [0, 1]")
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        if self.jobs < 1 or self.samples < 1 or self.P_adj < 1:
            raise ConfigError("jobs, samples and P_adj must be >= 1")
        if not 0 <= self.R <= 1:
            raise ConfigError("R must lie in [0, 1]")
        if not self.phi_max > 0:
            raise ConfigError("phi_max must be positive")
        if any(v < 0 for v in self.thresholds.values()):
            raise ConfigError("thresholds must be non-negative")
        if self.engine not in (None, "python", "compiled"):
            raise ConfigError(f"unknown engine {self.engine!r}")

    def analysis_config(self) -> AnalysisConfig:
        det = None
        if self.detector:
            det = DetectorConfig.from_json(json.loads(Path(self.detector).read_text()))
        return AnalysisConfig(dict(self.thresholds), tuple(self.targets), self.prune, self.R,
                              SensitivityConfig(self.phi_max, self.samples, self.seed,
                                                self.pattern),
                              det, self.mode, True, self.P_adj, self.jobs, self.engine)


# --------------------------------------------------------------------------
# argument parsing


def parse_targets(text: str) -> list[float]:
    """``a,b,c`` or an inclusive range ``lo:hi:step``."""
    try:
        if ":" in text:
            lo, hi, step = (Decimal(x) for x in text.split(":"))
            if step <= 0:
                raise ConfigError("target step must be positive")
            out = []
            v = lo
            while v <= hi:
                out.append(float(v))
                v += step
            return out
        return [float(Decimal(x)) for x in text.split(",") if x.strip()]
    except (InvalidOperation, ValueError) as e:
        raise ConfigError(f"bad target list {text!r}") from e


def parse_thresholds(text: str) -> dict[str, float]:
    """``1e-4`` for every output or ``name=eps,name=eps`` (``*`` is the default)."""
    try:
        if "=" not in text:
            return {"*": float(text)}
        out = {}
        for part in text.split(","):
            k, _, v = part.partition("=")
            out[k.strip()] = float(v)
        return out
    except ValueError as e:
        raise ConfigError(f"bad thresholds {text!r}") from e


def _add_run_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", help="JSON file supplying any of the flags below")
    ap.add_argument("--program")
    ap.add_argument("--layout")
    ap.add_argument("--thresholds", help="eps for all outputs, or name=eps,...")
    ap.add_argument("--targets", help="comma list or lo:hi:step")
    ap.add_argument("--prune", dest="prune", action="store_true", default=None)
    ap.add_argument("--no-prune", dest="prune", action="store_false")
    ap.add_argument("--R", type=float)
    ap.add_argument("--phi-max", dest="phi_max", type=float)
    ap.add_argument("--samples", type=int)
    ap.add_argument("--pattern", choices=PATTERNS)
    ap.add_argument("--detector", help="JSON detector config overriding the layout's")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--P-adj", dest="P_adj", type=int)
    ap.add_argument("--store", help=f"section store directory (env {STORE_ENV})")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="report directory")
    ap.add_argument("--version", help="version label; reports go to OUT/VERSION")
    ap.add_argument("--lineage", help="track periodic target adjustment under this name")
    ap.add_argument("--benchmark", help="benchmark name recorded in the report")
    ap.add_argument("--jobs", type=int)
    ap.add_argument("--engine", choices=("python", "compiled"))


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then the environment, then flags."""
    cfg = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for k, v in data.items():
            if k == "targets" and isinstance(v, str):
                v = parse_targets(v)
            if k == "thresholds" and not isinstance(v, dict):
                v = parse_thresholds(str(v))
            setattr(cfg, k, v)
    if os.environ.get(STORE_ENV):
        cfg.store = os.environ[STORE_ENV]
    for name in names:
        v = getattr(args, name, None)
        if v is None:
            continue
        if name == "targets":
            v = parse_targets(v)
        elif name == "thresholds":
            v = parse_thresholds(v)
        setattr(cfg, name, v)
    cfg.targets = [float(t) for t in cfg.targets]
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    cfg = build_run_config(args)
    try:
        program = load_program(cfg.program)
        layout = SectionLayout.load(cfg.layout)
        acfg = cfg.analysis_config()
    except (AsmError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise ConfigError(f"invalid input: {e}") from e
    rep = analyze(program, layout, acfg, cfg.store, cfg.version, cfg.benchmark, cfg.lineage,
                  cfg.out)
    r = rep.report
    out = Path(cfg.out) / cfg.version
    print(f"reports: {out}")
    util = {u["target"]: u for u in r.get("utility", [])}
    print(f"{'target':>7} {'value':>7} {'cost':>7}  pcs")
    for s in r["selections"]:
        u = util.get(s["target"])
        val = u["adjusted"]["v_achv"] if u else s["value"]
        print(f"{s['target']:7.3f} {val:7.3f} {s['normalized_cost']:7.3f}  {len(s['pcs'])}")
    return 0


def load_report(path: str) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    try:
        return json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read report {path}: {e}") from e


def _rows(report: dict) -> dict[float, dict]:
    util = {u["target"]: u for u in report.get("utility", [])}
    rows = {}
    for s in report.get("selections", []):
        u = util.get(s["target"])
        rows[s["target"]] = {
            "value": u["adjusted"]["v_achv"] if u else s["value"],
            "cost": s["normalized_cost"],
            "in_range": u["adjusted"]["within_error_range"] if u else None,
        }
    return rows


def compare_table(a: dict, b: dict) -> str:
    if a.get("universe") != b.get("universe"):
        raise ConfigError("reports come from different site universes")
    ra, rb = _rows(a), _rows(b)
    lines = [f"{'target':>7}  {'value':>6}  {'cost (diff)':>16}  range"]
    for t in sorted(set(ra) & set(rb)):
        x, y = ra[t], rb[t]
        mark = {True: "✓", False: "✗", None: "-"}[x["in_range"]]
        diff = x["cost"] - y["cost"]
        lines.append(f"{t:7.3f}  {x['value']:6.3f}  {x['cost']:6.3f} ({diff:+.3f})  {mark}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    print(compare_table(load_report(args.report_a), load_report(args.report_b)))
    return 0


def curve_rows(report: dict) -> list[dict]:
    util = {u["target"]: u for u in report.get("utility", [])}
    rows = []
    for s in report.get("selections", []):
        u = util.get(s["target"])
        rows.append({"target": s["target"],
                     "adjusted_target": "" if s.get("adjusted_target") is None
                     else s["adjusted_target"],
                     "value": s["value"],
                     "achieved": u["adjusted"]["v_achv"] if u else "",
                     "cost": s["normalized_cost"]})
    return rows


def cmd_render_curve(args) -> int:
    rows = curve_rows(load_report(args.report))
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.DictWriter(fh, ["target", "adjusted_target", "value", "achieved", "cost"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.output:
            fh.close()
    return 0


def cmd_cache(args) -> int:
    root = args.store or os.environ.get(STORE_ENV)
    if not root:
        raise ConfigError(f"no store given (--store or {STORE_ENV})")
    store = Store(root)
    if args.action == "clear":
        n = store.clear()
        print(f"removed {n} entries from {root}")
        return 0
    entries = store.entries()
    print(dumps({"store": str(root), "entries": len(entries),
                 "runs": sum(e["runs"] for e in entries.values()),
                 "instances": sorted({e["instance"] for e in entries.values()})}), end="")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flipforge", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    a = sub.add_parser("analyze", help="run the analysis pipeline on one program version")
    _add_run_flags(a)
    a.set_defaults(func=cmd_analyze)
    c = sub.add_parser("compare", help="per-target table of two reports")
    c.add_argument("report_a")
    c.add_argument("report_b")
    c.set_defaults(func=cmd_compare)
    r = sub.add_parser("render-curve", help="value/cost curve of a report as CSV")
    r.add_argument("report")
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_render_curve)
    k = sub.add_parser("cache", help="inspect or clear the section store")
    k.add_argument("action", choices=("inspect", "clear"))
    k.add_argument("--store")
    k.set_defaults(func=cmd_cache)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"flipforge: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as e:
        print(f"flipforge: pipeline error in stage {e.stage}: {e.cause}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
