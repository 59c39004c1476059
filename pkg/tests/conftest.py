from __future__ import annotations

import functools

import pytest
from hypothesis import HealthCheck, settings

from flipforge.benchmarks import build_suite
from flipforge.interp import run_golden
from flipforge.ir import SectionLayout, parse_program

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def R(name: str, addr: int, n: int = 1, bank: str = "float") -> dict:
    return {"name": name, "addr": addr, "len": n, "bank": bank}


def make(asm: str, sections: list[dict], finals: list[dict], dataflow=(), detector=None,
         future_use=None):
    """Program plus layout from inline assembly and plain dicts (pad 0 unless given)."""
    p = parse_program(asm)
    d = {"sections": [{"pad": 0, **s} for s in sections], "final_outputs": finals,
         "dataflow": [{"from": list(a), "to": list(b)} for a, b in dataflow]}
    if detector is not None:
        d["detector"] = detector
    if future_use is not None:
        d["future_use"] = future_use
    return p, SectionLayout.from_json(d)


@functools.lru_cache(maxsize=None)
def _suite():
    return build_suite()


@functools.lru_cache(maxsize=None)
def golden(name: str, variant: str | None = None):
    b = _suite()[name]
    prog, layout = b.version(variant)
    return run_golden(prog, layout)


@pytest.fixture(scope="session")
def suite():
    return _suite()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
