"""Regenerate the benchmark corpus under bench/.

Hand-written sources (LU base) are read from disk; everything else, the
lookup-table variants, the layouts and the expected outputs are produced
here. Expected outputs come from reference implementations written directly
in Python/numpy, never from the interpreter.

    python3 tools/gen_bench.py [--bench-dir bench]
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

from flipforge import interp
from flipforge.ir import (DetectorConfig, Region, SectionLayout, StaticSection, bits2f,
                          parse_program)

MASK = (1 << 64) - 1


def fl(vals) -> str:
    return " ".join(repr(float(v)) for v in vals)


# --------------------------------------------------------------------------
# lookup-table variants


def lookup_block(prefix: str, base: str | None, keys: list[int], outs: list[int],
                 table: int, entries: list[tuple[list, list]], bank: str) -> list[str]:
    """Compare the key words against each table entry; on a hit copy the
    stored outputs and jump to ``<prefix>_hit``, otherwise fall through."""
    reg = "f" if bank == "float" else "r"
    eq = "feq" if bank == "float" else "ieq"
    stride = len(keys) + len(outs)

    def at(off: int) -> str:
        return f"[{base}+{off}]" if base else f"[{off}]"

    lines = []
    for e in range(len(entries)):
        row = table + e * stride
        for t, off in enumerate(keys):
            lines += [f"    ld {reg}0, {at(off)}", f"    ld {reg}1, [{row + t}]",
                      f"    {eq} r2, {reg}0, {reg}1", f"    bz r2, {prefix}_m{e}"]
        for t, off in enumerate(outs):
            lines += [f"    ld {reg}0, [{row + len(keys) + t}]", f"    st {at(off)}, {reg}0"]
        lines += [f"    jmp {prefix}_hit", f"{prefix}_m{e}:"]
    return lines


def table_mem(addr: int, entries, bank: str) -> str:
    vals = [v for k, o in entries for v in list(k) + list(o)]
    if bank == "float":
        return f".mem {addr} {len(vals)} float {fl(vals)}"
    return f".mem {addr} {len(vals)} int {' '.join(str(int(v)) for v in vals)}"


def splice_lookup(src: str, begin: str, end: str, setup: list[str], block: list[str],
                  prefix: str, mem_line: str) -> str:
    """Insert setup + lookup right after the begin marker of a section and a
    hit label right before its end marker."""
    out = []
    for line in src.splitlines():
        s = line.strip()
        if s.startswith(end + ":"):
            out.append(f"{prefix}_hit:")
        out.append(line)
        if s.startswith(begin + ":"):
            out += setup + block
    # table directive goes after the last .mem line
    last = max(i for i, l in enumerate(out) if l.strip().startswith(".mem"))
    out.insert(last + 1, mem_line)
    return "\n".join(out) + "\n"


def words_at(mem, addrs, bank):
    if bank == "float":
        return [bits2f(int(mem[a])) for a in addrs]
    return [int(np.int64(np.uint64(mem[a]))) for a in addrs]


def state_at(tr, iid):
    return tr.ck_mem[tr.instance(iid).ck]


# --------------------------------------------------------------------------
# LU


def lu_matrix():
    A = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            A[i, j] = 0.5 + 0.125 * ((3 * i + 5 * j) % 7) - 0.0625 * ((i * j) % 3)
            if i == j:
                A[i, j] += 6.0
    return A


def lu_reference(A):
    """Right-looking blocked LU without pivoting, same operation order."""
    A = A.copy()
    for k in range(2):
        lo, hi = 4 * k, 4 * k + 4
        for j in range(lo, hi):
            for i in range(j + 1, hi):
                A[i, j] = A[i, j] / A[j, j]
                for c in range(j + 1, hi):
                    A[i, c] = A[i, c] - A[i, j] * A[j, c]
        for i in range(hi, 8):
            for j in range(lo, hi):
                A[i, j] = A[i, j] / A[j, j]
                for c in range(j + 1, hi):
                    A[i, c] = A[i, c] - A[i, j] * A[j, c]
        for c in range(hi, 8):
            for j in range(lo, hi):
                for i in range(j + 1, hi):
                    A[i, c] = A[i, c] - A[i, j] * A[j, c]
        for i in range(hi, 8):
            for c in range(hi, 8):
                acc = A[i, c]
                for j in range(lo, hi):
                    acc = acc - A[i, j] * A[j, c]
                A[i, c] = acc
    return A


def lu_small(src: str) -> str:
    loop = """    mov r3, r1
s4_j:
    iadd r9, r8, r3
    imul r4, r3, 8
    iadd r12, r4, r10
    ld f1, [r9]
    ld f3, [r12]
    fmul f4, f1, f3
    fsub f2, f2, f4
    iadd r3, r3, 1
    ilt r7, r3, r2
    bnz r7, s4_j
"""
    unrolled = ["    iadd r9, r8, r1", "    imul r4, r1, 8", "    iadd r12, r4, r10"]
    for t in range(4):
        unrolled += [f"    ld f1, [r9+{t}]", f"    ld f3, [r12+{8 * t}]",
                     "    fmul f4, f1, f3", "    fsub f2, f2, f4"]
    assert loop in src
    return src.replace(loop, "\n".join(unrolled) + "\n")


def gen_lu(root: Path) -> None:
    d = root / "lu"
    src = (d / "prog.asm").read_text()
    A = lu_matrix()
    M = lambda: Region("A", 0, 64, "float")  # noqa: E731
    secs = ["diag", "below", "right", "update"]
    layout = SectionLayout([StaticSection(s, (M(),), (M(),), 0) for s in secs],
                           final_outputs=[M()])
    (d / "variants" / "small.asm").write_text(lu_small(src))
    # large: the diagonal factorization becomes a lookup of the first block
    p = parse_program(src)
    tr = interp.run_golden(p, layout)
    blk = [8 * i + j for i in range(4) for j in range(4)]
    key = words_at(state_at(tr, "diag#1"), blk, "float")
    val = words_at(state_at(tr, "below#1"), blk, "float")
    entries = [(key, val)]
    large = splice_lookup(src, "s1b", "s1e", ["    imul r1, r20, 36"],
                          lookup_block("s1l", "r1", blk, blk, 64, entries, "float"),
                          "s1l", "; cached factorizations of diagonal blocks\n"
                          + table_mem(64, entries, "float"))
    (d / "variants" / "large.asm").write_text(large)
    big = SectionLayout([StaticSection(s, (M(), Region("table", 64, 32, "float"))
                                       if s == "diag" else (M(),), (M(),), 0) for s in secs],
                        final_outputs=[M()])
    ref = lu_reference(A)
    write_bench(d, src, layout, {
        "description": "blocked 8x8 LU decomposition, 4x4 blocks, two outer iterations",
        "thresholds": {"*": 1e-4},
        "expected": {"A": ref.reshape(-1).tolist()},
        "variants": {
            "small": {"source": "variants/small.asm", "kind": "small", "preserves": "exact",
                      "modified": ["update"],
                      "doc": "inner product loop of the trailing update unrolled by 4"},
            "large": {"source": "variants/large.asm", "layout": "variants/large.layout.json",
                      "kind": "large", "preserves": "exact", "modified": ["diag"],
                      "coverage_exempt": True,
                      "doc": "diagonal block factorization served from a lookup table "
                             "holding the first block"},
        }}, variant_layouts={"large": big})


# --------------------------------------------------------------------------
# FFT

FFT_XR = [0.25, -1.5, 0.75, 2.0, -0.5, 1.25, 0.125, -0.875]
FFT_XI = [0.5, 0.0, -0.25, 1.0, 0.375, -1.125, 0.0, 0.625]


def fft_stage(name: str, h: int, redundant: bool = True) -> list[str]:
    ts = 4 // h
    again = [f"    iadd r9, r8, {h}"] if redundant else []
    return [f"{name}b: section-begin", "    ldi r6, 0", f"{name}_s:",
            "    ilt r7, r6, 8", f"    bz r7, {name}_done", "    ldi r3, 0", f"{name}_j:",
            f"    imul r4, r3, {ts}", "    ld f0, [r4+24]", "    ld f1, [r4+28]",
            "    iadd r8, r6, r3", f"    iadd r9, r8, {h}", "    ld f2, [r9+32]",
            *again, "    ld f3, [r9+40]",
            "    fmul f4, f0, f2", "    fmul f5, f1, f3", "    fsub f4, f4, f5",
            "    fmul f5, f0, f3", "    fmul f6, f1, f2", "    fadd f5, f5, f6",
            "    ld f2, [r8+32]", "    ld f3, [r8+40]",
            "    fadd f6, f2, f4", "    st [r8+32], f6", "    fadd f6, f3, f5",
            "    st [r8+40], f6", "    fsub f6, f2, f4", *again, "    st [r9+32], f6",
            "    fsub f6, f3, f5", *again, "    st [r9+40], f6",
            "    iadd r3, r3, 1", f"    ilt r7, r3, {h}", f"    bnz r7, {name}_j",
            f"    iadd r6, r6, {2 * h}", f"    jmp {name}_s", f"{name}_done:",
            f"{name}e: section-end"]


def fft_program(small: bool = False) -> str:
    twr = [math.cos(2 * math.pi * k / 8) for k in range(4)]
    twi = [-math.sin(2 * math.pi * k / 8) for k in range(4)]
    lines = ["; 8-point radix-2 decimation-in-time FFT: a bit-reversal copy followed",
             "; by three butterfly stages, each its own section.",
             ".entry start", ".roi start done",
             ".section bitrev brb bre", ".section stage1 st1b st1e",
             ".section stage2 st2b st2e", ".section stage3 st3b st3e",
             f".mem 0 8 float {fl(FFT_XR)}", f".mem 8 8 float {fl(FFT_XI)}",
             ".mem 16 8 int 0 4 2 6 1 5 3 7",
             f".mem 24 4 float {fl(twr)}", f".mem 28 4 float {fl(twi)}",
             ".mem 32 16 float 0.0",
             "start:", "brb: section-begin", "    ldi r1, 0", "br_i:",
             "    ld r2, [r1+16]", "    ld f0, [r2]", "    ld f1, [r2+8]",
             "    st [r1+32], f0", "    st [r1+40], f1", "    iadd r1, r1, 1",
             "    ilt r7, r1, 8", "    bnz r7, br_i", "bre: section-end"]
    lines += fft_stage("st1", 1) + fft_stage("st2", 2, redundant=not small)
    lines += fft_stage("st3", 4) + ["done:", "    halt"]
    return "\n".join(lines) + "\n"


def fft_reference(xr, xi):
    """Same butterfly order as the program, on Python complex numbers."""
    x = [complex(a, b) for a, b in zip(xr, xi)]
    y = [x[p] for p in (0, 4, 2, 6, 1, 5, 3, 7)]
    twr = [math.cos(2 * math.pi * k / 8) for k in range(4)]
    twi = [-math.sin(2 * math.pi * k / 8) for k in range(4)]
    h = 1
    while h < 8:
        for s in range(0, 8, 2 * h):
            for j in range(h):
                wr, wi = twr[j * (4 // h)], twi[j * (4 // h)]
                b = y[s + j + h]
                tr = wr * b.real - wi * b.imag
                ti = wr * b.imag + wi * b.real
                a = y[s + j]
                y[s + j] = complex(a.real + tr, a.imag + ti)
                y[s + j + h] = complex(a.real - tr, a.imag - ti)
        h *= 2
    return [v.real for v in y] + [v.imag for v in y]


def gen_fft(root: Path) -> None:
    d = root / "fft"
    src = fft_program()
    (d / "variants").mkdir(parents=True, exist_ok=True)
    (d / "variants" / "small.asm").write_text(fft_program(small=True))
    X = lambda: Region("x", 0, 16, "float")  # noqa: E731
    P = lambda: Region("perm", 16, 8, "int")  # noqa: E731
    T = lambda: Region("tw", 24, 8, "float")  # noqa: E731
    Y = lambda: Region("y", 32, 16, "float")  # noqa: E731
    stages = ["stage1", "stage2", "stage3"]
    layout = SectionLayout([StaticSection("bitrev", (X(), P()), (Y(),), 0)]
                           + [StaticSection(s, (Y(), T()), (Y(),), 0) for s in stages],
                           final_outputs=[Y()])
    tr = interp.run_golden(parse_program(src), layout)
    ys = list(range(32, 48))
    entries = [(words_at(state_at(tr, "stage3#1"), ys, "float"),
                words_at(tr.final_mem, ys, "float"))]
    large = splice_lookup(src, "st3b", "st3e", [],
                          lookup_block("st3l", None, ys, ys, 48, entries, "float"),
                          "st3l", "; cached results of the last stage\n"
                          + table_mem(48, entries, "float"))
    (d / "variants" / "large.asm").write_text(large)
    big = SectionLayout([StaticSection("bitrev", (X(), P()), (Y(),), 0)]
                        + [StaticSection(s, (Y(), T()) + ((Region("table", 48, 32, "float"),)
                                                        if s == "stage3" else ()), (Y(),), 0)
                           for s in stages], final_outputs=[Y()])
    write_bench(d, src, layout, {
        "description": "8-point radix-2 FFT, one section per butterfly stage",
        "thresholds": {"*": 1e-4},
        "expected": {"y": fft_reference(FFT_XR, FFT_XI)},
        "variants": {
            "small": {"source": "variants/small.asm", "kind": "small", "preserves": "exact",
                      "modified": ["stage2"],
                      "doc": "partner index of the second stage kept in a register "
                             "instead of being recomputed"},
            "large": {"source": "variants/large.asm", "layout": "variants/large.layout.json",
                      "kind": "large", "preserves": "exact", "modified": ["stage3"],
                      "coverage_exempt": True,
                      "doc": "last stage served from a lookup table"},
        }}, variant_layouts={"large": big})


# --------------------------------------------------------------------------
# BScholes

BS_OPTS = {"S": [42.0, 30.0], "K": [40.0, 36.0], "rate": [0.1, 0.05],
           "vol": [0.2, 0.25], "T": [0.5, 0.75]}
CNDF_C = [0.319381530, -0.356563782, 1.781477937, -1.821255978, 1.330274429]
INV_SQRT_2PI = 0.3989422804014327


def bs_dcalc(p: str, dup: bool) -> list[str]:
    def body(o: int) -> list[str]:
        f = lambda k: f"f{k + o}"  # noqa: E731
        return [f"    ld {f(0)}, [r20]", f"    ld {f(1)}, [r20+2]", f"    ld {f(2)}, [r20+4]",
                f"    ld {f(3)}, [r20+6]", f"    ld {f(4)}, [r20+8]",
                f"    fsqrt {f(5)}, {f(4)}", f"    fmul {f(6)}, {f(3)}, {f(5)}",
                f"    fdiv {f(7)}, {f(0)}, {f(1)}", f"    flog {f(7)}, {f(7)}",
                f"    fmul {f(8)}, {f(3)}, {f(3)}", f"    ldf {f(9)}, 0.5",
                f"    fmul {f(8)}, {f(8)}, {f(9)}", f"    fadd {f(8)}, {f(8)}, {f(2)}",
                f"    fmul {f(8)}, {f(8)}, {f(4)}", f"    fadd {f(7)}, {f(7)}, {f(8)}",
                f"    fdiv {f(7)}, {f(7)}, {f(6)}", f"    fsub {f(8)}, {f(7)}, {f(6)}"]

    lines = [f"{p}b: section-begin"] + body(0)
    if dup:
        lines += ["; second evaluation, compared against the first"] + body(10)
        lines += ["    feq r1, f7, f17", f"    bz r1, {p}_fail", "    feq r1, f8, f18",
                  f"    bz r1, {p}_fail"]
    lines += ["    st [r20+10], f7", "    st [r20+12], f8"]
    if dup:
        lines += [f"    jmp {p}_ok", f"{p}_fail:", "    abort", f"{p}_ok:"]
    return lines + [f"{p}e: section-end"]


def bs_cndf(p: str, src_off: int, dst_off: int, small: bool) -> list[str]:
    lines = [f"{p}b: section-begin", f"    ld f0, [r20+{src_off}]", "    ldf f9, 0.0",
             "    flt r7, f0, f9", f"    bz r7, {p}_pos", "    fneg f0, f0", f"{p}_pos:",
             "    fmul f1, f0, f0", "    ldf f2, -0.5", "    fmul f1, f1, f2", "    fexp f1, f1",
             f"    ldf f2, {INV_SQRT_2PI!r}", "    fmul f1, f1, f2",
             "    ldf f2, 0.2316419", "    fmul f3, f0, f2", "    ldf f2, 1.0",
             "    fadd f3, f3, f2", "    fdiv f3, f2, f3",
             "    fmul f4, f3, f3", "    fmul f5, f4, f3", "    fmul f6, f5, f3",
             "    fmul f7, f6, f3"]
    for k, c in enumerate(CNDF_C):
        lines += [f"    ldf f2, {c!r}", f"    fmul f{3 + k}, f{3 + k}, f2"]
    lines += ["    fadd f3, f3, f4", "    fadd f3, f3, f5", "    fadd f3, f3, f6",
              "    fadd f3, f3, f7", "    fmul f3, f3, f1", "    ldf f2, 1.0",
              "    fsub f0, f2, f3", f"    bz r7, {p}_st"]
    # negative inputs use the reflection 1 - (1 - x); the small variant keeps x
    lines += ["    mov f0, f3"] if small else ["    fsub f0, f2, f0"]
    return lines + [f"{p}_st:", f"    st [r20+{dst_off}], f0", f"{p}e: section-end"]


def bs_program(small: bool = False, dup: bool = False, cndf1: list[str] | None = None) -> str:
    o = BS_OPTS
    lines = ["; Black-Scholes call prices for two options. The option index lives",
             "; in r20 and every section runs once per option.",
             ".entry start", ".roi start done",
             ".section dcalc s1b s1e", ".section cndf1 s2b s2e",
             ".section cndf2 s3b s3e", ".section price s4b s4e",
             f".mem 0 10 float {fl(o['S'] + o['K'] + o['rate'] + o['vol'] + o['T'])}",
             ".mem 10 10 float 0.0",
             "start:", "    ldi r20, 0", "opt:"]
    lines += bs_dcalc("s1", dup)
    lines += cndf1 if cndf1 is not None else bs_cndf("s2", 10, 14, small)
    lines += bs_cndf("s3", 12, 16, small)
    lines += ["s4b: section-begin", "    ld f0, [r20]", "    ld f1, [r20+2]",
              "    ld f2, [r20+4]", "    ld f4, [r20+8]", "    ld f5, [r20+14]",
              "    ld f6, [r20+16]", "    fmul f7, f2, f4", "    fneg f7, f7",
              "    fexp f7, f7", "    fmul f7, f1, f7", "    fmul f8, f0, f5",
              "    fmul f9, f7, f6", "    fsub f8, f8, f9", "    st [r20+18], f8",
              "s4e: section-end",
              "    iadd r20, r20, 1", "    ilt r7, r20, 2", "    bnz r7, opt",
              "done:", "    halt"]
    return "\n".join(lines) + "\n"


def bs_reference(small: bool = False):
    def cndf(x):
        neg = x < 0.0
        if neg:
            x = -x
        npr = math.exp(x * x * -0.5) * INV_SQRT_2PI
        k = 1.0 / (x * 0.2316419 + 1.0)
        k2 = k * k
        k3 = k2 * k
        k4 = k3 * k
        k5 = k4 * k
        poly = k * CNDF_C[0] + k2 * CNDF_C[1] + k3 * CNDF_C[2] + k4 * CNDF_C[3] + k5 * CNDF_C[4]
        t = poly * npr
        out = 1.0 - t
        if neg:
            out = t if small else 1.0 - out
        return out

    o = BS_OPTS
    d, n1, n2, price = [0.0] * 4, [0.0] * 2, [0.0] * 2, [0.0] * 2
    for i in range(2):
        S, K, r, v, T = (o[k][i] for k in ("S", "K", "rate", "vol", "T"))
        vs = v * math.sqrt(T)
        d1 = (math.log(S / K) + (v * v * 0.5 + r) * T) / vs
        d2 = d1 - vs
        d[i], d[2 + i] = d1, d2
        n1[i], n2[i] = cndf(d1), cndf(d2)
        fut = K * math.exp(-(r * T))
        price[i] = S * n1[i] - fut * n2[i]
    return d, n1, n2, price


def gen_bscholes(root: Path) -> None:
    d = root / "bscholes"
    src = bs_program()
    (d / "variants").mkdir(parents=True, exist_ok=True)
    (d / "variants" / "small.asm").write_text(bs_program(small=True))
    (d / "variants" / "errdet.asm").write_text(bs_program(dup=True))
    OPT = lambda: Region("opt", 0, 10, "float")  # noqa: E731
    D = lambda: Region("d", 10, 4, "float")  # noqa: E731
    N1 = lambda: Region("n1", 14, 2, "float")  # noqa: E731
    N2 = lambda: Region("n2", 16, 2, "float")  # noqa: E731
    PR = lambda: Region("price", 18, 2, "float")  # noqa: E731
    det = DetectorConfig(True, True, {"d": (-100.0, 100.0), "n1": (0.0, 1.0),
                                      "n2": (0.0, 1.0), "price": (0.0, 1000.0)})

    def lay(extra=()):
        return SectionLayout([StaticSection("dcalc", (OPT(),), (D(),), 0),
                              StaticSection("cndf1", (D(),) + tuple(extra), (N1(),), 0),
                              StaticSection("cndf2", (D(),), (N2(),), 0),
                              StaticSection("price", (OPT(), N1(), N2()), (PR(),), 0)],
                             final_outputs=[PR()], detector=det)

    dref, n1, _, price = bs_reference()
    # large: first-option CNDF results cached in a table keyed by d1
    entries = [([dref[0]], [n1[0]])]
    cached = ["s2b: section-begin"] + lookup_block("s2l", "r20", [10], [14], 20, entries,
                                                   "float")
    body = bs_cndf("s2", 10, 14, False)[1:-1]
    cached += body + ["s2l_hit:", "s2e: section-end"]
    large = bs_program(cndf1=cached).replace(
        ".mem 10 10 float 0.0",
        ".mem 10 10 float 0.0\n; cached normal CDF values\n" + table_mem(20, entries, "float"))
    (d / "variants" / "large.asm").write_text(large)
    _, _, _, price_small = bs_reference(small=True)
    write_bench(d, src, lay(), {
        "description": "Black-Scholes pricing of two options, four sections per option",
        "thresholds": {"*": 1e-4},
        "expected": {"price": price},
        "variants": {
            "small": {"source": "variants/small.asm", "kind": "small",
                      "preserves": "tolerance", "tolerance": 1e-12,
                      "modified": ["cndf1", "cndf2"],
                      "expected": {"price": price_small},
                      "doc": "the reflection 1 - (1 - x) for negative inputs of the "
                             "normal CDF is replaced by x; rounding may differ slightly"},
            "large": {"source": "variants/large.asm", "layout": "variants/large.layout.json",
                      "kind": "large", "preserves": "exact", "modified": ["cndf1"],
                      "coverage_exempt": True,
                      "doc": "normal CDF of d1 served from a lookup table for the "
                             "first option"},
            "errdet": {"source": "variants/errdet.asm", "kind": "error-detection",
                       "preserves": "exact", "modified": ["dcalc"], "duplicated": "dcalc",
                       "coverage_exempt": True,
                       "doc": "d1/d2 computed twice from separate loads; any mismatch "
                              "aborts"},
        }}, variant_layouts={"large": lay((Region("table", 20, 2, "float"),))})


# --------------------------------------------------------------------------
# HASH

HASH_MSG = [0x0123456789ABCDEF, 0x0F1E2D3C4B5A6978, 0x1122334455667788, 0x7FEDCBA987654321]
GOLD = 0x9E3779B97F4A7C15
M1, M2 = 0xBF58476D1CE4E5B9, 0x94D049BB133111EB


def _s(x: int) -> int:
    x &= MASK
    return x - (1 << 64) if x >> 63 else x


def mix_asm(r: str, t: str, split_last: bool) -> list[str]:
    last = ([f"    ishr {t}, {r}, 15", f"    ishr {t}, {t}, 16"] if split_last
            else [f"    ishr {t}, {r}, 31"])
    return [f"    ishr {t}, {r}, 30", f"    ixor {r}, {r}, {t}", f"    imul {r}, {r}, {_s(M1)}",
            f"    ishr {t}, {r}, 27", f"    ixor {r}, {r}, {t}", f"    imul {r}, {r}, {_s(M2)}",
            *last, f"    ixor {r}, {r}, {t}"]


def rotl_asm(dst: str, src: str, k: int, t: str) -> list[str]:
    return [f"    ishl {dst}, {src}, {k}", f"    ishr {t}, {src}, {64 - k}",
            f"    ior {dst}, {dst}, {t}"]


def hash_program(small: bool = False, round_sec: list[str] | None = None,
                 extra_mem: str = "") -> str:
    lines = ["; 256-bit integer mixer in three sections: absorb, one diffusion round,",
             "; and finalization. All words are treated as unsigned 64-bit values.",
             ".entry start", ".roi start done",
             ".section absorb s1b s1e", ".section round s2b s2e", ".section final s3b s3e",
             f".mem 0 4 int {' '.join(str(_s(m)) for m in HASH_MSG)}",
             ".mem 4 12 int 0"]
    if extra_mem:
        lines.append(extra_mem)
    lines += ["start:", "s1b: section-begin", "    ldi r1, 0", "s1_i:",
              "    ld r2, [r1]", "    iadd r3, r1, 1", "    iand r3, r3, 3", "    ld r4, [r3]",
              *rotl_asm("r5", "r4", 17, "r6"), "    iadd r2, r2, r5",
              f"    iadd r2, r2, {_s(GOLD)}", *mix_asm("r2", "r5", False),
              "    st [r1+4], r2", "    iadd r1, r1, 1", "    ilt r7, r1, 4",
              "    bnz r7, s1_i", "s1e: section-end"]
    lines += round_sec if round_sec is not None else hash_round()
    lines += ["s3b: section-begin", "    ldi r1, 0", "s3_i:",
              "    ld r2, [r1+8]", "    iadd r3, r1, 2", "    iand r3, r3, 3",
              "    ld r4, [r3+8]", "    iadd r2, r2, r4",
              # the split shift in the last mixing step is the small variant's target
              *mix_asm("r2", "r5", not small),
              "    ld r4, [r1+8]", "    ixor r2, r2, r4", "    st [r1+12], r2",
              "    iadd r1, r1, 1", "    ilt r7, r1, 4", "    bnz r7, s3_i",
              "s3e: section-end", "done:", "    halt"]
    return "\n".join(lines) + "\n"


def hash_round(body_only: bool = False) -> list[str]:
    body = ["    ldi r1, 0", "s2_i:", "    ld r2, [r1+4]", "    iadd r3, r1, 1",
            "    iand r3, r3, 3", "    ld r4, [r3+4]", *rotl_asm("r5", "r4", 23, "r6"),
            "    ixor r2, r2, r5", *mix_asm("r2", "r5", False), "    st [r1+8], r2",
            "    iadd r1, r1, 1", "    ilt r7, r1, 4", "    bnz r7, s2_i"]
    return body if body_only else ["s2b: section-begin"] + body + ["s2e: section-end"]


def hash_reference(msg):
    def mix(z):
        z &= MASK
        z = ((z ^ (z >> 30)) * M1) & MASK
        z = ((z ^ (z >> 27)) * M2) & MASK
        return z ^ (z >> 31)

    def rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & MASK

    h = [mix(msg[i] + rotl(msg[(i + 1) & 3], 17) + GOLD) for i in range(4)]
    g = [mix(h[i] ^ rotl(h[(i + 1) & 3], 23)) for i in range(4)]
    dg = [mix(g[i] + g[(i + 2) & 3]) ^ g[i] for i in range(4)]
    return h, g, dg


def gen_hash(root: Path) -> None:
    d = root / "hash"
    src = hash_program()
    (d / "variants").mkdir(parents=True, exist_ok=True)
    (d / "variants" / "small.asm").write_text(hash_program(small=True))
    R = lambda n, a: Region(n, a, 4, "int")  # noqa: E731

    def lay(extra=()):
        return SectionLayout([StaticSection("absorb", (R("msg", 0),), (R("h", 4),), 0),
                              StaticSection("round", (R("h", 4),) + tuple(extra),
                                            (R("g", 8),), 0),
                              StaticSection("final", (R("g", 8),), (R("digest", 12),), 0)],
                             final_outputs=[R("digest", 12)])

    h, g, dg = hash_reference(HASH_MSG)
    entries = [([_s(x) for x in h], [_s(x) for x in g])]
    cached = (["s2b: section-begin"]
              + lookup_block("s2l", None, [4, 5, 6, 7], [8, 9, 10, 11], 16, entries, "int")
              + hash_round(body_only=True) + ["s2l_hit:", "s2e: section-end"])
    large = hash_program(round_sec=cached, extra_mem="; cached diffusion rounds\n"
                         + table_mem(16, entries, "int"))
    (d / "variants" / "large.asm").write_text(large)
    write_bench(d, src, lay(), {
        "description": "integer mixing hash over four 64-bit words, three sections",
        "thresholds": {"*": 0.0},
        "expected": {"digest": [_s(x) for x in dg]},
        "variants": {
            "small": {"source": "variants/small.asm", "kind": "small", "preserves": "exact",
                      "modified": ["final"],
                      "doc": "a shift split in two in the finalizer is merged"},
            "large": {"source": "variants/large.asm", "layout": "variants/large.layout.json",
                      "kind": "large", "preserves": "exact", "modified": ["round"],
                      "coverage_exempt": True,
                      "doc": "diffusion round served from a lookup table"},
        }}, variant_layouts={"large": lay((Region("table", 16, 8, "int"),))})


# --------------------------------------------------------------------------
# MASKER

MASKER_D = [0.4875, 1.2465, 2.0625, 2.9375]  # second value sits near a level boundary


def masker_inputs():
    xs = []
    for dv in MASKER_D:
        c = (dv + 0.1) / 0.75
        a = -1.0 + math.sqrt(1.0 + 2.0 * c)
        xs.append((a - 0.25) / 1.5)
    return xs


def masker_program(xs) -> str:
    def elementwise(p, body):
        return [f"{p}b: section-begin", "    ldi r1, 0", f"{p}_i:", *body,
                "    iadd r1, r1, 1", "    ilt r7, r1, 4", f"    bnz r7, {p}_i",
                f"{p}e: section-end"]

    lines = ["; Five-stage pipeline whose last stage snaps each value to the nearest",
             "; level of a table, masking most small upstream errors.",
             ".entry start", ".roi start done",
             ".section scale s1b s1e", ".section square s2b s2e", ".section sum s3b s3e",
             ".section shift s4b s4e", ".section quantize s5b s5e",
             f".mem 0 4 float {fl(xs)}", ".mem 4 16 float 0.0",
             f".mem 20 8 float {fl([0.5 * k for k in range(8)])}",
             ".mem 28 4 float 0.0", "start:"]
    lines += elementwise("s1", ["    ld f0, [r1]", "    ldf f1, 1.5", "    fmul f0, f0, f1",
                                "    ldf f1, 0.25", "    fadd f0, f0, f1",
                                "    st [r1+4], f0"])
    lines += elementwise("s2", ["    ld f0, [r1+4]", "    fmul f0, f0, f0", "    ldf f1, 0.5",
                                "    fmul f0, f0, f1", "    st [r1+8], f0"])
    lines += elementwise("s3", ["    ld f0, [r1+8]", "    ld f1, [r1+4]", "    fadd f0, f0, f1",
                                "    st [r1+12], f0"])
    lines += elementwise("s4", ["    ld f0, [r1+12]", "    ldf f1, 0.75", "    fmul f0, f0, f1",
                                "    ldf f1, 0.1", "    fsub f0, f0, f1", "    st [r1+16], f0"])
    lines += elementwise("s5", ["    ld f0, [r1+16]", "    ldf f1, 1e300", "    ldf f4, 0.0",
                                "    ldi r3, 0", "s5_j:", "    ld f2, [r3+20]",
                                "    fsub f3, f0, f2", "    fabs f3, f3", "    flt r7, f3, f1",
                                "    bz r7, s5_skip", "    mov f1, f3", "    mov f4, f2",
                                "s5_skip:", "    iadd r3, r3, 1", "    ilt r7, r3, 8",
                                "    bnz r7, s5_j", "    st [r1+28], f4"])
    return "\n".join(lines + ["done:", "    halt"]) + "\n"


def masker_reference(xs):
    levels = [0.5 * k for k in range(8)]
    q = []
    for x in xs:
        a = x * 1.5 + 0.25
        b = a * a * 0.5
        c = b + a
        dv = c * 0.75 - 0.1
        best, lv = 1e300, 0.0
        for L in levels:
            if abs(dv - L) < best:
                best, lv = abs(dv - L), L
        q.append(lv)
    return q


def gen_masker(root: Path) -> None:
    d = root / "masker"
    xs = masker_inputs()
    F = lambda n, a, k=4: Region(n, a, k, "float")  # noqa: E731
    layout = SectionLayout([
        StaticSection("scale", (F("x", 0),), (F("a", 4),), 0),
        StaticSection("square", (F("a", 4),), (F("b", 8),), 0),
        StaticSection("sum", (F("a", 4), F("b", 8)), (F("c", 12),), 0),
        StaticSection("shift", (F("c", 12),), (F("d", 16),), 0),
        StaticSection("quantize", (F("d", 16), F("levels", 20, 8)), (F("q", 28),), 0)],
        final_outputs=[F("q", 28)])
    write_bench(d, masker_program(xs), layout, {
        "description": "five-section pipeline ending in a nearest-level lookup",
        "thresholds": {"*": 1e-3},
        "expected": {"q": masker_reference(xs)},
        "variants": {}})


# --------------------------------------------------------------------------
# affine benchmarks for the conservativeness check


def affine_program(kind: str) -> str:
    if kind == "int":
        x = [7, -3]
        body = [
            "s1b: section-begin", "    ld r1, [0]", "    ld r2, [1]", "    imul r3, r1, 3",
            "    imul r4, r2, 2", "    iadd r3, r3, r4", "    iadd r3, r3, 5", "    st [2], r3",
            "    imul r4, r2, 4", "    isub r4, r1, r4", "    st [3], r4", "s1e: section-end",
            "s2b: section-begin", "    ld r1, [2]", "    ld r2, [3]", "    iadd r3, r1, r1",
            "    isub r3, r3, r2", "    iadd r3, r3, 7", "    st [4], r3", "s2e: section-end",
            "s3b: section-begin", "    ld r1, [2]", "    ld r2, [0]", "    imul r2, r2, 3",
            "    iadd r1, r1, r2", "    st [5], r1", "    ld r1, [3]", "    imul r1, r1, 5",
            "    ld r2, [1]", "    isub r1, r1, r2", "    st [6], r1", "s3e: section-end",
            "s4b: section-begin", "    ld r1, [4]", "    ld r2, [5]", "    iadd r3, r1, r2",
            "    st [7], r3", "    ld r2, [6]", "    iadd r2, r2, r2", "    imul r1, r1, 3",
            "    isub r2, r2, r1", "    st [8], r2", "s4e: section-end"]
        mem = [f".mem 0 2 int {x[0]} {x[1]}", ".mem 2 7 int 0"]
    else:
        body = [
            "s1b: section-begin", "    ld f1, [0]", "    ldf f2, 2.0", "    fmul f1, f1, f2",
            "    st [2], f1", "    ld f1, [1]", "    ldf f2, -0.5", "    fmul f1, f1, f2",
            "    st [3], f1", "s1e: section-end",
            "s2b: section-begin", "    ld f1, [2]", "    ldf f2, 4.0", "    fmul f1, f1, f2",
            "    st [4], f1", "s2e: section-end",
            "s3b: section-begin", "    ld f1, [3]", "    ldf f2, 0.25", "    fmul f1, f1, f2",
            "    fneg f1, f1", "    st [5], f1", "    ld f1, [0]", "    fadd f1, f1, f1",
            "    st [6], f1", "s3e: section-end",
            "s4b: section-begin", "    ld f1, [4]", "    ldf f2, 0.5", "    fmul f1, f1, f2",
            "    st [7], f1", "    ld f1, [5]", "    fneg f1, f1", "    mov f3, f1",
            "    st [8], f3", "    ld f1, [6]", "    ldf f2, 8.0", "    fmul f1, f1, f2",
            "    st [9], f1", "s4e: section-end"]
        mem = [".mem 0 2 float 1.5 -2.25", ".mem 2 8 float 0.0"]
    head = ["; straight-line affine dataflow: four sections forming a small DAG",
            ".entry start", ".roi start done", ".section lin1 s1b s1e",
            ".section lin2 s2b s2e", ".section lin3 s3b s3e", ".section lin4 s4b s4e",
            *mem, "start:"]
    return "\n".join(head + body + ["done:", "    halt"]) + "\n"


def gen_affine(root: Path, kind: str) -> None:
    name = "affine" if kind == "int" else "affine_f"
    d = root / name
    bank = "int" if kind == "int" else "float"
    R = lambda n, a, k: Region(n, a, k, bank)  # noqa: E731
    nout = 2 if kind == "int" else 3
    layout = SectionLayout([
        StaticSection("lin1", (R("x", 0, 2),), (R("y", 2, 2),), 1),
        StaticSection("lin2", (R("y", 2, 2),), (R("z", 4, 1),), 1),
        StaticSection("lin3", (R("x", 0, 2), R("y", 2, 2)), (R("w", 5, 2),), 1),
        StaticSection("lin4", (R("z", 4, 1), R("w", 5, 2)), (R("out", 7, nout),), 1)],
        final_outputs=[R("out", 7, nout)])
    if kind == "int":
        x0, x1 = 7, -3
        y0, y1 = 3 * x0 + 2 * x1 + 5, x0 - 4 * x1
        z = 2 * y0 - y1 + 7
        w0, w1 = y0 + 3 * x0, 5 * y1 - x1
        out = [z + w0, 2 * w1 - 3 * z]
        desc = "integer affine DAG of four straight-line sections"
    else:
        x0, x1 = 1.5, -2.25
        y0, y1 = 2 * x0, -0.5 * x1
        out = [0.5 * (4 * y0), -(-(y1 * 0.25)), 8 * (2 * x0)]
        desc = "floating-point DAG of power-of-two scalings, negations and copies"
    write_bench(d, affine_program(kind), layout, {
        "description": desc, "thresholds": {"*": 16.0 if kind == "int" else 1e-6},
        "expected": {"out": out}, "variants": {}})


# --------------------------------------------------------------------------


def write_bench(d: Path, src: str, layout: SectionLayout, meta: dict,
                variant_layouts: dict[str, SectionLayout] | None = None) -> None:
    d.mkdir(parents=True, exist_ok=True)
    (d / "prog.asm").write_text(src)
    p = parse_program(src)
    layout.dataflow = interp.derive_dataflow(interp.run_golden(p, layout, check_layout=False))
    (d / "layout.json").write_text(layout.dumps())
    for vname, vl in (variant_layouts or {}).items():
        vsrc = (d / meta["variants"][vname]["source"]).read_text()
        vtr = interp.run_golden(parse_program(vsrc), vl, check_layout=False)
        vl.dataflow = interp.derive_dataflow(vtr)
        (d / meta["variants"][vname]["layout"]).write_text(vl.dumps())
    meta = {"name": d.name, "source": "prog.asm", "layout": "layout.json",
            "sensitivity": {"samples": 2048, "phi_max": 0.01, "seed": 0},
            "targets": [0.9, 0.95, 0.99, 1.0], "coverage": True, **meta}
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bench-dir", default=str(Path(__file__).resolve().parent.parent / "bench"))
    args = ap.parse_args(argv)
    root = Path(args.bench_dir)
    gen_lu(root)
    gen_fft(root)
    gen_bscholes(root)
    gen_hash(root)
    gen_masker(root)
    gen_affine(root, "int")
    gen_affine(root, "float")


if __name__ == "__main__":
    main()
