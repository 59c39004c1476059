"""Pure-Python execution engine.

Used as the fallback when the compiled ``_ckernel`` extension is missing,
and always for the traced golden run. ``inject_batch`` and
``perturb_batch`` must agree bit-for-bit with the compiled versions.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .ir import MASK64, OP, wrap64

EV_STOP, EV_HALT, EV_CRASH, EV_TIMEOUT, EV_ABORT, EV_CONVERGED, EV_SECTIMEOUT = range(7)

# outcome status codes shared with the compiled engine
ST_DONE, ST_CRASH, ST_TIMEOUT, ST_DETECTED, ST_CONVERGED, ST_NOTRUN = range(6)

_INF = float("inf")
# x86 default quiet NaN (sign bit set), what the FPU produces for 0/0 etc.
_DNAN = struct.unpack("<d", struct.pack("<Q", 0xFFF8000000000000))[0]
_I64_LIM = 9.223372036854775808e18

_pack_d = struct.Struct("<d").pack
_unpack_d = struct.Struct("<d").unpack
_pack_q = struct.Struct("<Q").pack
_unpack_q = struct.Struct("<Q").unpack
_pack_32d = struct.Struct("<32d").pack

(LDI, LDF, MOVI, MOVF, IADD, ISUB, IMUL, IDIV, IAND, IOR, IXOR, ISHL, ISHR,
 ILT, ILE, IEQ, IADDK, ISUBK, IMULK, IDIVK, IANDK, IORK, IXORK, ISHLK, ISHRK,
 ILTK, ILEK, IEQK, FADD, FSUB, FMUL, FDIV, FNEG, FABS, FSQRT, FEXP, FLOG,
 FLT, FLE, FEQ, ITOF, FTOI, LDW, LDWF, STW, STWF, JMP, BNZ, BZ, SBEG, SEND,
 HALT, ABORT) = range(len(OP))


def f2b(x: float) -> int:
    return _unpack_q(_pack_d(x))[0]


def b2f(b: int) -> float:
    return _unpack_d(_pack_q(b & MASK64))[0]


def _fdiv(x: float, y: float) -> float:
    if y == 0.0:
        if x != x:
            return x
        if x == 0.0:
            return _DNAN
        return math.copysign(_INF, x) * math.copysign(1.0, y)
    return x / y


def _fexp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return _INF


def _flog(x: float) -> float:
    if x != x:
        return x
    if x == 0.0:
        return -_INF
    if x < 0.0:
        return _DNAN
    return math.log(x)


def _fsqrt(x: float) -> float:
    if x != x:
        return x
    if x < 0.0:
        return _DNAN
    return math.sqrt(x)


def _ftoi(x: float) -> int:
    if x != x or x >= _I64_LIM or x < -_I64_LIM:
        return -(1 << 63)
    return int(x)


def _idiv(x: int, y: int) -> int:
    q = abs(x) // abs(y)
    return q if (x < 0) == (y < 0) else -q


class _Crash(Exception):
    pass


def run(code, state, stop_pc=-1, fault=None, sec_begin=0, sec_limit=-1,
        roi=(0, 0), roi_limit=1 << 62, total_limit=1 << 62, ck=None,
        trace=None):
    """Execute from ``state`` until a stop event; mutates ``state``.

    ``state`` is a dict with keys pc, dyn, roi, ir, fr, mem (Python lists).
    ``fault`` is (dyn, unified reg, is_dst, bit) or None. ``ck`` enables
    convergence checks: (ck_dyn list, ck_pc, ck_ir lists, ck_fr packed bytes,
    ck_mem lists, next index). ``trace`` collects golden-run records as
    [slot values, pc, mem addr, is_store].
    """
    ir = state["ir"]
    fr = state["fr"]
    mem = state["mem"]
    pc = state["pc"]
    dyn = state["dyn"]
    rcnt = state["roi"]
    n = len(code)
    M = len(mem)
    roi_lo, roi_hi = roi
    if fault is None:
        fdyn, freg, fdst, fbit = -1, -1, False, 0
    else:
        fdyn, freg, fdst, fbit = fault
    if ck is not None:
        ck_dyn, ck_pc, ck_ir, ck_fr, ck_mem, nxt = ck
        nck = len(ck_dyn)
    else:
        nck = 0
        nxt = 0
    event = EV_STOP
    try:
        while True:
            if nck:
                while nxt < nck and ck_dyn[nxt] < dyn:
                    nxt += 1
                if nxt < nck and ck_dyn[nxt] == dyn and dyn > fdyn:
                    if (pc == ck_pc[nxt] and ir == ck_ir[nxt] and mem == ck_mem[nxt]
                            and _pack_32d(*fr) == ck_fr[nxt]):
                        event = EV_CONVERGED
                        break
                    nxt += 1
            if pc < 0 or pc >= n:
                event = EV_CRASH
                break
            op, a, b, c, imm, dstu = code[pc]
            restore = -1
            saved = None
            if dyn == fdyn:
                if not fdst:
                    saved = _flip(ir, fr, freg, fbit)
                    restore = freg if dstu != freg else -1
            if trace is not None:
                rec = _trace_pre(code[pc], ir, fr)
                rec[1] = pc
            npc = pc + 1
            halted = False
            # --- execute -----------------------------------------------------
            if op == FMUL:
                fr[a] = fr[b] * fr[c]
            elif op == FADD:
                fr[a] = fr[b] + fr[c]
            elif op == LDWF or op == LDW:
                addr = imm if b < 0 else wrap64(ir[b] + imm)
                if addr < 0 or addr >= M:
                    raise _Crash
                if op == LDWF:
                    fr[a] = b2f(mem[addr])
                else:
                    v = mem[addr]
                    ir[a] = v - (1 << 64) if v >> 63 else v
                if trace is not None:
                    rec[2] = addr
            elif op == STWF or op == STW:
                addr = imm if b < 0 else wrap64(ir[b] + imm)
                if addr < 0 or addr >= M:
                    raise _Crash
                mem[addr] = f2b(fr[c]) if op == STWF else ir[c] & MASK64
                if trace is not None:
                    rec[2] = addr
                    rec[3] = True
            elif op == IADDK:
                ir[a] = wrap64(ir[b] + imm)
            elif op == IADD:
                ir[a] = wrap64(ir[b] + ir[c])
            elif op == FSUB:
                fr[a] = fr[b] - fr[c]
            elif op == BNZ:
                if ir[b] != 0:
                    npc = imm
            elif op == BZ:
                if ir[b] == 0:
                    npc = imm
            elif op == JMP:
                npc = imm
            elif op == ILT:
                ir[a] = 1 if ir[b] < ir[c] else 0
            elif op == ILTK:
                ir[a] = 1 if ir[b] < imm else 0
            elif op == IMULK:
                ir[a] = wrap64(ir[b] * imm)
            elif op == IMUL:
                ir[a] = wrap64(ir[b] * ir[c])
            elif op == LDI:
                ir[a] = imm
            elif op == LDF:
                fr[a] = b2f(imm)
            elif op == MOVI:
                ir[a] = ir[b]
            elif op == MOVF:
                fr[a] = fr[b]
            elif op == FDIV:
                fr[a] = _fdiv(fr[b], fr[c])
            elif op == ISUB:
                ir[a] = wrap64(ir[b] - ir[c])
            elif op == ISUBK:
                ir[a] = wrap64(ir[b] - imm)
            elif op == IDIV or op == IDIVK:
                y = ir[c] if op == IDIV else imm
                x = ir[b]
                if y == 0 or (x == -(1 << 63) and y == -1):
                    raise _Crash
                ir[a] = _idiv(x, y)
            elif op == IAND:
                ir[a] = ir[b] & ir[c]
            elif op == IANDK:
                ir[a] = ir[b] & imm
            elif op == IOR:
                ir[a] = ir[b] | ir[c]
            elif op == IORK:
                ir[a] = ir[b] | imm
            elif op == IXOR:
                ir[a] = ir[b] ^ ir[c]
            elif op == IXORK:
                ir[a] = ir[b] ^ imm
            elif op == ISHL or op == ISHLK:
                s = (ir[c] if op == ISHL else imm) & 63
                ir[a] = wrap64((ir[b] & MASK64) << s)
            elif op == ISHR or op == ISHRK:
                s = (ir[c] if op == ISHR else imm) & 63
                ir[a] = wrap64((ir[b] & MASK64) >> s)
            elif op == ILE:
                ir[a] = 1 if ir[b] <= ir[c] else 0
            elif op == ILEK:
                ir[a] = 1 if ir[b] <= imm else 0
            elif op == IEQ:
                ir[a] = 1 if ir[b] == ir[c] else 0
            elif op == IEQK:
                ir[a] = 1 if ir[b] == imm else 0
            elif op == FNEG:
                fr[a] = -fr[b]
            elif op == FABS:
                fr[a] = math.fabs(fr[b])
            elif op == FSQRT:
                fr[a] = _fsqrt(fr[b])
            elif op == FEXP:
                fr[a] = _fexp(fr[b])
            elif op == FLOG:
                fr[a] = _flog(fr[b])
            elif op == FLT:
                ir[a] = 1 if fr[b] < fr[c] else 0
            elif op == FLE:
                ir[a] = 1 if fr[b] <= fr[c] else 0
            elif op == FEQ:
                ir[a] = 1 if fr[b] == fr[c] else 0
            elif op == ITOF:
                fr[a] = float(ir[b])
            elif op == FTOI:
                ir[a] = _ftoi(fr[b])
            elif op == SBEG or op == SEND:
                pass
            elif op == HALT:
                halted = True
            elif op == ABORT:
                event = EV_ABORT
                dyn += 1
                break
            else:  # pragma: no cover - decoder guarantees valid opcodes
                raise _Crash
            # --- end execute -------------------------------------------------
            if restore >= 0:
                if restore < 32:
                    ir[restore] = saved
                else:
                    fr[restore - 32] = saved
            if dyn == fdyn and fdst:
                _flip(ir, fr, freg, fbit)
            if trace is not None:
                _trace_post(rec, code[pc], ir, fr)
                trace.append(rec)
            dyn += 1
            if roi_lo <= pc < roi_hi:
                rcnt += 1
            if pc == stop_pc:
                pc = npc
                event = EV_STOP
                break
            if halted:
                event = EV_HALT
                break
            pc = npc
            if sec_limit >= 0 and dyn - sec_begin > sec_limit:
                event = EV_SECTIMEOUT
                break
            if rcnt > roi_limit or dyn > total_limit:
                event = EV_TIMEOUT
                break
    except _Crash:
        event = EV_CRASH
    state["pc"] = pc
    state["dyn"] = dyn
    state["roi"] = rcnt
    if ck is not None:
        state["ck_next"] = nxt
    return event


def _flip(ir, fr, u, bit):
    """Flip one bit of unified register ``u``; returns the old value."""
    if u < 32:
        old = ir[u]
        ir[u] = wrap64(old ^ (1 << bit))
    else:
        old = fr[u - 32]
        fr[u - 32] = b2f(f2b(old) ^ (1 << bit))
    return old


def _regbits(ir, fr, u):
    return ir[u] & MASK64 if u < 32 else f2b(fr[u - 32])


def _trace_pre(row, ir, fr):
    op, a, b, c, imm, dstu = row
    vals = []
    # source slot values in slot order, mirroring Instruction.slots()
    if op in (LDW, LDWF):
        if b >= 0:
            vals.append(ir[b] & MASK64)
    elif op in (STW, STWF):
        if b >= 0:
            vals.append(ir[b] & MASK64)
        vals.append(ir[c] & MASK64 if op == STW else f2b(fr[c]))
    else:
        for u in _SRC_UNIFIED[op](b, c):
            vals.append(_regbits(ir, fr, u))
    return [vals, None, -1, False]


def _trace_post(rec, row, ir, fr):
    dstu = row[5]
    if dstu >= 0:
        rec[0].append(_regbits(ir, fr, dstu))


def _mk_src_table():
    from .ir import _SHAPES, OPCODES

    table = {}
    for name in OPCODES:
        code = OP[name]
        if name in ("ldw", "ldwf", "stw", "stwf"):
            continue
        banks = _SHAPES[name][1]

        def f(b, c, banks=banks):
            regs = (b, c)
            return [regs[i] + (32 if bk == "f" else 0) for i, bk in enumerate(banks)]
        table[code] = f
    return table


_SRC_UNIFIED = _mk_src_table()


# --------------------------------------------------------------------------
# metrics


def measure(mem, words, widx, gold, isf, lo, hi, nreg, det_enabled, det_finite, out_r):
    """Fill ``out_r`` with per-region max abs differences; return True if the
    detector fires."""
    for k in range(nreg):
        out_r[k] = 0.0
    fired = False
    for i in range(len(words)):
        v = mem[words[i]]
        g = gold[i]
        if isf[i]:
            x = b2f(v)
            if det_enabled:
                if det_finite and not math.isfinite(x):
                    fired = True
                if x < lo[i] or x > hi[i]:
                    fired = True
            if v == g:
                continue
            y = b2f(g)
            if not (math.isfinite(x) and math.isfinite(y)):
                d = _INF
            else:
                d = math.fabs(x - y)
        else:
            if v == g:
                continue
            sv = v - (1 << 64) if v >> 63 else v
            sg = g - (1 << 64) if g >> 63 else g
            d = float(abs(sv - sg))
        k = widx[i]
        if d > out_r[k] or d != d:
            out_r[k] = d
    return fired


def _state_from_ck(ck_pc, ck_dyn, ck_roi, ck_ireg, ck_freg, ck_mem, i):
    return {"pc": int(ck_pc[i]), "dyn": int(ck_dyn[i]), "roi": int(ck_roi[i]),
            "ir": ck_ireg[i].tolist(), "fr": ck_freg[i].tolist(),
            "mem": ck_mem[i].tolist()}


def inject_batch(code, ck_dyn, ck_pc, ck_roi, ck_ireg, ck_freg, ck_mem,
                 site_ck, site_dyn, site_reg, site_isdst, site_bit, params,
                 sec_words, sec_widx, sec_gold, sec_isf, sec_lo, sec_hi,
                 fin_words, fin_widx, fin_gold, fin_isf, fin_lo, fin_hi,
                 out_sec_status, out_sec_r, out_fin_status, out_fin_r):
    """Inject one bitflip per site and classify at section end and/or halt.

    ``params`` (int64): roi_lo, roi_hi, total_limit, roi_limit, sec_end_pc,
    sec_begin_dyn, sec_limit, to_halt, det_enabled, det_finite, converge.
    """
    (roi_lo, roi_hi, total_limit, roi_limit, sec_end, sec_begin, sec_limit,
     to_halt, det_en, det_fin, converge) = [int(x) for x in params]
    code_l = [tuple(int(v) for v in row) for row in code]
    ck_dyn_l = ck_dyn.tolist()
    ck_pc_l = ck_pc.tolist()
    ck_ir_l = [r.tolist() for r in ck_ireg]
    ck_fr_l = [_pack_32d(*r.tolist()) for r in ck_freg]
    ck_mem_l = [r.tolist() for r in ck_mem]
    sw, swi, sg, sf, slo, shi = (sec_words.tolist(), sec_widx.tolist(), sec_gold.tolist(),
                                 sec_isf.tolist(), sec_lo.tolist(), sec_hi.tolist())
    fw, fwi, fg, ff, flo, fhi = (fin_words.tolist(), fin_widx.tolist(), fin_gold.tolist(),
                                 fin_isf.tolist(), fin_lo.tolist(), fin_hi.tolist())
    nsec = out_sec_r.shape[1]
    nfin = out_fin_r.shape[1]
    rs = [0.0] * nsec
    rf = [0.0] * nfin
    for s in range(len(site_dyn)):
        i = int(site_ck[s])
        st = _state_from_ck(ck_pc, ck_dyn, ck_roi, ck_ireg, ck_freg, ck_mem, i)
        fault = (int(site_dyn[s]), int(site_reg[s]), bool(site_isdst[s]), int(site_bit[s]))
        ck = (ck_dyn_l, ck_pc_l, ck_ir_l, ck_fr_l, ck_mem_l, i) if converge else None
        sec_status = ST_NOTRUN
        fin_status = ST_NOTRUN
        for k in range(nsec):
            out_sec_r[s, k] = 0.0
        for k in range(nfin):
            out_fin_r[s, k] = 0.0
        if sec_end >= 0:
            ev = run(code_l, st, stop_pc=sec_end, fault=fault, sec_begin=sec_begin,
                     sec_limit=sec_limit, roi=(roi_lo, roi_hi), roi_limit=roi_limit,
                     total_limit=total_limit, ck=ck)
            if ck is not None:
                ck = ck[:5] + (st["ck_next"],)
            if ev == EV_STOP or ev == EV_HALT:
                fired = measure(st["mem"], sw, swi, sg, sf, slo, shi, nsec, det_en, det_fin, rs)
                sec_status = ST_DETECTED if fired else ST_DONE
                for k in range(nsec):
                    out_sec_r[s, k] = rs[k]
            elif ev == EV_CONVERGED:
                sec_status = fin_status = ST_CONVERGED
            elif ev == EV_CRASH:
                sec_status = fin_status = ST_CRASH
            elif ev == EV_ABORT:
                sec_status = fin_status = ST_DETECTED
            elif ev == EV_SECTIMEOUT:
                sec_status = ST_TIMEOUT
            else:
                sec_status = fin_status = ST_TIMEOUT
            out_sec_status[s] = sec_status
            if not to_halt or fin_status != ST_NOTRUN:
                out_fin_status[s] = fin_status
                continue
            if ev == EV_HALT:
                fired = measure(st["mem"], fw, fwi, fg, ff, flo, fhi, nfin, det_en, det_fin, rf)
                out_fin_status[s] = ST_DETECTED if fired else ST_DONE
                for k in range(nfin):
                    out_fin_r[s, k] = rf[k]
                continue
        else:
            out_sec_status[s] = ST_NOTRUN
        ev = run(code_l, st, stop_pc=-1, fault=fault, roi=(roi_lo, roi_hi),
                 roi_limit=roi_limit, total_limit=total_limit, ck=ck)
        if ev == EV_HALT:
            fired = measure(st["mem"], fw, fwi, fg, ff, flo, fhi, nfin, det_en, det_fin, rf)
            out_fin_status[s] = ST_DETECTED if fired else ST_DONE
            for k in range(nfin):
                out_fin_r[s, k] = rf[k]
        elif ev == EV_CONVERGED:
            out_fin_status[s] = ST_CONVERGED
        elif ev == EV_CRASH:
            out_fin_status[s] = ST_CRASH
        elif ev == EV_ABORT:
            out_fin_status[s] = ST_DETECTED
        else:
            out_fin_status[s] = ST_TIMEOUT


def perturb_batch(code, start, start_ireg, start_freg, start_mem,
                  pert_words, pert_vals, params,
                  out_words, out_widx, out_gold, out_isf,
                  out_status, out_r):
    """Run a section from its entry state once per perturbed input vector.

    ``start`` (int64): pc, dyn, roi count. ``params`` (int64): roi_lo,
    roi_hi, stop_pc, sec_limit.
    """
    pc0, dyn0, roi0 = [int(x) for x in start]
    roi_lo, roi_hi, stop_pc, sec_limit = [int(x) for x in params]
    code_l = [tuple(int(v) for v in row) for row in code]
    ir0 = start_ireg.tolist()
    fr0 = start_freg.tolist()
    mem0 = start_mem.tolist()
    pw = pert_words.tolist()
    ow, owi, og, of = out_words.tolist(), out_widx.tolist(), out_gold.tolist(), out_isf.tolist()
    nreg = out_r.shape[1]
    r = [0.0] * nreg
    dummy = [0.0] * len(ow)
    for s in range(pert_vals.shape[0]):
        mem = list(mem0)
        vals = pert_vals[s].tolist()
        for j, w in enumerate(pw):
            mem[w] = vals[j]
        st = {"pc": pc0, "dyn": dyn0, "roi": roi0, "ir": list(ir0), "fr": list(fr0), "mem": mem}
        ev = run(code_l, st, stop_pc=stop_pc, sec_begin=dyn0, sec_limit=sec_limit,
                 roi=(roi_lo, roi_hi))
        if ev == EV_STOP or ev == EV_HALT:
            measure(mem, ow, owi, og, of, dummy, dummy, nreg, 0, 0, r)
            out_status[s] = ST_DONE
            for k in range(nreg):
                out_r[s, k] = r[k]
        else:
            out_status[s] = {EV_CRASH: ST_CRASH, EV_ABORT: ST_DETECTED}.get(ev, ST_TIMEOUT)
            for k in range(nreg):
                out_r[s, k] = 0.0


def encode(program) -> np.ndarray:
    """Encode a Program's instructions as an (n, 6) int64 array."""
    rows = [(ins.opcode, ins.a, ins.b, ins.c, ins.imm, ins.dst_unified())
            for ins in program.instructions]
    return np.array(rows, dtype=np.int64).reshape(len(rows), 6)
