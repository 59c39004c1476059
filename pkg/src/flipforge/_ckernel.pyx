# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled execution engine; mirrors ``_pykernel`` bit-for-bit."""

from libc.math cimport exp, log, sqrt, fabs, isfinite, isnan, INFINITY
from libc.stdint cimport int64_t, uint64_t, uint8_t
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy, memcmp

cdef enum:
    EV_STOP = 0
    EV_HALT = 1
    EV_CRASH = 2
    EV_TIMEOUT = 3
    EV_ABORT = 4
    EV_CONVERGED = 5
    EV_SECTIMEOUT = 6

cdef enum:
    ST_DONE = 0
    ST_CRASH = 1
    ST_TIMEOUT = 2
    ST_DETECTED = 3
    ST_CONVERGED = 4
    ST_NOTRUN = 5

cdef enum:
    LDI, LDF, MOVI, MOVF, IADD, ISUB, IMUL, IDIV, IAND, IOR, IXOR, ISHL, ISHR,
    ILT, ILE, IEQ, IADDK, ISUBK, IMULK, IDIVK, IANDK, IORK, IXORK, ISHLK, ISHRK,
    ILTK, ILEK, IEQK, FADD, FSUB, FMUL, FDIV, FNEG, FABS, FSQRT, FEXP, FLOG,
    FLT, FLE, FEQ, ITOF, FTOI, LDW, LDWF, STW, STWF, JMP, BNZ, BZ, SBEG, SEND,
    HALT, ABORT

cdef int64_t I64_MIN = <int64_t>(<uint64_t>1 << 63)
cdef double I64_LIM = 9.223372036854775808e18


cdef struct Machine:
    int64_t pc
    int64_t dyn
    int64_t roi
    int64_t ir[32]
    double fr[32]
    uint64_t *mem
    int64_t M


cdef struct Ckpts:
    int64_t n
    int64_t next
    const int64_t *dyn
    const int64_t *pc
    const int64_t *ir
    const double *fr
    const uint64_t *mem


cdef inline uint64_t d2u(double x) nogil:
    cdef uint64_t u
    memcpy(&u, &x, 8)
    return u


cdef inline double u2d(uint64_t u) nogil:
    cdef double x
    memcpy(&x, &u, 8)
    return x


cdef inline int64_t regbits_flip(Machine *m, int64_t u, int bit) nogil:
    # returns the old raw bits so the caller can restore
    cdef uint64_t old
    if u < 32:
        old = <uint64_t>m.ir[u]
        m.ir[u] = <int64_t>(old ^ (<uint64_t>1 << bit))
    else:
        old = d2u(m.fr[u - 32])
        m.fr[u - 32] = u2d(old ^ (<uint64_t>1 << bit))
    return <int64_t>old


cdef inline void reg_restore(Machine *m, int64_t u, int64_t old) nogil:
    if u < 32:
        m.ir[u] = old
    else:
        m.fr[u - 32] = u2d(<uint64_t>old)


cdef int run(const int64_t[:, ::1] code, Machine *m, int64_t stop_pc,
             int64_t fdyn, int64_t freg, int fdst, int fbit,
             int64_t sec_begin, int64_t sec_limit, int64_t roi_lo, int64_t roi_hi,
             int64_t roi_limit, int64_t total_limit, Ckpts *ck) nogil:
    cdef int64_t n = code.shape[0]
    cdef int64_t pc = m.pc, dyn = m.dyn, rcnt = m.roi, npc, addr, x, y, old = 0
    cdef int64_t op, a, b, c, imm, dstu, restore, k
    cdef int halted, event
    cdef uint64_t ux
    cdef double fx
    while True:
        if ck != NULL and ck.n > 0:
            while ck.next < ck.n and ck.dyn[ck.next] < dyn:
                ck.next += 1
            if ck.next < ck.n and ck.dyn[ck.next] == dyn and dyn > fdyn:
                k = ck.next
                if (pc == ck.pc[k]
                        and memcmp(m.ir, ck.ir + 32 * k, 32 * 8) == 0
                        and memcmp(m.mem, ck.mem + m.M * k, m.M * 8) == 0
                        and memcmp(m.fr, ck.fr + 32 * k, 32 * 8) == 0):
                    event = EV_CONVERGED
                    break
                ck.next += 1
        if pc < 0 or pc >= n:
            event = EV_CRASH
            break
        op = code[pc, 0]
        a = code[pc, 1]
        b = code[pc, 2]
        c = code[pc, 3]
        imm = code[pc, 4]
        dstu = code[pc, 5]
        restore = -1
        if dyn == fdyn and not fdst:
            old = regbits_flip(m, freg, fbit)
            if dstu != freg:
                restore = freg
        npc = pc + 1
        halted = 0
        if op == FMUL:
            m.fr[a] = m.fr[b] * m.fr[c]
        elif op == FADD:
            m.fr[a] = m.fr[b] + m.fr[c]
        elif op == LDWF or op == LDW:
            addr = imm if b < 0 else <int64_t>(<uint64_t>m.ir[b] + <uint64_t>imm)
            if addr < 0 or addr >= m.M:
                event = EV_CRASH
                break
            if op == LDWF:
                m.fr[a] = u2d(m.mem[addr])
            else:
                m.ir[a] = <int64_t>m.mem[addr]
        elif op == STWF or op == STW:
            addr = imm if b < 0 else <int64_t>(<uint64_t>m.ir[b] + <uint64_t>imm)
            if addr < 0 or addr >= m.M:
                event = EV_CRASH
                break
            if op == STWF:
                m.mem[addr] = d2u(m.fr[c])
            else:
                m.mem[addr] = <uint64_t>m.ir[c]
        elif op == IADDK:
            m.ir[a] = <int64_t>(<uint64_t>m.ir[b] + <uint64_t>imm)
        elif op == IADD:
            m.ir[a] = <int64_t>(<uint64_t>m.ir[b] + <uint64_t>m.ir[c])
        elif op == FSUB:
            m.fr[a] = m.fr[b] - m.fr[c]
        elif op == BNZ:
            if m.ir[b] != 0:
                npc = imm
        elif op == BZ:
            if m.ir[b] == 0:
                npc = imm
        elif op == JMP:
            npc = imm
        elif op == ILT:
            m.ir[a] = 1 if m.ir[b] < m.ir[c] else 0
        elif op == ILTK:
            m.ir[a] = 1 if m.ir[b] < imm else 0
        elif op == IMULK:
            m.ir[a] = <int64_t>(<uint64_t>m.ir[b] * <uint64_t>imm)
        elif op == IMUL:
            m.ir[a] = <int64_t>(<uint64_t>m.ir[b] * <uint64_t>m.ir[c])
        elif op == LDI:
            m.ir[a] = imm
        elif op == LDF:
            m.fr[a] = u2d(<uint64_t>imm)
        elif op == MOVI:
            m.ir[a] = m.ir[b]
        elif op == MOVF:
            m.fr[a] = m.fr[b]
        elif op == FDIV:
            m.fr[a] = m.fr[b] / m.fr[c]
        elif op == ISUB:
            m.ir[a] = <int64_t>(<uint64_t>m.ir[b] - <uint64_t>m.ir[c])
        elif op == ISUBK:
            m.ir[a] = <int64_t>(<uint64_t>m.ir[b] - <uint64_t>imm)
        elif op == IDIV or op == IDIVK:
            y = m.ir[c] if op == IDIV else imm
            x = m.ir[b]
            if y == 0 or (x == I64_MIN and y == -1):
                event = EV_CRASH
                break
            m.ir[a] = x / y
        elif op == IAND:
            m.ir[a] = m.ir[b] & m.ir[c]
        elif op == IANDK:
            m.ir[a] = m.ir[b] & imm
        elif op == IOR:
            m.ir[a] = m.ir[b] | m.ir[c]
        elif op == IORK:
            m.ir[a] = m.ir[b] | imm
        elif op == IXOR:
            m.ir[a] = m.ir[b] ^ m.ir[c]
        elif op == IXORK:
            m.ir[a] = m.ir[b] ^ imm
        elif op == ISHL or op == ISHLK:
            y = (m.ir[c] if op == ISHL else imm) & 63
            m.ir[a] = <int64_t>(<uint64_t>m.ir[b] << y)
        elif op == ISHR or op == ISHRK:
            y = (m.ir[c] if op == ISHR else imm) & 63
            m.ir[a] = <int64_t>(<uint64_t>m.ir[b] >> y)
        elif op == ILE:
            m.ir[a] = 1 if m.ir[b] <= m.ir[c] else 0
        elif op == ILEK:
            m.ir[a] = 1 if m.ir[b] <= imm else 0
        elif op == IEQ:
            m.ir[a] = 1 if m.ir[b] == m.ir[c] else 0
        elif op == IEQK:
            m.ir[a] = 1 if m.ir[b] == imm else 0
        elif op == FNEG:
            m.fr[a] = -m.fr[b]
        elif op == FABS:
            m.fr[a] = fabs(m.fr[b])
        elif op == FSQRT:
            m.fr[a] = sqrt(m.fr[b])
        elif op == FEXP:
            m.fr[a] = exp(m.fr[b])
        elif op == FLOG:
            m.fr[a] = log(m.fr[b])
        elif op == FLT:
            m.ir[a] = 1 if m.fr[b] < m.fr[c] else 0
        elif op == FLE:
            m.ir[a] = 1 if m.fr[b] <= m.fr[c] else 0
        elif op == FEQ:
            m.ir[a] = 1 if m.fr[b] == m.fr[c] else 0
        elif op == ITOF:
            m.fr[a] = <double>m.ir[b]
        elif op == FTOI:
            fx = m.fr[b]
            if isnan(fx) or fx >= I64_LIM or fx < -I64_LIM:
                m.ir[a] = I64_MIN
            else:
                m.ir[a] = <int64_t>fx
        elif op == SBEG or op == SEND:
            pass
        elif op == HALT:
            halted = 1
        elif op == ABORT:
            event = EV_ABORT
            dyn += 1
            break
        else:
            event = EV_CRASH
            break
        if restore >= 0:
            reg_restore(m, restore, old)
        if dyn == fdyn and fdst:
            regbits_flip(m, freg, fbit)
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
    m.pc = pc
    m.dyn = dyn
    m.roi = rcnt
    return event


cdef int measure(const uint64_t *mem, const int64_t[::1] words, const int64_t[::1] widx,
                 const uint64_t[::1] gold, const uint8_t[::1] isf,
                 const double[::1] lo, const double[::1] hi,
                 int64_t nreg, int det_enabled, int det_finite, double *out_r) nogil:
    cdef int64_t i, k
    cdef uint64_t v, g
    cdef double x, yv, d
    cdef int fired = 0
    cdef int64_t sv, sg
    for k in range(nreg):
        out_r[k] = 0.0
    for i in range(words.shape[0]):
        v = mem[words[i]]
        g = gold[i]
        if isf[i]:
            x = u2d(v)
            if det_enabled:
                if det_finite and not isfinite(x):
                    fired = 1
                if x < lo[i] or x > hi[i]:
                    fired = 1
            if v == g:
                continue
            yv = u2d(g)
            if not (isfinite(x) and isfinite(yv)):
                d = INFINITY
            else:
                d = fabs(x - yv)
        else:
            if v == g:
                continue
            sv = <int64_t>v
            sg = <int64_t>g
            # exact |sv - sg| as an unsigned 64-bit magnitude, then to double
            if sv >= sg:
                d = <double>(<uint64_t>sv - <uint64_t>sg)
            else:
                d = <double>(<uint64_t>sg - <uint64_t>sv)
        k = widx[i]
        if d > out_r[k] or d != d:
            out_r[k] = d
    return fired


cdef void load_ck(Machine *m, const int64_t[::1] ck_dyn, const int64_t[::1] ck_pc,
                  const int64_t[::1] ck_roi, const int64_t[:, ::1] ck_ireg,
                  const double[:, ::1] ck_freg, const uint64_t[:, ::1] ck_mem,
                  int64_t i) nogil:
    cdef int64_t r
    m.pc = ck_pc[i]
    m.dyn = ck_dyn[i]
    m.roi = ck_roi[i]
    for r in range(32):
        m.ir[r] = ck_ireg[i, r]
        m.fr[r] = ck_freg[i, r]
    memcpy(m.mem, &ck_mem[i, 0], m.M * 8)


def inject_batch(const int64_t[:, ::1] code, const int64_t[::1] ck_dyn, const int64_t[::1] ck_pc,
                 const int64_t[::1] ck_roi, const int64_t[:, ::1] ck_ireg,
                 const double[:, ::1] ck_freg, const uint64_t[:, ::1] ck_mem,
                 const int64_t[::1] site_ck, const int64_t[::1] site_dyn,
                 const int64_t[::1] site_reg, const uint8_t[::1] site_isdst,
                 const int64_t[::1] site_bit, const int64_t[::1] params,
                 const int64_t[::1] sec_words, const int64_t[::1] sec_widx,
                 const uint64_t[::1] sec_gold, const uint8_t[::1] sec_isf,
                 const double[::1] sec_lo, const double[::1] sec_hi,
                 const int64_t[::1] fin_words, const int64_t[::1] fin_widx,
                 const uint64_t[::1] fin_gold, const uint8_t[::1] fin_isf,
                 const double[::1] fin_lo, const double[::1] fin_hi,
                 uint8_t[::1] out_sec_status, double[:, ::1] out_sec_r,
                 uint8_t[::1] out_fin_status, double[:, ::1] out_fin_r):
    cdef int64_t roi_lo = params[0], roi_hi = params[1], total_limit = params[2]
    cdef int64_t roi_limit = params[3], sec_end = params[4], sec_begin = params[5]
    cdef int64_t sec_limit = params[6]
    cdef int to_halt = <int>params[7], det_en = <int>params[8], det_fin = <int>params[9]
    cdef int converge = <int>params[10]
    cdef int64_t M = ck_mem.shape[1], nsites = site_dyn.shape[0]
    cdef int64_t nsec = out_sec_r.shape[1], nfin = out_fin_r.shape[1]
    cdef int64_t s, i, k
    cdef int ev, fired, sec_status, fin_status
    cdef Machine m
    cdef Ckpts ck
    cdef Ckpts *ckp
    cdef double *rs
    cdef double *rf
    m.M = M
    m.mem = <uint64_t *>malloc((M if M > 0 else 1) * 8)
    rs = <double *>malloc((nsec + 1) * 8)
    rf = <double *>malloc((nfin + 1) * 8)
    ck.n = ck_dyn.shape[0]
    ck.dyn = &ck_dyn[0]
    ck.pc = &ck_pc[0]
    ck.ir = &ck_ireg[0, 0]
    ck.fr = &ck_freg[0, 0]
    ck.mem = &ck_mem[0, 0] if M > 0 else NULL
    ckp = &ck if converge else NULL
    try:
        with nogil:
            for s in range(nsites):
                i = site_ck[s]
                load_ck(&m, ck_dyn, ck_pc, ck_roi, ck_ireg, ck_freg, ck_mem, i)
                ck.next = i
                sec_status = ST_NOTRUN
                fin_status = ST_NOTRUN
                for k in range(nsec):
                    out_sec_r[s, k] = 0.0
                for k in range(nfin):
                    out_fin_r[s, k] = 0.0
                if sec_end >= 0:
                    ev = run(code, &m, sec_end, site_dyn[s], site_reg[s], site_isdst[s],
                             <int>site_bit[s], sec_begin, sec_limit, roi_lo, roi_hi,
                             roi_limit, total_limit, ckp)
                    if ev == EV_STOP or ev == EV_HALT:
                        fired = measure(m.mem, sec_words, sec_widx, sec_gold, sec_isf,
                                        sec_lo, sec_hi, nsec, det_en, det_fin, rs)
                        sec_status = ST_DETECTED if fired else ST_DONE
                        for k in range(nsec):
                            out_sec_r[s, k] = rs[k]
                    elif ev == EV_CONVERGED:
                        sec_status = ST_CONVERGED
                        fin_status = ST_CONVERGED
                    elif ev == EV_CRASH:
                        sec_status = ST_CRASH
                        fin_status = ST_CRASH
                    elif ev == EV_ABORT:
                        sec_status = ST_DETECTED
                        fin_status = ST_DETECTED
                    elif ev == EV_SECTIMEOUT:
                        sec_status = ST_TIMEOUT
                    else:
                        sec_status = ST_TIMEOUT
                        fin_status = ST_TIMEOUT
                    out_sec_status[s] = sec_status
                    if not to_halt or fin_status != ST_NOTRUN:
                        out_fin_status[s] = fin_status
                        continue
                    if ev == EV_HALT:
                        fired = measure(m.mem, fin_words, fin_widx, fin_gold, fin_isf,
                                        fin_lo, fin_hi, nfin, det_en, det_fin, rf)
                        out_fin_status[s] = ST_DETECTED if fired else ST_DONE
                        for k in range(nfin):
                            out_fin_r[s, k] = rf[k]
                        continue
                else:
                    out_sec_status[s] = ST_NOTRUN
                ev = run(code, &m, -1, site_dyn[s], site_reg[s], site_isdst[s],
                         <int>site_bit[s], 0, -1, roi_lo, roi_hi, roi_limit,
                         total_limit, ckp)
                if ev == EV_HALT:
                    fired = measure(m.mem, fin_words, fin_widx, fin_gold, fin_isf,
                                    fin_lo, fin_hi, nfin, det_en, det_fin, rf)
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
    finally:
        free(m.mem)
        free(rs)
        free(rf)


def perturb_batch(const int64_t[:, ::1] code, const int64_t[::1] start,
                  const int64_t[::1] start_ireg, const double[::1] start_freg,
                  const uint64_t[::1] start_mem, const int64_t[::1] pert_words,
                  const uint64_t[:, ::1] pert_vals, const int64_t[::1] params,
                  const int64_t[::1] out_words, const int64_t[::1] out_widx,
                  const uint64_t[::1] out_gold, const uint8_t[::1] out_isf,
                  uint8_t[::1] out_status, double[:, ::1] out_r):
    cdef int64_t roi_lo = params[0], roi_hi = params[1], stop_pc = params[2]
    cdef int64_t sec_limit = params[3]
    cdef int64_t M = start_mem.shape[0], S = pert_vals.shape[0], W = pert_words.shape[0]
    cdef int64_t nreg = out_r.shape[1], nw = out_words.shape[0]
    cdef int64_t s, j, k, r
    cdef int ev
    cdef Machine m
    cdef double *rr
    cdef double[::1] dummy
    import numpy as np
    dummy = np.zeros(max(nw, 1), dtype=np.float64)
    m.M = M
    m.mem = <uint64_t *>malloc((M if M > 0 else 1) * 8)
    rr = <double *>malloc((nreg + 1) * 8)
    try:
        with nogil:
            for s in range(S):
                if M > 0:
                    memcpy(m.mem, &start_mem[0], M * 8)
                for j in range(W):
                    m.mem[pert_words[j]] = pert_vals[s, j]
                for r in range(32):
                    m.ir[r] = start_ireg[r]
                    m.fr[r] = start_freg[r]
                m.pc = start[0]
                m.dyn = start[1]
                m.roi = start[2]
                ev = run(code, &m, stop_pc, -1, -1, 0, 0, start[1], sec_limit,
                         roi_lo, roi_hi, <int64_t>1 << 62, <int64_t>1 << 62, NULL)
                if ev == EV_STOP or ev == EV_HALT:
                    measure(m.mem, out_words, out_widx, out_gold, out_isf, dummy[:nw],
                            dummy[:nw], nreg, 0, 0, rr)
                    out_status[s] = ST_DONE
                    for k in range(nreg):
                        out_r[s, k] = rr[k]
                else:
                    if ev == EV_CRASH:
                        out_status[s] = ST_CRASH
                    elif ev == EV_ABORT:
                        out_status[s] = ST_DETECTED
                    else:
                        out_status[s] = ST_TIMEOUT
                    for k in range(nreg):
                        out_r[s, k] = 0.0
    finally:
        free(m.mem)
        free(rr)
