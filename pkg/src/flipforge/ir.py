"""Toy register-machine ISA, program container and section layout.

The machine has 32 integer registers (``r0``..``r31``, 64-bit two's
complement) and 32 float registers (``f0``..``f31``, IEEE-754 binary64),
a word-addressed flat memory of 64-bit words, and no status flags.
Comparisons write 0/1 into integer registers.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

ISA_VERSION = "flipforge-isa/1"
NUM_REGS = 32
MASK64 = (1 << 64) - 1
INT64_MIN = -(1 << 63)


def wrap64(x: int) -> int:
    """Wrap an arbitrary Python int to signed 64-bit."""
    x &= MASK64
    return x - (1 << 64) if x >> 63 else x


def f2bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def bits2f(b: int) -> float:
    return struct.unpack("<d", struct.pack("<Q", b & MASK64))[0]


# --------------------------------------------------------------------------
# opcodes

# Internal opcode numbers are shared with the execution kernels.
OPCODES = [
    "ldi", "ldf", "movi", "movf",
    "iadd", "isub", "imul", "idiv", "iand", "ior", "ixor", "ishl", "ishr",
    "ilt", "ile", "ieq",
    "iaddk", "isubk", "imulk", "idivk", "iandk", "iork", "ixork", "ishlk",
    "ishrk", "iltk", "ilek", "ieqk",
    "fadd", "fsub", "fmul", "fdiv",
    "fneg", "fabs", "fsqrt", "fexp", "flog",
    "flt", "fle", "feq",
    "itof", "ftoi",
    "ldw", "ldwf", "stw", "stwf",
    "jmp", "bnz", "bz",
    "sbeg", "send", "halt", "abort",
]
OP = {name: i for i, name in enumerate(OPCODES)}

INT_BINARY = ["iadd", "isub", "imul", "idiv", "iand", "ior", "ixor", "ishl",
              "ishr", "ilt", "ile", "ieq"]
FLOAT_BINARY = ["fadd", "fsub", "fmul", "fdiv"]
FLOAT_UNARY = ["fneg", "fabs", "fsqrt", "fexp", "flog"]
FLOAT_CMP = ["flt", "fle", "feq"]

# operand shape per internal opcode: (dst bank, source banks) where a bank is
# "i" or "f"; sources are read from fields b then c.
_SHAPES: dict[str, tuple[str | None, tuple[str, ...]]] = {
    "ldi": ("i", ()), "ldf": ("f", ()),
    "movi": ("i", ("i",)), "movf": ("f", ("f",)),
    "itof": ("f", ("i",)), "ftoi": ("i", ("f",)),
    "jmp": (None, ()), "bnz": (None, ("i",)), "bz": (None, ("i",)),
    "sbeg": (None, ()), "send": (None, ()), "halt": (None, ()),
    "abort": (None, ()),
}
for _n in INT_BINARY:
    _SHAPES[_n] = ("i", ("i", "i"))
    _SHAPES[_n + "k"] = ("i", ("i",))
for _n in FLOAT_BINARY:
    _SHAPES[_n] = ("f", ("f", "f"))
for _n in FLOAT_UNARY:
    _SHAPES[_n] = ("f", ("f",))
for _n in FLOAT_CMP:
    _SHAPES[_n] = ("i", ("f", "f"))

# printed mnemonic for internal opcodes whose text form differs
_MNEMONIC = {"movi": "mov", "movf": "mov", "ldw": "ld", "ldwf": "ld",
             "stw": "st", "stwf": "st", "sbeg": "section-begin",
             "send": "section-end"}
for _n in INT_BINARY:
    _MNEMONIC[_n + "k"] = _n

BRANCHES = {"jmp", "bnz", "bz"}


class AsmError(ValueError):
    """Assembly syntax or semantic error with a source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {message}" if line else message)


@dataclass(frozen=True)
class Instruction:
    """One static instruction.

    ``a`` is the destination register (or the stored value register for
    stores is ``c``); ``b`` and ``c`` are source registers. Register fields
    hold plain indices 0..31, the bank follows from the opcode. ``imm`` is a
    signed 64-bit pattern: integer immediate, float bit pattern, address
    offset or branch target pc.
    """

    op: str
    a: int = -1
    b: int = -1
    c: int = -1
    imm: int = 0

    @property
    def opcode(self) -> int:
        return OP[self.op]

    def dst(self) -> tuple[str, int] | None:
        """Destination as (bank, index) or None."""
        if self.op in ("ldw", "ldwf"):
            return ("i" if self.op == "ldw" else "f", self.a)
        if self.op in ("stw", "stwf"):
            return None
        bank = _SHAPES[self.op][0]
        return (bank, self.a) if bank else None

    def sources(self) -> list[tuple[str, int]]:
        """Source registers in slot order."""
        if self.op in ("ldw", "ldwf"):
            return [("i", self.b)] if self.b >= 0 else []
        if self.op in ("stw", "stwf"):
            out = [("i", self.b)] if self.b >= 0 else []
            out.append(("i" if self.op == "stw" else "f", self.c))
            return out
        banks = _SHAPES[self.op][1]
        regs = (self.b, self.c)
        return [(bk, regs[i]) for i, bk in enumerate(banks)]

    def slots(self) -> list[tuple[str, int]]:
        """Operand slots as (slot name, unified register id).

        Unified ids are 0..31 for integer and 32..63 for float registers.
        """
        out = []
        for i, (bank, r) in enumerate(self.sources()):
            out.append((f"src{i}", r + (32 if bank == "f" else 0)))
        d = self.dst()
        if d is not None:
            out.append(("dst", d[1] + (32 if d[0] == "f" else 0)))
        return out

    def dst_unified(self) -> int:
        d = self.dst()
        return -1 if d is None else d[1] + (32 if d[0] == "f" else 0)


@dataclass(frozen=True)
class Region:
    """Named contiguous range of memory words with a bank tag."""

    name: str
    addr: int
    length: int
    bank: str = "float"

    @property
    def end(self) -> int:
        return self.addr + self.length

    def words(self) -> range:
        return range(self.addr, self.end)

    def overlaps(self, other: "Region") -> bool:
        return self.addr < other.end and other.addr < self.end

    def to_json(self) -> dict:
        return {"name": self.name, "addr": self.addr, "len": self.length,
                "bank": self.bank}

    @classmethod
    def from_json(cls, d: dict) -> "Region":
        return cls(d["name"], int(d["addr"]), int(d["len"]), d.get("bank", "float"))


@dataclass
class Program:
    instructions: list[Instruction]
    memory: list[int]  # 64-bit patterns, unsigned
    tags: list[str]  # "int" or "float" per word
    roi: tuple[int, int]
    entry: int = 0
    sections: dict[str, tuple[int, int]] = field(default_factory=dict)
    labels: dict[str, int] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.instructions)

    @property
    def mem_size(self) -> int:
        return len(self.memory)

    def section_of_pc(self, pc: int) -> str | None:
        for sid, (b, e) in self.sections.items():
            if b <= pc <= e:
                return sid
        return None

    def section_code(self, sid: str) -> list[Instruction]:
        b, e = self.sections[sid]
        return self.instructions[b:e + 1]


# --------------------------------------------------------------------------
# parser

_REG_RE = re.compile(r"^([rf])(\d+)$")
_ADDR_RE = re.compile(r"^\[\s*(?:(r\d+)\s*(?:([+-])\s*(\w+))?|([+-]?\w+))\s*\]$")
_LABEL_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")


def _parse_int(tok: str, line: int, col: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(f"bad integer {tok!r}", line, col) from None


def _parse_float(tok: str, line: int, col: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise AsmError(f"bad float {tok!r}", line, col) from None


def _reg(tok: str, line: int, col: int) -> tuple[str, int]:
    m = _REG_RE.match(tok)
    if not m:
        raise AsmError(f"expected register, got {tok!r}", line, col)
    idx = int(m.group(2))
    if idx >= NUM_REGS:
        raise AsmError(f"register index out of range: {tok}", line, col)
    return ("i" if m.group(1) == "r" else "f", idx)


def _want(tok: str, bank: str, line: int, col: int) -> int:
    bk, idx = _reg(tok, line, col)
    if bk != bank:
        kind = "integer" if bank == "i" else "float"
        raise AsmError(f"expected {kind} register, got {tok}", line, col)
    return idx


def _split_operands(rest: str) -> list[str]:
    return [t.strip() for t in rest.split(",")] if rest.strip() else []


def parse_program(text: str) -> Program:
    """Parse textual assembly into a Program."""
    instrs: list[tuple[str, list[str], int, int]] = []
    labels: dict[str, int] = {}
    label_pos: dict[str, tuple[int, int]] = {}
    mem: dict[int, tuple[str, int]] = {}
    roi_tok = None
    entry_tok = None
    sec_toks: list[tuple[str, str, str, int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].split("#", 1)[0]
        col0 = len(line) - len(line.lstrip()) + 1
        line = line.strip()
        while line:
            m = re.match(r"^([A-Za-z_$][\w.$]*)\s*:", line)
            if not m or line.startswith("."):
                break
            name = m.group(1)
            if name in labels:
                raise AsmError(f"duplicate label {name!r}", lineno, col0)
            labels[name] = len(instrs)
            label_pos[name] = (lineno, col0)
            line = line[m.end():].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if head.startswith("."):
            toks = rest.split()
            if head == ".mem":
                if len(toks) < 3:
                    raise AsmError(".mem needs addr count bank", lineno, col0)
                addr = _parse_int(toks[0], lineno, col0)
                count = _parse_int(toks[1], lineno, col0)
                bank = toks[2]
                if bank not in ("int", "float"):
                    raise AsmError(f"bad bank {bank!r}", lineno, col0)
                vals = toks[3:]
                if len(vals) not in (0, 1, count):
                    raise AsmError(".mem value count mismatch", lineno, col0)
                if addr < 0 or count < 0:
                    raise AsmError("negative .mem address or count", lineno, col0)
                for k in range(count):
                    if not vals:
                        bits = 0
                    else:
                        tok = vals[k] if len(vals) == count else vals[0]
                        if bank == "int":
                            bits = _parse_int(tok, lineno, col0) & MASK64
                        else:
                            bits = f2bits(_parse_float(tok, lineno, col0))
                    mem[addr + k] = (bank, bits)
            elif head == ".roi":
                if len(toks) != 2:
                    raise AsmError(".roi needs begin end", lineno, col0)
                roi_tok = (toks[0], toks[1], lineno)
            elif head == ".entry":
                if len(toks) != 1:
                    raise AsmError(".entry needs one label", lineno, col0)
                entry_tok = (toks[0], lineno)
            elif head == ".section":
                if len(toks) != 3:
                    raise AsmError(".section needs id begin end", lineno, col0)
                sec_toks.append((toks[0], toks[1], toks[2], lineno))
            else:
                raise AsmError(f"unknown directive {head}", lineno, col0)
            continue
        instrs.append((head, _split_operands(rest), lineno, col0))

    def resolve(tok: str, lineno: int) -> int:
        if re.fullmatch(r"-?\d+", tok):
            return int(tok)
        if tok not in labels:
            raise AsmError(f"undefined label {tok!r}", lineno, 1)
        return labels[tok]

    program_len = len(instrs)
    out: list[Instruction] = []
    for mnem, ops, lineno, col in instrs:
        out.append(_build(mnem, ops, lineno, col, resolve))
    for ins, (_, _, lineno, col) in zip(out, instrs):
        if ins.op in BRANCHES and not 0 <= ins.imm < program_len:
            raise AsmError("branch target outside program", lineno, col)

    size = max(mem) + 1 if mem else 0
    memory = [0] * size
    tags = ["int"] * size
    for addr, (bank, bits) in mem.items():
        memory[addr] = bits
        tags[addr] = bank

    if roi_tok is None:
        roi = (0, program_len)
    else:
        roi = (resolve(roi_tok[0], roi_tok[2]), resolve(roi_tok[1], roi_tok[2]))
        if not 0 <= roi[0] <= roi[1] <= program_len:
            raise AsmError("bad .roi range", roi_tok[2], 1)
    entry = resolve(entry_tok[0], entry_tok[1]) if entry_tok else 0

    sections: dict[str, tuple[int, int]] = {}
    for sid, bl, el, lineno in sec_toks:
        if sid in sections:
            raise AsmError(f"duplicate section {sid!r}", lineno, 1)
        b, e = resolve(bl, lineno), resolve(el, lineno)
        if not (0 <= b < program_len and 0 <= e < program_len):
            raise AsmError(f"section {sid} markers outside program", lineno, 1)
        if out[b].op != "sbeg" or out[e].op != "send" or e <= b:
            raise AsmError(f"section {sid} labels must mark section-begin/"
                           "section-end", lineno, 1)
        sections[sid] = (b, e)
    return Program(out, memory, tags, roi, entry, sections, labels)


def _build(mnem: str, ops: list[str], line: int, col: int, resolve) -> Instruction:
    def arity(n: int) -> None:
        if len(ops) != n:
            raise AsmError(f"{mnem} takes {n} operand(s), got {len(ops)}", line, col)

    if mnem == "ldi":
        arity(2)
        return Instruction("ldi", a=_want(ops[0], "i", line, col),
                           imm=wrap64(_parse_int(ops[1], line, col)))
    if mnem == "ldf":
        arity(2)
        bits = f2bits(_parse_float(ops[1], line, col))
        return Instruction("ldf", a=_want(ops[0], "f", line, col), imm=wrap64(bits))
    if mnem == "mov":
        arity(2)
        bd, d = _reg(ops[0], line, col)
        s = _want(ops[1], bd, line, col)
        return Instruction("movi" if bd == "i" else "movf", a=d, b=s)
    if mnem in INT_BINARY:
        arity(3)
        d = _want(ops[0], "i", line, col)
        s0 = _want(ops[1], "i", line, col)
        if _REG_RE.match(ops[2]):
            return Instruction(mnem, a=d, b=s0, c=_want(ops[2], "i", line, col))
        return Instruction(mnem + "k", a=d, b=s0,
                           imm=wrap64(_parse_int(ops[2], line, col)))
    if mnem in FLOAT_BINARY:
        arity(3)
        return Instruction(mnem, a=_want(ops[0], "f", line, col),
                           b=_want(ops[1], "f", line, col),
                           c=_want(ops[2], "f", line, col))
    if mnem in FLOAT_UNARY:
        arity(2)
        return Instruction(mnem, a=_want(ops[0], "f", line, col),
                           b=_want(ops[1], "f", line, col))
    if mnem in FLOAT_CMP:
        arity(3)
        return Instruction(mnem, a=_want(ops[0], "i", line, col),
                           b=_want(ops[1], "f", line, col),
                           c=_want(ops[2], "f", line, col))
    if mnem == "itof":
        arity(2)
        return Instruction("itof", a=_want(ops[0], "f", line, col),
                           b=_want(ops[1], "i", line, col))
    if mnem == "ftoi":
        arity(2)
        return Instruction("ftoi", a=_want(ops[0], "i", line, col),
                           b=_want(ops[1], "f", line, col))
    if mnem in ("ld", "st"):
        arity(2)
        reg_tok, addr_tok = (ops[0], ops[1]) if mnem == "ld" else (ops[1], ops[0])
        bank, r = _reg(reg_tok, line, col)
        base, off = _parse_addr(addr_tok, line, col)
        if mnem == "ld":
            return Instruction("ldw" if bank == "i" else "ldwf", a=r, b=base, imm=off)
        return Instruction("stw" if bank == "i" else "stwf", b=base, c=r, imm=off)
    if mnem == "jmp":
        arity(1)
        return Instruction("jmp", imm=resolve(ops[0], line))
    if mnem in ("bnz", "bz"):
        arity(2)
        return Instruction(mnem, b=_want(ops[0], "i", line, col),
                           imm=resolve(ops[1], line))
    if mnem in ("section-begin", "section-end", "halt", "abort"):
        arity(0)
        return Instruction({"section-begin": "sbeg", "section-end": "send"}.get(mnem, mnem))
    raise AsmError(f"unknown opcode {mnem!r}", line, col)


def _parse_addr(tok: str, line: int, col: int) -> tuple[int, int]:
    m = _ADDR_RE.match(tok.replace(" ", ""))
    if not m:
        raise AsmError(f"bad address expression {tok!r}", line, col)
    if m.group(1):
        base = _want(m.group(1), "i", line, col)
        off = 0
        if m.group(3):
            off = _parse_int(m.group(3), line, col)
            if m.group(2) == "-":
                off = -off
        return base, off
    return -1, _parse_int(m.group(4), line, col)


# --------------------------------------------------------------------------
# printer

def _fmt_float(x: float) -> str:
    return repr(x)


def format_instruction(ins: Instruction, label_of) -> str:
    op = ins.op
    m = _MNEMONIC.get(op, op)
    R = lambda i: f"r{i}"  # noqa: E731
    F = lambda i: f"f{i}"  # noqa: E731
    if op == "ldi":
        return f"ldi {R(ins.a)}, {ins.imm}"
    if op == "ldf":
        return f"ldf {F(ins.a)}, {_fmt_float(bits2f(ins.imm))}"
    if op in ("movi", "movf", "itof", "ftoi") or op in FLOAT_UNARY:
        (db, d), (sb, s) = ins.dst(), ins.sources()[0]
        rd = R(d) if db == "i" else F(d)
        rs = R(s) if sb == "i" else F(s)
        return f"{m} {rd}, {rs}"
    if op in INT_BINARY:
        return f"{m} {R(ins.a)}, {R(ins.b)}, {R(ins.c)}"
    if op.endswith("k") and op[:-1] in INT_BINARY:
        return f"{m} {R(ins.a)}, {R(ins.b)}, {ins.imm}"
    if op in FLOAT_BINARY:
        return f"{m} {F(ins.a)}, {F(ins.b)}, {F(ins.c)}"
    if op in FLOAT_CMP:
        return f"{m} {R(ins.a)}, {F(ins.b)}, {F(ins.c)}"
    if op in ("ldw", "ldwf", "stw", "stwf"):
        if ins.b >= 0:
            addr = f"[r{ins.b}" + (f"+{ins.imm}" if ins.imm > 0 else
                                   f"-{-ins.imm}" if ins.imm < 0 else "") + "]"
        else:
            addr = f"[{ins.imm}]"
        if op in ("ldw", "ldwf"):
            return f"ld {R(ins.a) if op == 'ldw' else F(ins.a)}, {addr}"
        return f"st {addr}, {R(ins.c) if op == 'stw' else F(ins.c)}"
    if op == "jmp":
        return f"jmp {label_of(ins.imm)}"
    if op in ("bnz", "bz"):
        return f"{op} {R(ins.b)}, {label_of(ins.imm)}"
    return m


def print_program(p: Program) -> str:
    """Render a Program as canonical assembly text."""
    names: dict[int, list[str]] = {}
    for name, pc in p.labels.items():
        names.setdefault(pc, []).append(name)
    for v in names.values():
        v.sort()

    def label_of(pc: int) -> str:
        if pc not in names:
            names[pc] = [f"L{pc}"]
        return names[pc][0]

    # make sure every referenced pc gets a label before emitting the body
    for ins in p.instructions:
        if ins.op in BRANCHES:
            label_of(ins.imm)
    label_of(p.roi[0])
    label_of(p.roi[1])
    label_of(p.entry)
    for b, e in p.sections.values():
        label_of(b)
        label_of(e)

    lines = [f".entry {label_of(p.entry)}",
             f".roi {label_of(p.roi[0])} {label_of(p.roi[1])}"]
    for sid, (b, e) in p.sections.items():
        lines.append(f".section {sid} {label_of(b)} {label_of(e)}")
    i = 0
    n = len(p.memory)
    while i < n:
        j = i
        while j < n and j - i < 8 and p.tags[j] == p.tags[i]:
            j += 1
        bank = p.tags[i]
        if bank == "int":
            vals = [str(wrap64(b)) for b in p.memory[i:j]]
        else:
            vals = [_fmt_float(bits2f(b)) for b in p.memory[i:j]]
        lines.append(f".mem {i} {j - i} {bank} " + " ".join(vals))
        i = j
    for pc, ins in enumerate(p.instructions):
        for name in names.get(pc, []):
            lines.append(f"{name}:")
        lines.append("    " + format_instruction(ins, label_of))
    for name in names.get(len(p.instructions), []):
        lines.append(f"{name}:")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# layout

@dataclass(frozen=True)
class StaticSection:
    id: str
    inputs: tuple[Region, ...]
    outputs: tuple[Region, ...]
    pad: int = 1

    def to_json(self) -> dict:
        return {"id": self.id, "inputs": [r.to_json() for r in self.inputs],
                "outputs": [r.to_json() for r in self.outputs], "pad": self.pad}


@dataclass(frozen=True)
class DataflowEdge:
    src: tuple[str, str]  # (producer instance, region name)
    dst: tuple[str, str]  # (consumer instance or "final", region name)


FINAL = "final"


@dataclass
class DetectorConfig:
    """Range and finiteness check applied to scope output words."""

    enabled: bool = False
    finite: bool = True
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"enabled": self.enabled, "finite": self.finite,
                "ranges": {k: list(v) for k, v in sorted(self.ranges.items())}}

    @classmethod
    def from_json(cls, d: dict | None) -> "DetectorConfig":
        if not d:
            return cls()
        return cls(bool(d.get("enabled", False)), bool(d.get("finite", True)),
                   {k: (float(v[0]), float(v[1])) for k, v in d.get("ranges", {}).items()})


@dataclass
class SectionLayout:
    sections: list[StaticSection]
    dataflow: list[DataflowEdge] = field(default_factory=list)
    future_use: dict[str, list[Region]] = field(default_factory=dict)
    final_outputs: list[Region] = field(default_factory=list)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def section(self, sid: str) -> StaticSection:
        for s in self.sections:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def to_json(self) -> dict:
        return {
            "sections": [s.to_json() for s in self.sections],
            "dataflow": [{"from": list(e.src), "to": list(e.dst)} for e in self.dataflow],
            "future_use": {k: [r.to_json() for r in v] for k, v in sorted(self.future_use.items())},
            "final_outputs": [r.to_json() for r in self.final_outputs],
            "detector": self.detector.to_json(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "SectionLayout":
        secs = [StaticSection(s["id"], tuple(Region.from_json(r) for r in s.get("inputs", [])),
                              tuple(Region.from_json(r) for r in s.get("outputs", [])),
                              int(s.get("pad", 1)))
                for s in d.get("sections", [])]
        flow = [DataflowEdge(tuple(e["from"]), tuple(e["to"])) for e in d.get("dataflow", [])]
        fu = {k: [Region.from_json(r) for r in v] for k, v in d.get("future_use", {}).items()}
        fin = [Region.from_json(r) for r in d.get("final_outputs", [])]
        return cls(secs, flow, fu, fin, DetectorConfig.from_json(d.get("detector")))

    @classmethod
    def load(cls, path: str | Path) -> "SectionLayout":
        return cls.from_json(json.loads(Path(path).read_text()))


def load_program(path: str | Path) -> Program:
    return parse_program(Path(path).read_text())


def instance_id(sid: str, k: int) -> str:
    return f"{sid}#{k}"


def parse_instance(inst: str) -> tuple[str, int]:
    sid, _, k = inst.rpartition("#")
    return sid, int(k)


def merge_regions(regions: Iterable[Region]) -> list[Region]:
    """Union overlapping regions into a sorted disjoint list."""
    items = sorted(regions, key=lambda r: (r.addr, r.end, r.name))
    out: list[Region] = []
    for r in items:
        if r.length <= 0:
            continue
        if out and r.addr < out[-1].end:
            prev = out[-1]
            names = prev.name.split("+")
            if r.name not in names:
                names.append(r.name)
            bank = prev.bank if prev.bank == r.bank else "mixed"
            out[-1] = Region("+".join(names), prev.addr, max(prev.end, r.end) - prev.addr, bank)
        else:
            out.append(r)
    return out


def effective_outputs(sec: StaticSection, layout: SectionLayout,
                      mem_size: int | None = None) -> list[Region]:
    """Declared outputs widened by the adjacency pad plus future-use regions."""
    hi = mem_size if mem_size is not None else None
    widened = []
    for r in sec.outputs:
        lo = max(0, r.addr - sec.pad)
        end = r.end + sec.pad
        if hi is not None:
            end = min(end, hi)
        widened.append(Region(r.name, lo, end - lo, r.bank))
    return merge_regions(widened + list(layout.future_use.get(sec.id, [])))


def validate_layout(p: Program, layout: SectionLayout,
                    order: list[str] | None = None) -> list[str]:
    """Static checks of a layout against a program; returns diagnostics.

    ``order`` is the instance execution order if known (from a golden run);
    without it only same-section edges can be checked for direction.
    """
    diags: list[str] = []
    size = p.mem_size
    ids = [s.id for s in layout.sections]
    for sid in ids:
        if ids.count(sid) > 1:
            diags.append(f"section {sid}: duplicate id")
    for s in layout.sections:
        if s.id not in p.sections:
            diags.append(f"section {s.id}: no markers in program")
        if s.pad < 0:
            diags.append(f"section {s.id}: negative pad")
        outs = sorted(s.outputs, key=lambda r: r.addr)
        for x, y in zip(outs, outs[1:]):
            if x.overlaps(y):
                diags.append(f"section {s.id}: region overlap {x.name}/{y.name}")
        for r in list(s.inputs) + list(s.outputs):
            if r.addr < 0 or r.end > size or r.length <= 0:
                diags.append(f"section {s.id}: region {r.name} outside memory")
            elif r.bank in ("int", "float"):
                bad = [w for w in r.words() if p.tags[w] != r.bank]
                if bad:
                    diags.append(f"section {s.id}: region {r.name} bank mismatch at {bad[0]}")
    for sid in p.sections:
        if sid not in ids:
            diags.append(f"section {sid}: markers without layout entry")
    spans = sorted(p.sections.items(), key=lambda kv: kv[1])
    for (a, (ab, ae)), (b, (bb, be)) in zip(spans, spans[1:]):
        if bb <= ae:
            diags.append(f"section {a}/{b}: nested or overlapping markers")
    for r in layout.final_outputs:
        if r.addr < 0 or r.end > size:
            diags.append(f"final output {r.name} outside memory")
    for e in layout.dataflow:
        pi, ci = e.src[0], e.dst[0]
        try:
            psid, pk = parse_instance(pi)
        except ValueError:
            diags.append(f"dataflow: bad producer {pi}")
            continue
        if ci == FINAL:
            continue
        try:
            csid, ck = parse_instance(ci)
        except ValueError:
            diags.append(f"dataflow: bad consumer {ci}")
            continue
        if order is not None and pi in order and ci in order:
            if order.index(ci) <= order.index(pi):
                diags.append(f"dataflow: backward edge {pi} -> {ci}")
        elif psid == csid and ck <= pk:
            diags.append(f"dataflow: backward edge {pi} -> {ci}")
    return diags
