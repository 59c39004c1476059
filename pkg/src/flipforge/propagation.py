"""Composition of per-instance SDC bounds into end-to-end affine bounds.

Every bound is an affine form over error symbols ``(instance, k)`` with
non-negative coefficients and zero constant. Program-initial inputs are
assumed error free. When evaluating, ``0 * inf`` is taken as 0: a zero
coefficient means the symbol cannot reach that output at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .ir import FINAL, DataflowEdge, SectionLayout

Symbol = tuple[str, int]
Form = dict[Symbol, float]


class DanglingEdge(ValueError):
    pass


@dataclass
class TotalSdcSpec:
    """dout[k] <= sum_m K[k][m] * din[m] + phi[k] for one instance."""

    instance: str
    inputs: list[str]
    outputs: list[str]
    K: list[list[float]]
    symbols: list[Symbol]


def symbol_name(sym: Symbol) -> str:
    return f"phi[{sym[0]}.{sym[1]}]"


@dataclass
class EndToEndSpec:
    """Per final output, an affine form over all error symbols."""

    outputs: list[str]
    forms: dict[str, Form]
    owners: dict[str, list[Symbol]] = field(default_factory=dict)  # instance -> its symbols

    def to_json(self) -> dict:
        return {lam: [{"symbol": symbol_name(s), "coeff": c}
                      for s, c in sorted(self.forms[lam].items(), key=_symkey(self))]
                for lam in self.outputs}

    def render(self) -> str:
        lines = []
        for lam in self.outputs:
            terms = [f"{_fmt(c)}*{symbol_name(s)}" if c != 1 else symbol_name(s)
                     for s, c in sorted(self.forms[lam].items(), key=_symkey(self)) if c != 0]
            lines.append(f"d({lam}) <= " + (" + ".join(terms) if terms else "0"))
        return "\n".join(lines)


def _symkey(e2e: EndToEndSpec):
    order = {iid: n for n, iid in enumerate(e2e.owners)}
    return lambda kv: (order.get(kv[0][0], len(order)), kv[0][1])


def _fmt(c: float) -> str:
    return f"{c:.6g}"


BOTTOM_FORM = "always-inf"


@dataclass
class SpecializedForm:
    """f_{T,lam,s}: per final output, coefficients over one instance's outputs."""

    instance: str
    coeffs: dict[str, list[float]]  # lam -> coefficient per instance output index
    always_inf: bool = False


def _resolve(name: str, outputs: list[str]) -> int:
    for k, o in enumerate(outputs):
        if name == o or name in o.split("+"):
            return k
    return -1


def _add_scaled(acc: Form, form: Form, a: float) -> None:
    if a == 0:
        return
    for s, c in form.items():
        acc[s] = acc.get(s, 0.0) + a * c


def compose(layout: SectionLayout | list[DataflowEdge], specs: list[TotalSdcSpec],
            order: list[str] | None = None, final_outputs: list[str] | None = None
            ) -> EndToEndSpec:
    """Substitute producer bounds into consumer inputs in execution order.

    ``layout`` supplies the dataflow edges (or pass the edge list directly)
    and, unless ``final_outputs`` is given, the final output names.
    """
    if isinstance(layout, SectionLayout):
        edges = layout.dataflow
        finals = final_outputs or [r.name for r in layout.final_outputs]
    else:
        edges = list(layout)
        finals = final_outputs or sorted({e.dst[1] for e in edges if e.dst[0] == FINAL})
    by_id = {s.instance: s for s in specs}
    order = order or [s.instance for s in specs]
    pos = {iid: n for n, iid in enumerate(order)}
    # incoming producers per (consumer, input region), deduplicated
    incoming: dict[tuple[str, str], list[Symbol]] = {}
    for e in edges:
        (pi, pr), (ci, cr) = e.src, e.dst
        if pi not in by_id:
            raise DanglingEdge(f"dangling dataflow edge: no spec for producer {pi}")
        k = _resolve(pr, by_id[pi].outputs)
        if k < 0:
            raise DanglingEdge(f"dangling dataflow edge: {pi} has no output {pr}")
        if ci != FINAL:
            if ci not in by_id:
                raise DanglingEdge(f"dangling dataflow edge: no spec for consumer {ci}")
            if pos.get(pi, -1) >= pos.get(ci, -1):
                raise DanglingEdge(f"dangling dataflow edge: {pi} does not precede {ci}")
            if cr not in by_id[ci].inputs:
                raise DanglingEdge(f"dangling dataflow edge: {ci} has no input {cr}")
        elif cr not in finals:
            raise DanglingEdge(f"dangling dataflow edge: unknown final output {cr}")
        lst = incoming.setdefault((ci, cr), [])
        if (pi, k) not in lst:
            lst.append((pi, k))
    bounds: dict[Symbol, Form] = {}
    owners: dict[str, list[Symbol]] = {}
    for iid in order:
        spec = by_id[iid]
        in_forms = []
        for m, name in enumerate(spec.inputs):
            f: Form = {}
            for src in incoming.get((iid, name), []):
                _add_scaled(f, bounds[src], 1.0)
            in_forms.append(f)
        owners[iid] = list(spec.symbols)
        for k, sym in enumerate(spec.symbols):
            f = {sym: 1.0}
            for m, fin in enumerate(in_forms):
                _add_scaled(f, fin, spec.K[k][m])
            bounds[(iid, k)] = f
    forms: dict[str, Form] = {}
    for lam in finals:
        f: Form = {}
        for src in incoming.get((FINAL, lam), []):
            _add_scaled(f, bounds[src], 1.0)
        forms[lam] = f
    return EndToEndSpec(list(finals), forms, owners)


def specialize(e2e: EndToEndSpec, inst: str) -> SpecializedForm:
    """Restrict the end-to-end forms to the symbols of ``inst``."""
    from .interp import BOTTOM

    if inst == BOTTOM:
        return SpecializedForm(inst, {lam: [] for lam in e2e.outputs}, always_inf=True)
    if inst not in e2e.owners:
        raise KeyError(f"unknown instance {inst!r}")
    syms = e2e.owners[inst]
    return SpecializedForm(inst, {lam: [e2e.forms[lam].get(s, 0.0) for s in syms]
                                  for lam in e2e.outputs})


def _dot(coeffs, phi) -> float:
    tot = 0.0
    for a, x in zip(coeffs, phi):
        if x < 0 or x != x:
            raise ValueError("phi values must be non-negative")
        if a == 0:
            continue
        tot += a * x
    return tot


def evaluate(form, phi) -> dict[str, float] | float:
    """Evaluate a specialized form at concrete per-output magnitudes.

    Also accepts a plain ``{symbol: coeff}`` form with a ``{symbol: value}``
    mapping, returning a single number.
    """
    if isinstance(form, SpecializedForm):
        if form.always_inf:
            return {lam: math.inf for lam in form.coeffs}
        return {lam: _dot(c, phi) for lam, c in form.coeffs.items()}
    return _dot([form[s] for s in form], [phi[s] for s in form])
