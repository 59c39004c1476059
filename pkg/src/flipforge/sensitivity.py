"""Empirical Lipschitz estimation of section input-to-output SDC amplification."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .interp import (TIMEOUT_FACTOR, GoldenTrace, instance_fingerprint, output_spec)

BLOCK = 1024
PATTERNS = ("single", "subset", "all", "mixed")
MAX_DISCARD = 0.5


class NotPerturbationStable(RuntimeError):
    pass


@dataclass
class SensitivityConfig:
    phi_max: float = 0.01
    samples: int = 1_000_000
    seed: int = 0
    pattern: str = "mixed"

    def __post_init__(self):
        if not self.phi_max > 0:
            raise ValueError("phi_max must be positive")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown perturbation pattern {self.pattern!r}")

    def to_json(self) -> dict:
        return {"phi_max": self.phi_max, "samples": self.samples, "seed": self.seed,
                "pattern": self.pattern}

    @classmethod
    def from_json(cls, d: dict) -> "SensitivityConfig":
        return cls(float(d.get("phi_max", 0.01)), int(d.get("samples", 1_000_000)),
                   int(d.get("seed", 0)), d.get("pattern", "mixed"))


@dataclass
class AffineSdcSpec:
    """Per-output amplification coefficients: dout[k] <= sum_m K[k][m] * din[m]."""

    instance: str
    inputs: list[str]
    outputs: list[str]
    K: list[list[float]]
    samples: int = 0
    discarded: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"instance": self.instance, "inputs": self.inputs, "outputs": self.outputs,
                "K": [[_jf(x) for x in row] for row in self.K], "samples": self.samples,
                "discarded": self.discarded}

    @classmethod
    def from_json(cls, d: dict) -> "AffineSdcSpec":
        return cls(d["instance"], list(d["inputs"]), list(d["outputs"]),
                   [[float(x) for x in row] for row in d["K"]], int(d.get("samples", 0)),
                   int(d.get("discarded", 0)))


def _jf(x: float):
    return "inf" if math.isinf(x) else x


def content_seed(fingerprint: dict) -> int:
    blob = json.dumps(fingerprint, sort_keys=True, separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def _draw_block(seed: int, ckey: int, m: int, block: int, n: int, W: int, phi_max: float,
                pattern: str):
    """Perturbation draws ``block*BLOCK .. block*BLOCK+n``: selection mask,
    per-draw magnitude and per-element signs."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, ckey, m, block])))
    # draw the full block so that any prefix of draws is stable
    one = rng.integers(0, W, BLOCK)
    sub = rng.random((BLOCK, W)) < 0.5
    u = phi_max * (1.0 - rng.random(BLOCK))
    sign = np.where(rng.random((BLOCK, W)) < 0.5, -1.0, 1.0)
    idx = np.arange(block * BLOCK, block * BLOCK + BLOCK)
    if pattern == "mixed":
        pat = idx % 3
    else:
        pat = np.full(BLOCK, PATTERNS.index(pattern))
    sel = np.zeros((BLOCK, W), dtype=bool)
    sel[np.arange(BLOCK), one] = pat == 0
    empty = ~sub.any(axis=1)
    sub[empty, one[empty]] = True
    sel |= sub & (pat == 1)[:, None]
    sel |= (pat == 2)[:, None]
    return sel[:n], u[:n], sign[:n]


def _perturbed_words(base_bits: np.ndarray, isf: np.ndarray, sel, u, sign):
    """Apply draws to golden input words; returns (bits [n, W], magnitude [n])."""
    n, W = sel.shape
    base_f = base_bits.view(np.float64)
    base_i = base_bits.view(np.int64)
    out = np.broadcast_to(base_bits, (n, W)).copy()
    delta = np.zeros((n, W))
    fcols = np.flatnonzero(isf)
    icols = np.flatnonzero(~isf)
    if len(fcols):
        x = base_f[fcols][None, :] + sign[:, fcols] * u[:, None]
        d = np.abs(x - base_f[fcols][None, :])
        s = sel[:, fcols]
        out[:, fcols] = np.where(s, x.view(np.uint64), out[:, fcols])
        delta[:, fcols] = np.where(s, d, 0.0)
    if len(icols):
        step = sign[:, icols].astype(np.int64)
        with np.errstate(over="ignore"):
            x = (base_i[icols][None, :] + step).view(np.uint64)
        s = sel[:, icols]
        out[:, icols] = np.where(s, x, out[:, icols])
        delta[:, icols] = np.where(s, 1.0, 0.0)
    return out, delta.max(axis=1) if W else np.zeros(n)


def estimate_spec(tr: GoldenTrace, inst_id: str, cfg: SensitivityConfig,
                  jobs: int = 1, engine=None, content_key: int | None = None) -> AffineSdcSpec:
    """Estimate K[k][m] for one instance by perturbing each input region around
    its golden value and replaying only the section."""
    eng = engine or kernel
    inst = tr.instance(inst_id)
    if content_key is None:
        content_key = content_seed(instance_fingerprint(tr, inst))
    spec_out = output_spec(tr, inst_id)
    nout = len(spec_out.regions)
    tags = tr.program.tags
    ck = inst.ck
    start = np.array([tr.ck_pc[ck], tr.ck_dyn[ck], tr.ck_roi[ck]], dtype=np.int64)
    params = np.array([tr.program.roi[0], tr.program.roi[1], int(tr.pcs[inst.end_dyn]),
                       TIMEOUT_FACTOR * inst.count], dtype=np.int64)
    ireg = np.ascontiguousarray(tr.ck_ireg[ck])
    freg = np.ascontiguousarray(tr.ck_freg[ck])
    mem = np.ascontiguousarray(tr.ck_mem[ck])
    K = [[0.0] * len(inst.inputs) for _ in range(nout)]
    total_disc = 0
    for m, reg in enumerate(inst.inputs):
        words = np.array(list(reg.words()), dtype=np.int64)
        W = len(words)
        isf = np.array([tags[w] == "float" for w in words], dtype=bool)
        base = mem[words].astype(np.uint64)
        nblocks = (cfg.samples + BLOCK - 1) // BLOCK

        def block_job(bk: int):
            n = min(BLOCK, cfg.samples - bk * BLOCK)
            sel, u, sign = _draw_block(cfg.seed, content_key, m, bk, n, W, cfg.phi_max,
                                       cfg.pattern)
            vals, mag = _perturbed_words(base, isf, sel, u, sign)
            status = np.zeros(n, dtype=np.uint8)
            r = np.zeros((n, nout))
            eng.perturb_batch(tr.code, start, ireg, freg, mem, words,
                              np.ascontiguousarray(vals), params, spec_out.words,
                              spec_out.widx, spec_out.gold, spec_out.isf, status, r)
            ok = (status == kernel.ST_DONE) & (mag > 0)
            disc = int(np.count_nonzero(status != kernel.ST_DONE))
            best = np.zeros(nout)
            if ok.any():
                with np.errstate(invalid="ignore", divide="ignore"):
                    ratio = r[ok] / mag[ok][:, None]
                best = ratio.max(axis=0)
            return best, disc

        if jobs > 1 and nblocks > 1:
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                results = list(ex.map(block_job, range(nblocks)))
        else:
            results = [block_job(b) for b in range(nblocks)]
        disc = sum(d for _, d in results)
        if disc > MAX_DISCARD * cfg.samples:
            raise NotPerturbationStable(
                f"section not perturbation-stable: {inst_id} input {reg.name} "
                f"({disc}/{cfg.samples} samples discarded)")
        total_disc += disc
        for k in range(nout):
            K[k][m] = float(max(b[k] for b, _ in results)) if results else 0.0
    return AffineSdcSpec(inst_id, [r.name for r in inst.inputs],
                         [r.name for r in spec_out.regions], K,
                         cfg.samples * len(inst.inputs), total_disc)


def totalize(spec: AffineSdcSpec, inst_id: str | None = None):
    """Attach one fresh error symbol per output: dout[k] <= sum K din + phi[k]."""
    from .propagation import TotalSdcSpec

    iid = inst_id or spec.instance
    return TotalSdcSpec(iid, list(spec.inputs), list(spec.outputs),
                        [list(row) for row in spec.K],
                        [(iid, k) for k in range(len(spec.outputs))])

