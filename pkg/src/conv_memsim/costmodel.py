"""Closed-form communication and resource predictions, validation and config search.

These formulas are the analytical counterpart of the kernel emulations; the
test suite checks the two against each other.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, fields
from typing import Optional, Sequence, Union

from .config import GeneralConfig, SpecialConfig, Violation, round_up
from .memsim import MemModel, bandwidth_factor


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class CostReport:
    gm_reads_pred: int
    sm_pixel_loads_pred: int
    sm_reduction_factor: float
    gm_reduction_factor: float
    registers_pred: int
    sm_bytes_pred: int
    bandwidth_factor: int
    reuse_bound: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list:
        return [getattr(self, name) for name in self.columns()]

    def csv_row(self) -> str:
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in self.as_row())


def _extents(size: int, tile: int) -> list[tuple[int, int]]:
    """(extent, count) pairs of the tiles covering ``size``."""
    full, rem = divmod(size, tile)
    out = [(tile, full)] if full else []
    if rem:
        out.append((rem, 1))
    return out


def halo_reads(dims: tuple[int, int], K: int, W: int, H: int) -> int:
    """Sum over blocks of (eff_H + K - 1) * (eff_W + K - 1)."""
    o_y, o_x = dims[0] - K + 1, dims[1] - K + 1
    rows = sum((h + K - 1) * c for h, c in _extents(o_y, H))
    cols = sum((w + K - 1) * c for w, c in _extents(o_x, W))
    return rows * cols


def vertical_reuse_factor(H: int, K: int) -> float:
    # one input row serves K output rows: (H+K-1) rows read instead of H*K
    return (H + K - 1) / (H * K)


def predict_special(cfg: SpecialConfig, K: int, F: int, dims: tuple[int, int], model: MemModel) -> CostReport:
    n = cfg.n
    return CostReport(
        gm_reads_pred=halo_reads(dims, K, cfg.W, cfg.H),
        sm_pixel_loads_pred=(cfg.H + K - 1) * (K + n - 1),
        sm_reduction_factor=(K + n - 1) / (n * K),
        gm_reduction_factor=vertical_reuse_factor(cfg.H, K),
        registers_pred=K * (K + n - 1) + n,
        sm_bytes_pred=(K + 1) * round_up(cfg.W + K - 1, n) * model.elem_width_bytes,
        bandwidth_factor=bandwidth_factor(model),
        reuse_bound=K * K * F,
    )


def predict_general(cfg: GeneralConfig, K: int, C: int, F: int, dims: tuple[int, int],
                    model: MemModel) -> CostReport:
    pad = cfg.resolved_pad(model)
    W_T = cfg.W_T
    sm_elems = cfg.C_SH * (cfg.H + K - 1) * (cfg.W + K - 1) + cfg.C_SH * K * K * (cfg.F_TB + pad)
    return CostReport(
        gm_reads_pred=_ceil(F, cfg.F_TB) * C * halo_reads(dims, K, cfg.W, cfg.H),
        sm_pixel_loads_pred=(W_T + K - 1) * K,
        sm_reduction_factor=(W_T + K - 1) / (W_T * K),
        gm_reduction_factor=vertical_reuse_factor(cfg.H, K),
        registers_pred=cfg.F_T * W_T + (W_T + K - 1) + cfg.F_T,
        sm_bytes_pred=sm_elems * model.elem_width_bytes,
        bandwidth_factor=bandwidth_factor(model),
        reuse_bound=K * K * F,
    )


Config = Union[SpecialConfig, GeneralConfig]


def validate_config(cfg: Config, K: int, C: int, F: int, model: MemModel) -> list[Violation]:
    """Every violated invariant of ``cfg``; an empty list means the config is valid."""
    return cfg.violations(K, C, F, model)


def predicted_traffic(cfg: Config, K: int, C: int, F: int, dims: tuple[int, int],
                      model: MemModel) -> tuple[int, int]:
    """Estimated (GM transactions, SM cycles) of a run, assuming conflict-free SM and aligned rows."""
    E, seg, ws = model.elem_width_bytes, model.gm_segment_bytes, model.warp_size
    n = bandwidth_factor(model)
    o_y, o_x = dims[0] - K + 1, dims[1] - K + 1
    gm = sm = 0
    if isinstance(cfg, SpecialConfig):
        T = cfg.threads()
        warps = _ceil(T, ws)
        for (h, ch), (w, cw) in itertools.product(_extents(o_y, cfg.H), _extents(o_x, cfg.W)):
            in_h, in_w = h + K - 1, w + K - 1
            blocks = ch * cw
            passes = _ceil(_ceil(in_w, n), T)
            gm += blocks * (in_h * passes * _ceil(min(in_w, T * n) * E, seg) + F * h * warps * _ceil(min(w, ws * n) * E, seg))
            sm += blocks * in_h * (passes * warps + warps * _ceil(K + n - 1, n))
        return gm, sm

    v = n if cfg.F_T % n == 0 else 1
    T = cfg.threads()
    warps = _ceil(T, ws)
    lanes = min(ws, T)
    chunks = _ceil(C, cfg.C_SH)
    per_warp_tx = min(cfg.T_X, ws)
    rows_per_warp = max(1, _ceil(max(1, ws // cfg.T_X) * cfg.W_T, cfg.W))
    for (h, ch), (w, cw) in itertools.product(_extents(o_y, cfg.H), _extents(o_x, cfg.W)):
        in_h, in_w = h + K - 1, w + K - 1
        for nf, cf in _extents(F, cfg.F_TB):
            tbs = ch * cw * cf
            img_tx = C * in_h * _ceil(in_w * E, seg)
            flt_tx = nf * chunks * _ceil(min(cfg.C_SH, C) * K * K * E, seg)
            out_tx = warps * cfg.F_T * _ceil(cfg.W_T, n) * per_warp_tx * rows_per_warp
            stores = C * in_h * _ceil(_ceil(in_w, n), lanes) + nf * chunks * _ceil(min(cfg.C_SH, C) * K * K, lanes)
            reads = warps * C * K * (_ceil(cfg.W_T + K - 1, n) + K * (cfg.F_T // v))
            gm += tbs * (img_tx + flt_tx + out_tx)
            sm += tbs * (stores + reads)
    return gm, sm


def _pow2_upto(limit: int) -> tuple[int, ...]:
    out, v = [], 1
    while v <= limit:
        out.append(v)
        v *= 2
    return tuple(out)


@dataclass(frozen=True)
class SearchBounds:
    """Finite ranges per field; ``None`` means powers of two up to the natural limit."""

    W: Sequence[int] = _pow2_upto(256)
    H: Sequence[int] = _pow2_upto(256)
    F_TB: Optional[Sequence[int]] = None  # <= F
    W_T: Optional[Sequence[int]] = None   # <= W
    F_T: Optional[Sequence[int]] = None   # <= F_TB
    C_SH: Sequence[int] = (1, 2, 4)
    output_size: int = 256  # square output the traffic prediction is scored on


def enumerate_configs(K: int, C: int, F: int, model: MemModel,
                      bounds: Optional[SearchBounds] = None) -> list[tuple[GeneralConfig, CostReport]]:
    """All valid general configs within ``bounds``, cheapest predicted traffic first.

    Ties break on (W, H, F_TB, W_T, F_T, C_SH) ascending.
    """
    b = bounds or SearchBounds()
    dims = (b.output_size + K - 1,) * 2
    ranked = []
    for W, H in itertools.product(sorted(set(b.W)), sorted(set(b.H))):
        w_ts = [x for x in sorted(set(b.W_T if b.W_T is not None else _pow2_upto(W))) if x <= W]
        f_tbs = [x for x in sorted(set(b.F_TB if b.F_TB is not None else _pow2_upto(F))) if x <= F]
        for F_TB, W_T, C_SH in itertools.product(f_tbs, w_ts, sorted(set(b.C_SH))):
            f_ts = [x for x in sorted(set(b.F_T if b.F_T is not None else _pow2_upto(F_TB))) if x <= F_TB]
            for F_T in f_ts:
                cfg = GeneralConfig(W, H, F_TB, W_T, F_T, C_SH)
                if cfg.violations(K, C, F, model):
                    continue
                gm, sm = predicted_traffic(cfg, K, C, F, dims, model)
                key = (gm + sm, W, H, F_TB, W_T, F_T, C_SH)
                ranked.append((key, cfg))
    ranked.sort(key=lambda item: item[0])
    return [(cfg, predict_general(cfg, K, C, F, dims, model)) for _, cfg in ranked]


def enumerate_special_configs(K: int, F: int, model: MemModel,
                              bounds: Optional[SearchBounds] = None) -> list[tuple[SpecialConfig, CostReport]]:
    """Valid single-channel configs (n fixed by the model), cheapest predicted traffic first."""
    b = bounds or SearchBounds()
    n = bandwidth_factor(model)
    dims = (b.output_size + K - 1,) * 2
    ranked = []
    for W, H in itertools.product(sorted(set(b.W)), sorted(set(b.H))):
        cfg = SpecialConfig(W, H, n)
        if cfg.violations(K, 1, F, model):
            continue
        gm, sm = predicted_traffic(cfg, K, 1, F, dims, model)
        ranked.append(((gm + sm, W, H), cfg))
    ranked.sort(key=lambda item: item[0])
    return [(cfg, predict_special(cfg, K, F, dims, model)) for _, cfg in ranked]
