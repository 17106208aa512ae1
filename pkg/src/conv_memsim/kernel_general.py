"""Warp-level emulation of the multi-channel tiled convolution kernel.

The grid is TB_X x TB_Y thread blocks: X walks filter tiles of F_TB filters,
Y walks spatial W x H output blocks, and each block loops over all channels
internally. Inside a block, T_X x T_Y threads (thread id ``ty * T_X + tx``)
split the filters along X and the pixels along Y; a thread accumulates
F_T x W_T results in registers.

Per staged chunk of C_SH channels the block holds the image tile (with halo,
unpadded) and a transposed filter tile ``[c][ky*K+kx][F_TB + pad]`` in SM.
For each channel and filter row a thread loads one row of W_T+K-1 pixels,
then runs K rounds that each load F_T filter values and issue F_T x W_T FMAs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import GeneralConfig, raise_for
from .kernel_special import Block, plan_blocks
from .memsim import (INACTIVE, BlockRecord, MemModel, MemSim, Metrics, bandwidth_factor, gm_regions,
                     merge_all, unit_elements, warp_rows)
from .tensors import FilterBank, Image, OutputMap, check_pair


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class LayoutPlan:
    cfg: GeneralConfig
    tb_x: int
    tb_y: int
    blocks: list  # spatial blocks, indexed by TB y
    filter_tiles: list  # (first filter, filter count), indexed by TB x
    unit: int  # filter values per n-wide SM read (n, or 1 when F_T is not a multiple of n)

    def thread_pixels(self, ty: int) -> tuple[int, int]:
        """(row, first column) within the block of thread row ``ty``'s W_T pixels."""
        p = ty * self.cfg.W_T
        return p // self.cfg.W, p % self.cfg.W

    def thread_filters(self, tx: int) -> list[int]:
        """Filter indices within a tile owned by thread column ``tx``, in slot order."""
        v, tx_n = self.unit, self.cfg.T_X
        return [((slot // v) * tx_n + tx) * v + slot % v for slot in range(self.cfg.F_T)]

    def filter_slots(self) -> np.ndarray:
        """(T_X, F_T) array of local filter indices."""
        return np.array([self.thread_filters(tx) for tx in range(self.cfg.T_X)], dtype=np.int64)

    def tiles(self):
        """Thread blocks in simulation order: (TB index, spatial block, first filter, filter count)."""
        for by, blk in enumerate(self.blocks):
            for bx, (f0, nf) in enumerate(self.filter_tiles):
                yield (bx, by), blk, f0, nf


def plan_general_layout(dims: tuple[int, int], K: int, F: int, cfg: GeneralConfig, n: int = 1) -> LayoutPlan:
    blocks = plan_blocks(dims, K, cfg)
    tb_x = _ceil(F, cfg.F_TB)
    tiles = [(bx * cfg.F_TB, min(cfg.F_TB, F - bx * cfg.F_TB)) for bx in range(tb_x)]
    unit = n if cfg.F_T % n == 0 else 1
    return LayoutPlan(cfg, tb_x, len(blocks), blocks, tiles, unit)


def sm_filter_address(cfg: GeneralConfig, c: int, kk: int, f_local: int, K: int,
                      elem_bytes: int = 4) -> int:
    """Byte offset of filter value (c, kk, f_local) in the transposed, padded SM tile."""
    row = cfg.F_TB + (cfg.pad or 0)
    return elem_bytes * (c * (K * K) * row + kk * row + f_local)


class _GeneralBlock:
    def __init__(self, image: np.ndarray, filters: np.ndarray, out: np.ndarray, plan: LayoutPlan,
                 blk: Block, f0: int, nf: int, K: int, model: MemModel, bases, record: bool):
        cfg = plan.cfg
        self.cfg, self.plan, self.blk, self.f0, self.nf, self.K = cfg, plan, blk, f0, nf, K
        self.C, self.n_y, self.n_x = image.shape
        self.img = image.reshape(-1)
        self.flt = filters.reshape(-1)
        self.out = out
        self.model = model
        self.E = model.elem_width_bytes
        self.n = bandwidth_factor(model)
        self.ws = model.warp_size
        self.img_base, self.flt_base, self.out_base = bases
        self.sim = MemSim(model, record=record)

        self.rows, self.cols = cfg.H + K - 1, cfg.W + K - 1
        self.frow = cfg.F_TB + cfg.pad
        flt_elems = cfg.C_SH * K * K * self.frow
        self.img_off = flt_elems
        self.sm = np.zeros(flt_elems + cfg.C_SH * self.rows * self.cols, dtype=np.float32)

        T = cfg.threads()
        tid = np.arange(T)
        self.tx, self.ty = tid % cfg.T_X, tid // cfg.T_X
        p = np.arange(cfg.T_Y) * cfg.W_T
        self.y_l, self.x0 = p // cfg.W, p % cfg.W
        self.npix = np.where(self.y_l < blk.h, np.clip(blk.w - self.x0, 0, cfg.W_T), 0)
        self.fslot = plan.filter_slots()  # (T_X, F_T)
        self.fil_on = self.fslot < nf
        self.active = (self.npix[self.ty] > 0) & self.fil_on[self.tx].any(axis=1)
        self.loads = np.zeros(T, dtype=np.int64)
        self.lanes = min(self.ws, T)

    # staging: one warp request per row chunk (image) or per filter chunk (filters)
    def _image_jobs(self, c0: int, cs: int):
        blk, n = self.blk, self.n
        units = _ceil(blk.in_w, n)
        chunks = _ceil(units, self.lanes)
        i, r, ch = np.meshgrid(np.arange(cs), np.arange(blk.in_h), np.arange(chunks), indexing="ij")
        i, r, ch = i.reshape(-1, 1), r.reshape(-1, 1), ch.reshape(-1, 1)
        unit = ch * self.lanes + np.arange(self.lanes)[None]
        start = unit * n
        length = np.where(unit < units, np.clip(blk.in_w - start, 0, n), 0)
        gidx = ((c0 + i) * self.n_y + blk.oy + r) * self.n_x + blk.ox + start
        sidx = self.img_off + (i * self.rows + r) * self.cols + start
        return gidx, sidx, length, n

    def _filter_jobs(self, c0: int, cs: int):
        kk = self.K * self.K
        q_total = cs * kk
        chunks = _ceil(q_total, self.lanes)
        fl, ch = np.meshgrid(np.arange(self.nf), np.arange(chunks), indexing="ij")
        fl, ch = fl.reshape(-1, 1), ch.reshape(-1, 1)
        q = ch * self.lanes + np.arange(self.lanes)[None]
        length = (q < q_total).astype(np.int64)
        gidx = ((self.f0 + fl) * self.C + c0) * kk + q
        sidx = q * self.frow + fl
        return gidx, sidx, length, 1

    def _addr(self, base, idx, length):
        on = length > 0
        return np.where(on, base + idx * self.E, INACTIVE), np.where(on, length * self.E, 0)

    def fetch(self, c0: int, cs: int):
        """GM -> registers for one channel chunk (image tile and filter tile)."""
        staged = []
        for kind, jobs, src, base in (("image", self._image_jobs, self.img, self.img_base),
                                      ("filter", self._filter_jobs, self.flt, self.flt_base)):
            gidx, sidx, length, u = jobs(c0, cs)
            addr, width = self._addr(base, gidx, length)
            self.sim.gm(addr, width, kind, pixels=kind == "image")
            idx, mask = unit_elements(gidx, length, u)
            data = np.zeros(idx.shape, dtype=np.float32)
            data[mask] = src[idx[mask]]
            staged.append((kind, sidx, length, u, data))
        return staged

    def store(self, staged) -> None:
        for kind, sidx, length, u, data in staged:
            addr, width = self._addr(0, sidx, length)
            self.sim.sm(addr, width, f"{kind}_store")
            idx, mask = unit_elements(sidx, length, u)
            self.sm[idx[mask]] = data[mask]

    def _image_reads(self, i: int):
        """Per-thread SM loads of W_T+K-1 pixels for each filter row j of channel i."""
        cfg, K, n = self.cfg, self.K, self.n
        span = cfg.W_T + K - 1
        u = n if (self.cols % n == 0 and cfg.W_T % n == 0) else 1
        steps = _ceil(span, u)
        j = np.arange(K)[:, None, None]
        s = np.arange(steps)[None, None, :]
        need = np.where(self.npix > 0, self.npix + K - 1, 0)[None, :, None]
        start_col = self.x0[None, :, None] + s * u
        sidx = self.img_off + (i * self.rows + self.y_l[None, :, None] + j) * self.cols + start_col
        length = np.broadcast_to(np.clip(need - s * u, 0, u), sidx.shape)  # (K, T_Y, steps)
        return sidx, length, u

    def _filter_reads(self, i: int):
        """Per-thread SM loads of F_T filter values for each (j, k) round of channel i."""
        K, v = self.K, self.plan.unit
        kk = np.arange(K * K)[:, None, None]
        first = self.fslot[:, ::v][None]  # (1, T_X, F_T/v)
        sidx = (i * K * K + kk) * self.frow + first
        length = np.broadcast_to(np.clip(self.nf - first, 0, v), sidx.shape)
        return sidx, length, v

    def _per_thread(self, by_key: np.ndarray, key: np.ndarray) -> np.ndarray:
        """Expand (rounds, keyed, steps) into (threads, rounds*steps), masking idle threads."""
        arr = by_key[:, key, :].transpose(1, 0, 2).reshape(len(key), -1)
        return np.where(self.active[:, None], arr, INACTIVE)

    def compute(self, c0: int, cs: int, acc: np.ndarray) -> None:
        cfg, K = self.cfg, self.K
        for i in range(cs):
            sidx, length, u = self._image_reads(i)
            addr, width = self._addr(0, sidx, length)
            self.sim.sm(warp_rows(self._per_thread(addr, self.ty), self.ws),
                        warp_rows(self._per_thread(width, self.ty), self.ws), "image_load")
            self.loads += np.where(self.active, length.sum(axis=(0, 2))[self.ty], 0)
            idx, mask = unit_elements(sidx, length, u)
            rimg = np.zeros(idx.shape, dtype=np.float32)
            rimg[mask] = self.sm[idx[mask]]
            rimg = rimg.reshape(K, cfg.T_Y, -1)  # (K, T_Y, >= W_T+K-1)

            fidx, flen, v = self._filter_reads(i)
            addr, width = self._addr(0, fidx, flen)
            self.sim.sm(warp_rows(self._per_thread(addr, self.tx), self.ws),
                        warp_rows(self._per_thread(width, self.tx), self.ws), "filter_load")
            idx, mask = unit_elements(fidx, flen, v)
            rflt = np.zeros(idx.shape, dtype=np.float32)
            rflt[mask] = self.sm[idx[mask]]
            rflt = rflt.reshape(K * K, cfg.T_X, cfg.F_T)

            for j in range(K):
                row = rimg[j]
                for k in range(K):
                    acc += rflt[j * K + k][:, :, None, None] * row[None, None, :, k:k + cfg.W_T]

    def write_back(self, acc: np.ndarray) -> None:
        """rAcc -> GM: per filter slot, W_T pixels in n-wide stores (uncoalesced across tx)."""
        cfg, blk = self.cfg, self.blk
        o_y, o_x = self.out.shape[1:]
        u = self.n if cfg.W_T % self.n == 0 else 1
        steps = _ceil(cfg.W_T, u)
        s = np.arange(steps)
        fsl = self.fslot[self.tx]  # (T, F_T)
        pix = self.npix[self.ty]
        oidx = (((self.f0 + fsl)[:, :, None] * o_y + blk.oy + self.y_l[self.ty][:, None, None]) * o_x
                + blk.ox + self.x0[self.ty][:, None, None] + s * u)  # (T, F_T, steps)
        length = np.clip(pix[:, None, None] - s * u, 0, u) * (fsl < self.nf)[:, :, None]
        addr, width = self._addr(self.out_base, oidx, length)
        T = len(self.tx)
        self.sim.gm(warp_rows(addr.reshape(T, -1), self.ws), warp_rows(width.reshape(T, -1), self.ws), "output")
        idx, mask = unit_elements(oidx, length, u)
        vals = acc[self.tx, :, self.ty, :]  # (T, F_T, W_T)
        vals = np.pad(vals, ((0, 0), (0, 0), (0, steps * u - cfg.W_T))).reshape(idx.shape)
        self.out.reshape(-1)[idx[mask]] = vals[mask]

    def run(self) -> MemSim:
        cfg, C = self.cfg, self.C
        acc = np.zeros((cfg.T_X, cfg.F_T, cfg.T_Y, cfg.W_T), dtype=np.float32)
        chunks = list(range(0, C, cfg.C_SH))
        self.store(self.fetch(0, min(cfg.C_SH, C)))
        # barrier
        for pos, c0 in enumerate(chunks):
            nxt = None
            if pos + 1 < len(chunks):
                c1 = chunks[pos + 1]
                nxt = self.fetch(c1, min(cfg.C_SH, C - c1))
            self.compute(c0, min(cfg.C_SH, C - c0), acc)
            # barrier
            if nxt is not None:
                self.store(nxt)
            # barrier
        self.write_back(acc)
        m = self.sim.metrics
        m.registers_per_thread = cfg.F_T * cfg.W_T + (cfg.W_T + self.K - 1) + cfg.F_T
        m.sm_bytes_used = self.sm.size * self.E
        return self.sim


def run_general(image: Image, filters: FilterBank, cfg: GeneralConfig, model: MemModel,
                trace: Optional[list] = None) -> tuple[OutputMap, Metrics]:
    """Emulate the multi-channel kernel. Returns (OutputMap, Metrics).

    ``cfg.pad=None`` selects the conflict-free padding. Pass a list as
    ``trace`` to collect one BlockRecord per thread block.
    """
    o_y, o_x = check_pair(image, filters)
    K, C, F = filters.K, filters.C, filters.F
    cfg = cfg.with_pad(model)
    raise_for(cfg.violations(K, C, F, model))
    plan = plan_general_layout((image.height, image.width), K, F, cfg, bandwidth_factor(model))

    out = np.zeros((F, o_y, o_x), dtype=np.float32)
    E = model.elem_width_bytes
    bases = gm_regions(image.data.size * E, filters.data.size * E, out.size * E)
    shards = []
    for tb, blk, f0, nf in plan.tiles():
        sim_tb = _GeneralBlock(image.data, filters.data, out, plan, blk, f0, nf, K, model, bases,
                               record=trace is not None)
        sim = sim_tb.run()
        shards.append(sim.metrics)
        if trace is not None:
            trace.append(BlockRecord(tb, (blk.oy, blk.ox), (blk.h, blk.w), sim, sim_tb.loads, C, nf))
    return OutputMap(out), merge_all(shards)
