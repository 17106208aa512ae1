"""Warp-level emulation of the single-channel (C=1) tiled convolution kernel.

Each thread block owns an H x W output block. Its W/n threads each compute n
adjacent output pixels per row, keep a K x (K+n-1) pixel window in
registers, and walk down the block one row at a time: the next input row is
prefetched from GM while the current one is read from an SM row ring buffer.
Filters sit in constant memory and every lane of a warp fetches the same
filter value in the same round.

Data really moves through the simulated SM at the addresses that are
costed, so an addressing mistake shows up in the output and not only in
the counters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import SpecialConfig, raise_for
from .errors import WrongKernelError
from .memsim import (INACTIVE, BlockRecord, MemModel, MemSim, Metrics, gm_regions, merge_all,
                     unit_elements, warp_rows)
from .tensors import FilterBank, Image, OutputMap, check_pair


@dataclass(frozen=True)
class Block:
    index: tuple  # (block row, block column)
    oy: int       # output origin
    ox: int
    h: int        # effective output extent
    w: int
    in_h: int     # input footprint including the right/bottom halo
    in_w: int


def plan_blocks(dims: tuple[int, int], K: int, cfg) -> list[Block]:
    """Tile the valid-mode output of an image of ``dims`` with ``cfg.W x cfg.H`` blocks.

    Blocks at the right and bottom edges shrink to the remaining extent.
    """
    n_y, n_x = dims
    o_y, o_x = n_y - K + 1, n_x - K + 1
    blocks = []
    for by, oy in enumerate(range(0, o_y, cfg.H)):
        h = min(cfg.H, o_y - oy)
        for bx, ox in enumerate(range(0, o_x, cfg.W)):
            w = min(cfg.W, o_x - ox)
            blocks.append(Block((by, bx), oy, ox, h, w, h + K - 1, w + K - 1))
    return blocks


class _SpecialBlock:
    """State of one emulated thread block."""

    def __init__(self, image: np.ndarray, filters: np.ndarray, out: np.ndarray, blk: Block,
                 W: int, u: int, K: int, model: MemModel, bases: tuple[int, int], record: bool):
        self.img = image.reshape(-1)
        self.n_y, self.n_x = image.shape
        self.flt = filters.reshape(filters.shape[0], K, K)
        self.out = out
        self.blk, self.W, self.u, self.K = blk, W, u, K
        self.model = model
        self.E = model.elem_width_bytes
        self.img_base, self.out_base = bases
        self.sim = MemSim(model, record=record)

        self.T = W // u
        self.t = np.arange(self.T)
        self.stride = -(-(W + K - 1) // u) * u
        self.slots = K + 1
        self.sm = np.zeros(self.slots * self.stride, dtype=np.float32)
        self.regs = np.zeros((K, self.T, u + K - 1), dtype=np.float32)
        self.loads = np.zeros(self.T, dtype=np.int64)

        # row staging: unit j of a row goes to thread j % T in pass j // T
        n_units = -(-blk.in_w // u)
        passes = -(-n_units // self.T)
        unit = self.t[:, None] + np.arange(passes)[None] * self.T
        self.stage_valid = unit < n_units
        self.stage_start = unit * u
        self.stage_len = np.where(self.stage_valid, np.minimum(u, blk.in_w - self.stage_start), 0)

        # register loads: thread t reads columns [t*u, t*u + u + K - 1)
        steps = -(-(u + K - 1) // u)
        start = self.t[:, None] * u + np.arange(steps)[None] * u
        end = np.minimum(self.t * u + u + K - 1, blk.in_w)[:, None]
        self.thread_on = self.t * u < blk.w
        self.reg_start = start
        self.reg_len = np.where(self.thread_on[:, None], np.clip(end - start, 0, u), 0)

    def _addr(self, base: int, elem: np.ndarray, length: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        on = length > 0
        addr = np.where(on, base + elem * self.E, INACTIVE)
        return warp_rows(addr, self.model.warp_size), warp_rows(np.where(on, length * self.E, 0), self.model.warp_size)

    def fetch_row(self, r: int) -> np.ndarray:
        """GM -> registers for input row ``r`` of the block footprint."""
        blk = self.blk
        gidx = (blk.oy + r) * self.n_x + blk.ox + self.stage_start
        addr, width = self._addr(self.img_base, gidx, self.stage_len)
        self.sim.gm(addr, width, "image", pixels=True)
        idx, mask = unit_elements(gidx, self.stage_len, self.u)
        data = np.zeros(idx.shape, dtype=np.float32)
        data[mask] = self.img[idx[mask]]
        return data

    def store_row(self, r: int, data: np.ndarray) -> None:
        """Registers -> SM ring slot of row ``r``."""
        sidx = (r % self.slots) * self.stride + self.stage_start
        addr, width = self._addr(0, sidx, self.stage_len)
        self.sim.sm(addr, width, "row_store")
        idx, mask = unit_elements(sidx, self.stage_len, self.u)
        self.sm[idx[mask]] = data[mask]

    def load_row(self, r: int) -> None:
        """SM -> each thread's register window for row ``r``."""
        sidx = (r % self.slots) * self.stride + self.reg_start
        addr, width = self._addr(0, sidx, self.reg_len)
        self.sim.sm(addr, width, "reg_load")
        self.loads += self.reg_len.sum(axis=1)
        idx, mask = unit_elements(sidx, self.reg_len, self.u)
        vals = np.zeros(idx.shape, dtype=np.float32)
        vals[mask] = self.sm[idx[mask]]
        self.regs[r % self.K] = vals.reshape(self.T, -1)[:, : self.u + self.K - 1]

    def compute_row(self, orow: int) -> None:
        """All filters for output row ``orow``: CM fetches, FMAs, n-wide GM stores."""
        K, u, F = self.K, self.u, self.flt.shape[0]
        ws = self.model.warp_size
        on = self.thread_on
        # every active lane fetches filter value (f, ky, kx) in the same round
        cm_off = np.arange(F * K * K) * self.E
        cm_addr = np.where(on[:, None], cm_off[None], INACTIVE)
        self.sim.cm(warp_rows(cm_addr, ws))

        window = [self.regs[(orow + ky) % K] for ky in range(K)]
        acc = np.zeros((F, self.T, u), dtype=np.float32)
        for ky in range(K):
            for kx in range(K):
                acc += self.flt[:, ky, kx][:, None, None] * window[ky][None, :, kx:kx + u]

        blk = self.blk
        o_y, o_x = self.out.shape[1:]
        n_out = np.where(on, np.minimum(u, blk.w - self.t * u), 0)
        col = blk.ox + self.t * u
        oidx = (np.arange(F)[None, :] * o_y + blk.oy + orow) * o_x + col[:, None]  # (T, F)
        lens = np.broadcast_to(n_out[:, None], oidx.shape)
        addr, width = self._addr(self.out_base, oidx, lens)
        self.sim.gm(addr, width, "output")
        flat = self.out.reshape(-1)
        idx, mask = unit_elements(oidx, lens, u)
        flat[idx[mask]] = acc.transpose(1, 0, 2)[mask]

    def run(self, prefetch: bool) -> MemSim:
        K, rows = self.K, self.blk.in_h
        for r in range(K):
            self.store_row(r, self.fetch_row(r))
        # barrier
        for r in range(K - 1):
            self.load_row(r)
        for k in range(K - 1, rows):
            nxt = None
            if prefetch and k + 1 < rows:
                nxt = self.fetch_row(k + 1)
            self.load_row(k)
            self.compute_row(k - K + 1)
            # barrier
            if k + 1 < rows:
                if nxt is None:
                    nxt = self.fetch_row(k + 1)
                self.store_row(k + 1, nxt)
            # barrier
        m = self.sim.metrics
        m.registers_per_thread = self.regs.shape[0] * self.regs.shape[2] + self.u
        m.sm_bytes_used = self.sm.size * self.E
        return self.sim


def _run(image: Image, filters: FilterBank, cfg: SpecialConfig, model: MemModel, unit: int,
         trace: Optional[list]) -> tuple[OutputMap, Metrics]:
    if image.C != 1 or filters.C != 1:
        raise WrongKernelError(f"special kernel needs single-channel input, got C={image.C}")
    o_y, o_x = check_pair(image, filters)
    K, F = filters.K, filters.F
    raise_for(cfg.violations(K, 1, F, model))

    img = image.data[0]
    out = np.zeros((F, o_y, o_x), dtype=np.float32)
    E = model.elem_width_bytes
    bases = tuple(gm_regions(img.size * E, out.size * E))
    shards = []
    for blk in plan_blocks(img.shape, K, cfg):
        tb = _SpecialBlock(img, filters.data[:, 0], out, blk, cfg.W, unit, K, model, bases,
                           record=trace is not None)
        sim = tb.run(cfg.prefetch)
        shards.append(sim.metrics)
        if trace is not None:
            trace.append(BlockRecord(blk.index, (blk.oy, blk.ox), (blk.h, blk.w), sim, tb.loads))
    return OutputMap(out), merge_all(shards)


def run_special(image: Image, filters: FilterBank, cfg: SpecialConfig, model: MemModel,
                trace: Optional[list] = None):
    """Emulate the matched kernel (n-element lane units). Returns (OutputMap, Metrics).

    Pass a list as ``trace`` to collect one BlockRecord per thread block.
    """
    return _run(image, filters, cfg, model, cfg.n, trace)


def run_special_unmatched(image: Image, filters: FilterBank, cfg: SpecialConfig, model: MemModel,
                          trace: Optional[list] = None):
    """Same kernel with one W_CD-wide element per lane and W threads per block."""
    return _run(image, filters, cfg, model, 1, trace)
