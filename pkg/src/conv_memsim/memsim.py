"""Warp-level memory model for shared (SM), global (GM) and constant (CM) memory.

Shared memory follows the bank-width model ``W_SMB = n * W_CD``: a lane's
address falls in bank ``(addr // W_SMB) % bank_count`` and every *distinct*
address in a bank costs one cycle, so two 4-byte reads of different halves
of one 8-byte word serialize. Global memory counts aligned segments touched.
Constant memory counts distinct addresses; one address means a broadcast.

Batch functions take ``addr`` as an ``(accesses, lanes)`` int64 array of byte
addresses with ``-1`` marking inactive lanes, and ``width`` as a scalar or
array of the same shape.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .errors import ModelViolation

INACTIVE = -1


class Space(str, enum.Enum):
    GM = "GM"
    SM = "SM"
    CM = "CM"


@dataclass(frozen=True)
class MemModel:
    bank_count: int = 32
    bank_width_bytes: int = 8
    elem_width_bytes: int = 4
    warp_size: int = 32
    gm_segment_bytes: int = 128
    sm_capacity_bytes: int = 49152
    cm_capacity_bytes: int = 65536
    max_threads_per_block: int = 1024
    max_registers_per_thread: int = 255

    def __post_init__(self):
        if self.bank_width_bytes not in (4, 8):
            raise ModelViolation(f"bank width must be 4 or 8 bytes, got {self.bank_width_bytes}")
        seg = self.gm_segment_bytes
        if seg <= 0 or seg & (seg - 1):
            raise ModelViolation(f"GM segment size must be a power of two, got {seg}")
        if self.bank_count < 1 or self.warp_size < 1:
            raise ModelViolation("bank count and warp size must be positive")
        bandwidth_factor(self)

    @property
    def n(self) -> int:
        return self.bank_width_bytes // self.elem_width_bytes


def bandwidth_factor(model: MemModel) -> int:
    """SM bandwidth multiplier ``n = W_SMB / W_CD`` gained by n-wide lane units."""
    w_smb, w_cd = model.bank_width_bytes, model.elem_width_bytes
    if w_cd <= 0 or w_smb % w_cd:
        raise ModelViolation(f"bank width {w_smb} is not a multiple of element width {w_cd}")
    return w_smb // w_cd


KEPLER = MemModel()


@dataclass(frozen=True)
class WarpAccess:
    space: Space
    lanes: tuple  # of (address, width) or None for an inactive lane

    def __post_init__(self):
        object.__setattr__(self, "space", Space(self.space))
        object.__setattr__(self, "lanes", tuple(self.lanes))
        for lane in self.lanes:
            if lane is not None and lane[1] <= 0:
                raise ModelViolation(f"access width must be positive, got {lane[1]}")

    @classmethod
    def strided(cls, space, base: int, stride: int, width: int, count: int,
                active: Optional[Sequence[bool]] = None) -> "WarpAccess":
        lanes = []
        for t in range(count):
            on = True if active is None else active[t]
            lanes.append((base + t * stride, width) if on else None)
        return cls(space, lanes)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        addr = np.full((1, max(len(self.lanes), 1)), INACTIVE, dtype=np.int64)
        width = np.zeros_like(addr)
        for t, lane in enumerate(self.lanes):
            if lane is not None:
                addr[0, t], width[0, t] = lane
        return addr, width


def _check_lanes(model: MemModel, access: WarpAccess, space: Space):
    if access.space is not space:
        raise ModelViolation(f"expected a {space.value} access, got {access.space.value}")
    if len(access.lanes) > model.warp_size:
        raise ModelViolation(f"{len(access.lanes)} lanes exceed warp size {model.warp_size}")


def _distinct_per_row(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort each row and flag the first occurrence of every non-negative key."""
    s = np.sort(keys, axis=1)
    first = np.ones_like(s, dtype=bool)
    first[:, 1:] = s[:, 1:] != s[:, :-1]
    return s, first & (s >= 0)


def sm_cycles_batch(model: MemModel, addr: np.ndarray, width) -> np.ndarray:
    """Cycles per warp access: max over banks of distinct addresses in that bank."""
    addr = np.asarray(addr, dtype=np.int64)
    active = addr >= 0
    width = np.broadcast_to(np.asarray(width, dtype=np.int64), addr.shape)
    if np.any(active & (width > model.bank_width_bytes)):
        raise ModelViolation(f"SM access wider than bank width {model.bank_width_bytes} bytes")
    if np.any(active & (width <= 0)):
        raise ModelViolation("SM access width must be positive")
    if addr.size == 0:
        return np.zeros(addr.shape[0], dtype=np.int64)
    bank = (addr // model.bank_width_bytes) % model.bank_count
    span = int(addr.max()) + 1
    keys = np.where(active, bank * span + addr, INACTIVE)
    s, first = _distinct_per_row(keys)
    rows = np.broadcast_to(np.arange(s.shape[0])[:, None], s.shape)
    flat = rows[first] * model.bank_count + s[first] // span
    counts = np.bincount(flat, minlength=s.shape[0] * model.bank_count)
    return counts.reshape(s.shape[0], model.bank_count).max(axis=1)


def gm_transactions_batch(model: MemModel, addr: np.ndarray, width) -> np.ndarray:
    """Distinct aligned segments touched per warp access."""
    addr = np.asarray(addr, dtype=np.int64)
    active = addr >= 0
    width = np.broadcast_to(np.asarray(width, dtype=np.int64), addr.shape)
    if addr.size == 0:
        return np.zeros(addr.shape[0], dtype=np.int64)
    seg = model.gm_segment_bytes
    lo = addr // seg
    hi = (addr + np.maximum(width, 1) - 1) // seg
    spread = int((hi - lo)[active].max(initial=0)) + 1
    cols = [np.where(active & (lo + k <= hi), lo + k, INACTIVE) for k in range(spread)]
    _, first = _distinct_per_row(np.concatenate(cols, axis=1))
    return first.sum(axis=1)


def cm_requests_batch(addr: np.ndarray) -> np.ndarray:
    """Distinct addresses per warp access (1 == broadcast)."""
    _, first = _distinct_per_row(np.asarray(addr, dtype=np.int64))
    return first.sum(axis=1)


def sm_cycles(model: MemModel, access: WarpAccess) -> int:
    _check_lanes(model, access, Space.SM)
    addr, width = access.arrays()
    return int(sm_cycles_batch(model, addr, width)[0])


def gm_transactions(model: MemModel, access: WarpAccess) -> int:
    _check_lanes(model, access, Space.GM)
    addr, width = access.arrays()
    return int(gm_transactions_batch(model, addr, width)[0])


def cm_request(model: MemModel, access: WarpAccess) -> tuple[int, bool]:
    """(serialized request count, broadcast hit) for one constant-memory access."""
    _check_lanes(model, access, Space.CM)
    addr, _ = access.arrays()
    requests = int(cm_requests_batch(addr)[0])
    return requests, requests == 1


@dataclass
class Metrics:
    # field order is the CSV column order
    gm_transactions: int = 0
    gm_bytes: int = 0
    gm_pixel_reads: int = 0
    sm_access_requests: int = 0
    sm_cycles: int = 0
    sm_conflict_excess: int = 0
    cm_requests: int = 0
    cm_broadcast_hits: int = 0
    registers_per_thread: int = 0
    sm_bytes_used: int = 0

    # per-thread/per-block resources combine by max, counters by sum
    _MAXED = ("registers_per_thread", "sm_bytes_used")

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def merge(self, other: "Metrics") -> "Metrics":
        vals = {}
        for name in self.columns():
            a, b = getattr(self, name), getattr(other, name)
            vals[name] = max(a, b) if name in self._MAXED else a + b
        return Metrics(**vals)

    def as_row(self) -> list[int]:
        return [int(getattr(self, name)) for name in self.columns()]

    def csv_header(self) -> str:
        return ",".join(self.columns())

    def csv_row(self) -> str:
        return ",".join(str(v) for v in self.as_row())

    def check(self) -> None:
        if self.sm_cycles < self.sm_access_requests:
            raise AssertionError("sm_cycles below request count")
        if self.sm_conflict_excess != self.sm_cycles - self.sm_access_requests:
            raise AssertionError("conflict excess inconsistent")
        if self.cm_broadcast_hits > self.cm_requests:
            raise AssertionError("more broadcast hits than CM requests")


def merge_all(shards) -> Metrics:
    total = Metrics()
    for m in shards:
        total = total.merge(m)
    return total


def warp_rows(per_thread: np.ndarray, warp_size: int) -> np.ndarray:
    """Regroup per-thread access steps ``(T, S)`` into warp requests ``(warps*S, warp_size)``.

    Thread ``t`` is lane ``t % warp_size`` of warp ``t // warp_size``; step ``s``
    of every thread in a warp forms one lockstep request.
    """
    per_thread = np.asarray(per_thread)
    if per_thread.ndim == 1:
        per_thread = per_thread[:, None]
    T, S = per_thread.shape
    nw = -(-T // warp_size)
    padded = np.full((nw * warp_size, S), INACTIVE, dtype=per_thread.dtype)
    padded[:T] = per_thread
    return padded.reshape(nw, warp_size, S).transpose(0, 2, 1).reshape(nw * S, warp_size)


def unit_elements(start: np.ndarray, length: np.ndarray, u: int) -> tuple[np.ndarray, np.ndarray]:
    """Element indices and validity mask for ``u``-wide unit accesses of ``length`` elements."""
    idx = start[..., None] + np.arange(u)
    mask = np.arange(u) < length[..., None]
    return idx, mask


@dataclass
class AccessLog:
    space: Space
    tag: str
    costs: np.ndarray
    active_lanes: np.ndarray


@dataclass
class MemSim:
    """Accumulates Metrics for one thread block's access stream.

    With ``record=True`` it also keeps every GM element address per tag and
    the per-request cost log, for trace-level assertions.
    """

    model: MemModel
    record: bool = False
    metrics: Metrics = field(default_factory=Metrics)
    sm_cycles_by_phase: Counter = field(default_factory=Counter)
    gm_tx_by_tag: Counter = field(default_factory=Counter)
    gm_elems_by_tag: Counter = field(default_factory=Counter)
    gm_addresses: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    @staticmethod
    def _live(addr: np.ndarray, width) -> tuple[np.ndarray, np.ndarray]:
        addr = np.asarray(addr, dtype=np.int64)
        width = np.broadcast_to(np.asarray(width, dtype=np.int64), addr.shape)
        keep = (addr >= 0).any(axis=1)
        return addr[keep], width[keep]

    def sm(self, addr, width, phase: str) -> np.ndarray:
        addr, width = self._live(addr, width)
        cyc = sm_cycles_batch(self.model, addr, width)
        m = self.metrics
        total = int(cyc.sum())
        m.sm_access_requests += len(cyc)
        m.sm_cycles += total
        m.sm_conflict_excess += total - len(cyc)
        self.sm_cycles_by_phase[phase] += total
        if self.record:
            self.log.append(AccessLog(Space.SM, phase, cyc, (addr >= 0).sum(axis=1)))
        return cyc

    def gm(self, addr, width, tag: str, pixels: bool = False) -> np.ndarray:
        """Global access; ``pixels`` marks input-image reads."""
        addr, width = self._live(addr, width)
        tx = gm_transactions_batch(self.model, addr, width)
        active = addr >= 0
        nbytes = int(width[active].sum())
        elems = nbytes // self.model.elem_width_bytes
        m = self.metrics
        m.gm_transactions += int(tx.sum())
        m.gm_bytes += nbytes
        if pixels:
            m.gm_pixel_reads += elems
        self.gm_tx_by_tag[tag] += int(tx.sum())
        self.gm_elems_by_tag[tag] += elems
        if self.record:
            self.log.append(AccessLog(Space.GM, tag, tx, active.sum(axis=1)))
            e = self.model.elem_width_bytes
            a, w = addr[active], width[active]
            per = int(w.max(initial=0)) // e
            if per:
                offs = np.arange(per) * e
                full = a[:, None] + offs[None]
                self.gm_addresses.setdefault(tag, []).append(full[offs[None] < w[:, None]])
        return tx

    def cm(self, addr) -> np.ndarray:
        addr, _ = self._live(addr, 0)
        req = cm_requests_batch(addr)
        self.metrics.cm_requests += int(req.sum())
        self.metrics.cm_broadcast_hits += int((req == 1).sum())
        if self.record:
            self.log.append(AccessLog(Space.CM, "filter", req, (addr >= 0).sum(axis=1)))
        return req

    def addresses(self, tag: str) -> np.ndarray:
        parts = self.gm_addresses.get(tag, [])
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


@dataclass
class BlockRecord:
    """What one simulated thread block did; filled in when a trace is requested."""

    tb: tuple
    origin: tuple
    eff: tuple
    sim: MemSim
    pixel_loads: np.ndarray  # SM->register image elements loaded, per thread
    channels: int = 1
    filters: int = 1


def gm_regions(*sizes_bytes: int, align: int = 4096) -> list[int]:
    """Base byte addresses for consecutive GM buffers, each ``align``-aligned."""
    bases, cur = [], 0
    for size in sizes_bytes:
        bases.append(cur)
        cur += -(-size // align) * align
    return bases
