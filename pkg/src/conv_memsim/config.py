"""Tiling configurations for the two kernels and their validity rules."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .errors import CapacityError, ConfigError
from .memsim import MemModel, bandwidth_factor


def round_up(x: int, m: int) -> int:
    return -(-x // m) * m


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    required: Optional[int] = None
    available: Optional[int] = None

    @property
    def is_capacity(self) -> bool:
        return self.code in ("sm_capacity", "cm_capacity")

    def __str__(self) -> str:
        return self.message


def _capacity(code: str, what: str, required: int, available: int) -> Violation:
    return Violation(code, f"{what} over capacity: {required} bytes required, {available} available",
                     required, available)


def raise_for(violations: list[Violation]) -> None:
    """Raise ConfigError (or CapacityError when only capacity is exceeded)."""
    if not violations:
        return
    other = [v for v in violations if not v.is_capacity]
    if other:
        raise ConfigError("; ".join(str(v) for v in violations))
    v = violations[0]
    err = CapacityError(v.code.split("_")[0].upper(), v.required, v.available)
    if len(violations) > 1:
        err.args = ("; ".join(str(x) for x in violations),)
    raise err


@dataclass(frozen=True)
class SpecialConfig:
    """Single-channel kernel tiling: W x H output block, n elements per lane unit."""

    W: int
    H: int
    n: int = 2
    prefetch: bool = True

    def threads(self) -> int:
        return self.W // self.n

    def registers(self, K: int) -> int:
        # K rows of K+n-1 pixels plus n accumulators
        return K * (K + self.n - 1) + self.n

    def sm_row_stride(self, K: int) -> int:
        return round_up(self.W + K - 1, self.n)

    def sm_bytes(self, K: int, model: MemModel) -> int:
        return (K + 1) * self.sm_row_stride(K) * model.elem_width_bytes

    def unmatched(self) -> "SpecialConfig":
        return replace(self, n=1)

    def describe(self) -> str:
        return f"W={self.W};H={self.H};n={self.n}"

    def violations(self, K: int, C: int, F: int, model: MemModel) -> list[Violation]:
        out = []
        for name in ("W", "H", "n"):
            if getattr(self, name) < 1:
                out.append(Violation("positive", f"{name} must be >= 1"))
        if K < 1 or F < 1 or C < 1:
            out.append(Violation("positive", "K, C and F must be >= 1"))
        if out:
            return out
        if C != 1:
            out.append(Violation("channels", f"special kernel requires C=1, got C={C}"))
        if self.W % self.n:
            out.append(Violation("divisibility", f"W={self.W} not divisible by n={self.n}"))
        n_model = bandwidth_factor(model)
        if self.n != n_model:
            out.append(Violation("model", f"n={self.n} does not match W_SMB/W_CD={n_model}"))
        if self.threads() > model.max_threads_per_block:
            out.append(Violation("threads", f"{self.threads()} threads per TB exceed {model.max_threads_per_block}"))
        if self.registers(K) > model.max_registers_per_thread:
            out.append(Violation("registers", f"{self.registers(K)} registers per thread exceed {model.max_registers_per_thread}"))
        sm = self.sm_bytes(K, model)
        if sm > model.sm_capacity_bytes:
            out.append(_capacity("sm_capacity", "SM", sm, model.sm_capacity_bytes))
        cm = F * K * K * model.elem_width_bytes
        if cm > model.cm_capacity_bytes:
            out.append(_capacity("cm_capacity", "CM", cm, model.cm_capacity_bytes))
        return out


def choose_pad(F_TB: int, n: int, bank_count: int = 32) -> int:
    """Smallest filter-tile row padding that keeps transposed stores conflict-free.

    The padded row must hold whole n-wide units and its length in bank words
    must be coprime with the bank count, so consecutive rows start in
    different banks. For even F_TB/n this is exactly n elements.
    """
    pad = 0
    while True:
        row = F_TB + pad
        if row % n == 0 and math.gcd(row // n, bank_count) == 1:
            return pad
        pad += 1


@dataclass(frozen=True)
class GeneralConfig:
    """Multi-channel kernel tiling.

    A thread block covers a W x H output block for F_TB filters; each thread
    computes W_T horizontally adjacent pixels for F_T filters; C_SH channels
    are staged in SM at a time. ``pad=None`` lets the module pick the padding.
    """

    W: int
    H: int
    F_TB: int
    W_T: int
    F_T: int
    C_SH: int
    pad: Optional[int] = None

    @property
    def T_X(self) -> int:
        return self.F_TB // self.F_T

    @property
    def T_Y(self) -> int:
        return self.W * self.H // self.W_T

    def threads(self) -> int:
        return self.T_X * self.T_Y

    def resolved_pad(self, model: MemModel) -> int:
        if self.pad is not None:
            return self.pad
        return choose_pad(self.F_TB, bandwidth_factor(model), model.bank_count)

    def with_pad(self, model: MemModel) -> "GeneralConfig":
        return replace(self, pad=self.resolved_pad(model))

    def registers(self, K: int) -> int:
        # rAcc[F_T][W_T] + rImg[W_T+K-1] + rFlt[F_T]
        return self.F_T * self.W_T + (self.W_T + K - 1) + self.F_T

    def sm_elems(self, K: int, model: MemModel) -> tuple[int, int]:
        img = self.C_SH * (self.H + K - 1) * (self.W + K - 1)
        flt = self.C_SH * K * K * (self.F_TB + self.resolved_pad(model))
        return img, flt

    def sm_bytes(self, K: int, model: MemModel) -> int:
        return sum(self.sm_elems(K, model)) * model.elem_width_bytes

    def describe(self) -> str:
        pad = "auto" if self.pad is None else self.pad
        return (f"W={self.W};H={self.H};F_TB={self.F_TB};W_T={self.W_T};"
                f"F_T={self.F_T};C_SH={self.C_SH};pad={pad}")

    def violations(self, K: int, C: int, F: int, model: MemModel) -> list[Violation]:
        out = []
        for name in ("W", "H", "F_TB", "W_T", "F_T", "C_SH"):
            if getattr(self, name) < 1:
                out.append(Violation("positive", f"{name} must be >= 1"))
        if self.pad is not None and self.pad < 0:
            out.append(Violation("positive", "pad must be >= 0"))
        if K < 1 or F < 1 or C < 1:
            out.append(Violation("positive", "K, C and F must be >= 1"))
        if out:
            return out
        if self.F_TB % self.F_T:
            out.append(Violation("divisibility", f"T_X not integral: F_TB={self.F_TB} not divisible by F_T={self.F_T}"))
        if (self.W * self.H) % self.W_T:
            out.append(Violation("divisibility", f"T_Y not integral: W*H={self.W * self.H} not divisible by W_T={self.W_T}"))
        if self.W % self.W_T:
            out.append(Violation("divisibility", f"W not divisible by W_T (W={self.W}, W_T={self.W_T})"))
        n = bandwidth_factor(model)
        if (self.F_TB + self.resolved_pad(model)) % n:
            out.append(Violation("alignment", f"filter tile row F_TB+pad={self.F_TB + self.resolved_pad(model)} is not a multiple of n={n}"))
        if not any(v.code == "divisibility" for v in out):
            if self.threads() > model.max_threads_per_block:
                out.append(Violation("threads", f"T_X*T_Y={self.threads()} threads per TB exceed {model.max_threads_per_block}"))
        if self.registers(K) > model.max_registers_per_thread:
            out.append(Violation("registers", f"{self.registers(K)} registers per thread exceed {model.max_registers_per_thread}"))
        sm = self.sm_bytes(K, model)
        if sm > model.sm_capacity_bytes:
            out.append(_capacity("sm_capacity", "SM", sm, model.sm_capacity_bytes))
        return out


TUNED_CONFIGS = {
    3: GeneralConfig(W=32, H=4, F_TB=64, W_T=16, F_T=4, C_SH=2),
    5: GeneralConfig(W=32, H=8, F_TB=32, W_T=8, F_T=8, C_SH=1),
    7: GeneralConfig(W=64, H=4, F_TB=32, W_T=8, F_T=8, C_SH=1),
}
