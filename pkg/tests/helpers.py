"""Independent reference implementations used as test oracles.

These are written as plainly as possible and share no code with the package.
"""
import numpy as np

MASK64 = (1 << 64) - 1
LCG_A = 6364136223846793005
LCG_C = 1442695040888963407


def loop_convolve(image, filters):
    """Quadruple loop cross-correlation in float64. image (C,N,N), filters (F,C,K,K)."""
    C, ny, nx = image.shape
    F, _, K, _ = filters.shape
    out = np.zeros((F, ny - K + 1, nx - K + 1))
    for f in range(F):
        for y in range(ny - K + 1):
            for x in range(nx - K + 1):
                s = 0.0
                for c in range(C):
                    for ky in range(K):
                        for kx in range(K):
                            s += float(image[c, y + ky, x + kx]) * float(filters[f, c, ky, kx])
                out[f, y, x] = s
    return out


def counting_convolve(ny, nx, C, K, F):
    """Count how many (output, filter) products read each input pixel."""
    reads = np.zeros((C, ny, nx), dtype=np.int64)
    for f in range(F):
        for y in range(ny - K + 1):
            for x in range(nx - K + 1):
                for c in range(C):
                    for ky in range(K):
                        for kx in range(K):
                            reads[c, y + ky, x + kx] += 1
    return reads


def lcg_values(seed, count):
    s = seed & MASK64
    out = []
    for _ in range(count):
        s = (s * LCG_A + LCG_C) & MASK64
        out.append((s >> 40) / float(1 << 24))
    return out


def bank_cycles(lanes, bank_width, bank_count=32):
    """lanes: list of byte addresses (None = inactive)."""
    per_bank = {}
    for a in lanes:
        if a is None:
            continue
        per_bank.setdefault((a // bank_width) % bank_count, set()).add(a)
    return max((len(v) for v in per_bank.values()), default=0)


def segments(lanes, segment=128):
    """lanes: list of (addr, width) or None."""
    segs = set()
    for lane in lanes:
        if lane is None:
            continue
        a, w = lane
        segs.update(range(a // segment, (a + w - 1) // segment + 1))
    return len(segs)


def rel_err(got, ref):
    got = np.asarray(got, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    scale = np.maximum(np.abs(ref), 1e-30)
    return float(np.max(np.abs(got - ref) / scale)) if ref.size else 0.0
