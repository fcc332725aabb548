"""Reference arithmetic used to check the simulator.

Nothing in here imports from the engine, accumulator or sub-array modules;
keep it that way so a bug in the bit-serial path cannot hide in both places.
"""

import numpy as np

from .exceptions import DomainError, StructuralError


def _ints(x):
    values = getattr(x, "values", x)
    return np.asarray(values)


def popcount_oracle(v) -> int:
    count = 0
    for bit in v:
        if bit:
            count += 1
    return count


def conv_int_oracle(I, W, layer=None, *, stride=None, padding=None):
    """Plain multiply-accumulate convolution on integer tensors.

    ``I`` is ``(C_in, H, W)`` (a 1-D vector is treated as ``(L, 1, 1)``) and
    ``W`` is ``(C_out, C_in, kh, kw)`` (a 1-D vector is a single 1x1 filter).
    Stride and zero-padding come from ``layer`` unless given explicitly.
    """
    img = _ints(I)
    ker = _ints(W)
    if stride is None:
        stride = getattr(layer, "stride", 1)
    if padding is None:
        padding = getattr(layer, "padding", 0)
    vector_case = img.ndim == 1 and ker.ndim == 1
    if img.ndim == 1:
        img = img.reshape(-1, 1, 1)
    if ker.ndim == 1:
        ker = ker.reshape(1, -1, 1, 1)
    if img.ndim != 3 or ker.ndim != 4:
        raise StructuralError("expected I as (C,H,W) and W as (O,C,kh,kw)")
    c_in, h, w = img.shape
    c_out, kc, kh, kw = ker.shape
    if kc != c_in:
        raise StructuralError(f"kernel expects {kc} input channels, input has {c_in}")

    dtype = object if max(int(img.max(initial=0)), int(ker.max(initial=0))) >= 1 << 24 else np.int64
    padded = np.zeros((c_in, h + 2 * padding, w + 2 * padding), dtype=dtype)
    padded[:, padding:padding + h, padding:padding + w] = img
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise StructuralError("kernel larger than padded input")
    out = np.zeros((c_out, out_h, out_w), dtype=dtype)
    kern = ker.astype(dtype)
    for o in range(c_out):
        for y in range(out_h):
            for x in range(out_w):
                acc = 0
                for c in range(c_in):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += padded[c, y * stride + dy, x * stride + dx] * kern[o, c, dy, dx]
                out[o, y, x] = acc
    if vector_case:
        return int(out[0, 0, 0])
    return out


def eq1_scalar_oracle(I, W, m_bits: int, n_bits: int) -> int:
    """Dot product evaluated literally as a weighted sum of AND-popcounts over bit planes."""
    xs = [int(v) for v in np.asarray(_ints(I)).reshape(-1)]
    ws = [int(v) for v in np.asarray(_ints(W)).reshape(-1)]
    if len(xs) != len(ws):
        raise StructuralError("I and W must have the same number of elements")
    for name, vals, bits in (("I", xs, m_bits), ("W", ws, n_bits)):
        for v in vals:
            if v < 0 or v >= 1 << bits:
                raise DomainError(f"{name} value {v} does not fit in {bits} bits")
    total = 0
    for m in range(m_bits):
        c_m = [(v >> m) & 1 for v in xs]
        for n in range(n_bits):
            c_n = [(v >> n) & 1 for v in ws]
            anded = [a & b for a, b in zip(c_n, c_m)]
            total += (1 << (m + n)) * popcount_oracle(anded)
    return total
