"""Independent reference evaluators used by the tests.

None of these call into deltagru.engine. The quantized evaluators take
weights straight from the float parameters (not the packed image) and do
their rounding with scalar Python integers.
"""
from __future__ import annotations

import numpy as np

from deltagru.fixedpoint import quantize, get_lut


def rne_div_pow2(a: int, s: int) -> int:
    """a / 2**s rounded half to even, via divmod."""
    if s <= 0:
        return a * (1 << -s)
    q, r = divmod(a, 1 << s)
    twice = 2 * r
    if twice > (1 << s) or (twice == (1 << s) and q % 2 == 1):
        q += 1
    return q


def clamp(a: int, bits: int) -> int:
    return max(-(1 << (bits - 1)), min((1 << (bits - 1)) - 1, a))


def lut_index(v: int) -> int:
    """Q8.8 value clipped to [-8, 8) mapped onto 1024 bins of 4 raw steps."""
    v = max(-2048, min(2047, v))
    return (v + 2048) // 4


class QuantLayer:
    def __init__(self, p, wgt_fmt, acc_fmt):
        self.W = {n: quantize(getattr(p, n), wgt_fmt) for n in
                  ("W_ir", "W_iu", "W_ic", "W_hr", "W_hu", "W_hc")}
        self.b = {n: quantize(getattr(p, n), acc_fmt) for n in ("b_r", "b_u", "b_c")}
        self.M, self.N = p.M, p.N


def activation_scalar(mr, mu, mcx, mch, h_prev, sig, tanh):
    """Quantized gate stage for Q8.8 activations and Q17.15 memories, element by element."""
    out = np.empty(len(mr), dtype=np.int64)
    for i in range(len(mr)):
        r = int(sig[lut_index(clamp(rne_div_pow2(int(mr[i]), 7), 16))])
        u = int(sig[lut_index(clamp(rne_div_pow2(int(mu[i]), 7), 16))])
        ch = clamp(rne_div_pow2(int(mch[i]), 7), 16)
        pre = clamp(int(mcx[i]) + rne_div_pow2(r * ch, 1), 32)
        c = int(tanh[lut_index(clamp(rne_div_pow2(pre, 7), 16))])
        h = rne_div_pow2((256 - u) * c + u * int(h_prev[i]), 8)
        out[i] = clamp(h, 16)
    return out


class DenseQuantGru:
    """Dense quantized GRU: full matrix-vector products every step, no deltas."""

    def __init__(self, params, cfg):
        assert (cfg.act_fmt.total_bits, cfg.act_fmt.frac_bits) == (16, 8)
        assert cfg.acc_fmt.frac_bits == 15
        self.layers = [QuantLayer(p, cfg.wgt_fmt, cfg.acc_fmt) for p in params]
        self.h = [np.zeros(p.M, dtype=np.int64) for p in params]
        self.sig = get_lut("sigmoid").entries
        self.tanh = get_lut("tanh").entries

    def step(self, x):
        inp = np.asarray(x, dtype=np.int64)
        for l, q in enumerate(self.layers):
            W, b, h = q.W, q.b, self.h[l]
            mr = b["b_r"] + W["W_ir"] @ inp + W["W_hr"] @ h
            mu = b["b_u"] + W["W_iu"] @ inp + W["W_hu"] @ h
            mcx = b["b_c"] + W["W_ic"] @ inp
            mch = W["W_hc"] @ h
            self.h[l] = activation_scalar(mr, mu, mcx, mch, h, self.sig, self.tanh)
            inp = self.h[l]
        return inp.copy()


class SparsifiedDeltaGru:
    """Delta evaluation with explicit zeroing and a full product on the sparse delta vector."""

    def __init__(self, params, cfg, theta_raw):
        self.layers = [QuantLayer(p, cfg.wgt_fmt, cfg.acc_fmt) for p in params]
        self.theta = theta_raw
        self.sig = get_lut("sigmoid").entries
        self.tanh = get_lut("tanh").entries
        self.state = []
        for q in self.layers:
            self.state.append(dict(
                mr=q.b["b_r"].copy(), mu=q.b["b_u"].copy(), mcx=q.b["b_c"].copy(),
                mch=np.zeros(q.M, dtype=np.int64), xref=np.zeros(q.N, dtype=np.int64),
                href=np.zeros(q.M, dtype=np.int64), h=np.zeros(q.M, dtype=np.int64)))

    def step(self, x):
        inp = np.asarray(x, dtype=np.int64)
        for q, s in zip(self.layers, self.state):
            dx = inp - s["xref"]
            dx[np.abs(dx) < self.theta] = 0
            s["xref"] = s["xref"] + dx
            dh = s["h"] - s["href"]
            dh[np.abs(dh) < self.theta] = 0
            s["href"] = s["href"] + dh
            W = q.W
            s["mr"] = s["mr"] + W["W_ir"] @ dx + W["W_hr"] @ dh
            s["mu"] = s["mu"] + W["W_iu"] @ dx + W["W_hu"] @ dh
            s["mcx"] = s["mcx"] + W["W_ic"] @ dx
            s["mch"] = s["mch"] + W["W_hc"] @ dh
            s["h"] = activation_scalar(s["mr"], s["mu"], s["mcx"], s["mch"], s["h"],
                                       self.sig, self.tanh)
            inp = s["h"]
        return inp.copy()


def brute_pack_columns(p, wgt_fmt) -> bytes:
    """Packed bytes of one layer built element by element (int8/int16 weights, int32 bias)."""
    import struct
    wcode = {1: "b", 2: "h"}[wgt_fmt.nbytes]
    buf = bytearray()
    for names in (("W_ir", "W_iu", "W_ic"), ("W_hr", "W_hu", "W_hc")):
        ncols = getattr(p, names[0]).shape[1]
        for j in range(ncols):
            for n in names:
                for i in range(p.M):
                    buf += struct.pack("<" + wcode, quantize(float(getattr(p, n)[i, j]), wgt_fmt))
    return bytes(buf)


def collapse_brute(path, blank):
    """CTC collapse by grouping runs explicitly."""
    out = []
    i = 0
    while i < len(path):
        j = i
        while j + 1 < len(path) and path[j + 1] == path[i]:
            j += 1
        if path[i] != blank:
            out.append(int(path[i]))
        i = j + 1
    return out


def argmax_low(row):
    best = 0
    for k in range(1, len(row)):
        if row[k] > row[best]:
            best = k
    return best


def levenshtein_recursive(a, b):
    """Memoised recursion over suffixes; independent of the row-based DP."""
    from functools import lru_cache
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return d(i + 1, j + 1)
        return 1 + min(d(i + 1, j), d(i, j + 1), d(i + 1, j + 1))

    return d(0, 0)
