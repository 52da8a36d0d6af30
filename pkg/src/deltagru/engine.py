"""Bit-exact functional model of the delta-threshold GRU datapath.

Per layer and timestep the delta unit compares the layer input against its
reference vector, then the previous output against its own reference. Each
element whose change is non-zero and at least ``theta`` becomes a column
event: the reference takes the new value and the matching weight column,
scaled by the delta, is added to the gate memories. Everything else is
skipped. The activation stage then runs the gates through the LUTs.

Overflow: a memory always equals bias + W @ (current references), so every
partial sum is bounded by ``|b| + sum|W_in|*max|x| + sum|W_h|*max|h|`` row by
row, with ``|h| <= 1.0``. :func:`accumulator_bound` evaluates it; while it
stays below 2**31 no MAC can saturate and column order cannot change the
result. For 8-bit weights and N, M <= 1024 this holds for any input with
``|x| < 63``.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .fixedpoint import get_lut, requantize, round_shift, saturate
from .model import PackedLayer, PackedModel


@dataclass(frozen=True)
class ColumnEvent:
    layer: int
    source: str  # "input" | "hidden"
    col: int
    delta_raw: int


@dataclass
class LayerEvents:
    cols_x: np.ndarray
    delta_x: np.ndarray
    cols_h: np.ndarray
    delta_h: np.ndarray


@dataclass
class StepTrace:
    """Column events of one timestep, stored as index/delta arrays per layer."""

    layers: list[LayerEvents]
    h_out: np.ndarray

    @property
    def nz_x(self) -> list[int]:
        return [len(ev.cols_x) for ev in self.layers]

    @property
    def nz_h(self) -> list[int]:
        return [len(ev.cols_h) for ev in self.layers]

    @property
    def events(self) -> list[ColumnEvent]:
        out = []
        for l, ev in enumerate(self.layers):
            out += [ColumnEvent(l, "input", int(c), int(d)) for c, d in zip(ev.cols_x, ev.delta_x)]
            out += [ColumnEvent(l, "hidden", int(c), int(d)) for c, d in zip(ev.cols_h, ev.delta_h)]
        return out


@dataclass
class LayerState:
    m_r: np.ndarray
    m_u: np.ndarray
    m_cx: np.ndarray
    m_ch: np.ndarray
    x_ref: np.ndarray
    h_ref: np.ndarray
    h_prev: np.ndarray

    def copy(self) -> "LayerState":
        return LayerState(*(getattr(self, f).copy() for f in self.__dataclass_fields__))

    def equals(self, other: "LayerState") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in self.__dataclass_fields__)


@dataclass
class DeltaState:
    layers: list[LayerState] = field(default_factory=list)

    def copy(self) -> "DeltaState":
        return DeltaState([s.copy() for s in self.layers])

    def equals(self, other: "DeltaState") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.equals(b) for a, b in zip(self.layers, other.layers))


# Float64 copies of the weight blocks. Products and partial sums stay far
# below 2**53, so BLAS matmul on these is exact integer arithmetic.
_kernels: "weakref.WeakKeyDictionary[PackedLayer, tuple[np.ndarray, np.ndarray]]" = \
    weakref.WeakKeyDictionary()


def _kernel(layer: PackedLayer) -> tuple[np.ndarray, np.ndarray]:
    k = _kernels.get(layer)
    if k is None:
        k = (layer.input_block.data.astype(np.float64),
             layer.hidden_block.data.astype(np.float64))
        _kernels[layer] = k
    return k


def reset(model: PackedModel) -> DeltaState:
    cfg = model.config
    M = cfg.M
    layers = []
    for l, layer in enumerate(model.layers):
        b = layer.bias.data
        layers.append(LayerState(
            m_r=b[:M].copy(), m_u=b[M:2 * M].copy(), m_cx=b[2 * M:].copy(),
            m_ch=np.zeros(M, dtype=np.int64),
            x_ref=np.zeros(cfg.input_size(l), dtype=np.int64),
            h_ref=np.zeros(M, dtype=np.int64),
            h_prev=np.zeros(M, dtype=np.int64)))
    return DeltaState(layers)


def delta_scan(values: np.ndarray, ref: np.ndarray, theta_raw: int) -> tuple[np.ndarray, np.ndarray]:
    """Columns whose delta fires, and those deltas; updates ``ref`` in place."""
    d = values - ref
    cols = np.flatnonzero((d != 0) & (np.abs(d) >= theta_raw))
    ref[cols] = values[cols]
    return cols, d[cols]


def accumulate_columns(block: np.ndarray, cols: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Sum of ``block[:, j] * delta_j`` over the fired columns, as exact int64."""
    if len(cols) == 0:
        return np.zeros(block.shape[0], dtype=np.int64)
    return (block[:, cols] @ deltas.astype(np.float64)).astype(np.int64)


def activate(st: LayerState, act_fmt, acc_fmt) -> np.ndarray:
    """Gate nonlinearities and state update; returns h_t in the activation format."""
    af, accf = act_fmt.frac_bits, acc_fmt.frac_bits
    sig, tanh = get_lut("sigmoid", act_fmt), get_lut("tanh", act_fmt)
    r = sig.lookup(requantize(st.m_r, accf, act_fmt))
    u = sig.lookup(requantize(st.m_u, accf, act_fmt))
    # 16-bit multiplier: M_ch is narrowed before the reset-gate product
    ch = requantize(st.m_ch, accf, act_fmt)
    pre_c = saturate(st.m_cx + round_shift(r * ch, 2 * af - accf), acc_fmt.total_bits)
    c = tanh.lookup(requantize(pre_c, accf, act_fmt))
    one = 1 << af
    h = round_shift((one - u) * c + u * st.h_prev, af)
    return saturate(h, act_fmt.total_bits)


def step(model: PackedModel, state: DeltaState, x, theta_raw: int | None = None) -> StepTrace:
    """Advance every layer by one timestep; ``x`` is a raw activation-format vector."""
    cfg = model.config
    theta = cfg.theta_raw if theta_raw is None else int(theta_raw)
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (cfg.N,):
        raise DimensionMismatch(f"input has shape {x.shape}, model expects ({cfg.N},)")
    if len(state.layers) != cfg.L:
        raise DimensionMismatch(f"state has {len(state.layers)} layers, model has {cfg.L}")

    M, bits = cfg.M, cfg.acc_fmt.total_bits
    inp, events = x, []
    for layer, st in zip(model.layers, state.layers):
        w_in, w_h = _kernel(layer)
        cols_x, dx = delta_scan(inp, st.x_ref, theta)
        cols_h, dh = delta_scan(st.h_prev, st.h_ref, theta)
        acc_x = accumulate_columns(w_in, cols_x, dx)
        acc_h = accumulate_columns(w_h, cols_h, dh)
        st.m_r = saturate(st.m_r + acc_x[:M] + acc_h[:M], bits)
        st.m_u = saturate(st.m_u + acc_x[M:2 * M] + acc_h[M:2 * M], bits)
        st.m_cx = saturate(st.m_cx + acc_x[2 * M:], bits)
        st.m_ch = saturate(st.m_ch + acc_h[2 * M:], bits)
        st.h_prev = activate(st, cfg.act_fmt, cfg.acc_fmt)
        events.append(LayerEvents(cols_x, dx, cols_h, dh))
        inp = st.h_prev
    return StepTrace(events, inp.copy())


def run_sequence(model: PackedModel, features, theta_raw: int | None = None,
                 state: DeltaState | None = None) -> tuple[np.ndarray, list[StepTrace]]:
    """Run a (T, N) raw feature sequence from reset; returns (T, M) outputs and traces."""
    cfg = model.config
    features = np.asarray(features, dtype=np.int64)
    if features.size == 0:
        return np.zeros((0, cfg.M), dtype=np.int64), []
    if features.ndim != 2 or features.shape[1] != cfg.N:
        raise DimensionMismatch(f"features have shape {features.shape}, model expects (T, {cfg.N})")
    state = reset(model) if state is None else state
    traces = [step(model, state, x, theta_raw) for x in features]
    return np.stack([t.h_out for t in traces]), traces


def accumulator_bound(model: PackedModel, x_absmax_raw: int) -> int:
    """Worst-case magnitude any gate memory or partial sum can reach."""
    cfg = model.config
    h_max = 1 << cfg.act_fmt.frac_bits
    worst = 0
    for l, layer in enumerate(model.layers):
        in_max = x_absmax_raw if l == 0 else h_max
        rows = (np.abs(layer.bias.data)
                + np.abs(layer.input_block.data).sum(axis=1) * in_max
                + np.abs(layer.hidden_block.data).sum(axis=1) * h_max)
        worst = max(worst, int(rows.max()))
    return worst
