"""Double-precision GRU and DeltaGRU, used as oracles for the quantized engine."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .model import GruLayerParamsF


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def _check(params: GruLayerParamsF, x, h):
    if x.shape != (params.N,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({params.N},)")
    if h.shape != (params.M,):
        raise DimensionMismatch(f"h has shape {h.shape}, expected ({params.M},)")


def gru_step_f(params: GruLayerParamsF, x, h_prev) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check(params, x, h_prev)
    p = params
    r = sigmoid(p.W_ir @ x + p.W_hr @ h_prev + p.b_r)
    u = sigmoid(p.W_iu @ x + p.W_hu @ h_prev + p.b_u)
    c = np.tanh(p.W_ic @ x + r * (p.W_hc @ h_prev) + p.b_c)
    return (1.0 - u) * c + u * h_prev


@dataclass
class FloatState:
    """Per-layer DeltaGRU state.

    The c-gate memory is split: ``m_cx`` holds bias plus input contributions,
    ``m_ch`` the hidden contribution that the reset gate scales.
    """

    h_prev: np.ndarray
    x_ref: np.ndarray
    h_ref: np.ndarray
    m_r: np.ndarray
    m_u: np.ndarray
    m_cx: np.ndarray
    m_ch: np.ndarray

    @classmethod
    def initial(cls, params: GruLayerParamsF) -> "FloatState":
        M, N = params.M, params.N
        return cls(h_prev=np.zeros(M), x_ref=np.zeros(N), h_ref=np.zeros(M),
                   m_r=params.b_r.copy(), m_u=params.b_u.copy(),
                   m_cx=params.b_c.copy(), m_ch=np.zeros(M))


def deltagru_step_f(params: GruLayerParamsF, x, state: FloatState, theta: float) -> np.ndarray:
    """Advance one layer by a timestep, mutating ``state``; returns h_t."""
    x = np.asarray(x, dtype=np.float64)
    _check(params, x, state.h_prev)
    p = params

    dx = x - state.x_ref
    fire_x = (np.abs(dx) >= theta) & (dx != 0)
    dx = np.where(fire_x, dx, 0.0)
    state.x_ref = np.where(fire_x, x, state.x_ref)

    dh = state.h_prev - state.h_ref
    fire_h = (np.abs(dh) >= theta) & (dh != 0)
    dh = np.where(fire_h, dh, 0.0)
    state.h_ref = np.where(fire_h, state.h_prev, state.h_ref)

    state.m_r = state.m_r + p.W_ir @ dx + p.W_hr @ dh
    state.m_u = state.m_u + p.W_iu @ dx + p.W_hu @ dh
    state.m_cx = state.m_cx + p.W_ic @ dx
    state.m_ch = state.m_ch + p.W_hc @ dh

    r = sigmoid(state.m_r)
    u = sigmoid(state.m_u)
    c = np.tanh(state.m_cx + r * state.m_ch)
    h = (1.0 - u) * c + u * state.h_prev
    state.h_prev = h
    return h


def gru_sequence_f(layers: list[GruLayerParamsF], xs) -> np.ndarray:
    """Stacked float GRU over a (T, N) sequence; returns (T, M) last-layer outputs."""
    hs = [np.zeros(p.M) for p in layers]
    out = []
    for x in np.asarray(xs, dtype=np.float64):
        inp = x
        for l, p in enumerate(layers):
            hs[l] = gru_step_f(p, inp, hs[l])
            inp = hs[l]
        out.append(inp)
    return np.array(out).reshape(len(out), layers[-1].M)


def deltagru_sequence_f(layers: list[GruLayerParamsF], xs, theta: float) -> np.ndarray:
    states = [FloatState.initial(p) for p in layers]
    out = []
    for x in np.asarray(xs, dtype=np.float64):
        inp = x
        for p, s in zip(layers, states):
            inp = deltagru_step_f(p, inp, s, theta)
        out.append(inp)
    return np.array(out).reshape(len(out), layers[-1].M)
