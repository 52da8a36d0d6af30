"""Closed-form throughput estimate and a cycle-approximate K-PE simulator.

K processing elements consume one K-weight slice of a 3M-row column per
cycle, so a fired column costs ceil(3M/K) cycles and the element-wise
activation stage another ceil(3M/K) per layer. The delta scan is overlapped
with column fetch unless ``overlap_scan`` is off.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .engine import StepTrace
from .errors import ConfigMismatch, EmptyTrace
from .model import NetworkConfig


@dataclass(frozen=True)
class HwConfig:
    K: int = 8
    f_hz: float = 125e6
    bw_dram_bits: int = 64
    bw_w_bits: int = 8
    col_overhead_cycles: int = 0
    overlap_scan: bool = True

    def __post_init__(self):
        if self.K < 1 or self.f_hz <= 0:
            raise ConfigMismatch("K must be >= 1 and f_hz > 0")
        if self.col_overhead_cycles < 0:
            raise ConfigMismatch("col_overhead_cycles must be >= 0")

    @classmethod
    def from_bandwidth(cls, bw_dram_bits: int = 64, bw_w_bits: int = 8, **kw) -> "HwConfig":
        return cls(K=bw_dram_bits // bw_w_bits, bw_dram_bits=bw_dram_bits, bw_w_bits=bw_w_bits, **kw)

    @property
    def peak_ops(self) -> float:
        return 2.0 * self.K * self.f_hz


def op_count(L: int, N: int, M: int) -> int:
    """Dense operations per timestep (one multiply and one add per weight)."""
    return 2 * (3 * M * N + 3 * M * M * (L - 1) + 3 * M * M * L)


def estimate(L: int, N: int, M: int, gamma_dx: float, gamma_dh: float,
             hw: HwConfig = HwConfig()) -> tuple[float, float]:
    """Mean latency (s) and effective throughput (Op/s) for measured sparsities."""
    if not (0.0 <= gamma_dx <= 1.0 and 0.0 <= gamma_dh <= 1.0):
        raise ValueError("sparsities must lie in [0, 1]")
    x_work = (3 * M * N + 3 * M * M * (L - 1)) * (1.0 - gamma_dx)
    h_work = 3 * M * M * L * (1.0 - gamma_dh)
    cycles = (x_work + h_work + 3 * M) / hw.K
    latency = cycles / hw.f_hz
    return latency, op_count(L, N, M) / latency


@dataclass
class SparsityStats:
    gamma_dx: float
    gamma_dh: float
    layer_gamma_dx: list[float] = field(default_factory=list)
    layer_gamma_dh: list[float] = field(default_factory=list)


def _check_traces(traces: Sequence[StepTrace], cfg: NetworkConfig) -> None:
    for t, tr in enumerate(traces):
        if len(tr.layers) != cfg.L:
            raise ConfigMismatch(f"trace {t} has {len(tr.layers)} layers, config has {cfg.L}")
        for l, (nx, nh) in enumerate(zip(tr.nz_x, tr.nz_h)):
            if nx > cfg.input_size(l) or nh > cfg.M:
                raise ConfigMismatch(f"trace {t} layer {l} has more events than columns")


def _event_counts(traces: Sequence[StepTrace]) -> tuple[np.ndarray, np.ndarray]:
    nz_x = np.array([tr.nz_x for tr in traces], dtype=np.int64)
    nz_h = np.array([tr.nz_h for tr in traces], dtype=np.int64)
    return nz_x, nz_h


def measure_sparsity(traces: Sequence[StepTrace], cfg: NetworkConfig) -> SparsityStats:
    """Fraction of suppressed delta elements, pooled over timesteps and layers."""
    if len(traces) == 0:
        raise EmptyTrace("no traces to measure")
    _check_traces(traces, cfg)
    T = len(traces)
    nz_x, nz_h = _event_counts(traces)
    in_sizes = np.array([cfg.input_size(l) for l in range(cfg.L)])
    layer_dx = 1.0 - nz_x.sum(axis=0) / (T * in_sizes)
    layer_dh = 1.0 - nz_h.sum(axis=0) / (T * cfg.M)
    gamma_dx = 1.0 - nz_x.sum() / (T * in_sizes.sum())
    gamma_dh = 1.0 - nz_h.sum() / (T * cfg.M * cfg.L)
    return SparsityStats(float(gamma_dx), float(gamma_dh),
                         [float(g) for g in layer_dx], [float(g) for g in layer_dh])


@dataclass
class PerfReport:
    op_per_step: int
    cycles: list[int]
    latency_mean: float
    latency_min: float
    latency_max: float
    eff_throughput_mean: float
    eff_throughput_min: float
    eff_throughput_max: float
    est_latency: float
    est_throughput: float
    mac_efficiency: float
    sparsity: SparsityStats
    peak_ops: float

    @property
    def est_rel_error(self) -> float:
        """|simulated mean latency - estimate| / estimate."""
        return abs(self.latency_mean - self.est_latency) / self.est_latency

    def summary(self) -> dict:
        return {
            "steps": len(self.cycles),
            "op_per_step": self.op_per_step,
            "latency_us": {"mean": self.latency_mean * 1e6, "min": self.latency_min * 1e6,
                           "max": self.latency_max * 1e6},
            "eff_throughput_gops": {"mean": self.eff_throughput_mean / 1e9,
                                    "min": self.eff_throughput_min / 1e9,
                                    "max": self.eff_throughput_max / 1e9},
            "gamma_dx": self.sparsity.gamma_dx,
            "gamma_dh": self.sparsity.gamma_dh,
            "layer_gamma_dx": self.sparsity.layer_gamma_dx,
            "layer_gamma_dh": self.sparsity.layer_gamma_dh,
            "est_latency_us": self.est_latency * 1e6,
            "est_throughput_gops": self.est_throughput / 1e9,
            "est_rel_error": self.est_rel_error,
            "mac_efficiency": self.mac_efficiency,
            "peak_gops": self.peak_ops / 1e9,
        }


def step_cycles(traces: Sequence[StepTrace], cfg: NetworkConfig,
                hw: HwConfig = HwConfig()) -> np.ndarray:
    nz_x, nz_h = _event_counts(traces)
    slice_cycles = math.ceil(3 * cfg.M / hw.K)
    per_col = slice_cycles + hw.col_overhead_cycles
    cycles = (nz_x + nz_h).sum(axis=1) * per_col + cfg.L * slice_cycles
    if not hw.overlap_scan:
        cycles += sum(cfg.input_size(l) + cfg.M for l in range(cfg.L))
    return cycles


def simulate(traces: Sequence[StepTrace], cfg: NetworkConfig,
             hw: HwConfig = HwConfig()) -> PerfReport:
    stats = measure_sparsity(traces, cfg)
    cycles = step_cycles(traces, cfg, hw)
    latency = cycles / hw.f_hz
    ops = op_count(cfg.L, cfg.N, cfg.M)
    lat_mean = float(latency.mean())
    est_lat, est_thr = estimate(cfg.L, cfg.N, cfg.M, stats.gamma_dx, stats.gamma_dh, hw)
    eff_mean = ops / lat_mean
    return PerfReport(
        op_per_step=ops,
        cycles=[int(c) for c in cycles],
        latency_mean=lat_mean,
        latency_min=float(latency.min()),
        latency_max=float(latency.max()),
        eff_throughput_mean=eff_mean,
        eff_throughput_min=ops / float(latency.max()),
        eff_throughput_max=ops / float(latency.min()),
        est_latency=est_lat,
        est_throughput=est_thr,
        mac_efficiency=eff_mean / hw.peak_ops,
        sparsity=stats,
        peak_ops=hw.peak_ops,
    )


TRACE_COLUMNS = ("t", "cycles", "latency_us", "ops", "nz_x", "nz_h")


def write_trace_csv(path, report: PerfReport, traces: Sequence[StepTrace], f_hz: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for t, (cyc, tr) in enumerate(zip(report.cycles, traces)):
            w.writerow([t, cyc, f"{cyc / f_hz * 1e6:.6f}", report.op_per_step,
                        sum(tr.nz_x), sum(tr.nz_h)])


def write_summary_json(path, report: PerfReport, extra: dict | None = None) -> None:
    data = report.summary()
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


def hw_dict(hw: HwConfig) -> dict:
    return asdict(hw)
