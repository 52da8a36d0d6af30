"""Feature sequence files and synthetic workloads.

FEAT binary: ``b"FEAT"``, uint32 T, uint32 N, then T*N little-endian int16
raw Q8.8 values, row-major by timestep. CSV: one timestep per line, comma
separated floats, quantized on load.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .fixedpoint import ACT_FMT, QFormat, quantize

FEAT_MAGIC = b"FEAT"
_FEAT_HEADER = struct.Struct("<4sII")


def save_feat(raw: np.ndarray, path) -> None:
    raw = np.asarray(raw, dtype=np.int64)
    if raw.ndim != 2:
        raise DataError("feature array must be 2-D (T, N)")
    if raw.size and (raw.min() < -32768 or raw.max() > 32767):
        raise DataError("raw features do not fit int16")
    T, N = raw.shape
    Path(path).write_bytes(_FEAT_HEADER.pack(FEAT_MAGIC, T, N) + raw.astype("<i2").tobytes())


def load_feat(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _FEAT_HEADER.size:
        raise DataError(f"{path}: too short for a FEAT header")
    magic, T, N = _FEAT_HEADER.unpack_from(buf)
    if magic != FEAT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if len(buf) != _FEAT_HEADER.size + 2 * T * N:
        raise DataError(f"{path}: expected {T}x{N} values, file length is {len(buf)} bytes")
    data = np.frombuffer(buf, dtype="<i2", offset=_FEAT_HEADER.size)
    return data.reshape(T, N).astype(np.int64)


def load_csv(path, fmt: QFormat = ACT_FMT) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        return np.zeros((0, 0), dtype=np.int64)
    if len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: rows have differing lengths")
    return quantize(np.array(rows), fmt)


def load_features(path, fmt: QFormat = ACT_FMT) -> np.ndarray:
    """Load raw features from a FEAT file or, by extension ``.csv``, a float CSV."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    if p.suffix.lower() == ".csv":
        return load_csv(p, fmt)
    return load_feat(p)


def synthetic_features(T: int, N: int, seed: int = 0, profile: str = "bandlimited",
                       amplitude: float = 2.0) -> np.ndarray:
    """Float (T, N) workload.

    ``iid`` draws each value independently from U(-amplitude, amplitude).
    ``bandlimited`` sums a few slow sinusoids per channel plus low-pass noise,
    so consecutive frames differ by much less than the signal range, loosely
    like filterbank features of speech with pauses.
    """
    rng = np.random.default_rng(seed)
    if profile == "iid":
        return rng.uniform(-amplitude, amplitude, size=(T, N))
    if profile != "bandlimited":
        raise ValueError(f"unknown profile {profile!r}")
    t = np.arange(T)[:, None]
    x = np.zeros((T, N))
    for _ in range(3):
        freq = rng.uniform(0.002, 0.02, size=N)
        phase = rng.uniform(0, 2 * np.pi, size=N)
        x += rng.uniform(0.2, 0.5, size=N) * np.sin(2 * np.pi * freq * t + phase)
    noise = rng.normal(0.0, 1.0, size=(T, N))
    alpha = 0.2
    smooth = np.empty_like(noise)
    acc = np.zeros(N)
    for i in range(T):
        acc = (1 - alpha) * acc + alpha * noise[i]
        smooth[i] = acc
    x += 1.5 * smooth
    # on/off envelope: quiet stretches where features barely move
    envelope = 0.5 + 0.5 * np.tanh(3 * np.sin(2 * np.pi * t / max(T / 3.0, 50.0) + rng.uniform(0, 6)))
    return amplitude / 1.5 * x * envelope


def synthetic_raw(T: int, N: int, seed: int = 0, profile: str = "bandlimited",
                  fmt: QFormat = ACT_FMT) -> np.ndarray:
    return quantize(synthetic_features(T, N, seed, profile), fmt)
