"""Float GRU parameters, the quantizing converter and the packed weight image.

Packed layout per layer (all little-endian, column-major):

    input block   N columns, each 3M weights [W_ir[:, j]; W_iu[:, j]; W_ic[:, j]]
    hidden block  M columns, each 3M weights [W_hr[:, j]; W_hu[:, j]; W_hc[:, j]]
    bias column   3M int32 values [b_r; b_u; b_c] in the accumulator format

Layers follow each other with no padding. Byte offsets in burst descriptors
are relative to the start of this image; the ``.edrn`` file is a 64-byte
header followed by the image.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagic, CorruptLength, DimensionMismatch, FormatUnsupported,
                     MissingTensor, ModelError, VersionMismatch)
from .fixedpoint import ACT_FMT, WGT_FMT, QFormat, accumulator_format, quantize

WEIGHT_NAMES = ("W_ir", "W_iu", "W_ic", "W_hr", "W_hu", "W_hc")
BIAS_NAMES = ("b_r", "b_u", "b_c")
TENSOR_NAMES = WEIGHT_NAMES + BIAS_NAMES

MAGIC = b"EDRN"
VERSION = 1
HEADER_SIZE = 64
# magic, version, reserved, L, N, M, act bits/frac, wgt bits/frac, acc bits/frac, theta, image bytes
_HEADER = struct.Struct("<4sHHIIIBBBBBBHQ")


@dataclass
class GruLayerParamsF:
    """Float weights of one GRU layer: input matrices M x N, hidden M x M, biases M."""

    W_ir: np.ndarray
    W_iu: np.ndarray
    W_ic: np.ndarray
    W_hr: np.ndarray
    W_hu: np.ndarray
    W_hc: np.ndarray
    b_r: np.ndarray
    b_u: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        for name in TENSOR_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        M, N = self.W_ir.shape if self.W_ir.ndim == 2 else (-1, -1)
        for name in ("W_ir", "W_iu", "W_ic"):
            if getattr(self, name).shape != (M, N):
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {(M, N)}")
        for name in ("W_hr", "W_hu", "W_hc"):
            if getattr(self, name).shape != (M, M):
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {(M, M)}")
        for name in BIAS_NAMES:
            if getattr(self, name).shape != (M,):
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {(M,)}")

    @property
    def M(self) -> int:
        return self.W_ir.shape[0]

    @property
    def N(self) -> int:
        return self.W_ir.shape[1]

    @property
    def weight_count(self) -> int:
        return sum(getattr(self, n).size for n in WEIGHT_NAMES)


@dataclass(frozen=True)
class NetworkConfig:
    L: int
    N: int
    M: int
    theta_raw: int = 0x40
    act_fmt: QFormat = ACT_FMT
    wgt_fmt: QFormat = WGT_FMT

    def __post_init__(self):
        if self.L < 1 or self.N < 1 or self.M < 1:
            raise DimensionMismatch(f"L, N, M must be >= 1, got {self.L}, {self.N}, {self.M}")
        if self.theta_raw < 0:
            raise ValueError("theta_raw must be >= 0")
        if self.wgt_fmt.total_bits not in (8, 16):
            raise FormatUnsupported(f"weight width {self.wgt_fmt.total_bits} not supported (8 or 16)")
        if self.act_fmt.total_bits != 16:
            raise FormatUnsupported("activations must be 16-bit")

    @property
    def acc_fmt(self) -> QFormat:
        return accumulator_format(self.act_fmt, self.wgt_fmt)

    def input_size(self, layer: int) -> int:
        return self.N if layer == 0 else self.M

    @property
    def weight_count(self) -> int:
        return parameter_count(self.L, self.N, self.M)


def parameter_count(L: int, N: int, M: int) -> int:
    """Weights only: 3MN + 3M^2 for the first layer, 6M^2 for each further layer."""
    return 3 * M * N + 3 * M * M + (L - 1) * 6 * M * M


@dataclass(frozen=True, eq=False)
class QTensor:
    data: np.ndarray
    fmt: QFormat

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.int64)
        if data.size and (data.min() < self.fmt.raw_min or data.max() > self.fmt.raw_max):
            raise ValueError(f"raw values do not fit {self.fmt}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def to_bytes(self, column_major: bool = True) -> bytes:
        arr = self.data.T if (column_major and self.data.ndim == 2) else self.data
        return np.ascontiguousarray(arr).astype(self.fmt.dtype).tobytes()


@dataclass(frozen=True)
class BurstDescriptor:
    start_offset: int
    burst_len: int


@dataclass(frozen=True, eq=False)
class PackedLayer:
    """One layer of the packed image.

    ``input_block`` is (3M, N) and ``hidden_block`` is (3M, M), both in the
    weight format; ``bias`` is the appended (3M,) column in the accumulator
    format. In descriptor terms the hidden block is M + 1 columns wide.
    """

    input_block: QTensor
    hidden_block: QTensor
    bias: QTensor
    base: int = 0

    @property
    def M(self) -> int:
        return self.hidden_block.shape[1]

    @property
    def N(self) -> int:
        return self.input_block.shape[1]

    @property
    def col_stride_bytes(self) -> int:
        return 3 * self.M * self.input_block.fmt.nbytes

    @property
    def bias_bytes(self) -> int:
        return 3 * self.M * self.bias.fmt.nbytes

    @property
    def input_base(self) -> int:
        return self.base

    @property
    def hidden_base(self) -> int:
        return self.base + self.N * self.col_stride_bytes

    @property
    def nbytes(self) -> int:
        return (self.N + self.M) * self.col_stride_bytes + self.bias_bytes

    def to_bytes(self) -> bytes:
        return self.input_block.to_bytes() + self.hidden_block.to_bytes() + self.bias.to_bytes()


@dataclass(frozen=True, eq=False)
class PackedModel:
    config: NetworkConfig
    layers: tuple[PackedLayer, ...] = field(default_factory=tuple)
    version: int = VERSION

    def __post_init__(self):
        cfg = self.config
        if len(self.layers) != cfg.L:
            raise DimensionMismatch(f"{len(self.layers)} layers packed, config says {cfg.L}")
        for l, layer in enumerate(self.layers):
            if layer.M != cfg.M or layer.N != cfg.input_size(l):
                raise DimensionMismatch(f"layer {l} is {layer.N}->{layer.M}, "
                                        f"expected {cfg.input_size(l)}->{cfg.M}")

    @property
    def manifest(self) -> dict:
        cfg = self.config
        return {"magic": MAGIC.decode(), "version": self.version, "L": cfg.L, "N": cfg.N,
                "M": cfg.M, "act_fmt": str(cfg.act_fmt), "wgt_fmt": str(cfg.wgt_fmt),
                "acc_fmt": str(cfg.acc_fmt), "theta_raw": cfg.theta_raw}

    @property
    def image_bytes(self) -> int:
        return sum(layer.nbytes for layer in self.layers)

    def image(self) -> bytes:
        return b"".join(layer.to_bytes() for layer in self.layers)

    def header(self) -> bytes:
        cfg = self.config
        raw = _HEADER.pack(MAGIC, self.version, 0, cfg.L, cfg.N, cfg.M,
                           cfg.act_fmt.total_bits, cfg.act_fmt.frac_bits,
                           cfg.wgt_fmt.total_bits, cfg.wgt_fmt.frac_bits,
                           cfg.acc_fmt.total_bits, cfg.acc_fmt.frac_bits,
                           cfg.theta_raw, self.image_bytes)
        return raw.ljust(HEADER_SIZE, b"\0")

    def to_bytes(self) -> bytes:
        return self.header() + self.image()

    def __eq__(self, other):
        if not isinstance(other, PackedModel):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    __hash__ = None

    def with_theta(self, theta_raw: int) -> "PackedModel":
        cfg = NetworkConfig(self.config.L, self.config.N, self.config.M, theta_raw,
                            self.config.act_fmt, self.config.wgt_fmt)
        return PackedModel(cfg, self.layers, self.version)


def _pack_layer(p: GruLayerParamsF, cfg: NetworkConfig, base: int) -> PackedLayer:
    wq = lambda name: quantize(getattr(p, name), cfg.wgt_fmt)
    input_block = np.vstack([wq("W_ir"), wq("W_iu"), wq("W_ic")])
    hidden_block = np.vstack([wq("W_hr"), wq("W_hu"), wq("W_hc")])
    bias = quantize(np.concatenate([p.b_r, p.b_u, p.b_c]), cfg.acc_fmt)
    return PackedLayer(QTensor(input_block, cfg.wgt_fmt), QTensor(hidden_block, cfg.wgt_fmt),
                       QTensor(bias, cfg.acc_fmt), base)


def convert(params: list[GruLayerParamsF], cfg: NetworkConfig) -> PackedModel:
    """Quantize float layers into the packed column-major image."""
    if len(params) != cfg.L:
        raise DimensionMismatch(f"got {len(params)} layers, config says {cfg.L}")
    layers = []
    base = 0
    for l, p in enumerate(params):
        if p.M != cfg.M:
            raise DimensionMismatch(f"layer {l} has hidden size {p.M}; all layers must use M={cfg.M}")
        if p.N != cfg.input_size(l):
            raise DimensionMismatch(f"layer {l} has input size {p.N}, expected {cfg.input_size(l)}")
        layer = _pack_layer(p, cfg, base)
        base += layer.nbytes
        layers.append(layer)
    return PackedModel(cfg, tuple(layers))


def unpack_layer(layer: PackedLayer) -> dict[str, np.ndarray]:
    """Walk the layout backwards into the six weight matrices and three biases (raw)."""
    M = layer.M
    out = {}
    for g, name in enumerate(("W_ir", "W_iu", "W_ic")):
        out[name] = layer.input_block.data[g * M:(g + 1) * M]
    for g, name in enumerate(("W_hr", "W_hu", "W_hc")):
        out[name] = layer.hidden_block.data[g * M:(g + 1) * M]
    for g, name in enumerate(BIAS_NAMES):
        out[name] = layer.bias.data[g * M:(g + 1) * M]
    return out


def column_descriptor(layer: PackedLayer, source: str, j: int) -> BurstDescriptor:
    """Start address and burst length of one column; hidden column M is the bias."""
    stride = layer.col_stride_bytes
    if source == "input":
        if not 0 <= j < layer.N:
            raise IndexError(f"input column {j} out of range [0, {layer.N})")
        return BurstDescriptor(layer.input_base + j * stride, stride)
    if source == "hidden":
        if not 0 <= j <= layer.M:
            raise IndexError(f"hidden column {j} out of range [0, {layer.M}]")
        if j == layer.M:
            return BurstDescriptor(layer.hidden_base + j * stride, layer.bias_bytes)
        return BurstDescriptor(layer.hidden_base + j * stride, stride)
    raise ValueError(f"source must be 'input' or 'hidden', got {source!r}")


def save(model: PackedModel, path) -> None:
    Path(path).write_bytes(model.to_bytes())


def from_bytes(buf: bytes) -> PackedModel:
    if len(buf) < HEADER_SIZE:
        raise CorruptLength(f"file is {len(buf)} bytes, shorter than the {HEADER_SIZE}-byte header")
    (magic, version, _, L, N, M, ab, af, wb, wf, accb, accf,
     theta, image_bytes) = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {VERSION}")
    try:
        cfg = NetworkConfig(L, N, M, theta, QFormat(ab, af), QFormat(wb, wf))
    except (DimensionMismatch, FormatUnsupported, ValueError) as exc:
        raise ModelError(f"invalid header: {exc}") from exc
    if (cfg.acc_fmt.total_bits, cfg.acc_fmt.frac_bits) != (accb, accf):
        raise ModelError("accumulator format in header disagrees with act/wgt formats")
    expected = sum(
        (cfg.input_size(l) + M) * 3 * M * cfg.wgt_fmt.nbytes + 3 * M * cfg.acc_fmt.nbytes
        for l in range(L))
    if image_bytes != expected or len(buf) != HEADER_SIZE + expected:
        raise CorruptLength(f"expected {HEADER_SIZE + expected} bytes, file has {len(buf)}")

    pos, layers = HEADER_SIZE, []
    wdt, adt = cfg.wgt_fmt.dtype, cfg.acc_fmt.dtype
    for l in range(L):
        n_in = cfg.input_size(l)
        base = pos - HEADER_SIZE
        blocks = []
        for ncols in (n_in, M):
            count = ncols * 3 * M
            cols = np.frombuffer(buf, dtype=wdt, count=count, offset=pos).reshape(ncols, 3 * M)
            blocks.append(QTensor(cols.T, cfg.wgt_fmt))
            pos += count * wdt.itemsize
        bias = np.frombuffer(buf, dtype=adt, count=3 * M, offset=pos)
        pos += 3 * M * adt.itemsize
        layers.append(PackedLayer(blocks[0], blocks[1], QTensor(bias, cfg.acc_fmt), base))
    return PackedModel(cfg, tuple(layers), version)


def load(path) -> PackedModel:
    return from_bytes(Path(path).read_bytes())


# Float model interchange: a directory holding manifest.json and float32 blobs.

def save_float_model(params: list[GruLayerParamsF], directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    layers = []
    for l, p in enumerate(params):
        entry = {}
        for name in TENSOR_NAMES:
            fname = f"l{l}_{name}.bin"
            np.ascontiguousarray(getattr(p, name), dtype="<f4").tofile(d / fname)
            entry[name] = fname
        layers.append(entry)
    manifest = {"L": len(params), "N": params[0].N, "M": params[0].M, "layers": layers}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return d


def load_float_model(directory) -> tuple[list[GruLayerParamsF], int, int, int]:
    """Read a float model directory; returns (layers, L, N, M)."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
        L, N, M = int(manifest["L"]), int(manifest["N"]), int(manifest["M"])
        entries = manifest["layers"]
    except FileNotFoundError as exc:
        raise ModelError(f"no manifest.json in {d}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed manifest in {d}: {exc}") from exc
    if len(entries) != L:
        raise DimensionMismatch(f"manifest lists {len(entries)} layers but L={L}")

    params = []
    for l, entry in enumerate(entries):
        n_in = N if l == 0 else M
        shapes = {"W_ir": (M, n_in), "W_iu": (M, n_in), "W_ic": (M, n_in),
                  "W_hr": (M, M), "W_hu": (M, M), "W_hc": (M, M),
                  "b_r": (M,), "b_u": (M,), "b_c": (M,)}
        tensors = {}
        for name, shape in shapes.items():
            if name not in entry:
                raise MissingTensor(f"layer {l}: tensor {name} not listed in manifest")
            path = d / entry[name]
            if not path.is_file():
                raise MissingTensor(f"layer {l}: tensor {name} file {path.name} not found")
            blob = np.fromfile(path, dtype="<f4")
            if blob.size != int(np.prod(shape)):
                raise DimensionMismatch(f"layer {l}: tensor {name} has {blob.size} values, "
                                        f"expected {int(np.prod(shape))}")
            tensors[name] = blob.reshape(shape).astype(np.float64)
        params.append(GruLayerParamsF(**tensors))
    return params, L, N, M


def random_float_model(L: int, N: int, M: int, seed: int = 0, scale: float | None = None,
                       gain: float = 4.0) -> list[GruLayerParamsF]:
    """Uniform(-a, a) weights and biases, a = min(gain/sqrt(M), 1) unless ``scale`` is given.

    The default gain keeps hidden units active enough that their delta sparsity
    resembles a trained speech model (roughly 0.9 at a 0.25 threshold).
    """
    rng = np.random.default_rng(seed)
    a = scale if scale is not None else min(gain / np.sqrt(M), 1.0)
    layers = []
    for l in range(L):
        n_in = N if l == 0 else M
        u = lambda *shape: rng.uniform(-a, a, size=shape)
        layers.append(GruLayerParamsF(
            W_ir=u(M, n_in), W_iu=u(M, n_in), W_ic=u(M, n_in),
            W_hr=u(M, M), W_hu=u(M, M), W_hc=u(M, M),
            b_r=u(M), b_u=u(M), b_c=u(M)))
    return layers
