"""Quantized DeltaGRU inference with a column-skipping accelerator performance model."""
from .engine import DeltaState, StepTrace, reset, run_sequence, step
from .fixedpoint import ACC_FMT, ACT_FMT, WGT_FMT, QFormat, dequantize, quantize
from .model import NetworkConfig, PackedModel, convert, load, save
from .perfmodel import HwConfig, estimate, op_count, simulate

__version__ = "0.1.0"
