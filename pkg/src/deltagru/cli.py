"""Command-line entry point: ``deltagru <command> ...``.

Exit codes: 0 ok, 2 model error, 3 dimension/config error, 4 data error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import decoder, engine, features, perfmodel
from .errors import (ConfigMismatch, DataError, DeltaGruError, DimensionMismatch,
                     ModelError)
from .fixedpoint import ACT_FMT, QFormat, dequantize, quantize
from .model import NetworkConfig, convert, load, load_float_model, random_float_model, \
    save, save_float_model

EXIT_OK, EXIT_MODEL, EXIT_DIM, EXIT_DATA = 0, 2, 3, 4

BENCH_COLUMNS = ("theta_raw", "theta_hex", "theta", "latency_mean_us", "latency_min_us",
                 "latency_max_us", "throughput_mean_gops", "throughput_min_gops",
                 "throughput_max_gops", "gamma_dx", "gamma_dh", "est_latency_us",
                 "est_throughput_gops", "est_rel_error", "mac_efficiency")


def parse_theta(text: str) -> int:
    """Raw Q8.8 threshold: ``0x40``, ``64`` or a real number such as ``0.25``."""
    text = text.strip()
    try:
        value = quantize(float(text), ACT_FMT) if "." in text else int(text, 0)
    except ValueError:
        raise ConfigMismatch(f"cannot parse threshold {text!r}")
    if value < 0:
        raise ConfigMismatch(f"threshold must be >= 0, got {text}")
    return value


def _hw_from_args(args) -> perfmodel.HwConfig:
    return perfmodel.HwConfig(K=args.pes, f_hz=args.freq,
                              col_overhead_cycles=args.col_overhead,
                              overlap_scan=not args.no_overlap_scan)


def _load_model(path):
    try:
        return load(path)
    except OSError as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from exc


def _load_inputs(args):
    model = _load_model(args.model)
    feats = features.load_features(args.features, model.config.act_fmt)
    if args.steps is not None:
        feats = feats[:args.steps]
    if feats.size and feats.shape[1] != model.config.N:
        raise DimensionMismatch(f"features have {feats.shape[1]} channels, model expects {model.config.N}")
    if feats.shape[0] == 0:
        raise DataError("feature file holds no timesteps")
    return model, feats


def cmd_gen_model(args) -> int:
    params = random_float_model(args.layers, args.input, args.hidden, args.seed, args.scale,
                                args.gain)
    save_float_model(params, args.out)
    print(f"wrote {args.layers}L-{args.hidden}H float model (N={args.input}) to {args.out}")
    return EXIT_OK


def cmd_gen_features(args) -> int:
    raw = features.synthetic_raw(args.steps, args.dim, args.seed, args.profile)
    out = Path(args.out)
    if out.suffix.lower() == ".csv":
        np.savetxt(out, dequantize(raw, ACT_FMT), delimiter=",", fmt="%.8g")
    else:
        features.save_feat(raw, out)
    print(f"wrote {args.steps}x{args.dim} {args.profile} features to {out}")
    return EXIT_OK


def cmd_convert(args) -> int:
    params, L, N, M = load_float_model(args.float_model)
    cfg = NetworkConfig(L, N, M, parse_theta(args.theta), QFormat(16, args.act_frac),
                        QFormat(args.wgt_bits, args.wgt_frac))
    packed = convert(params, cfg)
    save(packed, args.out)
    size = Path(args.out).stat().st_size
    print(f"weights: {cfg.weight_count}")
    print(f"bytes: {size}")
    print(f"formats: act {cfg.act_fmt}, wgt {cfg.wgt_fmt}, acc {cfg.acc_fmt}; theta 0x{cfg.theta_raw:02X}")
    return EXIT_OK


def _run_point(model, feats, theta, hw):
    outputs, traces = engine.run_sequence(model, feats, theta)
    report = perfmodel.simulate(traces, model.config, hw)
    return outputs, traces, report


def cmd_run(args) -> int:
    model, feats = _load_inputs(args)
    hw = _hw_from_args(args)
    theta = parse_theta(args.theta) if args.theta is not None else model.config.theta_raw
    outputs, traces, report = _run_point(model, feats, theta, hw)
    if args.logits:
        np.savetxt(args.logits, dequantize(outputs, model.config.act_fmt), delimiter=",",
                   fmt="%.8g")
    if args.trace:
        perfmodel.write_trace_csv(args.trace, report, traces, hw.f_hz)
    extra = {"theta_raw": theta, "model": model.manifest, "hw": perfmodel.hw_dict(hw)}
    if args.summary:
        perfmodel.write_summary_json(args.summary, report, extra)
    summary = report.summary()
    summary.update(extra)
    json.dump(summary, sys.stdout, indent=2)
    print()
    return EXIT_OK


def _bench_row(theta: int, report: perfmodel.PerfReport, act_fmt: QFormat) -> dict:
    s = report.summary()
    return {
        "theta_raw": theta, "theta_hex": f"0x{theta:02X}", "theta": theta / act_fmt.scale,
        "latency_mean_us": s["latency_us"]["mean"], "latency_min_us": s["latency_us"]["min"],
        "latency_max_us": s["latency_us"]["max"],
        "throughput_mean_gops": s["eff_throughput_gops"]["mean"],
        "throughput_min_gops": s["eff_throughput_gops"]["min"],
        "throughput_max_gops": s["eff_throughput_gops"]["max"],
        "gamma_dx": s["gamma_dx"], "gamma_dh": s["gamma_dh"],
        "est_latency_us": s["est_latency_us"], "est_throughput_gops": s["est_throughput_gops"],
        "est_rel_error": s["est_rel_error"], "mac_efficiency": s["mac_efficiency"],
    }


def _bench_worker(model_path, feats, theta, hw):
    model = _load_model(model_path)
    _, _, report = _run_point(model, feats, theta, hw)
    return _bench_row(theta, report, model.config.act_fmt)


def cmd_bench(args) -> int:
    model, feats = _load_inputs(args)
    hw = _hw_from_args(args)
    thetas = sorted({parse_theta(t) for t in args.sweep.split(",") if t.strip()}) \
        if args.sweep else [model.config.theta_raw]
    if args.jobs > 1 and len(thetas) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_bench_worker, [args.model] * len(thetas),
                                 [feats] * len(thetas), thetas, [hw] * len(thetas)))
    else:
        rows = [_bench_row(t, _run_point(model, feats, t, hw)[2], model.config.act_fmt)
                for t in thetas]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _load_logits(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    if p.suffix.lower() == ".csv":
        try:
            return np.atleast_2d(np.loadtxt(p, delimiter=",", ndmin=2))
        except ValueError as exc:
            raise DataError(f"{p}: {exc}") from exc
    return dequantize(features.load_feat(p), ACT_FMT)


def cmd_decode(args) -> int:
    refs = decoder.load_refs(args.refs)
    if len(refs) != len(args.logits):
        raise DataError(f"{len(args.logits)} logits files for {len(refs)} reference lines")
    hyps = []
    for i, (path, ref) in enumerate(zip(args.logits, refs)):
        try:
            hyp = decoder.greedy_decode(_load_logits(path), args.blank)
        except DimensionMismatch as exc:
            raise DataError(f"{path}: {exc}") from exc
        hyps.append(hyp)
        print(f"utt {i}\t{path}\twer {decoder.wer(hyp, ref):.3f}\thyp {' '.join(map(str, hyp))}")
    print(f"aggregate wer {decoder.corpus_wer(hyps, refs):.3f}")
    return EXIT_OK


def _add_hw_flags(p):
    p.add_argument("--pes", type=int, default=8, help="number of PEs K (default 8)")
    p.add_argument("--freq", type=float, default=125e6, help="clock in Hz (default 125e6)")
    p.add_argument("--col-overhead", type=int, default=0, help="extra cycles per column burst")
    p.add_argument("--no-overlap-scan", action="store_true",
                   help="charge one cycle per scanned delta element")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deltagru", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="write a random float model directory")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--input", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gain", type=float, default=4.0, help="uniform range gain/sqrt(M) (default 4)")
    p.add_argument("--scale", type=float, default=None, help="fixed uniform range, overrides --gain")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("gen-features", help="write a synthetic feature sequence")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=("iid", "bandlimited"), default="bandlimited")
    p.add_argument("--out", required=True, help=".csv for text, anything else for FEAT binary")
    p.set_defaults(func=cmd_gen_features)

    p = sub.add_parser("convert", help="quantize a float model into a packed .edrn file")
    p.add_argument("float_model")
    p.add_argument("out")
    p.add_argument("--theta", default="0x40", help="raw Q8.8 delta threshold (default 0x40)")
    p.add_argument("--wgt-bits", type=int, default=8, choices=(8, 16))
    p.add_argument("--wgt-frac", type=int, default=7)
    p.add_argument("--act-frac", type=int, default=8)
    p.set_defaults(func=cmd_convert)

    for name, func, helptext in (("run", cmd_run, "run inference and report performance"),
                                 ("bench", cmd_bench, "sweep delta thresholds")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("model")
        p.add_argument("features")
        p.add_argument("--steps", type=int, default=None, help="use only the first N timesteps")
        _add_hw_flags(p)
        p.set_defaults(func=func)
        if name == "run":
            p.add_argument("--theta", default=None, help="override the model's threshold")
            p.add_argument("--logits", default=None, help="CSV of per-timestep outputs")
            p.add_argument("--trace", default=None, help="per-timestep cycle CSV")
            p.add_argument("--summary", default=None, help="JSON summary path")
        else:
            p.add_argument("--sweep", default=None,
                           help="comma-separated thresholds, e.g. 0x00,0x08,0x40,0x80")
            p.add_argument("--jobs", type=int, default=1)
            p.add_argument("--out", default=None, help="CSV path (default stdout)")

    p = sub.add_parser("decode", help="greedy CTC decode and score WER")
    p.add_argument("logits", nargs="+", help="one logits file (CSV or FEAT) per utterance")
    p.add_argument("--refs", required=True, help="one token-index sequence per line")
    p.add_argument("--blank", type=int, default=decoder.BLANK)
    p.set_defaults(func=cmd_decode)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DimensionMismatch, ConfigMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIM
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DeltaGruError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
