"""Command-line surface.

Subcommands: ``sr`` (reconstruct a clip), ``psnr-ssim`` (compare two frame
directories), ``scan-viz`` (export a scan-order rank map), ``bench``
(selective-scan kernel benchmark), ``degrade`` (synthesize x1/4 bicubic
low-resolution inputs).

Exit codes: 0 ok, 2 bad arguments, 3 I/O failure, 4 config/weights
mismatch, 5 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics as met
from . import model as mdl
from . import pngio, scan
from .compass import ConvergenceError, ScanOrder, scan_order_csv, scan_order_rank_map
from .config import ModelConfig, load_config
from .mvt import MvtFormatError, read_mvt
from .propagation import FlowSet, shared_compass
from .tensor import NonFiniteError, Tensor, no_grad

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_IO = 3
EXIT_MODEL_MISMATCH = 4
EXIT_NUMERIC = 5


def _load_flows(directory, t: int) -> FlowSet:
    if t < 2:
        return FlowSet.none()
    d = Path(directory)
    fwd, bwd = [], []
    for i in range(t - 1):
        fwd.append(read_mvt(d / f"flow_fwd_{i:04d}.mvt"))
        bwd.append(read_mvt(d / f"flow_bwd_{i:04d}.mvt"))
    return FlowSet.external(np.stack(fwd), np.stack(bwd))


def _write_metrics_csv(path, report: met.MetricReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "psnr_db", "ssim"])
        for i, (p, s) in enumerate(zip(report.psnr, report.ssim)):
            writer.writerow([i, f"{p:.6f}", f"{s:.6f}"])
        writer.writerow(["mean", f"{report.mean_psnr:.6f}", f"{report.mean_ssim:.6f}"])


def cmd_sr(args) -> int:
    cfg = load_config(args.config) if args.config else ModelConfig()
    if args.scan_mode:
        cfg.scan_mode = args.scan_mode
    if args.seed is not None:
        cfg.seed = args.seed

    lr = pngio.read_clip(args.input)
    if args.weights:
        weights = mdl.load_weights(args.weights)
        mdl.validate_weights(weights, cfg)
    else:
        weights = mdl.init_weights(cfg)

    flows = _load_flows(args.flows, lr.shape[0]) if args.flows else FlowSet.none()
    with no_grad():
        sr = mdl.forward(lr, flows, cfg, weights)
    if not np.isfinite(sr.data).all():
        raise NonFiniteError("super-resolved output contains non-finite values")
    pngio.write_clip(args.output, sr.data)

    if args.gt:
        gt = pngio.read_clip(args.gt)
        if gt.shape != sr.data.shape:
            raise ValueError(f"ground truth extents {gt.shape} do not match output {sr.data.shape}")
        exported = pngio.read_clip(args.output)  # measure what was written
        report = met.clip_metrics(list(exported), list(gt), channel_mode=args.channel)
        _write_metrics_csv(Path(args.output) / "metrics.csv", report)
        print(f"mean_psnr_db={report.mean_psnr:.4f} mean_ssim={report.mean_ssim:.6f}")
    return EXIT_OK


def cmd_psnr_ssim(args) -> int:
    a = pngio.read_clip(args.a)
    b = pngio.read_clip(args.b)
    if a.shape != b.shape:
        raise ValueError(f"clip extents differ: {a.shape} vs {b.shape}")
    report = met.clip_metrics(list(a), list(b), channel_mode=args.channel)
    writer = csv.writer(sys.stdout)
    writer.writerow(["frame", "psnr_db", "ssim"])
    for i, (p, s) in enumerate(zip(report.psnr, report.ssim)):
        writer.writerow([i, f"{p:.6f}", f"{s:.6f}"])
    writer.writerow(["mean", f"{report.mean_psnr:.6f}", f"{report.mean_ssim:.6f}"])
    if args.out:
        _write_metrics_csv(args.out, report)
    return EXIT_OK


def cmd_scan_viz(args) -> int:
    cfg = load_config(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    frame = pngio.read_png(args.input)
    weights = mdl.load_weights(args.weights) if args.weights else mdl.init_weights(cfg)
    with no_grad():
        feat = mdl.shallow_features(Tensor(frame), weights)
        order: ScanOrder = shared_compass([feat], cfg, weights)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    pngio.write_gray_png(out.with_suffix(".png"), scan_order_rank_map(order))
    scan_order_csv(order, out.with_suffix(".csv"))
    print(f"wrote {out.with_suffix('.png')} and {out.with_suffix('.csv')}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def cmd_bench(args) -> int:
    if args.backend != "auto":
        scan.set_backend(args.backend)
    rows = []
    rng = np.random.Generator(np.random.PCG64(args.seed))
    with no_grad():
        for length in _int_list(args.L):
            for c in _int_list(args.C):
                for n in _int_list(args.N):
                    p = scan.init_ssm_params(c, n, rng)
                    x = Tensor(rng.standard_normal((length, c)).astype(np.float32))
                    ref = scan.selective_scan_seq(x, p).data
                    for chunk in _int_list(args.chunk):
                        best = np.inf
                        out = None
                        for _ in range(args.repeats):
                            t0 = time.perf_counter()
                            out = scan.selective_scan_chunked(x, p, chunk).data
                            best = min(best, time.perf_counter() - t0)
                        dev = float(np.max(np.abs(out - ref)))
                        status = "ok" if dev <= 1e-5 else "FAILED"
                        rows.append([length, c, n, chunk, f"{length / best:.1f}", f"{dev:.3e}", status])
    writer = csv.writer(sys.stdout)
    writer.writerow(["L", "C", "N", "chunk", "tokens_per_s", "max_dev", "status"])
    writer.writerows(rows)
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["L", "C", "N", "chunk", "tokens_per_s", "max_dev", "status"])
            w.writerows(rows)
    return EXIT_OK if all(r[-1] == "ok" for r in rows) else EXIT_NUMERIC


def cmd_degrade(args) -> int:
    from .ops import bicubic_resize_array

    clip = pngio.read_clip(args.input)
    lows = np.stack([bicubic_resize_array(f, 0.25) for f in clip])
    pngio.write_clip(args.output, lows)
    print(f"wrote {clip.shape[0]} frames at {lows.shape[2]}x{lows.shape[3]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casvsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sr", help="super-resolve a directory of PNG frames")
    p.add_argument("--input", required=True, help="directory of LR PNG frames")
    p.add_argument("--output", required=True, help="directory for SR PNG frames")
    p.add_argument("--weights", help="MVSRW1 weights file (default: seeded init)")
    p.add_argument("--config", help="flat key=value model config file")
    p.add_argument("--scan-mode", choices=["raster", "fiedler", "content_aware"])
    p.add_argument("--flows", help="directory of flow_fwd_%%04d.mvt / flow_bwd_%%04d.mvt")
    p.add_argument("--gt", help="ground-truth HR frames; writes metrics.csv")
    p.add_argument("--channel", choices=["rgb", "y"], default="rgb")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("psnr-ssim", help="metrics between two frame directories")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--channel", choices=["rgb", "y"], default="rgb")
    p.add_argument("--out", help="also write the report to this CSV file")
    p.set_defaults(func=cmd_psnr_ssim)

    p = sub.add_parser("scan-viz", help="export the scan order of one frame")
    p.add_argument("--input", required=True, help="PNG frame")
    p.add_argument("--config")
    p.add_argument("--weights")
    p.add_argument("--output", required=True, help="output path stem (.png/.csv)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_scan_viz)

    p = sub.add_parser("bench", help="selective-scan kernel benchmark")
    p.add_argument("--L", default="256", help="comma-separated sequence lengths")
    p.add_argument("--C", default="8", help="comma-separated channel counts")
    p.add_argument("--N", default="16", help="comma-separated state dims")
    p.add_argument("--chunk", default="32", help="comma-separated chunk sizes")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=["auto", "cython", "numpy"], default="auto")
    p.add_argument("--out", help="also write the CSV to this file")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("degrade", help="bicubic x1/4 downsample of a clip")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_degrade)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_BAD_ARGS if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError, MvtFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (mdl.WeightsMismatchError, mdl.WeightsFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL_MISMATCH
    except (NonFiniteError, ConvergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_ARGS


if __name__ == "__main__":
    sys.exit(main())
