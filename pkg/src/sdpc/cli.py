"""Command-line entry point: ``sdpc encode|decode|analyze|bench``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import analysis
from .bitstream import BitstreamError, EncodedStream, estimate_rate
from .codec import CodecConfig, ModePolicy, decode_matrix, decode_measurements, encode
from .image_io import Image, ImageFormatError, ScanOrder, dump_pgm, load_pgm, load_raw
from .recovery import RecoveryConfig, psnr, recover
from .sensing import SensingError

log = logging.getLogger("sdpc")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3

POLICIES = {"sdpc": ModePolicy.SDPC, "dpcm": ModePolicy.DPCM, "sq": ModePolicy.NONE}
SCANS = {"raster": ScanOrder.RASTER, "column": ScanOrder.COLUMN_MAJOR}
BENCH_TARGETS = (0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 1.0)


class UsageError(Exception):
    pass


def _subrate(text):
    value = float(text)
    if not (0.0 < value <= 1.0):
        raise argparse.ArgumentTypeError(f"subrate must lie in (0, 1], got {text}")
    return value


def _positive(text):
    value = float(text)
    if not (value > 0 and np.isfinite(value)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _block_size(text):
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError(f"block size must be >= 2, got {text}")
    return value


def _seed_list(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    return seeds


def _float_list(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _subrate_list(text):
    return [_subrate(s) for s in _float_list(text)]


def atomic_write(path, data: bytes | str):
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def read_image(path, width=None, height=None) -> Image:
    data = Path(path).read_bytes()
    if data[:2] == b"P5" or width is None:
        return load_pgm(data)
    return load_raw(data, width, height)


def _add_image_args(p):
    p.add_argument("--width", type=int, help="width of a headerless raw input")
    p.add_argument("--height", type=int, help="height of a headerless raw input")


def _add_codec_args(p):
    p.add_argument("--block-size", "-B", type=_block_size, default=16)
    p.add_argument("--subrate", "-S", type=_subrate, default=0.5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--scan", choices=sorted(SCANS), default="raster")


def _add_recovery_args(p):
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--stop-tol", type=_positive, default=None)
    p.add_argument("--tau-decay", type=float, default=None)
    p.add_argument("--tau-floor", type=float, default=None)
    p.add_argument("--window", type=int, default=None, help="Wiener smoothing window")


def _recovery_overrides(args) -> dict:
    names = {"max_iters": "max_iters", "stop_tol": "stop_tol", "tau_decay": "tau_decay",
             "tau_floor": "tau_floor", "window": "smoothing_window"}
    return {dst: getattr(args, src) for src, dst in names.items() if getattr(args, src) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdpc", description="Directional predictive coding of block CS measurements.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="image -> .sdpc")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--q", type=_positive, default=8.0, help="quantizer step")
    p.add_argument("--policy", choices=sorted(POLICIES), default="sdpc")
    _add_codec_args(p)
    _add_image_args(p)

    p = sub.add_parser("decode", help=".sdpc -> PGM")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--reference", help="original image; prints PSNR")
    _add_recovery_args(p)

    p = sub.add_parser("analyze", help="measurement-domain correlation and mode statistics")
    p.add_argument("input", nargs="+")
    _add_codec_args(p)
    _add_image_args(p)
    p.add_argument("--csv", help="write per-image statistics as CSV")

    p = sub.add_parser("bench", help="rate-distortion sweep of SQ, DPCM+SQ and SDPC+SQ")
    p.add_argument("input", nargs="+")
    p.add_argument("--block-size", "-B", type=_block_size, default=16)
    p.add_argument("--subrates", type=_subrate_list, default=[0.2], help="comma-separated subrates")
    p.add_argument("--seeds", type=_seed_list, default=[1])
    p.add_argument("--scan", choices=sorted(SCANS) + ["both"], default="raster")
    p.add_argument("--targets", type=_float_list, default=list(BENCH_TARGETS),
                   help="bitrates (bpp) to fit the quantizer step to")
    p.add_argument("--csv", help="CSV output path (default: stdout)")
    p.add_argument("--plot-data", help="write bpp/PSNR curves as JSON")
    p.add_argument("--jobs", type=int, default=1)
    _add_recovery_args(p)
    _add_image_args(p)
    return parser


def cmd_encode(args) -> int:
    img = read_image(args.input, args.width, args.height)
    cfg = CodecConfig(POLICIES[args.policy], args.block_size, args.subrate, args.q, args.seed, SCANS[args.scan])
    stream, _ = encode(img, cfg)
    data = stream.to_bytes()
    rate = estimate_rate(stream.indices, cfg.block_size, stream.header.m_b,
                         img.width * img.height, cfg.mode_policy.signals_modes)
    atomic_write(args.output, data)
    actual = 8.0 * len(data) / (img.width * img.height)
    print(f"estimated bpp: {rate.total_bpp:.4f} (indices {rate.index_bpp:.4f}, modes {rate.mode_overhead_bpp:.4f})")
    print(f"actual bpp: {actual:.4f} ({len(data)} bytes)")
    return EXIT_OK


def cmd_decode(args) -> int:
    reference = read_image(args.reference) if args.reference else None
    stream = EncodedStream.from_bytes(Path(args.input).read_bytes())
    h = stream.header
    if reference is not None and (reference.width, reference.height) != (h.width, h.height):
        raise UsageError(f"reference is {reference.width}x{reference.height}, stream is {h.width}x{h.height}")
    grid = decode_measurements(stream)
    result = recover(grid, decode_matrix(h), RecoveryConfig.for_step(h.q, **_recovery_overrides(args)), h.width, h.height)
    atomic_write(args.output, dump_pgm(result.image))
    print(f"recovered {h.width}x{h.height} in {result.iterations} iterations (converged: {result.converged})")
    if reference is not None:
        print(f"PSNR: {psnr(result.image, reference):.2f} dB")
    return EXIT_OK


def cmd_analyze(args) -> int:
    rows = []
    for path in args.input:
        img = read_image(path, args.width, args.height)
        rep = analysis.acc_study(img, args.block_size, args.subrate, args.seed, SCANS[args.scan])
        pct = rep.mode_percentages()
        print(f"{path}: ACC1 {rep.acc1:.4f}  ACC2 {rep.acc2:.4f}  "
              f"(excluded: {rep.excluded1} / {rep.excluded2} blocks)")
        print("  modes: " + "  ".join(f"{int(m)}:{v:.2f}%" for m, v in pct.items())
              + f"  total {sum(pct.values()):.2f}%")
        if rep.zero_vectors:
            print(f"  note: {rep.zero_vectors} all-zero measurement vectors (correlation taken as 0)")
        rows.append([Path(path).name, args.scan, args.subrate, f"{rep.acc1:.6f}", f"{rep.acc2:.6f}",
                     rep.excluded1, rep.excluded2] + [f"{pct[m]:.4f}" for m in pct])
    if args.csv:
        head = "image,scan,subrate,acc1,acc2,excluded1,excluded2,mode0,mode1,mode2,mode3\n"
        atomic_write(args.csv, head + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return EXIT_OK


def bench_points(images: dict[str, Image], labels, subrates, seeds, scans, targets, block_size=16,
                 recovery=None, jobs=1) -> list:
    """Fit a quantizer step per (image, label, subrate, seed, scan, target bpp), then measure each point."""
    tasks = [
        (name, label, s, seed, scan, t)
        for name in images for label in labels for s in subrates
        for seed in seeds for scan in scans for t in targets
    ]

    def run(name, label, s, seed, scan, t):
        img = images[name]
        q = analysis.fit_step(img, label, s, t, seed, block_size, scan)
        return analysis.rd_point(img, name, label, q, s, seed, block_size, scan, recovery)

    if jobs > 1:
        from joblib import Parallel, delayed

        points = Parallel(n_jobs=jobs)(delayed(run)(*t) for t in tasks)
    else:
        points = [run(*t) for t in tasks]
    return analysis.sort_points(points)


def cmd_bench(args) -> int:
    images = {Path(p).stem: read_image(p, args.width, args.height) for p in args.input}
    scans = list(SCANS.values()) if args.scan == "both" else [SCANS[args.scan]]
    points = bench_points(images, list(analysis.LABELS), args.subrates, args.seeds, scans, args.targets,
                          args.block_size, _recovery_overrides(args), args.jobs)
    for p in points:
        if p.file_bits < p.index_bits:
            raise ArithmeticError(f"file smaller than the entropy bound for {p}")
    text = analysis.write_csv(points)
    if args.csv:
        atomic_write(args.csv, text)
    else:
        sys.stdout.write(text)
    if args.plot_data:
        atomic_write(args.plot_data, analysis.plot_data(points))
    return EXIT_OK


COMMANDS = {"encode": cmd_encode, "decode": cmd_decode, "analyze": cmd_analyze, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, OSError) as exc:
        print(f"sdpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BitstreamError, ImageFormatError) as exc:
        print(f"sdpc: format error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ArithmeticError, SensingError, ValueError) as exc:
        print(f"sdpc: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
