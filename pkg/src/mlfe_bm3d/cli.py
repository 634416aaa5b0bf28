"""Command-line front end.

Exit codes: 0 success, 1 I/O failure (or a failed bench cell), 2 bad
arguments or validation errors, 3 the image does not meet a method's
preconditions (too small, degenerate).
"""

from __future__ import annotations

import argparse
import errno
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import THREADS_ENV, default_threads, load_manifest, run_bench, run_method
from .bm3d import ImageTooSmallError, bm3d_basic, bm3d_final, check_fits, write_trace
from .config import DENOISE_KEYS, ConfigError, merge, mlfe_config, read_config
from .image import (
    DegenerateInputError,
    NoiseSpec,
    UnsupportedFormatError,
    add_speckle,
    normalized_level_to_target,
    quantize,
    read_image,
    write_image,
)
from .metrics import (
    MSSIM_CONVENTIONS,
    SNR_CONVENTIONS,
    SSIM_WEIGHTINGS,
    decode_ssim_map,
    line_profile,
    quality_report,
    render_ssim_map,
    ssim_diff_map,
    ssim_map,
    write_profile_csv,
    write_signed_png,
)
from .mlfe import check_size, dump_stages, estimate_noise_sd, mlfe_bm3d
from .nsp import min_size

EXIT_OK, EXIT_IO, EXIT_ARGS, EXIT_PRECONDITION = 0, 1, 2, 3


class UsageError(Exception):
    """Invalid argument combination detected after parsing."""


def _set_threads(n: int | None) -> None:
    import numba

    n = n or default_threads()
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


# ------------------------------------------------------------------ commands


def cmd_noise(args) -> int:
    u = read_image(args.input)
    if args.sigma2 is not None:
        target = args.sigma2
    else:
        if not args.level > 0:
            raise UsageError("--level must be positive")
        target = normalized_level_to_target(args.level, u)
    try:
        spec = NoiseSpec(target, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    noisy = quantize(add_speckle(u, spec)).astype(np.float64)
    write_image(noisy, args.output)
    err = noisy - u
    psnr = quality_report(noisy, u).psnr
    print(f"target_variance={target:.6f}")
    print(f"realized_variance={float(np.mean(err * err)):.6f}")
    print(f"psnr_db={_fmt(psnr)}")
    return EXIT_OK


def _denoise_config(args):
    raw = read_config(args.config) if args.config else {}
    flags = {"sigma": args.sigma, "final_mode": args.final_mode, "workers": args.workers}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        flags[key.strip()] = value.strip()
    return mlfe_config(merge(raw, flags))


def cmd_denoise(args) -> int:
    config = _denoise_config(args)
    u0 = read_image(args.input)
    if args.method == "nsct-ht":
        need = min_size(config.policy.levels, config.policy.filters)
        if min(u0.shape) < need:
            raise ImageTooSmallError(f"image {u0.shape} too small for the pyramid (need >= {need})")
    elif args.method == "bm3d":
        check_fits(u0.shape, config.profiles(1.0)[0].block)
    else:
        check_size(u0.shape, config)

    sigma = config.sigma
    if sigma is None and args.method != "nsct-ht":
        sigma = estimate_noise_sd(u0, config.policy)
        if not sigma > 0:
            sigma = 1e-3
    t0 = time.perf_counter()
    stages = {} if args.dump_stages else None
    trace = [] if args.trace else None
    if args.method == "mlfe-bm3d":
        out = mlfe_bm3d(u0, replace(config, sigma=sigma), stages=stages)
    elif args.method == "bm3d" and trace is not None:
        basic, final = config.profiles(sigma)
        out = bm3d_final(u0, bm3d_basic(u0, basic, trace=trace), final)
    else:
        out = run_method(args.method, u0, sigma, config)
    seconds = time.perf_counter() - t0

    write_image(out, args.output)
    if stages is not None:
        dump_stages(stages, args.dump_stages)
    if trace is not None:
        write_trace(trace, args.trace)
    if sigma is not None:
        print(f"sigma={sigma:.6f}")
    # timing goes to stderr so stdout stays reproducible
    print(f"seconds={seconds:.3f}", file=sys.stderr)
    return EXIT_OK


def _pair(args):
    a, b = read_image(args.image), read_image(args.reference)
    if a.shape != b.shape:
        raise UsageError(f"image sizes differ: {a.shape} vs {b.shape}")
    return a, b


def cmd_metrics(args) -> int:
    a, b = _pair(args)
    rep = quality_report(a, b, args.mssim_convention, args.snr_convention,
                         args.ssim_weighting)
    print("snr_db,psnr_db,rmse,mssim")
    print(",".join(_fmt(v) for v in (rep.snr, rep.psnr, rep.rmse, rep.mssim)))
    return EXIT_OK


def cmd_ssim_map(args) -> int:
    a, b = _pair(args)
    m = ssim_map(a, b, weighting=args.ssim_weighting)
    out = Path(args.output)
    if out.suffix.lower() == ".npy":
        np.save(out, m)
    else:
        write_image(render_ssim_map(m), out)
    return EXIT_OK


def _load_map(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".npy":
        if not path.is_file():
            raise FileNotFoundError(errno.ENOENT, "no such file", str(path))
        m = np.load(path)
        if m.ndim != 2:
            raise UsageError(f"{path}: expected a 2D map")
        return m.astype(np.float64)
    return decode_ssim_map(read_image(path))


def cmd_diff_map(args) -> int:
    a, b = _load_map(args.map_a), _load_map(args.map_b)
    if a.shape != b.shape:
        raise UsageError(f"map sizes differ: {a.shape} vs {b.shape}")
    d = ssim_diff_map(a, b)
    write_signed_png(d, args.output, scale=args.scale)
    print(f"mean_diff={float(d.mean()):.6f}")
    return EXIT_OK


def cmd_profile(args) -> int:
    u = read_image(args.input)
    p0, p1 = (args.x0, args.y0), (args.x1, args.y1)
    try:
        line_profile(u, p0, p1)
    except IndexError as exc:
        raise UsageError(str(exc)) from exc
    n = write_profile_csv(u, p0, p1, args.output)
    print(f"points={n}")
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = {"out_dir": args.out_dir}
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    manifest = load_manifest(args.manifest, overrides)
    failed = run_bench(manifest, log=lambda m: print(m, file=sys.stderr))
    print(f"rows written to {Path(manifest.out_dir) / 'report.csv'}")
    if failed:
        print(f"{failed} run(s) failed; see failures.csv", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlfe-bm3d", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None,
                   help=f"numba threads (default: ${THREADS_ENV} or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("noise", help="add calibrated speckle noise")
    s.add_argument("input")
    s.add_argument("output")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--sigma2", type=float, help="effective additive variance")
    g.add_argument("--level", type=float,
                   help="normalized speckle variance on the 8-bit scale, e.g. 1300")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_noise)

    s = sub.add_parser("denoise", help="denoise an image")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--method", choices=("nsct-ht", "bm3d", "mlfe-bm3d"), default="mlfe-bm3d")
    s.add_argument("--sigma", type=float, default=None,
                   help="noise sd for BM3D (default: MAD estimate)")
    s.add_argument("--config", help="key=value configuration file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help=f"override one config key; keys: {', '.join(sorted(DENOISE_KEYS))}")
    s.add_argument("--final-mode", choices=("pilot", "full"), default=None)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--dump-stages", metavar="DIR", help="write intermediate images (mlfe-bm3d)")
    s.add_argument("--trace", metavar="CSV", help="per-group trace of the first stage (bm3d)")
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("metrics", help="SNR, PSNR, RMSE and MSSIM against a reference")
    s.add_argument("image")
    s.add_argument("reference")
    s.add_argument("--snr-convention", choices=SNR_CONVENTIONS, default="variance")
    s.add_argument("--mssim-convention", choices=MSSIM_CONVENTIONS, default="mean")
    s.add_argument("--ssim-weighting", choices=SSIM_WEIGHTINGS, default="gaussian")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("ssim-map", help="SSIM index map (PNG/PGM render or raw .npy)")
    s.add_argument("image")
    s.add_argument("reference")
    s.add_argument("output")
    s.add_argument("--ssim-weighting", choices=SSIM_WEIGHTINGS, default="gaussian")
    s.set_defaults(func=cmd_ssim_map)

    s = sub.add_parser("diff-map", help="signed color render of map_a - map_b")
    s.add_argument("map_a")
    s.add_argument("map_b")
    s.add_argument("output")
    s.add_argument("--scale", type=float, default=None,
                   help="magnitude shown at full color (default: max |difference|)")
    s.set_defaults(func=cmd_diff_map)

    s = sub.add_parser("profile", help="gray levels along a line segment, as CSV")
    s.add_argument("input")
    for name in ("x0", "y0", "x1", "y1"):
        s.add_argument(name, type=int)
    s.add_argument("output")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("bench", help="run a benchmark manifest")
    s.add_argument("manifest")
    s.add_argument("--out-dir", default=None)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        _set_threads(args.threads)
        return args.func(args)
    except (ImageTooSmallError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, UnsupportedFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
