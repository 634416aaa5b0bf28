"""Benchmark grid: images x noise levels x seeds x methods, plus crops.

A manifest is a key=value file (see :mod:`mlfe_bm3d.config`) with keys::

    images       comma list of synthetic names, lena/baboon, or file paths
    levels       comma list of noise levels
    level_scale  normalized (speckle variance on the 8-bit scale,
                 mapped per image) | additive (effective error variance)
    methods      comma list from noisy, nsct-ht, bm3d, mlfe-bm3d
    seeds        comma list of integer seeds (0)
    crops        ``name:x,y,w,h`` entries separated by ``;``
    ssim_maps    true | false: write each run's SSIM map as PNG (false)
    out_dir      output directory (bench-out)
    sigma_source noise sd handed to the BM3D stages (reference); see below
    timing       true | false: fill the seconds column (true)
    config       optional denoising config file for the methods
    workers      worker processes (MLFE_BM3D_THREADS, else 1)
    snr_convention   variance | power (variance)
    ssim_weighting   gaussian | uniform (gaussian)

Noise sd sources: ``level`` is the square root of the manifest level
taken literally, ``target`` the square root of the effective additive
variance, ``mad`` the pyramid estimate from the noised image. A single
name applies to every method; ``bm3d:level, mlfe-bm3d:mad`` sets them per
method. ``reference`` is shorthand for exactly that pairing, the one the
acceptance runs use. A ``sigma`` in the denoising config wins.

Each grid cell noises the clean image once and scores the result on the
whole image and on every crop that fits. Without a ``crops`` key the
default 160x160 crop at (80, 176) is used where it fits; on the standard
512x512 Lena it covers the feathered hat brim and hair left of the face.

Output: ``report.csv`` (columns :data:`CSV_COLUMNS`), ``report.md`` and,
when any cell fails, ``failures.csv``. The ``sigma2`` column repeats the
manifest level, read on ``level_scale``.
"""

from __future__ import annotations

import csv
import math
import multiprocessing
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import testimages
from .bm3d import bm3d
from .config import ConfigError, convert, mlfe_config, read_config
from .image import NoiseSpec, add_speckle, as_image, normalized_level_to_target, write_image
from .metrics import (
    SNR_CONVENTIONS,
    SSIM_WEIGHTINGS,
    quality_report,
    render_ssim_map,
    ssim_map,
)
from .mlfe import MlfeConfig, estimate_noise_sd, mlfe_bm3d
from .nsp import algorithm1

THREADS_ENV = "MLFE_BM3D_THREADS"
METHODS = ("noisy", "nsct-ht", "bm3d", "mlfe-bm3d")
CSV_COLUMNS = ("image", "sigma2", "seed", "method", "region",
               "snr_db", "psnr_db", "rmse", "mssim", "seconds")
DEFAULT_CROPS = {"local": (80, 176, 160, 160)}
SIGMA_SOURCES = ("level", "target", "mad")
REFERENCE_SIGMA = {"bm3d": "level", "mlfe-bm3d": "mad"}


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV, "").strip()
    if not value:
        return 1
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    return n


def _list(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(text)


def parse_sigma_source(text: str) -> dict:
    """Per-method noise-sd sources; methods not named fall back to ``target``."""
    text = text.strip()
    if text == "reference":
        return dict(REFERENCE_SIGMA)
    if ":" not in text:
        if text not in SIGMA_SOURCES:
            raise ValueError(text)
        return {m: text for m in METHODS}
    out = {}
    for item in _list(text):
        method, _, source = (t.strip() for t in item.partition(":"))
        if method not in METHODS or source not in SIGMA_SOURCES:
            raise ValueError(item)
        out[method] = source
    return out


def parse_crops(text: str) -> dict:
    crops = {}
    for entry in text.split(";"):
        entry = entry.strip()
        if not entry:
            continue
        name, sep, rect = entry.partition(":")
        nums = tuple(int(v) for v in rect.split(","))
        if not sep or len(nums) != 4 or nums[2] < 8 or nums[3] < 8 or min(nums[:2]) < 0:
            raise ValueError(entry)
        if name.strip() in ("whole", *crops):
            raise ValueError(entry)
        crops[name.strip()] = nums
    return crops


MANIFEST_KEYS = {
    "images": _list,
    "levels": lambda t: tuple(float(v) for v in _list(t)),
    "level_scale": str,
    "methods": _list,
    "seeds": lambda t: tuple(int(v) for v in _list(t)),
    "crops": parse_crops,
    "ssim_maps": _bool,
    "out_dir": str,
    "sigma_source": parse_sigma_source,
    "timing": _bool,
    "config": str,
    "workers": int,
    "snr_convention": str,
    "ssim_weighting": str,
}


@dataclass(frozen=True)
class Manifest:
    images: tuple
    levels: tuple
    methods: tuple
    level_scale: str = "normalized"
    seeds: tuple = (0,)
    crops: dict | None = None
    ssim_maps: bool = False
    out_dir: str = "bench-out"
    sigma_source: dict = field(default_factory=lambda: dict(REFERENCE_SIGMA))
    timing: bool = True
    denoise: dict = field(default_factory=dict)
    workers: int = 1
    snr_convention: str = "variance"
    ssim_weighting: str = "gaussian"

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("manifest lists no methods")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}; expected {METHODS}")
        if not self.images or not self.levels or not self.seeds:
            raise ConfigError("manifest needs at least one image, level and seed")
        if any(not lv > 0 for lv in self.levels):
            raise ConfigError("noise levels must be positive")
        if self.level_scale not in ("normalized", "additive"):
            raise ConfigError("level_scale must be normalized or additive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.snr_convention not in SNR_CONVENTIONS:
            raise ConfigError(f"snr_convention must be one of {SNR_CONVENTIONS}")
        if self.ssim_weighting not in SSIM_WEIGHTINGS:
            raise ConfigError(f"ssim_weighting must be one of {SSIM_WEIGHTINGS}")


def load_manifest(path, overrides: dict | None = None) -> Manifest:
    raw = read_config(path)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values = convert(raw, MANIFEST_KEYS)
    for key in ("images", "levels", "methods"):
        if key not in values:
            raise ConfigError(f"manifest is missing {key!r}")
    cfg_path = values.pop("config", None)
    if cfg_path is not None:
        cfg_path = Path(cfg_path)
        if not cfg_path.is_absolute():
            cfg_path = Path(path).parent / cfg_path
        values["denoise"] = read_config(cfg_path)
    values.setdefault("workers", default_threads())
    manifest = Manifest(**values)
    mlfe_config(manifest.denoise)  # validate once up front
    return manifest


@dataclass(frozen=True)
class Cell:
    index: int
    image: str
    level: float
    seed: int
    method: str


def grid(manifest: Manifest) -> list[Cell]:
    cells = []
    for image in manifest.images:
        for level in manifest.levels:
            for seed in manifest.seeds:
                for method in manifest.methods:
                    cells.append(Cell(len(cells), image, level, seed, method))
    return cells


def run_method(method: str, noisy, sigma: float, config: MlfeConfig) -> np.ndarray:
    if method == "noisy":
        return as_image(noisy)
    if method == "nsct-ht":
        return algorithm1(noisy, config.policy)
    if method == "bm3d":
        basic, final = config.profiles(sigma)
        return bm3d(noisy, basic=basic, final=final)
    if method == "mlfe-bm3d":
        return mlfe_bm3d(noisy, replace(config, sigma=sigma))
    raise ValueError(f"unknown method {method!r}")


def pick_sigma(source: str, level: float, target: float, noisy, config: MlfeConfig) -> float:
    if source == "level":
        return math.sqrt(level)
    if source == "target":
        return math.sqrt(target)
    sd = estimate_noise_sd(noisy, config.policy)
    return sd if sd > 0 else 1e-3


def noisy_pair(image: str, level: float, seed: int, level_scale: str):
    clean = testimages.load(image)
    target = normalized_level_to_target(level, clean) if level_scale == "normalized" else level
    return clean, add_speckle(clean, NoiseSpec(target, seed)), target


def _regions(shape, crops: dict | None):
    yield "whole", np.s_[:, :]
    explicit = crops is not None
    for name, (x, y, w, h) in (crops if explicit else DEFAULT_CROPS).items():
        if x + w > shape[1] or y + h > shape[0]:
            if explicit:
                raise ValueError(f"crop {name} ({x},{y},{w},{h}) exceeds image {shape}")
            continue
        yield name, np.s_[y : y + h, x : x + w]


def map_name(cell: Cell) -> str:
    stem = Path(cell.image).stem
    return f"{stem}_{cell.level:g}_s{cell.seed}_{cell.method}.png"


def run_cell(manifest: Manifest, cell: Cell) -> dict:
    """Run one grid cell; never raises, failures come back in the result."""
    try:
        clean, noisy, target = noisy_pair(cell.image, cell.level, cell.seed, manifest.level_scale)
        config = mlfe_config(manifest.denoise)
        if config.sigma is not None:
            sigma = config.sigma
        else:
            source = manifest.sigma_source.get(cell.method, "target")
            sigma = pick_sigma(source, cell.level, target, noisy, config)
        t0 = time.perf_counter()
        out = run_method(cell.method, noisy, sigma, config)
        seconds = time.perf_counter() - t0
        rows = []
        for region, sl in _regions(clean.shape, manifest.crops):
            rep = quality_report(out[sl], clean[sl], snr_convention=manifest.snr_convention,
                                 ssim_weighting=manifest.ssim_weighting)
            rows.append({
                "image": cell.image, "sigma2": cell.level, "seed": cell.seed,
                "method": cell.method, "region": region, **rep.as_row(),
                "seconds": seconds if manifest.timing else None,
            })
        result = {"cell": cell, "rows": rows, "error": None}
        if manifest.ssim_maps:
            result["map"] = ssim_map(out, clean, weighting=manifest.ssim_weighting)
        return result
    except Exception as exc:  # a failed cell must not sink the grid
        return {"cell": cell, "rows": [], "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc()}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6f}"
    return str(value)


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        for row in rows:
            out.writerow([_fmt(row[c]) if c != "sigma2" else f"{row[c]:g}" for c in CSV_COLUMNS])


def markdown_table(rows, failures=()) -> str:
    """One table per (image, level, seed, region), methods as rows."""
    blocks = {}
    for row in rows:
        key = (row["image"], row["sigma2"], row["seed"], row["region"])
        blocks.setdefault(key, []).append(row)
    lines = []
    for (image, level, seed, region), group in blocks.items():
        lines.append(f"### {image}, {region}, level {level:g}, seed {seed}")
        lines.append("")
        lines.append("| Method | SNR (dB) | PSNR (dB) | RMSE | MSSIM | seconds |")
        lines.append("|---|---|---|---|---|---|")
        for r in group:
            secs = "" if r["seconds"] is None else f"{r['seconds']:.2f}"
            lines.append(f"| {r['method']} | {r['snr_db']:.4f} | {r['psnr_db']:.4f} "
                         f"| {r['rmse']:.4f} | {r['mssim']:.4f} | {secs} |")
        lines.append("")
    if failures:
        lines.append("### Failed runs")
        lines.append("")
        for f in failures:
            c = f["cell"]
            lines.append(f"- {c.image}, level {c.level:g}, seed {c.seed}, {c.method}: {f['error']}")
        lines.append("")
    return "\n".join(lines)


def _worker_init():
    import numba

    numba.set_num_threads(1)


def run_bench(manifest: Manifest, log=None) -> int:
    """Run the grid and write the reports. Returns the number of failed cells."""
    out_dir = Path(manifest.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = grid(manifest)
    if manifest.workers > 1 and len(cells) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(manifest.workers, mp_context=ctx,
                                 initializer=_worker_init) as pool:
            futures = [pool.submit(run_cell, manifest, c) for c in cells]
            results = [f.result() for f in futures]  # manifest order
    else:
        results = [run_cell(manifest, c) for c in cells]

    rows, failures = [], []
    for res in results:
        if res["error"] is not None:
            failures.append(res)
            if log:
                log(f"FAILED {res['cell']}: {res['error']}")
            continue
        rows.extend(res["rows"])
        if "map" in res:
            maps = out_dir / "maps"
            maps.mkdir(exist_ok=True)
            write_image(render_ssim_map(res["map"]), maps / map_name(res["cell"]))

    write_csv(rows, out_dir / "report.csv")
    (out_dir / "report.md").write_text(markdown_table(rows, failures))
    fail_path = out_dir / "failures.csv"
    if failures:
        with open(fail_path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(("image", "sigma2", "seed", "method", "error"))
            for f in failures:
                c = f["cell"]
                out.writerow((c.image, f"{c.level:g}", c.seed, c.method, f["error"]))
    elif fail_path.exists():
        fail_path.unlink()
    return len(failures)
