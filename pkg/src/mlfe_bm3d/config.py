"""Flat ``key = value`` configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Keys not listed in :data:`DENOISE_KEYS` (or the bench manifest keys) are
errors. Values from flags override values from a file, which override the
built-in defaults; see :func:`merge`.

Denoising keys::

    sigma            noise sd for the BM3D stages (default: MAD estimate)
    levels           pyramid levels (4)
    k                per-layer K multipliers, coarse to fine (3,3,3,4)
    enhance_layer    layer amplified after thresholding (3)
    enhance_gain     its gain (2)
    filters          pyramid filter pair: cdf97 | starlet
    boundary         symmetric | periodic
    fusion_gains     per-layer gains after fusion (1,2,2,1)
    final_mode       pilot | full
    workers          threads for the two basic estimates (1)
    basic.<field>    Bm3dProfile override for the hard-threshold stage
    final.<field>    Bm3dProfile override for the Wiener stage

Profile fields: block, step, search_radius, group_max, match_threshold,
lambda3d, transform2d, window_beta.
"""

from __future__ import annotations

from pathlib import Path

from .mlfe import MlfeConfig
from .nsp import ThresholdPolicy


class ConfigError(ValueError):
    pass


PROFILE_FIELDS = {
    "block": int,
    "step": int,
    "search_radius": int,
    "group_max": int,
    "match_threshold": float,
    "lambda3d": float,
    "transform2d": str,
    "window_beta": float,
}


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


DENOISE_KEYS = {
    "sigma": float,
    "levels": int,
    "k": _floats,
    "enhance_layer": int,
    "enhance_gain": float,
    "filters": str,
    "boundary": str,
    "fusion_gains": _floats,
    "final_mode": str,
    "workers": int,
}
DENOISE_KEYS.update({f"{stage}.{name}": conv for stage in ("basic", "final")
                     for name, conv in PROFILE_FIELDS.items()})


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines into a dict of raw strings."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    path = Path(path)
    return parse_text(path.read_text(), str(path))


def merge(*layers: dict) -> dict:
    """Later layers win; ``None`` values (unset flags) are skipped."""
    out = {}
    for layer in layers:
        out.update({k: v for k, v in layer.items() if v is not None})
    return out


def convert(raw: dict, schema: dict) -> dict:
    """Type-convert raw values against ``schema``; unknown keys are errors."""
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    out = {}
    for key, value in raw.items():
        if not isinstance(value, str):
            out[key] = value
            continue
        try:
            out[key] = schema[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return out


def mlfe_config(raw: dict) -> MlfeConfig:
    """Build an :class:`MlfeConfig` from raw or converted denoising settings."""
    values = convert(raw, DENOISE_KEYS)
    policy_args = {}
    for key in ("levels", "k", "enhance_layer", "enhance_gain", "filters", "boundary"):
        if key in values:
            policy_args[key] = values[key]
    levels = policy_args.get("levels", 4)
    if levels != 4 and "k" not in policy_args:
        # stretch the default K list: 3 everywhere, 4 on the finest layer
        policy_args["k"] = (3.0,) * (levels - 1) + (4.0,)
    basic = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("basic.")}
    final = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("final.")}
    gains = values.get("fusion_gains")
    if gains is None:
        gains = (1.0, 2.0, 2.0, 1.0) if levels == 4 else (1.0,) + (2.0,) * (levels - 2) + (1.0,)
    try:
        config = MlfeConfig(
            sigma=values.get("sigma"),
            policy=ThresholdPolicy(**policy_args),
            basic=basic,
            final=final,
            fusion_gains=tuple(gains),
            final_mode=values.get("final_mode", "pilot"),
            workers=values.get("workers", 1),
        )
        config.profiles(1.0)  # surface bad profile overrides now, not mid-run
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config
