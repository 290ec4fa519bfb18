"""One JSON configuration document for the whole pipeline.

Sections: growth, pathology_ranges, raster, text, teacher, run. Every key
has a default; user files override defaults key by key. Unknown keys are
rejected rather than ignored, because a silently misspelled range name would
corrupt a dataset. The config digest is a SHA-256 over the fully resolved
document, so it changes whenever any range or default changes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path
from typing import Any

from .growth import GrowthConfig, GrowthDomain
from .pathology import MicroaneurysmConfig, PruningConfig, TortuosityConfig
from .raster import RasterConfig
from .diversify import TeacherEndpointConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration content (CLI exit code 2)."""


DEFAULT_CONFIG: dict[str, Any] = {
    "growth": {
        "domain_height": 0.15,
        "mm_per_unit": 3.0,
        "perception_distance": 0.05,
        "perception_half_angle_deg": 80.0,
        "step_size": 0.01,
        "bifurcation_exponent": 3.0,
        "direction_weight": 0.7,
        "points_per_iteration": 45,
        "iterations_per_layer": 140,
        "terminal_radius": 0.003,
        "source_sink_ratio": 1.0,
        "deep_seeds_per_kind": 3,
        "root_angles_arterial_deg": [115.0, 295.0],
        "root_angles_venous_deg": [65.0, 245.0],
        "faz_radius": 0.08,
        "faz_jitter": 0.03,
        "faz_max_shift": 0.05,
    },
    "pathology_ranges": {
        "dropout_count": [0, 6],
        "dropout_radius": [0.18, 0.32],
        "dropout_strength": [0.90, 0.99],
        "dropout_exponent": [2.0, 3.0],
        "dropout_noise_gain": [0.20, 0.40],
        "dropout_center_annulus": [0.12, 0.30],
        "harmonic_modes": [2, 3, 5],
        "ma_base_probability": 0.03,
        "ma_radius_mm": [0.01, 0.08],
        "ma_length_factor": [0.3, 0.4],
        "ma_severity_coupling": 15.0,
        "ma_field_coupling": 1.0,
        "ma_band": [0.15, 0.75],
        "nv_probability": 0.4,
        "nv_severity": [0.2, 0.7],
        "nv_footprint": [0.015, 0.07],
        "nv_steps": [3, 6],
        "tortuosity_gain": [0.01, 0.5],
        "tortuosity_band": [0.30, 0.75],
        "regression_threshold": 0.35,
        "prune_core_bias": 2.0,
        "prune_radius_bias": 0.5,
        "drop_fraction_bounds": [0.1, 0.95],
        "elongation": [1.0, 1.3],
        "dilation": [1.0, 1.4],
    },
    "raster": {
        "resolution": 512,
        "supersample": 2,
        "binarize_threshold": 0.1,
    },
    "text": {
        "mode": "pretrain",
        "diversify_questions": False,
    },
    "teacher": {
        "enabled": False,
        "mock": False,
        "base_url": "",
        "model": "",
        "token_env": "OCTASIM_TEACHER_TOKEN",
        "timeout": 30.0,
        "max_retries": 2,
        "temperature": 0.9,
        "response_path": "choices.0.message.content",
        "include_image": False,
    },
    "run": {
        "healthy_fraction": 0.3,
    },
}


def _merge_checked(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {where} must be an object")
            out[key] = _merge_checked(defaults[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(user: dict | None = None) -> dict:
    """Defaults overlaid with a user document; unknown keys are errors."""
    resolved = _merge_checked(DEFAULT_CONFIG, user or {})
    _validate_ranges(resolved["pathology_ranges"])
    return resolved


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return resolve_config()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return resolve_config(doc)


def config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


_RANGE_KEYS = (
    "dropout_count", "dropout_radius", "dropout_strength", "dropout_exponent",
    "dropout_noise_gain", "dropout_center_annulus", "ma_radius_mm",
    "ma_length_factor", "ma_band", "nv_severity", "nv_footprint", "nv_steps",
    "tortuosity_gain", "tortuosity_band", "drop_fraction_bounds",
    "elongation", "dilation",
)


def _validate_ranges(ranges: dict) -> None:
    for key in _RANGE_KEYS:
        lo, hi = ranges[key]
        if lo > hi:
            raise ConfigError(f"inverted range for {key}: [{lo}, {hi}]")
    for key in ("ma_base_probability", "nv_probability"):
        if not 0.0 <= ranges[key] <= 1.0:
            raise ConfigError(f"{key} must lie in [0,1]")


# -- typed views over the resolved document -------------------------------------


def growth_domain(config: dict) -> GrowthDomain:
    g = config["growth"]
    return GrowthDomain(height=g["domain_height"], mm_per_unit=g["mm_per_unit"])


def growth_config(config: dict) -> GrowthConfig:
    g = config["growth"]
    return GrowthConfig(
        perception_distance=g["perception_distance"],
        perception_half_angle=math.radians(g["perception_half_angle_deg"]),
        step_size=g["step_size"],
        bifurcation_exponent=g["bifurcation_exponent"],
        direction_weight=g["direction_weight"],
        points_per_iteration=g["points_per_iteration"],
        iterations_per_layer=g["iterations_per_layer"],
        terminal_radius=g["terminal_radius"],
        source_sink_ratio=g["source_sink_ratio"],
        deep_seeds_per_kind=g["deep_seeds_per_kind"],
        root_angles_arterial=tuple(math.radians(a) for a in g["root_angles_arterial_deg"]),
        root_angles_venous=tuple(math.radians(a) for a in g["root_angles_venous_deg"]),
    )


def raster_config(config: dict) -> RasterConfig:
    r = config["raster"]
    return RasterConfig(
        resolution=r["resolution"],
        supersample=r["supersample"],
        binarize_threshold=r["binarize_threshold"],
    )


def teacher_config(config: dict) -> TeacherEndpointConfig:
    t = config["teacher"]
    return TeacherEndpointConfig(
        base_url=t["base_url"],
        model=t["model"],
        token_env=t["token_env"],
        timeout=t["timeout"],
        max_retries=t["max_retries"],
        temperature=t["temperature"],
        mock=t["mock"],
        response_path=t["response_path"],
        include_image=t["include_image"],
    )


def pruning_config(ranges: dict, drop_fraction: float) -> PruningConfig:
    return PruningConfig(
        regression_threshold=ranges["regression_threshold"],
        core_bias=ranges["prune_core_bias"],
        radius_bias=ranges["prune_radius_bias"],
        drop_fraction=drop_fraction,
        elongation=tuple(ranges["elongation"]),
        dilation=tuple(ranges["dilation"]),
    )


def ma_config(ranges: dict, length_factor: float) -> MicroaneurysmConfig:
    return MicroaneurysmConfig(
        base_probability=ranges["ma_base_probability"],
        severity_coupling=ranges["ma_severity_coupling"],
        field_coupling=ranges["ma_field_coupling"],
        band=tuple(ranges["ma_band"]),
        radius_mm=tuple(ranges["ma_radius_mm"]),
        length_factor=length_factor,
    )


def tortuosity_config(ranges: dict, gain: float) -> TortuosityConfig:
    return TortuosityConfig(gain=gain, band=tuple(ranges["tortuosity_band"]))
