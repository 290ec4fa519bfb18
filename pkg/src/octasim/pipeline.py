"""End-to-end orchestration: profiles, per-sample generation, dataset export.

Every sample is a pure function of (master seed, sample index, resolved
config): the derived seed feeds one RNG that drives profile sampling, FAZ
jitter, growth, pathology, and text. Datasets are therefore byte-reproducible
and independent of worker count; restarted runs skip samples already on disk
with a matching (id, seed, config digest).

Output layout::

    out/images/NNNNNNN.png   8-bit grayscale vessel map
    out/masks/NNNNNNN.png    binary segmentation mask (0 / 255)
    out/meta/NNNNNNN.json    structured metadata + id, seed, config digest
    out/conversations.jsonl  one conversation record per line, id order
    out/manifest.json        seeds, labels, paths, fallbacks, summary counts
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import annotate, config as config_mod, diversify
from .growth import FazGeometry, VesselForest, grow_forest, sample_faz_center
from .pathology import (
    DropoutField,
    DropoutRegion,
    NeovascularConfig,
    PathologyRecord,
    apply_pathologies,
)
from .raster import VesselMap, load_grayscale_png, rasterize, save_grayscale_png, save_mask_png

GENERATOR_VERSION = "0.1.0"

STAGING_DIR = ".staging"


class SampleGenerationError(RuntimeError):
    def __init__(self, sample_id: str, cause: BaseException):
        super().__init__(f"sample {sample_id} failed: {cause!r}")
        self.sample_id = sample_id


# -- pathology profile -----------------------------------------------------------


@dataclass(frozen=True)
class PathologyProfile:
    """Per-sample draw of every pathology hyperparameter."""

    dropout_count: int
    dropout_radius: float
    dropout_strength: float
    dropout_exponent: float
    dropout_noise_gain: float
    ma_length_factor: float
    nv_present: bool
    nv_severity: float
    nv_footprint: float
    nv_steps: int
    tortuosity_gain: float

    @property
    def healthy(self) -> bool:
        return self.dropout_count == 0 and not self.nv_present


def healthy_profile() -> PathologyProfile:
    return PathologyProfile(
        dropout_count=0,
        dropout_radius=0.0,
        dropout_strength=0.0,
        dropout_exponent=2.0,
        dropout_noise_gain=0.0,
        ma_length_factor=0.35,
        nv_present=False,
        nv_severity=0.0,
        nv_footprint=0.0,
        nv_steps=4,
        tortuosity_gain=0.0,
    )


def sample_profile(
    ranges: dict, rng: np.random.Generator, healthy_fraction: float = 0.0
) -> PathologyProfile:
    """Uniform draw of every profile field from its configured range.

    A ``healthy_fraction`` share of samples gets the all-absent profile. The
    neovascular block is present with the configured probability; because
    tufts need dropout context, a pathological draw with zero regions is
    bumped to one region when neovascularization is present.
    """
    if rng.uniform() < healthy_fraction:
        return healthy_profile()
    lo, hi = ranges["dropout_count"]
    count = int(rng.integers(lo, hi + 1))
    nv_present = bool(rng.uniform() < ranges["nv_probability"])
    if nv_present and count == 0:
        count = 1
    if nv_present:
        nv_severity = float(rng.uniform(*ranges["nv_severity"]))
        nv_footprint = float(rng.uniform(*ranges["nv_footprint"]))
        nv_steps = int(rng.integers(ranges["nv_steps"][0], ranges["nv_steps"][1] + 1))
    else:
        nv_severity, nv_footprint, nv_steps = 0.0, 0.0, 4
    return PathologyProfile(
        dropout_count=count,
        dropout_radius=float(rng.uniform(*ranges["dropout_radius"])),
        dropout_strength=float(rng.uniform(*ranges["dropout_strength"])),
        dropout_exponent=float(rng.uniform(*ranges["dropout_exponent"])),
        dropout_noise_gain=float(rng.uniform(*ranges["dropout_noise_gain"])),
        ma_length_factor=float(rng.uniform(*ranges["ma_length_factor"])),
        nv_present=nv_present,
        nv_severity=nv_severity,
        nv_footprint=nv_footprint,
        nv_steps=nv_steps,
        tortuosity_gain=float(rng.uniform(*ranges["tortuosity_gain"])),
    )


def build_dropout_field(
    profile: PathologyProfile,
    ranges: dict,
    faz: FazGeometry,
    rng: np.random.Generator,
) -> DropoutField:
    """Place the profile's lesions around the FAZ with randomized shapes."""
    regions = []
    annulus = ranges["dropout_center_annulus"]
    modes = ranges["harmonic_modes"]
    for _ in range(profile.dropout_count):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(annulus[0], annulus[1])
        cx = min(max(faz.center[0] + dist * math.cos(ang), 0.05), 0.95)
        cy = min(max(faz.center[1] + dist * math.sin(ang), 0.05), 0.95)
        n_modes = int(rng.integers(1, len(modes) + 1))
        chosen = rng.choice(np.asarray(modes), size=n_modes, replace=False)
        amps = rng.uniform(0.03, 0.25, size=n_modes)
        amps *= min(1.0, 0.8 / amps.sum())  # keep the boundary from collapsing
        harmonics = tuple(
            (int(m), float(a), float(rng.uniform(0.0, 2.0 * math.pi)))
            for m, a in zip(chosen, amps)
        )
        noise = tuple(
            (
                float(rng.uniform(2.0, 9.0)),
                float(rng.uniform(2.0, 9.0)),
                float(rng.uniform(0.0, 2.0 * math.pi)),
                float(rng.uniform(0.5, 1.0)),
            )
            for _ in range(3)
        )
        regions.append(
            DropoutRegion(
                center=(float(cx), float(cy)),
                base_radius=profile.dropout_radius,
                axis_a=float(rng.uniform(0.8, 1.25)),
                axis_b=float(rng.uniform(0.8, 1.25)),
                harmonics=harmonics,
                shape_exponent=profile.dropout_exponent,
                noise_gain=profile.dropout_noise_gain,
                strength=profile.dropout_strength,
                noise_components=noise,
            )
        )
    return DropoutField(regions)


# -- seeds -----------------------------------------------------------------------


def derive_sample_seed(master_seed: int, index: int) -> int:
    """Stable per-sample seed: low 8 bytes of SHA-256 over "master:index"."""
    if index < 0:
        raise ValueError("sample index must be non-negative")
    digest = hashlib.sha256(f"{master_seed}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


# -- single sample ----------------------------------------------------------------


@dataclass
class SampleBundle:
    sample_id: str
    seed: int
    vessel_map: VesselMap
    metadata: annotate.SampleMetadata
    conversation: annotate.ConversationRecord
    fallback: bool
    forest: VesselForest
    record: PathologyRecord


def generate_sample(
    seed: int,
    config: dict,
    sample_id: str = "0000000",
    force_profile: PathologyProfile | None = None,
) -> SampleBundle:
    """Run the full per-sample sequence for one derived seed."""
    try:
        return _generate_sample_inner(seed, config, sample_id, force_profile)
    except Exception as exc:
        raise SampleGenerationError(sample_id, exc) from exc


def _generate_sample_inner(
    seed: int,
    config: dict,
    sample_id: str,
    force_profile: PathologyProfile | None,
) -> SampleBundle:
    rng = np.random.default_rng(seed)
    ranges = config["pathology_ranges"]
    g = config["growth"]

    profile = (
        force_profile
        if force_profile is not None
        else sample_profile(ranges, rng, config["run"]["healthy_fraction"])
    )

    center = sample_faz_center(g["faz_jitter"], g["faz_max_shift"], rng)
    faz = FazGeometry(
        center=center,
        radius=g["faz_radius"],
        jitter=g["faz_jitter"],
        max_shift=g["faz_max_shift"],
    )

    domain = config_mod.growth_domain(config)
    forest = grow_forest(domain, config_mod.growth_config(config), faz, rng)

    dropout = build_dropout_field(profile, ranges, faz, rng)
    bounds = ranges["drop_fraction_bounds"]
    drop_fraction = min(max(profile.dropout_strength, bounds[0]), bounds[1])
    nv_config = None
    if profile.nv_present:
        nv_config = NeovascularConfig(
            severity=profile.nv_severity,
            footprint_radius=profile.nv_footprint,
            main_steps=profile.nv_steps,
        )
    record = apply_pathologies(
        forest,
        dropout,
        faz,
        config_mod.pruning_config(ranges, drop_fraction),
        config_mod.ma_config(ranges, profile.ma_length_factor),
        nv_config,
        config_mod.tortuosity_config(ranges, profile.tortuosity_gain),
        rng,
        step_size=g["step_size"],
        mm_per_unit=g["mm_per_unit"],
        kappa=g["bifurcation_exponent"],
    )

    vessel_map = rasterize(
        forest,
        record.microaneurysms,
        config_mod.raster_config(config),
        mm_per_unit=g["mm_per_unit"],
    )

    meta = annotate.metadata_from_record(faz, record)
    template = annotate.template_reasoning(meta, mm_per_unit=g["mm_per_unit"])

    teacher = config["teacher"]
    image_ref = f"images/{sample_id}.png"
    fallback = False
    answer_text = template
    if teacher["enabled"]:
        result = diversify.diversify_reasoning(
            meta,
            template,
            config_mod.teacher_config(config),
            image_ref=image_ref,
            style_seed=seed,
        )
        answer_text, fallback = result.text, result.fallback

    question = diversify.pick_question(seed, config["text"]["diversify_questions"])
    conversation = annotate.build_conversation(
        image_ref,
        meta,
        answer_text,
        mode=config["text"]["mode"],
        sample_id=sample_id,
        seed=seed,
        question=question,
    )
    return SampleBundle(
        sample_id=sample_id,
        seed=seed,
        vessel_map=vessel_map,
        metadata=meta,
        conversation=conversation,
        fallback=fallback,
        forest=forest,
        record=record,
    )


def serialize_forest(forest: VesselForest) -> bytes:
    """Canonical byte serialization of a forest (digest- and diff-friendly)."""
    arrays = forest.to_arrays()
    chunks = []
    for key in sorted(arrays):
        arr = arrays[key]
        chunks.append(key.encode("ascii"))
        chunks.append(str(arr.dtype).encode("ascii"))
        chunks.append(str(arr.shape).encode("ascii"))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"|".join(chunks)


def forest_digest(forest: VesselForest) -> str:
    return hashlib.sha256(serialize_forest(forest)).hexdigest()


# -- dataset ----------------------------------------------------------------------


@dataclass
class DatasetManifest:
    master_seed: int
    generator_version: str
    config_digest: str
    rows: list[dict]
    summary: dict
    failed: list[str]

    def to_json(self) -> str:
        return json.dumps(
            {
                "master_seed": self.master_seed,
                "generator_version": self.generator_version,
                "config_digest": self.config_digest,
                "count": len(self.rows),
                "samples": self.rows,
                "summary": self.summary,
                "failed": self.failed,
            },
            indent=2,
        )


def _sample_paths(out_dir: Path, sample_id: str) -> dict[str, Path]:
    return {
        "image": out_dir / "images" / f"{sample_id}.png",
        "mask": out_dir / "masks" / f"{sample_id}.png",
        "meta": out_dir / "meta" / f"{sample_id}.json",
        "staged": out_dir / STAGING_DIR / f"{sample_id}.json",
    }


def _existing_valid(paths: dict[str, Path], seed: int, digest: str) -> dict | None:
    """Return the staged record when a previous run already produced this sample."""
    if not all(paths[k].exists() for k in ("image", "mask", "meta", "staged")):
        return None
    try:
        staged = json.loads(paths["staged"].read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    if staged.get("seed") != seed or staged.get("config_digest") != digest:
        return None
    return staged


def _produce_sample(args: tuple) -> dict:
    """Worker body: generate one sample and write its files. Returns the staged row."""
    index, master_seed, config, digest, out_dir_str = args
    out_dir = Path(out_dir_str)
    sample_id = f"{index:07d}"
    seed = derive_sample_seed(master_seed, index)
    paths = _sample_paths(out_dir, sample_id)

    staged = _existing_valid(paths, seed, digest)
    if staged is not None:
        return staged

    bundle = generate_sample(seed, config, sample_id=sample_id)
    save_grayscale_png(bundle.vessel_map.intensity, paths["image"])
    save_mask_png(bundle.vessel_map.mask, paths["mask"])
    paths["meta"].write_text(
        bundle.metadata.to_json(sample_id=sample_id, seed=seed, config_digest=digest),
        encoding="utf-8",
    )
    staged = {
        "id": sample_id,
        "seed": seed,
        "config_digest": digest,
        "label": bundle.metadata.label,
        "fallback": bundle.fallback,
        "conversation": json.loads(bundle.conversation.to_jsonl()),
        "image": f"images/{sample_id}.png",
        "mask": f"masks/{sample_id}.png",
        "meta": f"meta/{sample_id}.json",
    }
    paths["staged"].write_text(json.dumps(staged), encoding="utf-8")
    return staged


def generate_dataset(
    count: int,
    master_seed: int,
    config: dict,
    out_dir: str | Path,
    parallelism: int = 1,
) -> DatasetManifest:
    """Produce ``count`` samples plus conversations.jsonl and manifest.json.

    Existing valid samples are skipped, so interrupted runs can resume. The
    manifest is written last. Failed samples are reported in the manifest and
    leave the run marked as a partial failure.
    """
    if count < 1:
        raise config_mod.ConfigError("sample count must be >= 1")
    out_dir = Path(out_dir)
    for sub in ("images", "masks", "meta", STAGING_DIR):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    digest = config_mod.config_digest(config)

    jobs = [(i, master_seed, config, digest, str(out_dir)) for i in range(count)]
    staged_rows: dict[int, dict] = {}
    failed: list[str] = []

    if parallelism <= 1:
        for job in jobs:
            try:
                staged_rows[job[0]] = _produce_sample(job)
            except SampleGenerationError as exc:
                failed.append(exc.sample_id)
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for index, outcome in zip(
                range(count), pool.map(_produce_sample_safe, jobs)
            ):
                if isinstance(outcome, str):
                    failed.append(outcome)
                else:
                    staged_rows[index] = outcome

    rows = []
    summary = {label: 0 for label in annotate.LABELS}
    lines = []
    for i in sorted(staged_rows):
        staged = staged_rows[i]
        rows.append(
            {
                "id": staged["id"],
                "seed": staged["seed"],
                "label": staged["label"],
                "image": staged["image"],
                "mask": staged["mask"],
                "meta": staged["meta"],
                "fallback": staged["fallback"],
            }
        )
        summary[staged["label"]] += 1
        lines.append(json.dumps(staged["conversation"], ensure_ascii=False))

    (out_dir / "conversations.jsonl").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    manifest = DatasetManifest(
        master_seed=master_seed,
        generator_version=GENERATOR_VERSION,
        config_digest=digest,
        rows=rows,
        summary=summary,
        failed=sorted(failed),
    )
    (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def _produce_sample_safe(args: tuple):
    try:
        return _produce_sample(args)
    except SampleGenerationError as exc:
        return exc.sample_id


# -- validation --------------------------------------------------------------------


def validate_dataset(out_dir: str | Path, config: dict | None = None) -> list[str]:
    """Re-run the invariant suites over a dataset on disk; returns found problems."""
    out_dir = Path(out_dir)
    problems: list[str] = []
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        return ["manifest.json is missing"]
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    conversations = {}
    conv_path = out_dir / "conversations.jsonl"
    if conv_path.exists():
        for line in conv_path.read_text(encoding="utf-8").splitlines():
            doc = json.loads(line)
            conversations[doc["id"]] = doc
    else:
        problems.append("conversations.jsonl is missing")

    threshold = (config or config_mod.resolve_config())["raster"]["binarize_threshold"]
    recount = {label: 0 for label in annotate.LABELS}
    for row in manifest["samples"]:
        sid = row["id"]
        for key in ("image", "mask", "meta"):
            if not (out_dir / row[key]).exists():
                problems.append(f"{sid}: missing file {row[key]}")
        meta_path = out_dir / row["meta"]
        if not meta_path.exists():
            continue
        meta = annotate.SampleMetadata.from_json(meta_path.read_text(encoding="utf-8"))
        recount[meta.label] += 1
        if meta.label != annotate.derive_label(meta):
            problems.append(f"{sid}: label inconsistent with metadata")
        if meta.label != row["label"]:
            problems.append(f"{sid}: manifest label differs from metadata")
        conv = conversations.get(sid)
        if conv is None:
            problems.append(f"{sid}: conversation record missing")
        else:
            if not conv["answer"]:
                problems.append(f"{sid}: empty answer")
            violations = diversify.verify_fact_preservation(meta, conv["answer"])
            for v in violations:
                problems.append(f"{sid}: {v}")
            if conv["seed"] != row["seed"]:
                problems.append(f"{sid}: conversation seed differs from manifest")
        image_path, mask_path = out_dir / row["image"], out_dir / row["mask"]
        if image_path.exists() and mask_path.exists():
            intensity = load_grayscale_png(image_path)
            mask = (load_grayscale_png(mask_path) >= 0.5).astype(bool)
            # the PNG quantizes intensity to 8 bits, so pixels within one
            # quantization step of the threshold are legitimately ambiguous
            surely_fg = intensity >= threshold + 1.0 / 255.0
            surely_bg = intensity < threshold - 1.0 / 255.0
            if (surely_fg & ~mask).any() or (surely_bg & mask).any():
                problems.append(f"{sid}: mask does not match thresholded intensity")

    if manifest["summary"] != recount:
        problems.append("manifest summary counts do not match metadata recount")
    if len(manifest["samples"]) != manifest["count"]:
        problems.append("manifest row count mismatch")
    return problems
