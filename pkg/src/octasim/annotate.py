"""Structured metadata, absolute-direction localization, and template reasoning.

Image convention: x grows rightward, y grows DOWNWARD (image convention), so
"up" means smaller y. All localization uses absolute image directions
(left / right / up / down and diagonals) plus a distance qualifier relative
to the FAZ center; eye-dependent anatomical direction words never appear.

The reasoning paragraph always walks the same fixed order: FAZ, capillary
dropout, microaneurysms, neovascularization, tortuosity; absent findings are
negated explicitly rather than omitted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .growth import FazGeometry
from .pathology import PathologyRecord

HEALTHY, NPDR, PDR = "Healthy", "NPDR", "PDR"
LABELS = (HEALTHY, NPDR, PDR)

# words that would tie a description to eye laterality; matched as substrings
EYE_DEPENDENT_TERMS = ("temporal", "nasal", "superior", "inferior")

# 8-way compass sectors counter-clockwise from "right", in the up-positive frame
SECTOR_ZONES = (
    "right", "upper-right", "up", "upper-left",
    "left", "lower-left", "down", "lower-right",
)
ADJACENT, MIDFIELD, PERIPHERAL = "adjacent-to-FAZ", "mid-field", "peripheral"
ADJACENT_LIMIT = 0.15
MIDFIELD_LIMIT = 0.30

# presence rule for tortuosity: a visible gain AND at least one jittered node
TORTUOSITY_GAIN_FLOOR = 0.05


@dataclass(frozen=True)
class LocalizationPhrase:
    zone: str                # center or an 8-way compass sector
    qualifier: str           # adjacent-to-FAZ | mid-field | peripheral

    def phrase(self) -> str:
        if self.zone == "center":
            return "at the center of the image"
        if self.qualifier == ADJACENT:
            return f"{self.zone} of center, adjacent to the FAZ"
        if self.qualifier == MIDFIELD:
            return f"in the {self.zone} mid-field"
        return f"in the {self.zone} periphery"


def localize(point: tuple[float, float], faz: FazGeometry) -> LocalizationPhrase:
    """Absolute-direction zone of a point, with a FAZ-distance qualifier.

    The zone is "center" within the FAZ disk plus a small margin; otherwise
    the 8-way compass sector of the offset from the image center, with sector
    boundaries at odd multiples of 22.5 degrees.
    """
    px, py = float(point[0]), float(point[1])
    d_faz = math.hypot(px - faz.center[0], py - faz.center[1])
    if d_faz <= ADJACENT_LIMIT:
        qualifier = ADJACENT
    elif d_faz <= MIDFIELD_LIMIT:
        qualifier = MIDFIELD
    else:
        qualifier = PERIPHERAL
    if d_faz <= faz.radius + 0.05:
        return LocalizationPhrase("center", qualifier)
    dx = px - 0.5
    dy_up = 0.5 - py  # y grows downward; positive means "up"
    angle = math.degrees(math.atan2(dy_up, dx)) % 360.0
    sector = int(((angle + 22.5) % 360.0) // 45.0)
    return LocalizationPhrase(SECTOR_ZONES[sector], qualifier)


@dataclass
class SampleMetadata:
    """Ground truth for one sample, the sole input to label and text generation."""

    faz_center: tuple[float, float]
    faz_radius: float
    dropout_regions: list[dict] = field(default_factory=list)
    microaneurysms: list[dict] = field(default_factory=list)
    neovascular_tufts: list[dict] = field(default_factory=list)
    tortuosity: dict = field(default_factory=lambda: {
        "gain": 0.0, "band": [0.30, 0.75], "affected_node_count": 0,
    })
    pruning: dict = field(default_factory=lambda: {"removed_leaf_count": 0})
    label: str = HEALTHY

    def to_json(self, **extra) -> str:
        doc = {
            "faz": {"center": list(self.faz_center), "radius": self.faz_radius},
            "dropout_regions": self.dropout_regions,
            "microaneurysms": self.microaneurysms,
            "neovascular_tufts": self.neovascular_tufts,
            "tortuosity": self.tortuosity,
            "pruning": self.pruning,
            "label": self.label,
        }
        doc.update(extra)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SampleMetadata":
        doc = json.loads(text)
        return cls(
            faz_center=tuple(doc["faz"]["center"]),
            faz_radius=float(doc["faz"]["radius"]),
            dropout_regions=doc["dropout_regions"],
            microaneurysms=doc["microaneurysms"],
            neovascular_tufts=doc["neovascular_tufts"],
            tortuosity=doc["tortuosity"],
            pruning=doc["pruning"],
            label=doc["label"],
        )

    def compact_json(self) -> str:
        """One-line summary handed to the rewrite teacher."""
        doc = {
            "faz": {"center": [round(v, 3) for v in self.faz_center],
                    "radius": round(self.faz_radius, 3)},
            "dropout": [
                {"center": [round(v, 3) for v in r["center"]],
                 "radius": round(r["effective_radius"], 3)}
                for r in self.dropout_regions
            ],
            "microaneurysms": len(self.microaneurysms),
            "neovascular_tufts": len(self.neovascular_tufts),
            "tortuosity_present": tortuosity_present(self),
            "label": self.label,
        }
        return json.dumps(doc, separators=(",", ":"))


def metadata_from_record(
    faz: FazGeometry, record: PathologyRecord, label: str | None = None
) -> SampleMetadata:
    """Collect the pathology record into exportable metadata."""
    meta = SampleMetadata(
        faz_center=(float(faz.center[0]), float(faz.center[1])),
        faz_radius=float(faz.radius),
    )
    for region in record.dropout.regions:
        meta.dropout_regions.append(
            {
                "center": [float(region.center[0]), float(region.center[1])],
                "effective_radius": region.effective_radius(),
                "strength": region.strength,
                "mean_field_value": region.mean_value(),
            }
        )
    for ma in record.microaneurysms:
        meta.microaneurysms.append(
            {"center": [ma.center[0], ma.center[1]], "radius_mm": ma.radius_mm}
        )
    for tuft in record.tufts:
        origin = tuft.main_points[0]
        meta.neovascular_tufts.append(
            {
                "origin": [origin[0], origin[1]],
                "point_count": len(tuft.main_points),
                "footprint_radius": record.nv_footprint,
            }
        )
    meta.tortuosity = {
        "gain": record.tortuosity_gain,
        "band": [record.tortuosity_band[0], record.tortuosity_band[1]],
        "affected_node_count": record.tortuosity_nodes,
    }
    meta.pruning = {"removed_leaf_count": record.removed_leaves}
    meta.label = label if label is not None else derive_label(meta)
    return meta


def tortuosity_present(meta: SampleMetadata) -> bool:
    return (
        meta.tortuosity["gain"] > TORTUOSITY_GAIN_FLOOR
        and meta.tortuosity["affected_node_count"] >= 1
    )


def derive_label(meta: SampleMetadata) -> str:
    """PDR on any neovascular tuft; NPDR on dropout, MA, or visible tortuosity."""
    if meta.neovascular_tufts:
        return PDR
    if meta.dropout_regions or meta.microaneurysms or tortuosity_present(meta):
        return NPDR
    return HEALTHY


# -- template reasoning --------------------------------------------------------


def _count_word(n: int, singular: str, plural: str) -> str:
    return f"1 {singular}" if n == 1 else f"{n} {plural}"


def _join_locations(phrases: list[str]) -> str:
    if len(phrases) == 1:
        return phrases[0]
    return ", ".join(phrases[:-1]) + " and " + phrases[-1]


def _faz_sentence(meta: SampleMetadata, mm_per_unit: float) -> str:
    cx, cy = meta.faz_center
    radius_mm = meta.faz_radius * mm_per_unit
    dx, dy = cx - 0.5, cy - 0.5
    if math.hypot(dx, dy) < 0.015:
        where = "centered in the image"
    else:
        horiz = "left" if dx < 0 else "right"
        vert = "upper" if dy < 0 else "lower"
        where = f"shifted slightly toward the {vert}-{horiz}"
    return (
        "The foveal avascular zone (FAZ) appears as a well-defined dark region "
        f"{where}, with a radius of about {radius_mm:.2f} mm."
    )


def _dropout_sentence(meta: SampleMetadata, faz: FazGeometry) -> str:
    regions = meta.dropout_regions
    if not regions:
        return "No areas of capillary dropout are seen."
    spots = [localize(tuple(r["center"]), faz).phrase() for r in regions]
    return (
        f"There {'is' if len(regions) == 1 else 'are'} "
        f"{_count_word(len(regions), 'region', 'regions')} of capillary dropout "
        f"(non-perfusion): {_join_locations(spots)}."
    )


def _ma_sentence(meta: SampleMetadata, faz: FazGeometry) -> str:
    mas = meta.microaneurysms
    if not mas:
        return "No microaneurysms are seen."
    spots = [localize(tuple(m["center"]), faz).phrase() for m in mas]
    if len(mas) > 4:
        shown = spots[:3]
        return (
            f"{_count_word(len(mas), 'microaneurysm', 'microaneurysms')} are visible "
            f"as small bright dots, mainly {_join_locations(shown)}."
        )
    verb = "is" if len(mas) == 1 else "are"
    return (
        f"{_count_word(len(mas), 'microaneurysm', 'microaneurysms')} {verb} visible "
        f"as small bright dots: {_join_locations(spots)}."
    )


def _nv_sentence(meta: SampleMetadata, faz: FazGeometry) -> str:
    tufts = meta.neovascular_tufts
    if not tufts:
        return "No neovascularization is identified."
    spots = [localize(tuple(t["origin"]), faz).phrase() for t in tufts]
    if len(tufts) == 1:
        return f"A fine neovascular tuft is present {spots[0]}."
    return (
        f"{_count_word(len(tufts), 'neovascular tuft', 'neovascular tufts')} are present: "
        f"{_join_locations(spots)}."
    )


def _tortuosity_sentence(meta: SampleMetadata) -> str:
    if tortuosity_present(meta):
        return (
            "Vessels along the dropout borders show increased tortuosity, "
            "with a locally curled course."
        )
    return "Vessel tortuosity is within normal limits."


def template_reasoning(
    meta: SampleMetadata, mm_per_unit: float = 3.0, with_diagnosis: bool = False
) -> str:
    """Deterministic five-clause paragraph in the fixed reporting order."""
    faz = FazGeometry(
        center=meta.faz_center, radius=meta.faz_radius, jitter=0.0, max_shift=1.0
    )
    parts = [
        _faz_sentence(meta, mm_per_unit),
        _dropout_sentence(meta, faz),
        _ma_sentence(meta, faz),
        _nv_sentence(meta, faz),
        _tortuosity_sentence(meta),
    ]
    if with_diagnosis:
        parts.append(diagnosis_sentence(meta.label))
    return " ".join(parts)


def diagnosis_sentence(label: str) -> str:
    if label not in LABELS:
        raise ValueError(f"unknown label: {label}")
    return f"Overall, this image is classified as {label}."


# -- conversation records --------------------------------------------------------

IMAGE_TOKEN = "<image>"

# the canonical training question; the image token precedes it on its own line
TRAINING_QUESTION = (
    "What features are visible in this OCTA image? \n"
    "Please first describe the image features, then inspect it for signs \n"
    "of diabetic retinopathy (DR) and classify it as Healthy, NPDR, or PDR."
)

PRETRAIN, FINETUNE = "pretrain", "finetune"


@dataclass(frozen=True)
class ConversationRecord:
    sample_id: str
    image: str
    question: str
    answer: str
    label: str
    seed: int

    def to_jsonl(self) -> str:
        doc = {
            "id": self.sample_id,
            "image": self.image,
            "question": self.question,
            "answer": self.answer,
            "label": self.label,
            "seed": self.seed,
        }
        return json.dumps(doc, ensure_ascii=False)


def build_conversation(
    image_ref: str,
    meta: SampleMetadata,
    reasoning: str,
    mode: str = PRETRAIN,
    sample_id: str = "0000000",
    seed: int = 0,
    question: str | None = None,
) -> ConversationRecord:
    """Single-turn record: image token plus question, answered by the reasoning.

    In finetune mode the answer additionally ends with the diagnosis sentence.
    """
    if not reasoning:
        raise ValueError("reasoning text must be non-empty")
    if mode not in (PRETRAIN, FINETUNE):
        raise ValueError(f"unknown conversation mode: {mode}")
    q = question if question is not None else TRAINING_QUESTION
    answer = reasoning
    if mode == FINETUNE and not answer.rstrip().endswith(diagnosis_sentence(meta.label)):
        answer = answer.rstrip() + " " + diagnosis_sentence(meta.label)
    return ConversationRecord(
        sample_id=sample_id,
        image=image_ref,
        question=f"{IMAGE_TOKEN}\n{q}",
        answer=answer,
        label=meta.label,
        seed=seed,
    )


def find_eye_dependent_terms(text: str) -> list[str]:
    """Blocklisted eye-laterality terms present in the text (substring match)."""
    low = text.lower()
    return [term for term in EYE_DEPENDENT_TERMS if term in low]
