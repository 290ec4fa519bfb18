"""Style diversification of template reasoning through a chat-completion teacher.

The teacher is any HTTP chat-completion endpoint; request/response field
names are remappable through a small adapter so the pipeline is not tied to
one vendor. The pipeline never blocks on the teacher: after the configured
retries the sample falls back to its template text and the fallback is
flagged. A lexical fact verifier rejects rewrites that drop present
pathologies, assert absent ones, or use eye-dependent direction terms.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import requests

from .annotate import IMAGE_TOKEN, SampleMetadata, find_eye_dependent_terms, tortuosity_present

MOCK_PREFIX = "[mock rewrite] "

REWRITE_SYSTEM_PROMPT = (
    "You are an ophthalmology OCTA expert and skilled medical writer.\n"
    "You will receive an OCTA image, concise metadata, and an original\n"
    "chain-of-thought (CoT). Rewrite the CoT in a different language\n"
    "style while preserving ALL medical facts, locations, and uncertainty.\n"
    "Do not add new findings. Keep content consistent with the image and\n"
    "metadata. Spatial terminology constraint: avoid eye-dependent terms\n"
    "(e.g., temporal, nasal, superotemporal, inferonasal, superior/inferior\n"
    "when tied to eye laterality). Use only absolute image directions such\n"
    "as left, right, up, down, and center to describe locations.\n"
    "Aim for similar length and clarity. Output only the rewritten CoT."
)

REWRITE_USER_TEMPLATE = (
    "Here is an OCTA image <image>.\n"
    "Metadata (JSON): <COMPACT_METADATA_JSON>\n"
    "\n"
    "Original CoT describing the image:\n"
    "<ORIGINAL_COT>\n"
    "\n"
    "Task: Rewrite the CoT with a distinct language style (e.g., more\n"
    "academic, more succinct, or slightly conversational) while preserving\n"
    "all facts and spatial relations. Do not invent new content. \n"
    "Use only absolute image directions such as left, right, up, down, and center.\n"
    "Return only the rewritten CoT."
)

# local paraphrase pool for the user question; index 0 is the canonical wording
QUESTION_PARAPHRASES = (
    "What features are visible in this OCTA image? \n"
    "Please first describe the image features, then inspect it for signs \n"
    "of diabetic retinopathy (DR) and classify it as Healthy, NPDR, or PDR.",
    "Please describe the visible features of this OCTA image, then evaluate it "
    "for diabetic retinopathy (DR) and assign one of: Healthy, NPDR, or PDR.",
    "Examine this OCTA image. Describe the vascular features you can see, check "
    "for signs of diabetic retinopathy (DR), and classify the image as Healthy, "
    "NPDR, or PDR.",
    "What does this OCTA image show? Start with the image features, then look "
    "for diabetic retinopathy (DR) findings and state whether it is Healthy, "
    "NPDR, or PDR.",
    "Describe the features of this OCTA image first, then assess it for diabetic "
    "retinopathy (DR) and give a final classification of Healthy, NPDR, or PDR.",
    "Review this OCTA image: summarize its visible vascular features, screen for "
    "diabetic retinopathy (DR), and conclude with one label out of Healthy, NPDR, "
    "or PDR.",
)


def pick_question(seed: int, diversified: bool) -> str:
    """Deterministic per-sample question; index 0 unless diversification is on."""
    if not diversified:
        return QUESTION_PARAPHRASES[0]
    return QUESTION_PARAPHRASES[seed % len(QUESTION_PARAPHRASES)]


@dataclass(frozen=True)
class RewriteRequest:
    image_ref: str
    compact_metadata: str
    original_text: str
    style_seed: int = 0

    def __post_init__(self):
        if not self.original_text:
            raise ValueError("original text must be non-empty")


@dataclass(frozen=True)
class TeacherEndpointConfig:
    base_url: str = ""
    model: str = ""
    token_env: str = "OCTASIM_TEACHER_TOKEN"
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.9
    mock: bool = False
    # adapter: where the completion text lives in the response JSON
    response_path: str = "choices.0.message.content"
    include_image: bool = False

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("retry count must be non-negative")


def build_rewrite_messages(request: RewriteRequest) -> tuple[str, str]:
    """(system, user) message pair with metadata and template substituted in."""
    user = REWRITE_USER_TEMPLATE.replace(
        "<COMPACT_METADATA_JSON>", request.compact_metadata
    ).replace("<ORIGINAL_COT>", request.original_text)
    return REWRITE_SYSTEM_PROMPT, user


def _extract_response_text(doc, path: str) -> str:
    node = doc
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node[part]
        else:
            raise KeyError(path)
    if not isinstance(node, str):
        raise KeyError(path)
    return node


@dataclass
class RewriteResult:
    text: str
    fallback: bool
    attempts: int = 0


def rewrite(request: RewriteRequest, endpoint: TeacherEndpointConfig) -> RewriteResult:
    """Ask the teacher for a restyled paragraph; fall back to the template on failure.

    Makes at most ``max_retries + 1`` attempts. Empty or malformed responses
    count as failures. In mock mode the template comes back with a
    deterministic prefix marker and no network traffic.
    """
    if endpoint.mock:
        return RewriteResult(MOCK_PREFIX + request.original_text, fallback=False, attempts=0)

    system_text, user_text = build_rewrite_messages(request)
    body = {
        "model": endpoint.model,
        "messages": [
            {"role": "system", "content": system_text},
            {"role": "user", "content": user_text},
        ],
        "temperature": endpoint.temperature,
    }
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(endpoint.token_env, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"

    attempts = 0
    for _ in range(endpoint.max_retries + 1):
        attempts += 1
        try:
            resp = requests.post(
                endpoint.base_url, json=body, headers=headers, timeout=endpoint.timeout
            )
            resp.raise_for_status()
            text = _extract_response_text(resp.json(), endpoint.response_path).strip()
            if text:
                return RewriteResult(text, fallback=False, attempts=attempts)
        except (requests.RequestException, ValueError, KeyError, IndexError):
            pass
    return RewriteResult(request.original_text, fallback=True, attempts=attempts)


# -- fact preservation ----------------------------------------------------------

_NEGATION_CUES = (
    "no ", "not ", "without", "absen", "free of", "neither", "unremarkable", "normal",
)

_PATHOLOGY_TERMS = {
    "dropout": ("dropout", "non-perfusion", "nonperfusion"),
    "microaneurysms": ("microaneurysm",),
    "neovascular_tufts": ("neovascular", "neovascularization"),
    "tortuosity": ("tortuosity", "tortuous"),
}


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+", text) if s.strip()]


def _mentioned_affirmatively(text: str, terms: tuple[str, ...]) -> bool:
    for sentence in _sentences(text.lower()):
        if any(t in sentence for t in terms) and not any(
            cue in sentence for cue in _NEGATION_CUES
        ):
            return True
    return False


def verify_fact_preservation(meta: SampleMetadata, candidate: str) -> list[str]:
    """Lexical consistency check of a rewrite against the metadata.

    Returns a list of violations (empty means pass): a present pathology never
    mentioned, an absent pathology asserted without negation, or any
    eye-dependent direction term.
    """
    violations: list[str] = []
    present = {
        "dropout": bool(meta.dropout_regions),
        "microaneurysms": bool(meta.microaneurysms),
        "neovascular_tufts": bool(meta.neovascular_tufts),
        "tortuosity": tortuosity_present(meta),
    }
    low = candidate.lower()
    for key, terms in _PATHOLOGY_TERMS.items():
        if present[key]:
            if not any(t in low for t in terms):
                violations.append(f"present pathology not mentioned: {key}")
        elif _mentioned_affirmatively(candidate, terms):
            violations.append(f"absent pathology asserted: {key}")
    for term in find_eye_dependent_terms(candidate):
        violations.append(f"eye-dependent term used: {term}")
    return violations


def diversify_reasoning(
    meta: SampleMetadata,
    template: str,
    endpoint: TeacherEndpointConfig,
    image_ref: str = "",
    style_seed: int = 0,
) -> RewriteResult:
    """Rewrite and verify; verification failures fall back to the template."""
    request = RewriteRequest(
        image_ref=image_ref,
        compact_metadata=meta.compact_json(),
        original_text=template,
        style_seed=style_seed,
    )
    result = rewrite(request, endpoint)
    if not result.fallback and verify_fact_preservation(meta, result.text):
        return RewriteResult(template, fallback=True, attempts=result.attempts)
    return result
