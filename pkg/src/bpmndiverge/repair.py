"""Ambiguity localization in the source narrative and evidence-backed repair.

Diagnosed gateways are mapped back to narrative segments by case-folded
token overlap, paired with the competing readings found in the two models,
and handed to a rewrite provider.  Providers return revised excerpts with a
rationale and at least one supplemental-document evidence reference;
unsupported assumptions are rejected at validation.  Reconstruction splices
revised excerpts back into their segments and leaves every other character
of the narrative untouched.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import requests

from .bpmn import NodeKind, ProcessModel
from .conditions import normalize, to_text, variables
from .diagnosis import DirectionResult

DEFAULT_LOCALIZATION_THRESHOLD = 0.15


class ExcerptNotFoundError(Exception):
    """A repair's anchor excerpt no longer occurs in its segment."""


class ProviderUnavailableError(Exception):
    """The rewrite provider cannot be reached or keeps failing."""


class ProviderMalformedResponseError(Exception):
    """The provider answered with something that is not a repair record."""

    def __init__(self, ambiguity_id: str, detail: str):
        self.ambiguity_id = ambiguity_id
        self.detail = detail
        super().__init__(f"{ambiguity_id}: {detail}")


@dataclass(frozen=True)
class Segment:
    segment_id: str
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class NarrativeDocument:
    """Narrative text with ordered, non-overlapping segments."""

    doc_id: str
    text: str
    segments: tuple[Segment, ...]

    def __post_init__(self):
        last_end = 0
        for segment in self.segments:
            if segment.start < last_end:
                raise ValueError(f"segment {segment.segment_id!r} overlaps its predecessor")
            if self.text[segment.start : segment.end] != segment.text:
                raise ValueError(f"segment {segment.segment_id!r} does not match its range")
            last_end = segment.end

    def segment(self, segment_id: str) -> Segment:
        for segment in self.segments:
            if segment.segment_id == segment_id:
                return segment
        raise KeyError(segment_id)

    @classmethod
    def from_text(cls, doc_id: str, text: str) -> "NarrativeDocument":
        """Default segmentation: paragraphs separated by blank lines."""
        segments = []
        for index, match in enumerate(
            re.finditer(r"(?:[^\n]*\S[^\n]*\n?)+", text), start=1
        ):
            chunk = match.group()
            end = match.end()
            if chunk.endswith("\n"):
                end -= 1
                chunk = chunk[:-1]
            segments.append(Segment(f"seg-{index}", match.start(), end, chunk))
        return cls(doc_id, text, tuple(segments))

    @classmethod
    def with_segments(
        cls, doc_id: str, text: str, ranges: Sequence[Mapping[str, object]]
    ) -> "NarrativeDocument":
        """Sidecar override: explicit [{segment_id, start, end}] ranges."""
        segments = tuple(
            Segment(
                str(entry["segment_id"]),
                int(entry["start"]),  # type: ignore[arg-type]
                int(entry["end"]),  # type: ignore[arg-type]
                text[int(entry["start"]) : int(entry["end"])],  # type: ignore[arg-type]
            )
            for entry in ranges
        )
        return cls(doc_id, text, segments)


@dataclass(frozen=True)
class GatewayRef:
    role: str  # "target" | "reference"
    model_id: str
    gateway_id: str
    label: str


@dataclass(frozen=True)
class Interpretation:
    model_id: str
    reading: str
    exercised_condition: str


@dataclass(frozen=True)
class AmbiguityInstance:
    ambiguity_id: str
    gateways: tuple[GatewayRef, ...]
    segment_id: str
    excerpt: str  # verbatim substring of the segment
    score: float
    interpretations: tuple[Interpretation, ...]


@dataclass(frozen=True)
class LocalizationResult:
    instances: tuple[AmbiguityInstance, ...]
    unlocalized: tuple[str, ...]  # gateway ids with no segment above threshold


@dataclass(frozen=True)
class RepairRecord:
    ambiguity_id: str
    revised_excerpt: str
    rationale: str
    evidence_refs: tuple[str, ...]


@dataclass(frozen=True)
class RejectedRepair:
    ambiguity_id: str
    reason: str


@dataclass(frozen=True)
class RepairOutcome:
    records: tuple[RepairRecord, ...]
    rejected: tuple[RejectedRepair, ...]


@dataclass(frozen=True)
class RepairedNarrative:
    doc_id: str
    text: str
    applied: tuple[RepairRecord, ...]


def tokenize(text: str) -> set[str]:
    """Case-folded alphanumeric tokens; underscores split compound names."""
    return {token.casefold() for token in re.findall(r"[A-Za-z0-9]+", text)}


def token_jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def _gateway_condition_variables(model: ProcessModel, gateway_id: str) -> set[str]:
    names: set[str] = set()
    for flow in model.outgoing(gateway_id):
        if flow.condition is not None:
            names |= variables(flow.condition)
    return names


def _match_reference_gateway(
    ref_model: ProcessModel, label: str
) -> str | None:
    """Reference gateway matched by label, falling back to best token overlap."""
    candidates = [n for n in ref_model.nodes if n.kind is NodeKind.EXCLUSIVE_GATEWAY]
    for node in candidates:
        if node.label == label:
            return node.id
    label_tokens = tokenize(label)
    best_id, best_score = None, 0.0
    for node in candidates:
        score = token_jaccard(label_tokens, tokenize(node.label))
        if score > best_score:
            best_id, best_score = node.id, score
    return best_id


def _describe_gateway(model: ProcessModel, gateway_id: str) -> tuple[str, str]:
    """(reading, exercised_condition) for one model's version of a gateway."""
    node = model.node(gateway_id)
    clauses = []
    conditions = []
    default_clause = None
    for flow in model.outgoing(gateway_id):
        target_label = model.node(flow.target).label or flow.target
        if flow.is_default:
            default_clause = f"otherwise to '{target_label}'"
        elif flow.condition is not None:
            text = to_text(normalize(flow.condition))
            conditions.append(text)
            clauses.append(f"to '{target_label}' when {text}")
        else:
            clauses.append(f"to '{target_label}' unconditionally")
    if default_clause:
        clauses.append(default_clause)
    reading = f"'{node.label or gateway_id}' routes " + "; ".join(clauses)
    return reading, " | ".join(conditions)


def localize_ambiguity(
    result: DirectionResult,
    tgt_model: ProcessModel,
    ref_model: ProcessModel,
    document: NarrativeDocument,
    *,
    threshold: float = DEFAULT_LOCALIZATION_THRESHOLD,
) -> LocalizationResult:
    """Map each diagnosed gateway to its best-scoring narrative segment.

    The gateway token set is the union of its label tokens and the variable
    names (underscores split) from both models' branch conditions at the
    matched gateways.  Scoring is token Jaccard; the earliest segment wins
    ties, and gateways scoring below the threshold are reported as
    unlocalized rather than guessed.
    """
    ordered_gateways: list[str] = []
    for diagnosis in result.chosen.refined:
        for gateway_id in diagnosis.sorted_gateways:
            if gateway_id not in ordered_gateways:
                ordered_gateways.append(gateway_id)
    instances: list[AmbiguityInstance] = []
    unlocalized: list[str] = []
    counter = 0
    for gateway_id in ordered_gateways:
        node = tgt_model.node(gateway_id)
        ref_gateway_id = _match_reference_gateway(ref_model, node.label)
        tokens = tokenize(node.label)
        for name in _gateway_condition_variables(tgt_model, gateway_id):
            tokens |= tokenize(name)
        if ref_gateway_id is not None:
            for name in _gateway_condition_variables(ref_model, ref_gateway_id):
                tokens |= tokenize(name)
        best_segment, best_score = None, -1.0
        for segment in document.segments:
            score = token_jaccard(tokens, tokenize(segment.text))
            if score > best_score:
                best_segment, best_score = segment, score
        if best_segment is None or best_score < threshold:
            unlocalized.append(gateway_id)
            continue
        counter += 1
        refs = [GatewayRef("target", tgt_model.model_id, gateway_id, node.label)]
        interpretations = []
        tgt_reading, tgt_condition = _describe_gateway(tgt_model, gateway_id)
        if ref_gateway_id is not None:
            ref_node = ref_model.node(ref_gateway_id)
            refs.append(
                GatewayRef("reference", ref_model.model_id, ref_gateway_id, ref_node.label)
            )
            ref_reading, ref_condition = _describe_gateway(ref_model, ref_gateway_id)
            interpretations.append(
                Interpretation(ref_model.model_id, ref_reading, ref_condition)
            )
        interpretations.append(Interpretation(tgt_model.model_id, tgt_reading, tgt_condition))
        instances.append(
            AmbiguityInstance(
                ambiguity_id=f"AMB-{counter}",
                gateways=tuple(refs),
                segment_id=best_segment.segment_id,
                excerpt=best_segment.text,
                score=best_score,
                interpretations=tuple(interpretations),
            )
        )
    return LocalizationResult(tuple(instances), tuple(unlocalized))


def build_ambiguity_report(
    doc_id: str,
    localization: LocalizationResult,
    entropy_summary: Mapping[str, object],
    result: DirectionResult | None,
) -> dict:
    """Evidence-linked report tying entropy, diagnosis, and narrative spans
    together.  ``entropy_summary`` carries h_norm, category, and combos as
    produced by the distribution stage."""
    diagnosis_block: dict[str, object]
    if result is None:
        diagnosis_block = {"status": "no_divergence"}
    else:
        diagnosis_block = {
            "reference": result.reference_model_id,
            "target": result.target_model_id,
            "minimal_diagnoses": [
                {"gateways": list(d.sorted_gateways)} for d in result.chosen.refined
            ],
        }
    return {
        "doc_id": doc_id,
        "entropy": dict(entropy_summary),
        "diagnosis": diagnosis_block,
        "ambiguities": [
            {
                "id": instance.ambiguity_id,
                "gateways": [
                    {
                        "role": ref.role,
                        "model_id": ref.model_id,
                        "gateway_id": ref.gateway_id,
                        "label": ref.label,
                    }
                    for ref in instance.gateways
                ],
                "segment_id": instance.segment_id,
                "excerpt": instance.excerpt,
                "score": instance.score,
                "interpretations": [
                    {
                        "model_id": interp.model_id,
                        "reading": interp.reading,
                        "exercised_condition": interp.exercised_condition,
                    }
                    for interp in instance.interpretations
                ],
            }
            for instance in localization.instances
        ],
        "unlocalized_gateways": list(localization.unlocalized),
    }


class RewriteProvider(Protocol):
    """Provider contract: one request per ambiguity, one record-shaped dict
    back.  Implementations raise ProviderUnavailableError for transport
    failures and ProviderMalformedResponseError for unusable payloads."""

    def rewrite(self, request: Mapping[str, object]) -> Mapping[str, object]:
        ...


REPAIR_PROCEDURE = (
    "localization and mapping",
    "evidence-based interpretation selection",
    "minimal disambiguation synthesis",
    "narrative reconstruction",
)


class CannedRewriteProvider:
    """File-backed provider keyed by ambiguity id; used for offline runs and
    reproducible tests."""

    def __init__(self, responses: Mapping[str, Mapping[str, object]]):
        self._responses = dict(responses)

    @classmethod
    def from_file(cls, path: str) -> "CannedRewriteProvider":
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        if not isinstance(data, dict):
            raise ProviderUnavailableError(f"canned response file {path!r} is not a JSON object")
        return cls(data)

    def rewrite(self, request: Mapping[str, object]) -> Mapping[str, object]:
        ambiguity_id = str(request.get("ambiguity_id", ""))
        if ambiguity_id not in self._responses:
            raise ProviderMalformedResponseError(ambiguity_id, "no canned response")
        response = self._responses[ambiguity_id]
        if not isinstance(response, Mapping):
            raise ProviderMalformedResponseError(ambiguity_id, "canned response is not an object")
        return {"ambiguity_id": ambiguity_id, **response}


class HttpRewriteProvider:
    """Generic JSON-over-HTTP provider: one POST per ambiguity.

    The auth token is injected by the caller (read from an environment
    variable, never from config files).  Retries cover connection errors and
    5xx responses with a short fixed backoff.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        model: str | None = None,
        auth_token: str | None = None,
        timeout: float = 10.0,
        retries: int = 2,
        backoff: float = 0.2,
    ):
        self.endpoint = endpoint
        self.model = model
        self.auth_token = auth_token
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def rewrite(self, request: Mapping[str, object]) -> Mapping[str, object]:
        payload = dict(request)
        if self.model:
            payload["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        ambiguity_id = str(request.get("ambiguity_id", ""))
        last_error = "no attempt made"
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff)
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = str(exc)
                continue
            if response.status_code >= 500:
                last_error = f"server error {response.status_code}"
                continue
            if response.status_code != 200:
                raise ProviderUnavailableError(
                    f"provider returned status {response.status_code}"
                )
            try:
                data = response.json()
            except ValueError as exc:
                raise ProviderMalformedResponseError(ambiguity_id, f"non-JSON body: {exc}")
            if not isinstance(data, dict):
                raise ProviderMalformedResponseError(ambiguity_id, "response is not an object")
            return {"ambiguity_id": ambiguity_id, **data}
        raise ProviderUnavailableError(
            f"provider unreachable after {self.retries + 1} attempts: {last_error}"
        )


def _coerce_record(
    ambiguity_id: str, response: Mapping[str, object]
) -> tuple[RepairRecord | None, str | None]:
    revised = response.get("revised_excerpt")
    rationale = response.get("rationale")
    evidence = response.get("evidence_refs")
    if not isinstance(revised, str) or not revised:
        return None, "missing or empty revised_excerpt"
    if not isinstance(rationale, str) or not rationale.strip():
        return None, "missing or empty rationale"
    if not isinstance(evidence, (list, tuple)) or not evidence:
        return None, "missing evidence_refs"
    refs = tuple(str(item) for item in evidence)
    if any(not ref.strip() for ref in refs):
        return None, "blank evidence reference"
    return RepairRecord(ambiguity_id, revised, rationale, refs), None


def propose_repairs(
    report: Mapping[str, object],
    document: NarrativeDocument,
    supplemental: NarrativeDocument,
    provider: RewriteProvider,
) -> RepairOutcome:
    """Ask the provider for one repair per reported ambiguity.

    Records lacking a rationale or evidence, or whose ambiguity excerpt is no
    longer anchored in the document, are rejected individually; transport
    failure aborts the whole run with ProviderUnavailableError.
    """
    ambiguities = report.get("ambiguities")
    if not isinstance(ambiguities, list):
        raise ValueError("report has no ambiguities list")
    records: list[RepairRecord] = []
    rejected: list[RejectedRepair] = []
    supplemental_excerpts = [segment.text for segment in supplemental.segments]
    for entry in ambiguities:
        ambiguity_id = str(entry.get("id", ""))
        segment_id = str(entry.get("segment_id", ""))
        excerpt = str(entry.get("excerpt", ""))
        try:
            segment = document.segment(segment_id)
        except KeyError:
            rejected.append(RejectedRepair(ambiguity_id, f"unknown segment {segment_id!r}"))
            continue
        if excerpt not in segment.text:
            rejected.append(
                RejectedRepair(ambiguity_id, "excerpt is not anchored in its segment")
            )
            continue
        request = {
            "ambiguity_id": ambiguity_id,
            "segment_id": segment_id,
            "original_segment": segment.text,
            "excerpt": excerpt,
            "interpretations": entry.get("interpretations", []),
            "supplemental_excerpts": supplemental_excerpts,
            "procedure": list(REPAIR_PROCEDURE),
        }
        try:
            response = provider.rewrite(request)
        except ProviderMalformedResponseError as exc:
            rejected.append(RejectedRepair(ambiguity_id, exc.detail))
            continue
        record, problem = _coerce_record(ambiguity_id, response)
        if record is None:
            rejected.append(RejectedRepair(ambiguity_id, problem or "malformed record"))
            continue
        records.append(record)
    return RepairOutcome(tuple(records), tuple(rejected))


def reconstruct_narrative(
    document: NarrativeDocument,
    repairs: Sequence[RepairRecord],
    instances: Mapping[str, Mapping[str, object]] | Sequence[Mapping[str, object]],
) -> RepairedNarrative:
    """Splice revised excerpts into their segments.

    ``instances`` carries the ambiguity entries from the report (id, segment,
    excerpt).  Only matched excerpts inside repaired segments change; every
    other character of the narrative is preserved.  A stale anchor raises
    ExcerptNotFoundError.
    """
    if isinstance(instances, Mapping):
        by_id = dict(instances)
    else:
        by_id = {str(entry["id"]): entry for entry in instances}
    segment_texts = {segment.segment_id: segment.text for segment in document.segments}
    applied: list[RepairRecord] = []
    for record in sorted(repairs, key=lambda r: r.ambiguity_id):
        entry = by_id.get(record.ambiguity_id)
        if entry is None:
            raise ExcerptNotFoundError(
                f"repair {record.ambiguity_id!r} has no matching ambiguity instance"
            )
        segment_id = str(entry["segment_id"])
        excerpt = str(entry["excerpt"])
        if segment_id not in segment_texts:
            raise ExcerptNotFoundError(
                f"repair {record.ambiguity_id!r} targets unknown segment {segment_id!r}"
            )
        current = segment_texts[segment_id]
        if excerpt not in current:
            raise ExcerptNotFoundError(
                f"repair {record.ambiguity_id!r}: excerpt not found in segment {segment_id!r}"
            )
        segment_texts[segment_id] = current.replace(excerpt, record.revised_excerpt, 1)
        applied.append(record)
    pieces: list[str] = []
    cursor = 0
    for segment in document.segments:
        pieces.append(document.text[cursor : segment.start])
        pieces.append(segment_texts[segment.segment_id])
        cursor = segment.end
    pieces.append(document.text[cursor:])
    return RepairedNarrative(document.doc_id, "".join(pieces), tuple(applied))
