"""Model-based diagnosis of behavioral divergence between two process models.

One model acts as reference, the other as target; the diagnosis asks which
target gateways can explain the observed differences in KPI emissions.
Cross-model matching uses task and gateway labels because independently
generated models do not share element ids.

For each divergent case the earliest difference between the reference and
target KPI sequences is located, and the gateways on the target trace
strictly between the last agreeing emission and the first diverging one form
a conflict set.  Subset-minimal hitting sets over the conflict family are
the diagnosis candidates; a refinement pass removes gateways whose exercised
branch conditions are syntactically equal (after canonicalization) to
conditions exercised on the reference side, which discharges harmless
operand-order rewrites without hiding real logic changes.

Choosing which model is reference and which is target carries no claim of
correctness; the orientation is picked only for explanatory parsimony.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .bpmn import NodeKind, ProcessModel
from .conditions import ConditionAst, normalize, to_text
from .simulation import (
    CaseRecord,
    DEFAULT_STEP_CAP,
    KpiConfig,
    KpiSequence,
    SimulationError,
    Trace,
    execute_case,
    kpi_sequence,
)
from .conditions import MissingVariableError, TypeMismatchError

TRACE_END = "<end-of-trace>"

ORIENTATION_NOTE = (
    "reference/target orientation is chosen for explanatory parsimony and does not "
    "imply either model is correct"
)


class CaseMismatchError(Exception):
    pass


class NoDivergenceError(Exception):
    """The two models produce identical observations on every case."""


class DivergenceKind(str, Enum):
    MISSING_OUTPUT = "missing_output"
    EXTRA_OUTPUT = "extra_output"
    INCORRECT_OUTPUT = "incorrect_output"


@dataclass(frozen=True)
class Observation:
    case_id: str
    task_label: str
    kpi_name: str
    ref_emitted: bool
    tgt_emitted: bool

    @property
    def discrepant(self) -> bool:
        return self.ref_emitted != self.tgt_emitted


@dataclass(frozen=True)
class Divergence:
    case_id: str
    kind: DivergenceKind
    index: int
    t_last: str | None  # target-side task label before the divergence, if any
    t_first: str  # target-side task label at the divergence, or TRACE_END


@dataclass(frozen=True)
class ConflictSet:
    """Gateways on the target trace that bound a divergence window.

    ``gateways`` keeps execution order along the trace; ``case_ids`` is the
    merged provenance of every divergent case producing this same set.
    """

    gateways: tuple[str, ...]
    case_ids: tuple[str, ...]


@dataclass(frozen=True)
class DiagnosisProblem:
    reference_model_id: str
    target_model_id: str
    components: tuple[str, ...]  # all target-model gateway ids, document order
    conflicts: tuple[ConflictSet, ...]
    observations: tuple[Observation, ...]
    unattributable: tuple[Divergence, ...]
    failed_cases: tuple[tuple[str, str], ...]  # (case id, reason)


@dataclass(frozen=True)
class Diagnosis:
    gateways: frozenset[str]

    @property
    def cardinality(self) -> int:
        return len(self.gateways)

    @property
    def sorted_gateways(self) -> tuple[str, ...]:
        return tuple(sorted(self.gateways))


@dataclass(frozen=True)
class HittingSetResult:
    diagnoses: tuple[Diagnosis, ...]
    truncated: bool


@dataclass(frozen=True)
class DiagnosisRun:
    """Everything computed for one reference/target orientation."""

    problem: DiagnosisProblem
    hitting: HittingSetResult
    refined: tuple[Diagnosis, ...]


@dataclass(frozen=True)
class DirectionResult:
    reference_model_id: str
    target_model_id: str
    chosen: DiagnosisRun
    reverse: DiagnosisRun
    note: str = ORIENTATION_NOTE


def compare_observations(
    ref_traces: Sequence[Trace],
    tgt_traces: Sequence[Trace],
    ref_model: ProcessModel,
    tgt_model: ProcessModel,
) -> list[Observation]:
    """One observation per (case, task label, kpi) seen on either side.

    Both trace lists must cover the same case ids.  Output order is
    deterministic: case id, then task label, then kpi name.
    """
    ref_by_case = {t.case_id: t for t in ref_traces}
    tgt_by_case = {t.case_id: t for t in tgt_traces}
    if set(ref_by_case) != set(tgt_by_case):
        missing = sorted(set(ref_by_case) ^ set(tgt_by_case))
        raise CaseMismatchError(f"case ids differ between sides: {missing}")
    observations: list[Observation] = []
    for case_id in sorted(ref_by_case):
        ref_pairs = set(kpi_sequence(ref_by_case[case_id], ref_model).pairs)
        tgt_pairs = set(kpi_sequence(tgt_by_case[case_id], tgt_model).pairs)
        for task_label, kpi in sorted(ref_pairs | tgt_pairs):
            observations.append(
                Observation(
                    case_id,
                    task_label,
                    kpi,
                    ref_emitted=(task_label, kpi) in ref_pairs,
                    tgt_emitted=(task_label, kpi) in tgt_pairs,
                )
            )
    return observations


def first_divergence(ref_seq: KpiSequence, tgt_seq: KpiSequence) -> Divergence | None:
    """Earliest index where the two KPI sequences differ, or None if equal.

    The bounding task labels are taken from the target side; a target
    sequence that ends early yields a missing_output whose window runs to
    the end of the target trace (t_first is the TRACE_END marker).
    """
    ref_pairs = ref_seq.pairs
    tgt_pairs = tgt_seq.pairs
    limit = min(len(ref_pairs), len(tgt_pairs))
    index = next(
        (i for i in range(limit) if ref_pairs[i] != tgt_pairs[i]),
        None,
    )
    if index is None:
        if len(ref_pairs) == len(tgt_pairs):
            return None
        index = limit
    case_id = tgt_seq.case_id
    t_last = tgt_pairs[index - 1][0] if index > 0 else None
    if index >= len(tgt_pairs):
        return Divergence(case_id, DivergenceKind.MISSING_OUTPUT, index, t_last, TRACE_END)
    if index >= len(ref_pairs):
        return Divergence(
            case_id, DivergenceKind.EXTRA_OUTPUT, index, t_last, tgt_pairs[index][0]
        )
    return Divergence(
        case_id, DivergenceKind.INCORRECT_OUTPUT, index, t_last, tgt_pairs[index][0]
    )


def _step_of_emission(trace: Trace, model: ProcessModel, emission_index: int) -> int:
    """Step index at which the trace produced its emission_index-th emission."""
    count = 0
    for step_index, node_id in enumerate(trace.steps):
        node = model.node(node_id)
        if node.kind is NodeKind.TASK and node.kpi_outputs:
            count += len(node.kpi_outputs)
            if count > emission_index:
                return step_index
    raise IndexError(f"trace has no emission index {emission_index}")


def conflict_from_divergence(
    divergence: Divergence, tgt_trace: Trace, tgt_model: ProcessModel
) -> ConflictSet | None:
    """Gateways strictly inside the divergence window on the target trace.

    Returns None when the window contains no gateway; such divergences are
    reported as unattributable rather than silently widened.
    """
    if divergence.index > 0:
        start = _step_of_emission(tgt_trace, tgt_model, divergence.index - 1)
    else:
        start = -1
    if divergence.t_first == TRACE_END:
        end = len(tgt_trace.steps)
    else:
        end = _step_of_emission(tgt_trace, tgt_model, divergence.index)
    seen: list[str] = []
    for step_index in range(start + 1, end):
        node = tgt_model.node(tgt_trace.steps[step_index])
        if node.kind is NodeKind.EXCLUSIVE_GATEWAY and node.id not in seen:
            seen.append(node.id)
    if not seen:
        return None
    return ConflictSet(tuple(seen), (divergence.case_id,))


def _simulate_pair(
    ref_model: ProcessModel,
    tgt_model: ProcessModel,
    cases: Sequence[CaseRecord],
    step_cap: int,
) -> tuple[dict[str, Trace], dict[str, Trace], list[tuple[str, str]]]:
    """Run every case through both models; cases failing on either side are
    excluded from both and reported with the reason."""
    ref_traces: dict[str, Trace] = {}
    tgt_traces: dict[str, Trace] = {}
    failed: list[tuple[str, str]] = []
    for case in cases:
        try:
            ref_trace = execute_case(ref_model, case, step_cap=step_cap)
            tgt_trace = execute_case(tgt_model, case, step_cap=step_cap)
        except (SimulationError, MissingVariableError, TypeMismatchError) as exc:
            failed.append((case.case_id, str(exc)))
            continue
        ref_traces[case.case_id] = ref_trace
        tgt_traces[case.case_id] = tgt_trace
    return ref_traces, tgt_traces, failed


def _build_problem(
    ref_model: ProcessModel,
    tgt_model: ProcessModel,
    ref_traces: Mapping[str, Trace],
    tgt_traces: Mapping[str, Trace],
    failed: Sequence[tuple[str, str]],
) -> DiagnosisProblem:
    observations = compare_observations(
        list(ref_traces.values()), list(tgt_traces.values()), ref_model, tgt_model
    )
    discrepant_cases = sorted({o.case_id for o in observations if o.discrepant})
    conflicts: dict[tuple[str, ...], list[str]] = {}
    unattributable: list[Divergence] = []
    for case_id in discrepant_cases:
        ref_seq = kpi_sequence(ref_traces[case_id], ref_model)
        tgt_seq = kpi_sequence(tgt_traces[case_id], tgt_model)
        divergence = first_divergence(ref_seq, tgt_seq)
        if divergence is None:
            continue  # presence differs but aligned prefixes agree; not expected
        conflict = conflict_from_divergence(divergence, tgt_traces[case_id], tgt_model)
        if conflict is None:
            unattributable.append(divergence)
            continue
        conflicts.setdefault(conflict.gateways, []).append(case_id)
    merged = tuple(
        ConflictSet(gateways, tuple(sorted(case_ids)))
        for gateways, case_ids in sorted(conflicts.items())
    )
    components = tuple(
        n.id for n in tgt_model.nodes if n.kind is NodeKind.EXCLUSIVE_GATEWAY
    )
    return DiagnosisProblem(
        reference_model_id=ref_model.model_id,
        target_model_id=tgt_model.model_id,
        components=components,
        conflicts=merged,
        observations=tuple(observations),
        unattributable=tuple(unattributable),
        failed_cases=tuple(failed),
    )


def collect_conflicts(
    ref_model: ProcessModel,
    tgt_model: ProcessModel,
    cases: Sequence[CaseRecord],
    config: KpiConfig,
    *,
    step_cap: int = DEFAULT_STEP_CAP,
) -> DiagnosisProblem:
    """Simulate both models over the cases and assemble the conflict family.

    Cases failing on either side are excluded and reported.  Identical
    gateway sets arising from different cases are merged, keeping the union
    of their provenance.
    """
    ref_traces, tgt_traces, failed = _simulate_pair(ref_model, tgt_model, cases, step_cap)
    return _build_problem(ref_model, tgt_model, ref_traces, tgt_traces, failed)


def minimal_hitting_sets(
    problem: DiagnosisProblem, *, max_cardinality: int = 8
) -> HittingSetResult:
    """All subset-minimal hitting sets of the conflict family.

    Exact enumeration over the conflict tree; every element of the first
    conflict not yet hit spawns a branch.  Candidates above the cardinality
    cap are dropped and flagged rather than silently ignored.  An empty
    conflict family yields the single empty diagnosis.
    """
    conflict_sets = [frozenset(c.gateways) for c in problem.conflicts]
    if not conflict_sets:
        return HittingSetResult((Diagnosis(frozenset()),), truncated=False)
    complete: set[frozenset[str]] = set()
    visited: set[frozenset[str]] = set()
    truncated = False

    def search(partial: frozenset[str]) -> None:
        nonlocal truncated
        if partial in visited:
            return
        visited.add(partial)
        unhit = next((c for c in conflict_sets if not (c & partial)), None)
        if unhit is None:
            complete.add(partial)
            return
        if len(partial) >= max_cardinality:
            truncated = True
            return
        for element in sorted(unhit):
            search(partial | {element})

    search(frozenset())
    minimal = [
        candidate
        for candidate in complete
        if not any(other < candidate for other in complete)
    ]
    diagnoses = tuple(
        Diagnosis(candidate)
        for candidate in sorted(minimal, key=lambda s: (len(s), tuple(sorted(s))))
    )
    return HittingSetResult(diagnoses, truncated)


def _conditions_taken_at(
    trace: Trace, model: ProcessModel, gateway_id: str
) -> list[ConditionAst | None]:
    """Branch conditions of the flows taken at each visit of the gateway.
    None marks a default or unconditioned branch."""
    taken: list[ConditionAst | None] = []
    for step_index, node_id in enumerate(trace.steps[:-1]):
        if node_id == gateway_id:
            flow = model.flow(trace.flows[step_index])
            taken.append(flow.condition)
    return taken


def _conditions_exercised(trace: Trace, model: ProcessModel) -> list[ConditionAst]:
    """All branch conditions exercised anywhere along the trace."""
    out: list[ConditionAst] = []
    for flow_id in trace.flows:
        condition = model.flow(flow_id).condition
        if condition is not None:
            out.append(condition)
    return out


def refine_diagnoses(
    diagnoses: Sequence[Diagnosis],
    problem: DiagnosisProblem,
    ref_model: ProcessModel,
    tgt_model: ProcessModel,
    ref_traces: Sequence[Trace],
    tgt_traces: Sequence[Trace],
) -> list[Diagnosis]:
    """Drop gateways whose divergent-case behavior is explained by syntactic
    rewriting only.

    A gateway is removed when, in every divergent case supporting it, each
    condition it exercised on the target trace is canonically equal to some
    condition exercised on the reference trace for that same case.  Emptied
    diagnoses are dropped; the survivors are deduplicated and re-checked for
    subset-minimality.
    """
    ref_by_case = {t.case_id: t for t in ref_traces}
    tgt_by_case = {t.case_id: t for t in tgt_traces}
    cases_for_gateway: dict[str, set[str]] = {}
    for conflict in problem.conflicts:
        for gateway in conflict.gateways:
            cases_for_gateway.setdefault(gateway, set()).update(conflict.case_ids)
    ref_normed: dict[str, list[ConditionAst]] = {}

    def ref_conditions(case_id: str) -> list[ConditionAst]:
        if case_id not in ref_normed:
            ref_normed[case_id] = [
                normalize(c) for c in _conditions_exercised(ref_by_case[case_id], ref_model)
            ]
        return ref_normed[case_id]

    def removable(gateway: str) -> bool:
        case_ids = cases_for_gateway.get(gateway)
        if not case_ids:
            return False
        for case_id in sorted(case_ids):
            if case_id not in tgt_by_case or case_id not in ref_by_case:
                return False
            taken = _conditions_taken_at(tgt_by_case[case_id], tgt_model, gateway)
            if not taken:
                return False
            reference = ref_conditions(case_id)
            for condition in taken:
                if condition is None:
                    return False  # default branch has no condition to match
                if normalize(condition) not in reference:
                    return False
        return True

    removable_cache = {
        gateway: removable(gateway)
        for diagnosis in diagnoses
        for gateway in diagnosis.gateways
    }
    pruned: list[frozenset[str]] = []
    for diagnosis in diagnoses:
        remaining = frozenset(
            g for g in diagnosis.gateways if not removable_cache.get(g, False)
        )
        if remaining and remaining not in pruned:
            pruned.append(remaining)
    minimal = [
        candidate for candidate in pruned if not any(other < candidate for other in pruned)
    ]
    return [
        Diagnosis(candidate)
        for candidate in sorted(minimal, key=lambda s: (len(s), tuple(sorted(s))))
    ]


def _run_orientation(
    ref_model: ProcessModel,
    tgt_model: ProcessModel,
    cases: Sequence[CaseRecord],
    config: KpiConfig,
    *,
    step_cap: int,
    max_cardinality: int,
) -> DiagnosisRun:
    ref_traces, tgt_traces, failed = _simulate_pair(ref_model, tgt_model, cases, step_cap)
    problem = _build_problem(ref_model, tgt_model, ref_traces, tgt_traces, failed)
    hitting = minimal_hitting_sets(problem, max_cardinality=max_cardinality)
    refined = refine_diagnoses(
        hitting.diagnoses,
        problem,
        ref_model,
        tgt_model,
        list(ref_traces.values()),
        list(tgt_traces.values()),
    )
    return DiagnosisRun(problem, hitting, tuple(refined))


def _ranking_key(run: DiagnosisRun) -> tuple[float, float]:
    """Smaller is better: (minimum refined cardinality, refined count).

    An orientation with no conflicts or no surviving nonempty diagnosis
    localizes nothing and ranks last.
    """
    nonempty = [d for d in run.refined if d.cardinality > 0]
    if not run.problem.conflicts or not nonempty:
        return (math.inf, math.inf)
    return (nonempty[0].cardinality, len(nonempty))


def choose_direction(
    model_a: ProcessModel,
    model_b: ProcessModel,
    cases: Sequence[CaseRecord],
    config: KpiConfig,
    *,
    step_cap: int = DEFAULT_STEP_CAP,
    max_cardinality: int = 8,
) -> DirectionResult:
    """Diagnose in both orientations and keep the more parsimonious one.

    Ties fall back to the number of minimal diagnoses, then to the
    lexicographically smaller reference model id.  Raises NoDivergenceError
    when the models agree on every case.
    """
    run_ab = _run_orientation(
        model_a, model_b, cases, config, step_cap=step_cap, max_cardinality=max_cardinality
    )
    run_ba = _run_orientation(
        model_b, model_a, cases, config, step_cap=step_cap, max_cardinality=max_cardinality
    )
    if not any(o.discrepant for o in run_ab.problem.observations):
        raise NoDivergenceError(
            f"models {model_a.model_id!r} and {model_b.model_id!r} agree on all cases"
        )
    key_ab = _ranking_key(run_ab)
    key_ba = _ranking_key(run_ba)
    if key_ab < key_ba:
        chosen, reverse = run_ab, run_ba
    elif key_ba < key_ab:
        chosen, reverse = run_ba, run_ab
    elif model_a.model_id <= model_b.model_id:
        chosen, reverse = run_ab, run_ba
    else:
        chosen, reverse = run_ba, run_ab
    return DirectionResult(
        reference_model_id=chosen.problem.reference_model_id,
        target_model_id=chosen.problem.target_model_id,
        chosen=chosen,
        reverse=reverse,
    )


def diagnosis_report(result: DirectionResult) -> dict:
    """JSON-ready report: orientation, conflicts with provenance, diagnoses
    before and after refinement, unattributable divergences, and the
    discrepant observation table."""
    problem = result.chosen.problem
    discrepant = [o for o in problem.observations if o.discrepant]
    return {
        "reference_model": problem.reference_model_id,
        "target_model": problem.target_model_id,
        "orientation_note": result.note,
        "components": list(problem.components),
        "conflicts": [
            {"gateways": list(c.gateways), "case_ids": list(c.case_ids)}
            for c in problem.conflicts
        ],
        "diagnoses": [
            {"gateways": list(d.sorted_gateways)} for d in result.chosen.hitting.diagnoses
        ],
        "diagnoses_truncated": result.chosen.hitting.truncated,
        "refined_diagnoses": [
            {"gateways": list(d.sorted_gateways)} for d in result.chosen.refined
        ],
        "unattributable": [
            {
                "case_id": d.case_id,
                "kind": d.kind.value,
                "index": d.index,
                "t_last": d.t_last,
                "t_first": d.t_first,
            }
            for d in problem.unattributable
        ],
        "failed_cases": [
            {"case_id": case_id, "reason": reason} for case_id, reason in problem.failed_cases
        ],
        "observations": {
            "total": len(problem.observations),
            "discrepant": [
                {
                    "case_id": o.case_id,
                    "task_label": o.task_label,
                    "kpi": o.kpi_name,
                    "ref_emitted": o.ref_emitted,
                    "tgt_emitted": o.tgt_emitted,
                }
                for o in discrepant
            ],
        },
        "reverse_orientation": {
            "reference_model": result.reverse.problem.reference_model_id,
            "refined_diagnoses": [
                {"gateways": list(d.sorted_gateways)} for d in result.reverse.refined
            ],
        },
    }
