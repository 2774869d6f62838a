"""Divergence diagnosis: observations, conflicts, hitting sets, refinement."""

from decimal import Decimal

import pytest

from bpmndiverge.diagnosis import (
    TRACE_END,
    CaseMismatchError,
    ConflictSet,
    Diagnosis,
    DiagnosisProblem,
    DivergenceKind,
    NoDivergenceError,
    choose_direction,
    collect_conflicts,
    compare_observations,
    conflict_from_divergence,
    diagnosis_report,
    first_divergence,
    minimal_hitting_sets,
    refine_diagnoses,
)
from bpmndiverge.simulation import CaseRecord, KpiConfig, KpiSequence, Trace, execute_case

import modelkit as mk
from oracles import brute_force_hitting_sets


def problem_with(conflicts: list[tuple[tuple[str, ...], tuple[str, ...]]]) -> DiagnosisProblem:
    return DiagnosisProblem(
        reference_model_id="ref",
        target_model_id="tgt",
        components=tuple(sorted({g for gateways, _ in conflicts for g in gateways})),
        conflicts=tuple(ConflictSet(g, c) for g, c in conflicts),
        observations=(),
        unattributable=(),
        failed_cases=(),
    )


def seq(case_id: str, *pairs: tuple[str, str]) -> KpiSequence:
    return KpiSequence(case_id, pairs)


class TestObservations:
    def test_city1_observation_table(self, strict_model, broad_model, population):
        ref_traces = [execute_case(strict_model, c) for c in population]
        tgt_traces = [execute_case(broad_model, c) for c in population]
        obs = compare_observations(ref_traces, tgt_traces, strict_model, broad_model)
        assert len(obs) == 30
        discrepant = [o for o in obs if o.discrepant]
        assert len(discrepant) == 18
        c05 = [o for o in discrepant if o.case_id == "c05"]
        assert len(c05) == 1
        assert c05[0].task_label == "Provide Health Guidance"
        assert c05[0].kpi_name == "HC"
        assert not c05[0].ref_emitted and c05[0].tgt_emitted

    def test_case_sets_must_match(self, strict_model, broad_model, population):
        ref_traces = [execute_case(strict_model, c) for c in population]
        tgt_traces = [execute_case(broad_model, c) for c in population[:-1]]
        with pytest.raises(CaseMismatchError, match="c20"):
            compare_observations(ref_traces, tgt_traces, strict_model, broad_model)


class TestFirstDivergence:
    def test_equal_sequences(self):
        a = seq("c", ("Notify", "NC"))
        assert first_divergence(a, a) is None
        assert first_divergence(seq("c"), seq("c")) is None

    def test_extra_output(self):
        d = first_divergence(
            seq("c", ("Notify", "NC")),
            seq("c", ("Notify", "NC"), ("Guide", "HC")),
        )
        assert d.kind is DivergenceKind.EXTRA_OUTPUT
        assert d.index == 1
        assert d.t_last == "Notify"
        assert d.t_first == "Guide"

    def test_missing_output_runs_to_trace_end(self):
        d = first_divergence(
            seq("c", ("Notify", "NC"), ("Guide", "HC")),
            seq("c", ("Notify", "NC")),
        )
        assert d.kind is DivergenceKind.MISSING_OUTPUT
        assert d.index == 1
        assert d.t_last == "Notify"
        assert d.t_first == TRACE_END

    def test_incorrect_output_at_start(self):
        d = first_divergence(seq("c", ("Yes", "NC")), seq("c", ("No", "NC")))
        assert d.kind is DivergenceKind.INCORRECT_OUTPUT
        assert d.index == 0
        assert d.t_last is None
        assert d.t_first == "No"

    def test_earliest_difference_wins(self):
        d = first_divergence(
            seq("c", ("A", "NC"), ("B", "NC"), ("C", "NC")),
            seq("c", ("A", "NC"), ("X", "NC"), ("Y", "NC")),
        )
        assert d.index == 1
        assert d.t_first == "X"


class TestConflictWindows:
    def test_window_from_trace_start(self, strict_model, broad_model, population):
        c09 = population[8]
        ref_seq_pairs = execute_case(strict_model, c09).emissions
        assert ref_seq_pairs == ()
        tgt_trace = execute_case(broad_model, c09)
        d = first_divergence(
            seq("c09"),
            seq("c09", ("Send Program Notification", "NC"), ("Provide Health Guidance", "HC")),
        )
        conflict = conflict_from_divergence(d, tgt_trace, broad_model)
        assert conflict == ConflictSet(("n3",), ("c09",))

    def test_window_between_emissions(self, strict_model, broad_model, population):
        c05 = population[4]
        tgt_trace = execute_case(broad_model, c05)
        d = first_divergence(
            seq("c05", ("Send Program Notification", "NC")),
            seq("c05", ("Send Program Notification", "NC"), ("Provide Health Guidance", "HC")),
        )
        conflict = conflict_from_divergence(d, tgt_trace, broad_model)
        assert conflict == ConflictSet(("n5",), ("c05",))

    def test_gateway_free_window_is_unattributable(self):
        ref = mk.model(
            "ref",
            [mk.start("s"), mk.task("t1", "Announce", ("NC",)), mk.end("e")],
            [mk.flow("f1", "s", "t1"), mk.flow("f2", "t1", "e")],
        )
        tgt = mk.model(
            "tgt",
            [
                mk.start("s"),
                mk.task("t1", "Announce", ("NC",)),
                mk.task("t2", "Extra", ("NC",)),
                mk.end("e"),
            ],
            [mk.flow("f1", "s", "t1"), mk.flow("f2", "t1", "t2"), mk.flow("f3", "t2", "e")],
        )
        problem = collect_conflicts(ref, tgt, [CaseRecord("c1", {})], KpiConfig())
        assert problem.conflicts == ()
        assert len(problem.unattributable) == 1
        assert problem.unattributable[0].kind is DivergenceKind.EXTRA_OUTPUT


class TestCollectConflicts:
    def test_city1_conflict_family(self, strict_model, broad_model, population):
        problem = collect_conflicts(strict_model, broad_model, population, KpiConfig())
        assert problem.reference_model_id == "city1_and_strict"
        assert problem.target_model_id == "city1_or_broad"
        assert problem.components == ("n3", "n5")
        assert problem.conflicts == (
            ConflictSet(
                ("n3",),
                ("c09", "c10", "c11", "c12", "c13", "c14", "c15", "c16", "c17"),
            ),
            ConflictSet(("n5",), ("c05", "c06")),
        )
        assert problem.unattributable == ()
        assert problem.failed_cases == ()

    def test_failing_case_excluded_from_both_sides(
        self, strict_model, broad_model, population
    ):
        cases = list(population) + [CaseRecord("cXX", {"HbA1c": Decimal("7")})]
        problem = collect_conflicts(strict_model, broad_model, cases, KpiConfig())
        assert len(problem.failed_cases) == 1
        assert problem.failed_cases[0][0] == "cXX"
        assert len({o.case_id for o in problem.observations}) <= 20


class TestHittingSets:
    def test_empty_family_yields_empty_diagnosis(self):
        result = minimal_hitting_sets(problem_with([]))
        assert result.diagnoses == (Diagnosis(frozenset()),)
        assert not result.truncated

    def test_two_overlapping_conflicts(self):
        result = minimal_hitting_sets(
            problem_with([(("a", "b"), ("c1",)), (("b", "c"), ("c2",))])
        )
        assert [d.sorted_gateways for d in result.diagnoses] == [("b",), ("a", "c")]
        assert not result.truncated

    def test_matches_brute_force(self):
        families = [
            [("a",), ("b",)],
            [("a", "b"), ("a", "c"), ("b", "c")],
            [("a", "b", "c"), ("c", "d"), ("a", "d"), ("b",)],
            [("x",), ("x", "y"), ("y", "z")],
        ]
        for family in families:
            conflicts = [(g, ("c",)) for g in family]
            result = minimal_hitting_sets(problem_with(conflicts))
            got = {frozenset(d.gateways) for d in result.diagnoses}
            universe = {g for gateways in family for g in gateways}
            expected = brute_force_hitting_sets(
                [frozenset(g) for g in family], universe
            )
            assert got == expected, family
            assert not result.truncated

    def test_cardinality_cap_truncates(self):
        problem = problem_with([(("a",), ("c1",)), (("b",), ("c2",)), (("c",), ("c3",))])
        result = minimal_hitting_sets(problem, max_cardinality=2)
        assert result.diagnoses == ()
        assert result.truncated

    def test_ordering_by_size_then_lexicographic(self):
        result = minimal_hitting_sets(
            problem_with([(("b", "a"), ("c1",)), (("c", "d"), ("c2",))])
        )
        assert [d.sorted_gateways for d in result.diagnoses] == [
            ("a", "c"),
            ("a", "d"),
            ("b", "c"),
            ("b", "d"),
        ]

    def test_city1_single_diagnosis(self, strict_model, broad_model, population):
        problem = collect_conflicts(strict_model, broad_model, population, KpiConfig())
        result = minimal_hitting_sets(problem)
        assert [d.sorted_gateways for d in result.diagnoses] == [("n3", "n5")]
        assert not result.truncated


def pipeline_models(gp_ref: str, gp_tgt: str, gx_ref: str, gx_tgt: str):
    """Two-gateway pipeline: gp routes through inert prep tasks, gx decides
    which of two labeled emitting tasks runs."""

    def build(model_id: str, gp_cond: str, gx_cond: str):
        return mk.model(
            model_id,
            [
                mk.start("s"),
                mk.gateway("gp", "Prep route"),
                mk.task("r1", "Prep fast"),
                mk.task("r2", "Prep slow"),
                mk.gateway("gx", "Decide"),
                mk.task("ty", "Yes step", ("NC",)),
                mk.task("tn", "No step", ("NC",)),
                mk.end("e"),
            ],
            [
                mk.flow("f1", "s", "gp"),
                mk.flow("f2", "gp", "r1", gp_cond),
                mk.flow("f3", "gp", "r2", default=True),
                mk.flow("f4", "r1", "gx"),
                mk.flow("f5", "r2", "gx"),
                mk.flow("f6", "gx", "ty", gx_cond),
                mk.flow("f7", "gx", "tn", default=True),
                mk.flow("f8", "ty", "e"),
                mk.flow("f9", "tn", "e"),
            ],
        )

    return build("ref", gp_ref, gx_ref), build("tgt", gp_tgt, gx_tgt)


def boundary_case() -> CaseRecord:
    return CaseRecord(
        "cv", {"v": Decimal("10"), "w": Decimal("1"), "u": Decimal("0")}
    )


class TestRefinement:
    def run_refined(self, ref, tgt, cases):
        ref_traces = [execute_case(ref, c) for c in cases]
        tgt_traces = [execute_case(tgt, c) for c in cases]
        problem = collect_conflicts(ref, tgt, cases, KpiConfig())
        hitting = minimal_hitting_sets(problem)
        refined = refine_diagnoses(
            hitting.diagnoses, problem, ref, tgt, ref_traces, tgt_traces
        )
        return problem, hitting, refined

    def test_operand_permutation_discharged(self):
        ref, tgt = pipeline_models(
            "(w == 1 OR u == 1)", "(u == 1 OR w == 1)", "v >= 10", "v > 10"
        )
        problem, hitting, refined = self.run_refined(ref, tgt, [boundary_case()])
        assert problem.conflicts == (ConflictSet(("gp", "gx"), ("cv",)),)
        assert [d.sorted_gateways for d in hitting.diagnoses] == [("gp",), ("gx",)]
        # gp only differs by operand order; refinement discharges it.
        assert [d.sorted_gateways for d in refined] == [("gx",)]

    def test_semantic_rewrite_not_discharged(self):
        # u >= 1 equals u == 1 on this population, but only semantically;
        # the syntactic check must keep gp on the table.
        ref, tgt = pipeline_models(
            "(w == 1 OR u == 1)", "(w == 1 OR u >= 1)", "v >= 10", "v > 10"
        )
        _, hitting, refined = self.run_refined(ref, tgt, [boundary_case()])
        assert [d.sorted_gateways for d in hitting.diagnoses] == [("gp",), ("gx",)]
        assert [d.sorted_gateways for d in refined] == [("gp",), ("gx",)]

    def test_default_branch_blocks_removal(self):
        # Identical branch condition on both sides, but the divergent case
        # takes the target default; there is no condition text to compare.
        ref = mk.branch_model("x >= 5", model_id="ref")
        tgt = mk.branch_model("x >= 6", model_id="tgt")
        case = CaseRecord("c", {"x": Decimal("5")})
        problem, hitting, refined = self.run_refined(ref, tgt, [case])
        assert problem.conflicts == (ConflictSet(("g",), ("c",)),)
        assert [d.sorted_gateways for d in refined] == [("g",)]

    def test_city1_refinement_keeps_both_gateways(
        self, strict_model, broad_model, population
    ):
        _, _, refined = self.run_refined(strict_model, broad_model, list(population))
        assert [d.sorted_gateways for d in refined] == [("n3", "n5")]


class TestDirectionChoice:
    def test_city1_frozen_orientation(self, strict_model, broad_model, population):
        result = choose_direction(strict_model, broad_model, population, KpiConfig())
        assert result.reference_model_id == "city1_and_strict"
        assert result.target_model_id == "city1_or_broad"
        assert [d.sorted_gateways for d in result.chosen.refined] == [("n3", "n5")]
        assert result.reverse.problem.reference_model_id == "city1_or_broad"
        assert [d.sorted_gateways for d in result.reverse.refined] == [
            ("g_accept", "g_elig")
        ]
        assert "parsimony" in result.note

    def test_argument_order_is_irrelevant(self, strict_model, broad_model, population):
        ab = choose_direction(strict_model, broad_model, population, KpiConfig())
        ba = choose_direction(broad_model, strict_model, population, KpiConfig())
        assert ab.reference_model_id == ba.reference_model_id
        assert ab.chosen.refined == ba.chosen.refined

    def test_parsimony_beats_id_order(self):
        # tgt's mutated gx refines to a singleton, so the orientation with
        # ref as reference wins even though both ids start equal-ranked.
        ref, tgt = pipeline_models(
            "(w == 1 OR u == 1)", "(u == 1 OR w == 1)", "v >= 10", "v > 10"
        )
        result = choose_direction(tgt, ref, [boundary_case()], KpiConfig())
        assert result.reference_model_id == "ref"
        assert [d.sorted_gateways for d in result.chosen.refined] == [("gx",)]

    def test_no_divergence(self, strict_model, population):
        with pytest.raises(NoDivergenceError):
            choose_direction(strict_model, strict_model, population, KpiConfig())


class TestReport:
    def test_report_shape(self, strict_model, broad_model, population):
        result = choose_direction(strict_model, broad_model, population, KpiConfig())
        report = diagnosis_report(result)
        assert report["reference_model"] == "city1_and_strict"
        assert report["target_model"] == "city1_or_broad"
        assert report["components"] == ["n3", "n5"]
        assert report["conflicts"][0] == {
            "gateways": ["n3"],
            "case_ids": ["c09", "c10", "c11", "c12", "c13", "c14", "c15", "c16", "c17"],
        }
        assert report["diagnoses"] == [{"gateways": ["n3", "n5"]}]
        assert report["diagnoses_truncated"] is False
        assert report["refined_diagnoses"] == [{"gateways": ["n3", "n5"]}]
        assert report["unattributable"] == []
        assert report["failed_cases"] == []
        assert report["observations"]["total"] == 30
        assert len(report["observations"]["discrepant"]) == 18
        assert report["reverse_orientation"] == {
            "reference_model": "city1_or_broad",
            "refined_diagnoses": [{"gateways": ["g_accept", "g_elig"]}],
        }
        assert "parsimony" in report["orientation_note"]
