"""Command-line pipeline: simulate, entropy, diagnose, report, repair, verify,
validate.

Every command reads its inputs from the merged configuration (config file,
then flags) and writes deterministic artifacts into the output directory via
atomic temp-file renames, so reruns on unchanged inputs are byte-identical.
Exit codes: 0 success or benign status, 1 usage error, 2 data error,
3 provider error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

from . import bpmn, diagnosis, distribution, repair, simulation
from .config import ConfigError, RunConfig, build_run_config, load_config, provider_auth_token


class DataError(Exception):
    """Input artifact missing or malformed."""


def dump_json(payload: object) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(temp_name, path)
    except BaseException:
        try:
            os.unlink(temp_name)
        except OSError:
            pass
        raise


def _load_models(models_dir: Path, config: RunConfig) -> dict[str, tuple[bpmn.ProcessModel, str]]:
    """Parse every model file in the directory; returns model_id -> (model,
    file name).  Sorted file order keeps ids deterministic on collision."""
    if not models_dir.is_dir():
        raise DataError(f"models directory not found: {models_dir}")
    found: dict[str, tuple[bpmn.ProcessModel, str]] = {}
    files = sorted(
        p for p in models_dir.iterdir() if p.suffix.lower() in (".bpmn", ".xml")
    )
    if not files:
        raise DataError(f"no .bpmn or .xml files in {models_dir}")
    for path in files:
        model = bpmn.parse_bpmn(
            path.read_text(encoding="utf-8"), config.kpi.kpi_task_tags or None
        )
        if model.model_id in found:
            raise DataError(
                f"duplicate model id {model.model_id!r} in {path.name} and "
                f"{found[model.model_id][1]}"
            )
        found[model.model_id] = (model, path.name)
    return found


def _load_cases(config: RunConfig) -> list[simulation.CaseRecord]:
    if config.cases_csv is None:
        raise DataError("cases_csv is not configured")
    if not config.cases_csv.is_file():
        raise DataError(f"case population not found: {config.cases_csv}")
    return simulation.load_cases_csv(config.cases_csv.read_text(encoding="utf-8"))


def _kpi_dir(config: RunConfig) -> Path:
    return config.out_dir / "kpis"


def cmd_simulate(config: RunConfig, include_traces: bool) -> int:
    models = _load_models(_require(config.models_dir, "models_dir"), config)
    cases = _load_cases(config)
    out_dir = _kpi_dir(config)
    for model_id in sorted(models):
        model, source = models[model_id]
        result = simulation.simulate_population(
            model, cases, config.kpi, step_cap=config.step_cap
        )
        payload: dict[str, object] = {
            "model_id": model_id,
            "source": source,
            "cases_total": result.cases_total,
            "kpis": result.kpis.as_json_dict(),
            "errors": [
                {"case_id": case_id, "reason": reason} for case_id, reason in result.errors
            ],
        }
        if include_traces:
            payload["traces"] = [
                {
                    "case_id": trace.case_id,
                    "steps": list(trace.steps),
                    "flows": list(trace.flows),
                    "emissions": [[task, kpi] for task, kpi in trace.emissions],
                }
                for trace in result.traces
            ]
        atomic_write(out_dir / f"{model_id}.json", dump_json(payload))
    print(f"simulated {len(models)} model(s) over {len(cases)} case(s) -> {out_dir}")
    return 0


def _read_kpi_dir(path: Path) -> list[tuple[str, simulation.KpiVector, str]]:
    """(model_id, vector, source file) per KPI JSON, sorted by model id."""
    if not path.is_dir():
        raise DataError(f"KPI directory not found: {path}")
    entries: list[tuple[str, simulation.KpiVector, str]] = []
    for file in sorted(path.glob("*.json")):
        try:
            data = json.loads(file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{file.name}: invalid JSON: {exc}")
        try:
            model_id = data["model_id"]
            kpis = data["kpis"]
            vector = simulation.KpiVector(
                tuple((name, Decimal(kpis[name])) for name in simulation.KPI_NAMES)
            )
        except (KeyError, TypeError, InvalidOperation) as exc:
            raise DataError(f"{file.name}: malformed KPI payload: {exc}")
        entries.append((model_id, vector, str(data.get("source", ""))))
    if not entries:
        raise DataError(f"no KPI JSON files in {path}")
    return entries


def _read_kpi_csv(path: Path) -> list[tuple[str, simulation.KpiVector, str]]:
    """KPI vectors from a CSV with model_id plus one column per KPI."""
    import csv
    import io

    if not path.is_file():
        raise DataError(f"KPI CSV not found: {path}")
    reader = csv.reader(io.StringIO(path.read_text(encoding="utf-8")))
    rows = list(reader)
    if not rows:
        raise DataError("KPI CSV is empty")
    header = [h.strip() for h in rows[0]]
    if header[:1] != ["model_id"] or set(header[1:]) != set(simulation.KPI_NAMES):
        raise DataError("KPI CSV header must be model_id plus the five KPI names")
    entries = []
    for row in rows[1:]:
        if not row or all(not cell.strip() for cell in row):
            continue
        values = dict(zip(header[1:], row[1:]))
        try:
            vector = simulation.KpiVector(
                tuple((name, Decimal(values[name].strip())) for name in simulation.KPI_NAMES)
            )
        except (KeyError, InvalidOperation) as exc:
            raise DataError(f"KPI CSV row {row[0]!r}: {exc}")
        entries.append((row[0].strip(), vector, ""))
    if not entries:
        raise DataError("KPI CSV has no data rows")
    return sorted(entries)


def _distribution_payload(
    entries: Sequence[tuple[str, simulation.KpiVector, str]], round_decimals: int
) -> tuple[dict, distribution.EmpiricalDistribution, dict[int, list[str]]]:
    vectors = [vector for _, vector, _ in entries]
    dist = distribution.build_distribution(vectors, round_decimals)
    members: dict[int, list[str]] = {}
    for model_id, vector, _ in entries:
        members.setdefault(dist.combo_index_of(vector), []).append(model_id)
    h_norm = distribution.normalized_entropy(dist)
    category = distribution.consistency_category(h_norm)
    payload = {
        "total": dist.total,
        "round_decimals": dist.round_decimals,
        "h_norm": h_norm,
        "category": category.value,
        "combos": [
            {
                "kpis": combo.vector.as_json_dict(),
                "count": combo.count,
                "probability": combo.probability,
                "models": sorted(members.get(index, [])),
            }
            for index, combo in enumerate(dist.combos)
        ],
    }
    return payload, dist, members


def cmd_entropy(config: RunConfig, kpis_path: Path | None, from_csv: Path | None) -> int:
    if from_csv is not None:
        entries = _read_kpi_csv(from_csv)
    else:
        entries = _read_kpi_dir(kpis_path or _kpi_dir(config))
    payload, dist, _members = _distribution_payload(entries, config.round_decimals)
    atomic_write(config.out_dir / "distribution.json", dump_json(payload))
    histogram_lines = ["label,count"]
    for combo in dist.combos:
        histogram_lines.append(f'"{combo.vector.label()}",{combo.count}')
    atomic_write(config.out_dir / "histogram.csv", "\n".join(histogram_lines) + "\n")
    print(
        f"h_norm={payload['h_norm']:.6f} category={payload['category']} "
        f"combos={len(dist.combos)} -> {config.out_dir / 'distribution.json'}"
    )
    return 0


def _pick_pair(
    config: RunConfig,
    models: dict[str, tuple[bpmn.ProcessModel, str]],
    requested: Sequence[str],
) -> tuple[bpmn.ProcessModel, bpmn.ProcessModel]:
    if requested:
        missing = [m for m in requested if m not in models]
        if missing:
            raise DataError(f"model id(s) not found in models_dir: {', '.join(missing)}")
        return models[requested[0]][0], models[requested[1]][0]
    entries = _read_kpi_dir(_kpi_dir(config))
    known = [e for e in entries if e[0] in models]
    if len(known) < 2:
        raise DataError("auto-selection needs simulated KPIs for at least two known models")
    _, dist, members = _distribution_payload(known, config.round_decimals)
    first, second = distribution.select_representatives(dist, members)
    return models[first][0], models[second][0]


def _run_direction(
    config: RunConfig, requested: Sequence[str]
) -> tuple[diagnosis.DirectionResult | None, dict]:
    models = _load_models(_require(config.models_dir, "models_dir"), config)
    cases = _load_cases(config)
    model_a, model_b = _pick_pair(config, models, requested)
    try:
        result = diagnosis.choose_direction(
            model_a,
            model_b,
            cases,
            config.kpi,
            step_cap=config.step_cap,
            max_cardinality=config.max_diagnosis_cardinality,
        )
    except diagnosis.NoDivergenceError:
        return None, {
            "status": "no_divergence",
            "models": sorted([model_a.model_id, model_b.model_id]),
        }
    payload = {"status": "diagnosed", **diagnosis.diagnosis_report(result)}
    return result, payload


def cmd_diagnose(config: RunConfig, requested: Sequence[str]) -> int:
    result, payload = _run_direction(config, requested)
    atomic_write(config.out_dir / "diagnosis.json", dump_json(payload))
    if result is None:
        print(f"no divergence -> {config.out_dir / 'diagnosis.json'}")
    else:
        refined = [list(d.sorted_gateways) for d in result.chosen.refined]
        print(
            f"reference={result.reference_model_id} target={result.target_model_id} "
            f"refined_diagnoses={refined} -> {config.out_dir / 'diagnosis.json'}"
        )
    return 0


def _load_narrative(config: RunConfig) -> repair.NarrativeDocument:
    path = _require(config.narrative, "narrative")
    if not path.is_file():
        raise DataError(f"narrative not found: {path}")
    text = path.read_text(encoding="utf-8")
    if config.segments_json is not None:
        if not config.segments_json.is_file():
            raise DataError(f"segments file not found: {config.segments_json}")
        ranges = json.loads(config.segments_json.read_text(encoding="utf-8"))
        return repair.NarrativeDocument.with_segments(path.stem, text, ranges)
    return repair.NarrativeDocument.from_text(path.stem, text)


def cmd_report(config: RunConfig, requested: Sequence[str]) -> int:
    distribution_path = config.out_dir / "distribution.json"
    if not distribution_path.is_file():
        raise DataError(f"distribution not found (run entropy first): {distribution_path}")
    dist_payload = json.loads(distribution_path.read_text(encoding="utf-8"))
    entropy_summary = {
        "h_norm": dist_payload["h_norm"],
        "category": dist_payload["category"],
        "combos": [
            {"kpis": combo["kpis"], "count": combo["count"], "probability": combo["probability"]}
            for combo in dist_payload["combos"]
        ],
    }
    document = _load_narrative(config)
    result, _diag_payload = _run_direction(config, requested)
    if result is None:
        report_payload = repair.build_ambiguity_report(
            document.doc_id,
            repair.LocalizationResult((), ()),
            entropy_summary,
            None,
        )
    else:
        models = _load_models(_require(config.models_dir, "models_dir"), config)
        tgt_model = models[result.target_model_id][0]
        ref_model = models[result.reference_model_id][0]
        localization = repair.localize_ambiguity(
            result,
            tgt_model,
            ref_model,
            document,
            threshold=config.localization_threshold,
        )
        report_payload = repair.build_ambiguity_report(
            document.doc_id, localization, entropy_summary, result
        )
    atomic_write(config.out_dir / "ambiguity_report.json", dump_json(report_payload))
    print(
        f"ambiguities={len(report_payload['ambiguities'])} "
        f"-> {config.out_dir / 'ambiguity_report.json'}"
    )
    return 0


def _build_provider(config: RunConfig) -> repair.RewriteProvider:
    if config.provider == "canned":
        path = _require(config.provider_canned_path, "provider_canned_path")
        if not path.is_file():
            raise DataError(f"canned responses not found: {path}")
        return repair.CannedRewriteProvider.from_file(str(path))
    if config.provider == "http":
        endpoint = config.provider_endpoint
        if not endpoint:
            raise ConfigError("provider_endpoint is required for the http provider")
        return repair.HttpRewriteProvider(
            endpoint,
            model=config.provider_model,
            auth_token=provider_auth_token(config),
            timeout=config.provider_timeout,
            retries=config.provider_retries,
        )
    raise ConfigError("no provider configured (set provider = canned or http)")


def cmd_repair(config: RunConfig) -> int:
    report_path = config.out_dir / "ambiguity_report.json"
    if not report_path.is_file():
        raise DataError(f"ambiguity report not found (run report first): {report_path}")
    report_payload = json.loads(report_path.read_text(encoding="utf-8"))
    document = _load_narrative(config)
    supplemental_path = _require(config.supplemental, "supplemental")
    if not supplemental_path.is_file():
        raise DataError(f"supplemental document not found: {supplemental_path}")
    supplemental = repair.NarrativeDocument.from_text(
        supplemental_path.stem, supplemental_path.read_text(encoding="utf-8")
    )
    provider = _build_provider(config)
    outcome = repair.propose_repairs(report_payload, document, supplemental, provider)
    repaired = repair.reconstruct_narrative(
        document, outcome.records, report_payload.get("ambiguities", [])
    )
    atomic_write(
        config.out_dir / "repairs.json",
        dump_json(
            {
                "doc_id": document.doc_id,
                "records": [
                    {
                        "ambiguity_id": record.ambiguity_id,
                        "revised_excerpt": record.revised_excerpt,
                        "rationale": record.rationale,
                        "evidence_refs": list(record.evidence_refs),
                    }
                    for record in outcome.records
                ],
                "rejected": [
                    {"ambiguity_id": r.ambiguity_id, "reason": r.reason}
                    for r in outcome.rejected
                ],
            }
        ),
    )
    atomic_write(config.out_dir / "narrative_repaired.txt", repaired.text)
    print(
        f"applied {len(outcome.records)} repair(s), rejected {len(outcome.rejected)} "
        f"-> {config.out_dir / 'narrative_repaired.txt'}"
    )
    return 0


def cmd_verify(config: RunConfig, before: Path, after: Path) -> int:
    payload = {}
    for key, path in (("before", before), ("after", after)):
        entries = _read_kpi_dir(path)
        block, _dist, _members = _distribution_payload(entries, config.round_decimals)
        payload[key] = {
            "kpi_dir": str(path),
            "total": block["total"],
            "h_norm": block["h_norm"],
            "category": block["category"],
        }
    payload["delta_h_norm"] = payload["after"]["h_norm"] - payload["before"]["h_norm"]
    atomic_write(config.out_dir / "verify.json", dump_json(payload))
    print(
        f"before={payload['before']['h_norm']:.6f} ({payload['before']['category']}) "
        f"after={payload['after']['h_norm']:.6f} ({payload['after']['category']}) "
        f"delta={payload['delta_h_norm']:+.6f} -> {config.out_dir / 'verify.json'}"
    )
    return 0


def cmd_validate(config: RunConfig) -> int:
    models = _load_models(_require(config.models_dir, "models_dir"), config)
    total_issues = 0
    for model_id in sorted(models):
        model, source = models[model_id]
        issues = bpmn.validate_structure(model)
        total_issues += len(issues)
        if issues:
            print(f"{source} ({model_id}):")
            for issue in issues:
                print(f"  {issue.category.value}: {issue.node_id}: {issue.detail}")
    print(f"validated {len(models)} model(s), {total_issues} issue(s)")
    return 0


def _require(value: Path | None, name: str) -> Path:
    if value is None:
        raise ConfigError(f"{name} is not configured")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bpmndiverge", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="key=value configuration file")
    parser.add_argument("--models", type=Path, dest="models_dir")
    parser.add_argument("--cases", type=Path, dest="cases_csv")
    parser.add_argument("--narrative", type=Path)
    parser.add_argument("--segments", type=Path, dest="segments_json")
    parser.add_argument("--supplemental", type=Path)
    parser.add_argument("--out", type=Path, dest="out_dir")
    parser.add_argument("--round-decimals", type=int, dest="round_decimals")
    sub = parser.add_subparsers(dest="command", required=True)

    p_simulate = sub.add_parser("simulate", help="simulate every model over the case population")
    p_simulate.add_argument("--traces", action="store_true", help="include traces in KPI JSON")

    p_entropy = sub.add_parser("entropy", help="outcome distribution and normalized entropy")
    p_entropy.add_argument("--kpis", type=Path, help="KPI JSON directory (default OUT/kpis)")
    p_entropy.add_argument("--from-csv", type=Path, help="read vectors from a CSV instead")

    p_diagnose = sub.add_parser("diagnose", help="divergence diagnosis for a model pair")
    p_diagnose.add_argument("models", nargs="*", help="two model ids (default: auto-pick)")

    p_report = sub.add_parser("report", help="evidence-linked ambiguity report")
    p_report.add_argument("models", nargs="*", help="two model ids (default: auto-pick)")

    sub.add_parser("repair", help="provider-backed narrative repair")

    p_verify = sub.add_parser("verify", help="compare entropy of two KPI directories")
    p_verify.add_argument("--before", type=Path, required=True)
    p_verify.add_argument("--after", type=Path, required=True)

    sub.add_parser("validate", help="structural validation of every model")
    return parser


def _merged_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config is not None:
        config = load_config(args.config, config)
    overrides: dict[str, str] = {}
    for key in ("models_dir", "cases_csv", "narrative", "segments_json", "supplemental",
                "out_dir", "round_decimals"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    return build_run_config(overrides, config)


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _merged_config(args)
        if args.command == "simulate":
            return cmd_simulate(config, args.traces)
        if args.command == "entropy":
            return cmd_entropy(config, args.kpis, args.from_csv)
        if args.command == "diagnose":
            _check_pair(args.models)
            return cmd_diagnose(config, args.models)
        if args.command == "report":
            _check_pair(args.models)
            return cmd_report(config, args.models)
        if args.command == "repair":
            return cmd_repair(config)
        if args.command == "verify":
            return cmd_verify(config, args.before, args.after)
        if args.command == "validate":
            return cmd_validate(config)
        raise AssertionError(f"unhandled command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (
        DataError,
        bpmn.ModelError,
        simulation.CaseDataError,
        simulation.SimulationError,
        distribution.EmptyInputError,
        distribution.OutOfRangeError,
        distribution.SingleClassError,
        diagnosis.CaseMismatchError,
        repair.ExcerptNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (repair.ProviderUnavailableError, repair.ProviderMalformedResponseError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 3


def _check_pair(models: Sequence[str]) -> None:
    if models and len(models) != 2:
        raise ConfigError("pass either no model ids (auto-pick) or exactly two")


if __name__ == "__main__":
    raise SystemExit(main())
