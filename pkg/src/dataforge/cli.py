"""Command-line pipeline driver.

One binary, subcommand per pipeline step, a single JSON config file as the
source of truth, and flag overrides for the common knobs. Every run is a pure
function of (inputs, config.seed): workers never reorder output and no step
reads the clock or the environment for entropy.

Exit codes: 0 success, 1 data violation (bad records, grammar failures,
provenance refusals), 2 config or I/O trouble.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .augment import ExpansionPolicy, Rewriter, SeededRng, expand_dataset
from .core import (
    DatasetId,
    MediaKind,
    Provenance,
    Sample,
    assert_unique_ids,
    sample_to_json,
    validate_sample,
)
from .curriculum import DEFAULT_EXPECTATIONS, build_all_plans, validate_plan_totals, write_stage_plans
from .errors import DataforgeError, ProvenanceError, SchemaError
from .ingest import parse_source, read_manifest, write_manifest
from .metrics import evaluate_records, record_from_dict, report_to_dict
from .perceptgen import GroundingSpec, annotation_from_dict, build_grounding_sample
from .promptkit import GridConfig, PromptTemplate, assemble_prompt, check_budget
from .standardize import StandardizeConfig, standardize_sample

OFFLINE_ENV = "DATAFORGE_OFFLINE"


class ConfigError(DataforgeError):
    """The pipeline config file is missing, unreadable, or malformed."""


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    offline: bool = False
    out_dir: Path = Path("out")
    sources: dict[DatasetId, Path] = field(default_factory=dict)
    standardize: StandardizeConfig = field(default_factory=StandardizeConfig)
    factors: dict[DatasetId, int] | None = None
    mc_fraction: float = 0.2
    rewriter_url: str | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    budget_limit: int = 8192
    iou_threshold: float = 0.5
    match_radius: float = 1.0
    registry: dict[str, int] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if self.seed.bit_length() > 64:
            raise ConfigError("seed must fit in 64 bits")


def _config_from_dict(data: Mapping[str, Any]) -> PipelineConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")
    kwargs: dict[str, Any] = {}
    try:
        if "seed" in data:
            kwargs["seed"] = data["seed"]
        if "offline" in data:
            kwargs["offline"] = bool(data["offline"])
        if "out_dir" in data:
            kwargs["out_dir"] = Path(data["out_dir"])
        if "sources" in data:
            kwargs["sources"] = {DatasetId(name): Path(path)
                                 for name, path in data["sources"].items()}
        if "standardize" in data:
            kwargs["standardize"] = StandardizeConfig.from_dict(data["standardize"])
        if "augment" in data:
            aug = data["augment"]
            if "factors" in aug:
                kwargs["factors"] = {DatasetId(name): int(f)
                                     for name, f in aug["factors"].items()}
            if "mc_fraction" in aug:
                kwargs["mc_fraction"] = float(aug["mc_fraction"])
            if "rewriter_url" in aug:
                kwargs["rewriter_url"] = aug["rewriter_url"]
        if "promptkit" in data:
            pk = data["promptkit"]
            kwargs["grid"] = GridConfig(grid_h=int(pk.get("grid_h", 27)),
                                        grid_w=int(pk.get("grid_w", 27)))
            kwargs["budget_limit"] = int(pk.get("limit", 8192))
        if "metrics" in data:
            met = data["metrics"]
            kwargs["iou_threshold"] = float(met.get("iou_threshold", 0.5))
            kwargs["match_radius"] = float(met.get("match_radius", 1.0))
        if "registry" in data:
            kwargs["registry"] = {str(k): int(v)
                                  for k, v in data["registry"].items()}
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError, SchemaError) as exc:
        raise ConfigError(f"bad config: {exc}") from None
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return _config_from_dict(data)


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    updates: dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "offline", False) or os.environ.get(OFFLINE_ENV) == "1":
        updates["offline"] = True
    if getattr(args, "out", None) is not None and hasattr(cfg, "out_dir"):
        updates["out_dir"] = Path(args.out)
    if not updates:
        return cfg
    try:
        return replace(cfg, **updates)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad override: {exc}") from None


# ---------------------------------------------------------------------------
# Shared I/O helpers
# ---------------------------------------------------------------------------

def _read_text(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
                    encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_ingest(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    jobs: list[tuple[DatasetId, Path]] = []
    if args.adapter or args.infile:
        if not (args.adapter and args.infile):
            raise ConfigError("ingest needs both --adapter and --in "
                              "(or neither, with sources in the config)")
        jobs.append((DatasetId(args.adapter), Path(args.infile)))
    elif cfg.sources:
        jobs.extend(sorted(cfg.sources.items(), key=lambda kv: kv[0].value))
    else:
        raise ConfigError("nothing to ingest: pass --adapter/--in or list "
                          "sources in the config")
    samples: list[Sample] = []
    for dataset, path in jobs:
        samples.extend(parse_source(dataset, _read_text(str(path))))
    assert_unique_ids(samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(samples, out)
    print(f"wrote {out} ({len(samples)} samples from {len(jobs)} source(s))")
    return 0


def _cmd_standardize(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    samples = read_manifest(args.infile)
    out: list[Sample] = []
    failures: list[str] = []
    for sample in samples:
        try:
            out.append(standardize_sample(sample, cfg.standardize))
        except DataforgeError as exc:
            failures.append(str(exc))
    if failures:
        for message in failures:
            print(f"error: {message}", file=sys.stderr)
        print(f"standardize failed on {len(failures)} of {len(samples)} samples",
              file=sys.stderr)
        return 1
    write_manifest(out, args.out)
    print(f"wrote {args.out} ({len(out)} samples)")
    return 0


def _guard_not_expanded(samples: Sequence[Sample]) -> None:
    for sample in samples:
        if "#aug" in sample.id:
            raise ProvenanceError(
                f"sample {sample.id} is already an expansion copy; "
                "augment refuses to re-expand its own output")
        for qa in sample.qa:
            if qa.provenance is not Provenance.ORIGINAL:
                raise ProvenanceError(
                    f"sample {sample.id} carries {qa.provenance.value} QA; "
                    "augment only accepts original data")


def _make_rewriter(cfg: PipelineConfig) -> Rewriter | None:
    if cfg.offline or not cfg.rewriter_url:
        return None
    from .remote import RemoteTextClient
    return RemoteTextClient(cfg.rewriter_url).as_rewriter()


def _cmd_augment(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    samples = read_manifest(args.infile)
    _guard_not_expanded(samples)
    rng = SeededRng(cfg.seed)
    rewriter = _make_rewriter(cfg)
    factors = cfg.factors
    expanded: list[Sample] = []
    seen_order: list[DatasetId] = []
    by_dataset: dict[DatasetId, list[Sample]] = {}
    for sample in samples:
        if sample.dataset not in by_dataset:
            seen_order.append(sample.dataset)
        by_dataset.setdefault(sample.dataset, []).append(sample)
    for dataset in seen_order:
        if factors is None:
            from .augment import default_policy
            policy = default_policy(dataset, cfg.mc_fraction)
        else:
            policy = ExpansionPolicy(dataset, factors.get(dataset, 1),
                                     cfg.mc_fraction)
        expanded.extend(expand_dataset(by_dataset[dataset], policy, rng,
                                       rewriter, jobs=args.jobs))
    write_manifest(expanded, args.out)
    print(f"wrote {args.out} ({len(samples)} -> {len(expanded)} samples)")
    return 0


def _cmd_gen_perception(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    try:
        data = json.loads(_read_text(args.infile))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(data, list):
        raise SchemaError("perception input must be a JSON array")
    rng = SeededRng(cfg.seed)
    samples = []
    for idx, rec in enumerate(data):
        if not isinstance(rec, dict) or "id" not in rec or "annotations" not in rec:
            raise SchemaError("expected {id, annotations, ...}", record_index=idx)
        try:
            spec = GroundingSpec(
                representation=rec.get("representation"),
                with_camera_prefix=bool(rec.get("with_camera_prefix", False)),
                frames_per_view=int(rec.get("frames_per_view", 1)))
        except ValueError as exc:
            raise SchemaError(str(exc), record_index=idx) from None
        anns = [annotation_from_dict(a, idx) for a in rec["annotations"]]
        sample = build_grounding_sample(
            str(rec["id"]), anns, spec,
            rng.stream("perceptgen", str(rec["id"]), "grounding"))
        violations = validate_sample(sample)
        if violations:
            raise SchemaError(f"generated sample invalid: {violations[0].detail}",
                              record_index=idx)
        samples.append(sample)
    assert_unique_ids(samples)
    write_manifest(samples, args.out)
    print(f"wrote {args.out} ({len(samples)} grounding samples)")
    return 0


def _cmd_build_prompts(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    samples = read_manifest(args.infile)
    template = PromptTemplate()
    rows = []
    over_budget = 0
    for sample in sorted(samples, key=lambda s: s.id):
        prompt, plan = assemble_prompt(sample, template)
        report = check_budget(sample, template, cfg.grid,
                              limit=cfg.budget_limit)
        if not report.fits:
            over_budget += 1
        rows.append({
            "id": sample.id,
            "prompt": prompt,
            "placeholders": [ph for _i, _m, ph in plan],
            "text_tokens": report.text_tokens,
            "visual_tokens": report.visual_tokens,
            "limit": report.limit,
            "fits": report.fits,
        })
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"wrote {out} ({len(rows)} prompts, {over_budget} over budget)")
    return 0


def _cmd_plan_curriculum(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out) if args.out else cfg.out_dir
    violations: list[str] = []
    for plan in build_all_plans(cfg.registry):
        report = validate_plan_totals(plan, DEFAULT_EXPECTATIONS[plan.stage])
        print(f"stage {plan.stage}: {report.total} samples"
              + ("" if report.ok else "  [VIOLATION]"))
        violations.extend(f"stage {plan.stage}: {v}" for v in report.violations)
    if violations:
        for message in violations:
            print(f"error: {message}", file=sys.stderr)
        return 1
    paths = write_stage_plans(out_dir, cfg.registry)
    print(f"wrote {len(paths)} plans under {out_dir / 'plans'}")
    return 0


def _cmd_evaluate(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    dataset = DatasetId(args.dataset)
    records = []
    with open(args.infile, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                raise SchemaError("blank line in predictions file", line=line_no)
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}",
                                  line=line_no) from None
            records.append(record_from_dict(payload, line=line_no))
    report = evaluate_records(records, dataset,
                              iou_threshold=cfg.iou_threshold,
                              match_radius=cfg.match_radius)
    payload = report_to_dict(report)
    if args.out:
        _write_json(Path(args.out), payload)
    for name, entry in payload["entries"].items():
        print(f"{name}: {entry['value']:.6f} (n={entry['n_samples']})")
    return 0


def _modality(sample: Sample) -> str:
    kinds = {m.kind for m in sample.media}
    if kinds == {MediaKind.IMAGE}:
        return "single_image" if len(sample.media) == 1 else "multi_image"
    if kinds == {MediaKind.VIDEO}:
        return "single_video" if len(sample.media) == 1 else "multi_video"
    return "mixed"


def _cmd_stats(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    samples = read_manifest(args.infile)
    by_dataset: dict[str, int] = {}
    by_modality: dict[str, int] = {}
    by_provenance: dict[str, int] = {}
    by_style: dict[str, int] = {}
    qa_total = 0
    for sample in samples:
        by_dataset[sample.dataset.value] = by_dataset.get(sample.dataset.value, 0) + 1
        modality = _modality(sample)
        by_modality[modality] = by_modality.get(modality, 0) + 1
        for qa in sample.qa:
            qa_total += 1
            by_provenance[qa.provenance.value] = \
                by_provenance.get(qa.provenance.value, 0) + 1
            by_style[qa.style.value] = by_style.get(qa.style.value, 0) + 1
    payload = {
        "samples": len(samples),
        "qa_pairs": qa_total,
        "by_dataset": dict(sorted(by_dataset.items())),
        "by_modality": dict(sorted(by_modality.items())),
        "by_provenance": dict(sorted(by_provenance.items())),
        "by_style": dict(sorted(by_style.items())),
    }
    if args.out:
        _write_json(Path(args.out), payload)
    print(f"samples: {payload['samples']}")
    print(f"qa_pairs: {payload['qa_pairs']}")
    for section in ("by_dataset", "by_modality", "by_provenance", "by_style"):
        for name, count in payload[section].items():
            print(f"{section}.{name}: {count}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    # Shared flags are accepted both before and after the subcommand; SUPPRESS
    # keeps the subparser from clobbering a value given at the top level.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                        help="JSON pipeline config file")
    common.add_argument("--seed", type=int, metavar="N",
                        default=argparse.SUPPRESS,
                        help="override the config seed")
    common.add_argument("--offline", action="store_true",
                        default=argparse.SUPPRESS,
                        help=f"disable network use (or set {OFFLINE_ENV}=1)")
    common.add_argument("--jobs", type=int, metavar="N",
                        default=argparse.SUPPRESS,
                        help="worker threads; never changes output")

    parser = argparse.ArgumentParser(
        prog="dataforge", parents=[common],
        description="Deterministic driving-QA data pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text)

    p = add("ingest", "convert source annotations to a manifest")
    p.add_argument("--adapter", choices=[d.value for d in DatasetId])
    p.add_argument("--in", dest="infile", metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=_cmd_ingest)

    p = add("standardize", "rewrite object tokens, append format instructions")
    p.add_argument("--in", dest="infile", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=_cmd_standardize)

    p = add("augment", "expand a manifest by paraphrase and multiple-choice "
                              "conversion")
    p.add_argument("--in", dest="infile", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=_cmd_augment)

    p = add("gen-perception", "generate grounding QA from detection annotations")
    p.add_argument("--in", dest="infile", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=_cmd_gen_perception)

    p = add("build-prompts", "assemble prompts and check token budgets")
    p.add_argument("--in", dest="infile", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=_cmd_build_prompts)

    p = add("plan-curriculum", "emit the four stage plans")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=_cmd_plan_curriculum)

    p = add("evaluate", "score a predictions file")
    p.add_argument("--in", dest="infile", required=True, metavar="PATH")
    p.add_argument("--dataset", required=True,
                   choices=[d.value for d in DatasetId])
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=_cmd_evaluate)

    p = add("stats", "summarize a manifest")
    p.add_argument("--in", dest="infile", required=True, metavar="PATH")
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=_cmd_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    args.config = getattr(args, "config", None)
    args.seed = getattr(args, "seed", None)
    args.offline = getattr(args, "offline", False)
    args.jobs = getattr(args, "jobs", 1)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
