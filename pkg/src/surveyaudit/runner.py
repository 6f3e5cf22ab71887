"""Config-driven experiment orchestration.

Reads one structured config, loads the dataset, fits the in-sample forest
ceiling per case, renders and executes every (backend, case, variant,
mask) cell, computes the metric battery with baseline-relative ratios,
fits the configured regressions, and writes the report bundle.  Every
number in the bundle is a pure function of (config, cache), so reruns are
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import forest as forest_mod
from . import metrics as metrics_mod
from . import reporting
from .data import Dataset, SurveyCase, load_dataset, partition_by
from .errors import ConfigError
from .gateway import (
    BackendConfig,
    ExchangeCache,
    MockBackend,
    Prediction,
    build_backend,
    run_batch,
)
from .prompts import (
    DEFAULT_FEWSHOT_K,
    DEFAULT_POLITICAL,
    AblationMask,
    PromptVariant,
    ablation_plan,
    render,
    sample_fewshot,
)
from .regression import ModelSpec, build_design, fit_logit, summarize, to_csv_rows

_VARIANTS = {v.value: v for v in PromptVariant}


@dataclass
class ExperimentConfig:
    csv_path: Path
    schema_path: Path
    backends: list[dict]
    case_ids: Optional[list[str]] = None
    variants: list[str] = field(default_factory=lambda: ["original"])
    masks: list[str] = field(default_factory=lambda: ["all"])
    ablation: bool = False
    fewshot_k: int = DEFAULT_FEWSHOT_K
    political: list[str] = field(default_factory=lambda: sorted(DEFAULT_POLITICAL))
    forest_params: dict = field(default_factory=dict)
    forest_seed: int = 0
    regressions: list[dict] = field(default_factory=list)
    unparseable_policy: str = "incorrect"
    equality_tolerance: float = 0.05
    equality_pairs: list[tuple[str, str]] = field(default_factory=list)
    seed: int = 0
    cache_path: Optional[Path] = None
    out_dir: Path = Path("out")
    config_hash: str = ""
    raw: dict = field(default_factory=dict)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
        raw = yaml.safe_load(raw_bytes)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")

    ds = raw.get("dataset") or {}
    if "csv" not in ds or "schema" not in ds:
        raise ConfigError("config needs dataset.csv and dataset.schema")
    backends = raw.get("backends")
    if not backends:
        raise ConfigError("config needs at least one backend")

    variants = raw.get("variants") or [raw.get("variant", "original")]
    for v in variants:
        if v not in _VARIANTS:
            raise ConfigError(f"unknown prompt variant {v!r}")

    fewshot = raw.get("fewshot") or {}
    forest = dict(raw.get("forest") or {})
    forest_seed = forest.pop("seed", raw.get("seed", 0))

    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    cfg = ExperimentConfig(
        csv_path=resolve(ds["csv"]),
        schema_path=resolve(ds["schema"]),
        backends=list(backends),
        case_ids=raw.get("cases"),
        variants=list(variants),
        masks=list(raw.get("masks") or ["all"]),
        ablation=bool(raw.get("ablation", False)),
        fewshot_k=int(fewshot.get("k", DEFAULT_FEWSHOT_K)),
        political=list(raw.get("political")
                       or sorted(DEFAULT_POLITICAL)),
        forest_params=forest,
        forest_seed=int(forest_seed),
        regressions=list(raw.get("regressions") or []),
        unparseable_policy=raw.get("unparseable", "incorrect"),
        equality_tolerance=float(raw.get("equality_tolerance", 0.05)),
        equality_pairs=[tuple(p) for p in raw.get("equality_pairs") or []],
        seed=int(raw.get("seed", 0)),
        cache_path=resolve(raw["cache"]) if raw.get("cache") else None,
        out_dir=resolve(raw.get("output", "out")),
        config_hash=hashlib.sha256(raw_bytes).hexdigest(),
        raw=raw,
    )
    if cfg.unparseable_policy not in {"incorrect", "exclude"}:
        raise ConfigError(f"unknown unparseable policy {cfg.unparseable_policy!r}")
    return cfg


def _parse_mask(text: str, political: frozenset[str]) -> AblationMask:
    if text == "all":
        return AblationMask.all()
    if text == "without_political":
        return AblationMask.without_political(political)
    if text == "only_political":
        return AblationMask.only_political(political)
    if text.startswith("without:"):
        return AblationMask.without(text.split(":", 1)[1])
    raise ConfigError(f"unknown mask {text!r}")


def _fewshot_seed(master: int, case_id: str, respondent_id: str) -> int:
    digest = hashlib.sha256(
        f"{master}|{case_id}|{respondent_id}".encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "big")


def _mock_reply_fn(strategy: str, dataset: Dataset):
    if strategy == "majority":
        majority = {}
        for case in dataset.cases:
            counts = [0] * len(case.options)
            for idx in case.answers.values():
                counts[idx] += 1
            majority[case.question_id] = case.options[counts.index(max(counts))]
        return lambda prompt: majority[prompt.case_id]
    if strategy == "truth":
        # oracle mock: answers with the target's true answer (upper-bound probe)
        truth = {
            (c.question_id, rid): c.options[idx]
            for c in dataset.cases
            for rid, idx in c.answers.items()
        }
        return lambda prompt: truth[(prompt.case_id, prompt.target_id)]
    if strategy == "unparseable":
        return lambda prompt: "I cannot say."
    if strategy.startswith("fixed:"):
        label = strategy.split(":", 1)[1]
        return lambda prompt: label
    if strategy == "first_option":
        return None  # MockBackend default
    raise ConfigError(f"unknown mock strategy {strategy!r}")


def _make_backend(entry: dict, dataset: Dataset, cache: ExchangeCache,
                  offline: bool):
    entry = dict(entry)
    strategy = entry.pop("strategy", "first_option")
    kind = entry.get("kind", "mock")
    if offline and kind == "remote":
        entry["kind"] = "replay"
        entry.pop("endpoint", None)
        kind = "replay"
    known = {
        "name", "kind", "model_id", "endpoint", "temperature", "max_retries",
        "parallelism", "rate_limit", "credential_env",
    }
    unknown = set(entry) - known
    if unknown:
        raise ConfigError(f"unknown backend fields: {sorted(unknown)}")
    config = BackendConfig(**entry)
    if kind == "mock":
        fn = _mock_reply_fn(strategy, dataset)
        return MockBackend(config, reply_fn=fn)
    return build_backend(config, cache)


@dataclass
class CellResult:
    backend: str
    case_id: str
    variant: str
    mask_label: str
    report: metrics_mod.MetricReport
    predictions: list[Prediction]


@dataclass
class ReportBundle:
    baseline: dict[str, metrics_mod.MetricReport]
    cells: list[CellResult]
    equality: dict
    regressions: dict[str, dict]
    manifest: dict
    out_dir: Path


def _select_cases(dataset: Dataset, cfg: ExperimentConfig) -> list[SurveyCase]:
    if cfg.case_ids is None:
        return list(dataset.cases)
    known = {c.question_id for c in dataset.cases}
    for cid in cfg.case_ids:
        if cid not in known:
            raise ConfigError(f"config names unknown question id {cid!r}")
    return [c for c in dataset.cases if c.question_id in cfg.case_ids]


def render_case_prompts(
    dataset: Dataset,
    case: SurveyCase,
    variant: PromptVariant,
    mask: AblationMask,
    k: int,
    seed: int,
):
    """Render one prompt per respondent with a known answer."""
    prompts = []
    for profile in dataset.profiles:
        rid = profile.respondent_id
        if rid not in case.answers:
            continue
        if variant.uses_fewshot:
            ids = sample_fewshot(
                dataset, case, k, exclude=rid,
                seed=_fewshot_seed(seed, case.question_id, rid),
            )
            fewshot = [(dataset.profile(i), case.answers[i]) for i in ids]
        else:
            fewshot = []
        prompts.append(render(profile, case, variant, mask, fewshot))
    return prompts


def intersection_accuracy(
    dataset: Dataset,
    predictions: Sequence[Prediction],
    case: SurveyCase,
    attr_a: str,
    attr_b: str,
    policy: str = "incorrect",
) -> tuple[dict, dict]:
    """Accuracy per (category_a, category_b) intersection cell."""
    by_id = {p.respondent_id: p for p in predictions}
    acc: dict = {}
    sizes: dict = {}
    for cat_a, ids_a in partition_by(dataset, attr_a):
        for cat_b, ids_b in partition_by(dataset, attr_b):
            members = [by_id[r] for r in sorted(ids_a & ids_b) if r in by_id]
            if policy == "exclude":
                members = [p for p in members if p.parsed is not None]
            key = (cat_a, cat_b)
            sizes[key] = len(members)
            if not members:
                acc[key] = None
                continue
            correct = sum(
                1 for p in members
                if p.parsed is not None
                and p.parsed == case.answers[p.respondent_id]
            )
            acc[key] = correct / len(members)
    return acc, sizes


def run_experiment(
    cfg: ExperimentConfig, offline: bool = False,
    seed_override: Optional[int] = None,
) -> ReportBundle:
    if seed_override is not None:
        cfg.seed = seed_override
    dataset = load_dataset(cfg.csv_path, cfg.schema_path)
    cases = _select_cases(dataset, cfg)
    political = frozenset(cfg.political)
    unknown_political = political - set(dataset.schema.names)
    if unknown_political:
        raise ConfigError(
            f"political set names unknown attributes: {sorted(unknown_political)}"
        )
    for entry in cfg.regressions:
        for attr in entry.get("main_effects") or []:
            if attr != "all" and attr not in dataset.schema.names:
                raise ConfigError(f"regression names unknown attribute {attr!r}")
    for a, b in cfg.equality_pairs:
        for attr in (a, b):
            if attr not in dataset.schema.names:
                raise ConfigError(f"equality pair names unknown attribute {attr!r}")

    if cfg.ablation:
        masks = ablation_plan(dataset.schema, political)
    else:
        masks = [_parse_mask(m, political) for m in cfg.masks]
    variants = [_VARIANTS[v] for v in cfg.variants]

    cache = ExchangeCache(cfg.cache_path)
    backends = [
        (_make_backend(entry, dataset, cache, offline), entry)
        for entry in cfg.backends
    ]

    # forest ceiling, once per case
    params = forest_mod.ForestParams(**cfg.forest_params) if cfg.forest_params \
        else forest_mod.ForestParams()
    baseline: dict[str, metrics_mod.MetricReport] = {}
    for case in cases:
        report, _ = forest_mod.baseline_metrics(
            dataset, case, params, seed=cfg.forest_seed
        )
        baseline[case.question_id] = report

    options_by_case = {c.question_id: c.options for c in dataset.cases}
    cells: list[CellResult] = []
    for backend, entry in backends:
        bname = backend.config.name
        for case in cases:
            for variant in variants:
                for mask in masks:
                    prompts = render_case_prompts(
                        dataset, case, variant, mask, cfg.fewshot_k, cfg.seed
                    )
                    predictions = run_batch(prompts, options_by_case, backend, cache)
                    report = metrics_mod.compute_report(
                        dataset, predictions, case, backend=bname,
                        policy=cfg.unparseable_policy,
                    )
                    base = baseline[case.question_id]
                    report.relative = {
                        "accuracy": metrics_mod.relative_ratio(
                            report.accuracy, base.accuracy
                        ) if base.accuracy > 0 else None,
                        "jss": metrics_mod.relative_ratio(report.jss, base.jss)
                        if base.jss > 0 else None,
                    }
                    cells.append(CellResult(
                        backend=bname,
                        case_id=case.question_id,
                        variant=variant.value,
                        mask_label=mask.label(),
                        report=report,
                        predictions=predictions,
                    ))

    # accuracy equality, single attributes and configured intersections,
    # evaluated on the default-variant all-mask cells
    equality: dict = {}
    primary = [
        c for c in cells
        if c.variant == variants[0].value and c.mask_label == "All"
    ] or cells
    for cell in primary:
        case = dataset.case(cell.case_id)
        per_case: dict = {}
        for attr in dataset.schema.names:
            acc_map = cell.report.per_group_accuracy[attr]
            verdict = metrics_mod.overall_accuracy_equality(
                acc_map, cfg.equality_tolerance,
                group_sizes=cell.report.group_sizes[attr],
            )
            per_case[attr] = {"verdict": verdict, "accuracy": acc_map}
        for a, b in cfg.equality_pairs:
            acc_map, sizes = intersection_accuracy(
                dataset, cell.predictions, case, a, b,
                policy=cfg.unparseable_policy,
            )
            verdict = metrics_mod.overall_accuracy_equality(
                acc_map, cfg.equality_tolerance, group_sizes=sizes
            )
            per_case[f"{a} x {b}"] = {"verdict": verdict, "accuracy": acc_map}
        equality[(cell.backend, cell.case_id)] = per_case

    # regressions over the pooled primary predictions, per backend
    regressions: dict[str, dict] = {}
    for entry in cfg.regressions:
        mains = entry.get("main_effects") or ["all"]
        if mains == ["all"] or mains == "all":
            mains = list(dataset.schema.names)
        spec = ModelSpec(
            main_effects=tuple(mains),
            interactions=tuple(tuple(i) for i in entry.get("interactions") or []),
            question_fixed_effects=bool(entry.get("question_fixed_effects", True)),
            name=entry.get("name", "model"),
        )
        for backend, _ in backends:
            bname = backend.config.name
            pooled = [
                p for c in primary if c.backend == bname for p in c.predictions
            ]
            if not pooled:
                continue
            design = build_design(dataset, pooled, spec,
                                  policy=cfg.unparseable_policy)
            fit = fit_logit(design)
            regressions[f"{spec.name}__{bname}"] = {
                "spec": spec,
                "design": design,
                "fit": fit,
            }

    manifest = {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "forest_seed": cfg.forest_seed,
        "cases": [c.question_id for c in cases],
        "backends": [b.config.name for b, _ in backends],
        "variants": [v.value for v in variants],
        "masks": [m.label() for m in masks],
        "fewshot_k": cfg.fewshot_k,
        "unparseable_policy": cfg.unparseable_policy,
        "n_predictions": sum(len(c.predictions) for c in cells),
    }
    bundle = ReportBundle(
        baseline=baseline,
        cells=cells,
        equality=equality,
        regressions=regressions,
        manifest=manifest,
        out_dir=cfg.out_dir,
    )
    write_bundle(bundle, cfg, dataset, cases)
    return bundle


def _dump_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def write_bundle(bundle: ReportBundle, cfg: ExperimentConfig,
                 dataset: Dataset, cases: Sequence[SurveyCase]) -> None:
    out = bundle.out_dir
    out.mkdir(parents=True, exist_ok=True)
    case_ids = [c.question_id for c in cases]

    _dump_json(out / "manifest.json", bundle.manifest)

    with (out / "predictions.jsonl").open("w", encoding="utf-8") as fh:
        for cell in bundle.cells:
            for p in cell.predictions:
                rec = p.to_record()
                rec["variant"] = cell.variant
                rec["mask"] = cell.mask_label
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    metrics_payload = {
        "baseline": {cid: rep.to_dict() for cid, rep in bundle.baseline.items()},
        "cells": [
            {
                "backend": c.backend,
                "case_id": c.case_id,
                "variant": c.variant,
                "mask": c.mask_label,
                "report": c.report.to_dict(),
            }
            for c in bundle.cells
        ],
    }
    _dump_json(out / "metrics.json", metrics_payload)

    # Markdown main table: default variant, All mask
    default_variant = bundle.manifest["variants"][0]
    models: dict[str, dict[str, metrics_mod.MetricReport]] = {}
    for c in bundle.cells:
        if c.variant == default_variant and c.mask_label == "All":
            models.setdefault(c.backend, {})[c.case_id] = c.report
    md = [
        "# Audit report",
        "",
        "## Performance vs. in-sample forest ceiling",
        "",
        reporting.metric_table_markdown(case_ids, bundle.baseline, models),
        "",
        "JSS uses base-2 logarithms. Ratios in parentheses are "
        "model/ceiling, rounded half away from zero to 2 decimals.",
        "",
    ]

    # equality sections
    for (backend, cid), per_case in bundle.equality.items():
        md.append(f"## Accuracy equality: {backend} / {cid}")
        md.append("")
        for attr, info in per_case.items():
            md.append(reporting.equality_matrix_markdown(
                attr, info["verdict"], info["accuracy"]
            ))
            md.append("")
    (out / "metrics.md").write_text("\n".join(md), encoding="utf-8")

    equality_payload = {}
    for (backend, cid), per_case in bundle.equality.items():
        equality_payload[f"{backend}::{cid}"] = {
            attr: {
                "satisfied": info["verdict"].satisfied,
                "max_gap": info["verdict"].max_gap,
                "tolerance": info["verdict"].tolerance,
                "accuracy": {
                    (" x ".join(k) if isinstance(k, tuple) else k): v
                    for k, v in info["accuracy"].items()
                },
                "sizes": {
                    (" x ".join(k) if isinstance(k, tuple) else k): v
                    for k, v in info["verdict"].group_sizes.items()
                },
            }
            for attr, info in per_case.items()
        }
    _dump_json(out / "equality.json", equality_payload)

    # ablation table when more than one mask ran
    mask_labels = bundle.manifest["masks"]
    if len(mask_labels) > 1:
        per_backend: dict[str, list] = {}
        for label in mask_labels:
            for c in bundle.cells:
                if c.mask_label != label or c.variant != default_variant:
                    continue
                per_backend.setdefault(c.backend, [])
        for bname in per_backend:
            rows = []
            for label in mask_labels:
                cells_for = {
                    c.case_id: (c.report.accuracy, c.report.jss)
                    for c in bundle.cells
                    if c.backend == bname and c.mask_label == label
                    and c.variant == default_variant
                }
                rows.append((label, cells_for))
            table = reporting.ablation_table_markdown(case_ids, rows)
            (out / f"ablation_{bname}.md").write_text(
                "# Feature ablation\n\n" + table + "\n", encoding="utf-8"
            )
            _dump_json(out / f"ablation_{bname}.json", [
                {"mask": label,
                 "cells": {cid: list(vals) for cid, vals in cells_for.items()}}
                for label, cells_for in rows
            ])

    # prompt-sensitivity summary when more than one variant ran
    variants = bundle.manifest["variants"]
    if len(variants) > 1:
        rows = []
        payload = []
        for bname in bundle.manifest["backends"]:
            for variant in variants:
                vals = [
                    c.report.accuracy for c in bundle.cells
                    if c.backend == bname and c.variant == variant
                    and c.mask_label == "All"
                ]
                if not vals or any(v <= 0 for v in vals):
                    continue
                hm = metrics_mod.harmonic_mean(vals)
                rows.append((bname, variant, hm, min(vals), max(vals)))
                payload.append({
                    "backend": bname, "variant": variant,
                    "harmonic_mean": hm, "min": min(vals), "max": max(vals),
                })
        (out / "sensitivity.md").write_text(
            "# Prompt sensitivity\n\n" + reporting.sensitivity_markdown(rows)
            + "\n", encoding="utf-8"
        )
        _dump_json(out / "sensitivity.json", payload)

    # regression tables
    for key, bits in bundle.regressions.items():
        table = summarize(bits["fit"], bits["spec"], bits["design"])
        (out / f"regression_{key}.md").write_text(table + "\n", encoding="utf-8")
        rows = to_csv_rows(bits["fit"])
        lines = ["term,estimate,se,z,p,stars"]
        for r in rows:
            lines.append(
                f"{r['term']},{r['estimate']:.10g},{r['se']:.10g},"
                f"{r['z']:.10g},{r['p']:.10g},{r['stars']}"
            )
        (out / f"regression_{key}.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )

    # per-figure plot data: group series per (backend, case, attribute)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    for c in bundle.cells:
        if c.variant != default_variant or c.mask_label != "All":
            continue
        base = bundle.baseline[c.case_id]
        for attr in dataset.schema.names:
            series = []
            for cat in dataset.schema.attribute(attr).categories:
                acc = c.report.per_group_accuracy[attr][cat]
                jss_v = c.report.per_group_jss[attr][cat]
                b_acc = base.per_group_accuracy[attr][cat]
                b_jss = base.per_group_jss[attr][cat]
                series.append({
                    "group": cat,
                    "accuracy": acc,
                    "jss": jss_v,
                    "relative_accuracy": (
                        acc / b_acc if acc is not None and b_acc else None
                    ),
                    "relative_jss": (
                        jss_v / b_jss if jss_v is not None and b_jss else None
                    ),
                })
            _dump_json(
                plots / f"{c.backend}__{c.case_id}__{attr}.json",
                {"backend": c.backend, "case": c.case_id,
                 "attribute": attr, "series": series},
            )
