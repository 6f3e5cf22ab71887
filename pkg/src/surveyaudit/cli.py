"""Command-line entry points for the audit toolkit."""

from __future__ import annotations

import json
from pathlib import Path

import click

from . import synthetic as synth_mod
from .data import load_dataset, save_dataset
from .errors import ConfigError, SurveyAuditError
from .gateway import Prediction
from .metrics import compute_report
from .regression import ModelSpec, build_design, fit_logit, summarize
from .runner import ExperimentConfig, load_config, run_experiment


def _load(config_path: str, out: str | None, seed: int | None) -> ExperimentConfig:
    cfg = load_config(config_path)
    if out:
        cfg.out_dir = Path(out)
    return cfg


@click.group()
def main():
    """Audit how well model backends predict survey answers from
    socio-demographic profiles, and how fairly."""


def _common(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True))(fn)
    fn = click.option("--out", default=None, type=click.Path())(fn)
    fn = click.option("--offline", is_flag=True,
                      help="Replay/mock backends only; no network.")(fn)
    fn = click.option("--seed", default=None, type=int)(fn)
    return fn


@main.command()
@_common
def run(config_path, out, offline, seed):
    """Full pipeline: baseline, prompts, metrics, regressions, bundle."""
    try:
        cfg = _load(config_path, out, seed)
        bundle = run_experiment(cfg, offline=offline, seed_override=seed)
    except SurveyAuditError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"bundle written to {bundle.out_dir}")


@main.command()
@_common
def ablation(config_path, out, offline, seed):
    """Run the full ablation sweep (all masks) and emit the ablation table."""
    try:
        cfg = _load(config_path, out, seed)
        cfg.ablation = True
        bundle = run_experiment(cfg, offline=offline, seed_override=seed)
    except SurveyAuditError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"ablation bundle written to {bundle.out_dir}")


@main.command(name="prompt-sweep")
@_common
def prompt_sweep(config_path, out, offline, seed):
    """Run every configured prompt variant and summarize sensitivity."""
    try:
        cfg = _load(config_path, out, seed)
        if len(cfg.variants) < 2:
            cfg.variants = ["original", "spanish", "zeroshot"]
        bundle = run_experiment(cfg, offline=offline, seed_override=seed)
    except SurveyAuditError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"sweep bundle written to {bundle.out_dir}")


@main.command()
@_common
@click.option("--predictions", "predictions_path", required=True,
              type=click.Path(exists=True),
              help="predictions.jsonl from a previous run")
def regress(config_path, out, offline, seed, predictions_path):
    """Fit the configured regressions on an existing prediction log."""
    try:
        cfg = _load(config_path, out, seed)
        dataset = load_dataset(cfg.csv_path, cfg.schema_path)
        predictions = []
        with open(predictions_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    predictions.append(Prediction(
                        respondent_id=rec["respondent_id"],
                        question_id=rec["question_id"],
                        backend=rec["backend"],
                        raw_text=rec["raw_text"],
                        parsed=rec["parsed"],
                    ))
        out_dir = Path(out or cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for entry in cfg.regressions:
            mains = entry.get("main_effects") or ["all"]
            if mains == ["all"]:
                mains = list(dataset.schema.names)
            spec = ModelSpec(
                main_effects=tuple(mains),
                interactions=tuple(tuple(i) for i in entry.get("interactions") or []),
                question_fixed_effects=bool(
                    entry.get("question_fixed_effects", True)
                ),
                name=entry.get("name", "model"),
            )
            design = build_design(dataset, predictions, spec,
                                  policy=cfg.unparseable_policy)
            fit = fit_logit(design)
            (out_dir / f"regression_{spec.name}.md").write_text(
                summarize(fit, spec, design) + "\n", encoding="utf-8"
            )
            click.echo(f"{spec.name}: {len(fit.columns)} terms, "
                       f"loglik {fit.log_likelihood:.2f}")
    except SurveyAuditError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def synth(config_path, out):
    """Generate a synthetic population and cross-check both metric paths."""
    import yaml

    try:
        raw = yaml.safe_load(Path(config_path).read_text(encoding="utf-8"))
        section = raw.get("synthetic")
        if not section:
            raise ConfigError("config needs a 'synthetic' section")
        spec = _population_spec_from(section)
        dataset, predictions = synth_mod.generate(spec)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_dataset(dataset, out_dir / "synthetic.csv",
                     out_dir / "synthetic_schema.yaml")

        worst = 0.0
        for case in dataset.cases:
            preds = [p for p in predictions if p.question_id == case.question_id]
            engine = compute_report(dataset, preds, case)
            oracle = synth_mod.brute_force_metrics(dataset, preds, case)
            worst = max(worst, abs(engine.accuracy - oracle["accuracy"]),
                        abs(engine.jss - oracle["jss"]))
            for attr, val in engine.weighted_jss.items():
                worst = max(worst, abs(val - oracle["weighted_jss"][attr]))
        click.echo(f"generated n={spec.n}; metric paths agree within {worst:.2e}")
        if worst > 1e-10:
            raise click.ClickException("metric paths disagree beyond 1e-10")
    except SurveyAuditError as exc:
        raise click.ClickException(str(exc))


def _population_spec_from(section: dict) -> "synth_mod.PopulationSpec":
    from .data import Attribute, AttributeSchema

    attrs = tuple(
        Attribute(
            name=a["name"],
            categories=tuple(a["categories"]),
            reference=a["reference"],
        )
        for a in section["attributes"]
    )
    schema = AttributeSchema(
        attributes=attrs,
        id_column="respondent_id",
        answer_columns=tuple(c["id"] for c in section["cases"]),
    )
    marginals = {a["name"]: list(a["marginals"]) for a in section["attributes"]}
    cases = tuple(
        synth_mod.CaseSpec(
            question_id=c["id"],
            options=tuple(c["options"]),
            base_probs=tuple(c["probs"]),
            depends_on=c.get("depends_on"),
            table=c.get("table"),
        )
        for c in section["cases"]
    )
    correctness = section.get("correctness") or {}
    return synth_mod.PopulationSpec(
        schema=schema,
        marginals=marginals,
        n=int(section["n"]),
        cases=cases,
        correctness_intercept=float(correctness.get("intercept", 1.0)),
        correctness_beta=dict(correctness.get("beta") or {}),
        unparseable_rate=float(section.get("unparseable_rate", 0.0)),
        seed=int(section.get("seed", 0)),
    )


@main.command()
@_common
def report(config_path, out, offline, seed):
    """Re-render the report bundle from cached predictions (no backend calls)."""
    try:
        cfg = _load(config_path, out, seed)
        bundle = run_experiment(cfg, offline=True, seed_override=seed)
    except SurveyAuditError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"bundle re-rendered to {bundle.out_dir}")


if __name__ == "__main__":
    main()
