import json
import math
import textwrap
from pathlib import Path

import pytest
from click.testing import CliRunner

from surveyaudit.cli import main
from surveyaudit.data import Attribute, AttributeSchema, save_dataset
from surveyaudit.errors import ConfigError
from surveyaudit.runner import load_config
from surveyaudit.synthetic import CaseSpec, PopulationSpec, generate


def write_population(tmp_path, n=120, seed=3, questions=("vote",)):
    schema = AttributeSchema(
        attributes=(
            Attribute("gender", ("Man", "Woman"), "Man"),
            Attribute("age", ("Young Adult", "Adult", "Senior Adult"),
                      "Young Adult"),
            Attribute("ideology", ("Left", "Center", "Right"), "Center"),
        ),
        id_column="respondent_id",
        answer_columns=tuple(questions),
    )
    spec = PopulationSpec(
        schema=schema,
        marginals={
            "gender": [0.5, 0.5],
            "age": [0.4, 0.4, 0.2],
            "ideology": [0.3, 0.4, 0.3],
        },
        n=n,
        cases=tuple(
            CaseSpec(q, ("OptA", "OptB"), (0.6, 0.4), depends_on="gender",
                     table={"Man": [0.8, 0.2], "Woman": [0.3, 0.7]})
            for q in questions
        ),
        correctness_intercept=math.log(0.75 / 0.25),
        correctness_beta={"gender=Woman": -0.4},
        seed=seed,
    )
    dataset, _ = generate(spec)
    save_dataset(dataset, tmp_path / "data.csv", tmp_path / "schema.yaml")
    return dataset


def write_config(tmp_path, extra="", backends=None, out="out"):
    backends = backends or "  - {name: mock, kind: mock, strategy: majority}"
    text = textwrap.dedent(f"""\
        dataset:
          csv: data.csv
          schema: schema.yaml
        backends:
        {backends}
        variant: zeroshot
        fewshot: {{k: 3}}
        political: [ideology]
        forest: {{n_trees: 20, seed: 7}}
        seed: 13
        output: {out}
    """) + extra
    path = tmp_path / "config.yaml"
    path.write_text(text)
    return path


def bundle_bytes(out_dir: Path) -> dict:
    return {
        str(p.relative_to(out_dir)): p.read_bytes()
        for p in sorted(out_dir.rglob("*")) if p.is_file()
    }


def test_run_majority_mock(tmp_path):
    ds = write_population(tmp_path)
    cfg_path = write_config(tmp_path)
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(cfg_path), "--offline"])
    assert result.exit_code == 0, result.output
    out = tmp_path / "out"
    metrics = json.loads((out / "metrics.json").read_text())
    cell = metrics["cells"][0]
    case = ds.cases[0]
    counts = [0, 0]
    for idx in case.answers.values():
        counts[idx] += 1
    majority_share = max(counts) / sum(counts)
    assert abs(cell["report"]["accuracy"] - majority_share) < 1e-12
    assert cell["report"]["relative"]["accuracy"] <= 1.0 + 1e-9


def test_rerun_byte_identical(tmp_path):
    write_population(tmp_path)
    cfg = write_config(tmp_path)
    runner = CliRunner()
    assert runner.invoke(main, ["run", "--config", str(cfg), "--offline",
                                "--out", str(tmp_path / "o1")]).exit_code == 0
    assert runner.invoke(main, ["run", "--config", str(cfg), "--offline",
                                "--out", str(tmp_path / "o2")]).exit_code == 0
    assert bundle_bytes(tmp_path / "o1") == bundle_bytes(tmp_path / "o2")


def test_unknown_question_fails_fast(tmp_path):
    write_population(tmp_path)
    cfg = write_config(tmp_path, extra="cases: [nonexistent]")
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(cfg), "--offline"])
    assert result.exit_code != 0
    assert "nonexistent" in result.output
    assert not (tmp_path / "out").exists()


def test_ablation_rows(tmp_path):
    write_population(tmp_path)
    cfg = write_config(tmp_path)
    runner = CliRunner()
    result = runner.invoke(main, ["ablation", "--config", str(cfg), "--offline"])
    assert result.exit_code == 0, result.output
    table = json.loads((tmp_path / "out" / "ablation_mock.json").read_text())
    # 3 fixed rows + one per attribute
    assert len(table) == 3 + 3
    labels = [row["mask"] for row in table]
    assert labels[:3] == ["All", "Without political variables",
                          "Only political variables"]


def test_prompt_sweep(tmp_path):
    write_population(tmp_path, questions=("vote", "ref"))
    cfg = write_config(tmp_path, extra="variants: [original, zeroshot]")
    runner = CliRunner()
    result = runner.invoke(main, ["prompt-sweep", "--config", str(cfg),
                                  "--offline"])
    assert result.exit_code == 0, result.output
    payload = json.loads((tmp_path / "out" / "sensitivity.json").read_text())
    assert {row["variant"] for row in payload} == {"original", "zeroshot"}
    for row in payload:
        assert row["min"] <= row["harmonic_mean"] <= row["max"]


def test_prompt_sweep_constant_metric_interval():
    from surveyaudit.metrics import harmonic_mean

    vals = [0.5, 1.0]
    assert abs(harmonic_mean(vals) - 2 / 3) < 1e-12
    assert (min(vals), max(vals)) == (0.5, 1.0)


def test_regressions_in_bundle(tmp_path):
    write_population(tmp_path, n=200)
    cfg = write_config(tmp_path, extra=textwrap.dedent("""\
        regressions:
          - name: model1
            main_effects: [gender, age]
    """))
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(cfg), "--offline"])
    assert result.exit_code == 0, result.output
    md = (tmp_path / "out" / "regression_model1__mock.md").read_text()
    assert "gender (ref = Man)" in md
    csv_text = (tmp_path / "out" / "regression_model1__mock.csv").read_text()
    assert csv_text.startswith("term,estimate,se,z,p,stars")


def test_equality_pairs(tmp_path):
    write_population(tmp_path)
    cfg = write_config(tmp_path, extra="equality_pairs: [[gender, age]]")
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(cfg), "--offline"])
    assert result.exit_code == 0, result.output
    eq = json.loads((tmp_path / "out" / "equality.json").read_text())
    block = next(iter(eq.values()))
    assert "gender x age" in block
    assert "Man x Young Adult" in block["gender x age"]["accuracy"]


def test_synth_command(tmp_path):
    cfg = tmp_path / "synth.yaml"
    cfg.write_text(textwrap.dedent("""\
        synthetic:
          n: 150
          seed: 2
          attributes:
            - {name: gender, categories: [Man, Woman], reference: Man,
               marginals: [0.5, 0.5]}
          cases:
            - {id: q1, options: [A, B], probs: [0.6, 0.4]}
          correctness: {intercept: 1.2, beta: {gender=Woman: -0.5}}
    """))
    runner = CliRunner()
    result = runner.invoke(main, ["synth", "--config", str(cfg),
                                  "--out", str(tmp_path / "synthout")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "synthout" / "synthetic.csv").exists()
    assert "agree" in result.output


def test_config_validation_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("dataset: {csv: x.csv}\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_offline_converts_remote_to_replay(tmp_path):
    write_population(tmp_path)
    backends = (
        "  - {name: gpt, kind: remote, model_id: gpt-x,\n"
        "     endpoint: 'http://example.invalid/v1'}"
    )
    cfg = write_config(tmp_path, backends=backends)
    runner = CliRunner()
    # replay cache is empty, so every prompt fails closed without touching
    # the network and the run aborts loudly instead of reporting zeros
    result = runner.invoke(main, ["run", "--config", str(cfg), "--offline"])
    assert result.exit_code != 0
    assert "no parsed" in result.output
