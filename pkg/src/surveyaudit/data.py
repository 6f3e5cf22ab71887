"""Survey microdata loading, validation, and categorical recoding.

The canonical in-memory shape is a :class:`Dataset`: an ordered list of
respondent profiles over a fixed categorical schema, plus one
:class:`SurveyCase` per question with every respondent's true answer stored
as an option index.  All downstream stages (prompt rendering, the forest
baseline, the metric battery, the regressions) consume this shape and never
touch raw CSV again.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .errors import (
    DuplicateRespondent,
    EmptyDataset,
    MissingColumn,
    UnknownAttribute,
    UnknownCategory,
    UnmappedValue,
)


@dataclass(frozen=True)
class Attribute:
    """One socio-demographic attribute: name, category labels, reference."""

    name: str
    categories: tuple[str, ...]
    reference: str

    def __post_init__(self):
        if len(self.categories) < 2:
            raise ValueError(f"attribute {self.name!r} needs >= 2 categories")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError(f"attribute {self.name!r} has duplicate categories")
        if self.reference not in self.categories:
            raise ValueError(
                f"reference {self.reference!r} is not a category of {self.name!r}"
            )


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]
    id_column: str
    answer_columns: tuple[str, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")
        if len(set(self.answer_columns)) != len(self.answer_columns):
            raise ValueError("question ids must be unique")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise UnknownAttribute(f"unknown attribute {name!r}")


@dataclass(frozen=True)
class SocioProfile:
    respondent_id: str
    values: Mapping[str, str]


@dataclass(frozen=True)
class SurveyCase:
    question_id: str
    question_text: str
    options: tuple[str, ...]
    country: str = ""
    context_blurb: Optional[str] = None
    answers: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.options) < 2 or len(set(self.options)) != len(self.options):
            raise ValueError(
                f"case {self.question_id!r} needs >= 2 distinct options"
            )
        for rid, idx in self.answers.items():
            if not 0 <= idx < len(self.options):
                raise ValueError(
                    f"case {self.question_id!r}: answer index {idx} for {rid!r} "
                    f"out of range"
                )


@dataclass(frozen=True)
class Dataset:
    schema: AttributeSchema
    profiles: tuple[SocioProfile, ...]
    cases: tuple[SurveyCase, ...]

    def __post_init__(self):
        ids = [p.respondent_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise DuplicateRespondent("duplicate respondent ids in dataset")
        known = set(ids)
        names = set(self.schema.names)
        for p in self.profiles:
            if set(p.values) != names:
                raise ValueError(
                    f"profile {p.respondent_id!r} does not cover the schema"
                )
            for attr in self.schema.attributes:
                if p.values[attr.name] not in attr.categories:
                    raise ValueError(
                        f"profile {p.respondent_id!r}: {p.values[attr.name]!r} "
                        f"not a category of {attr.name!r}"
                    )
        for case in self.cases:
            for rid in case.answers:
                if rid not in known:
                    raise ValueError(
                        f"case {case.question_id!r} answers unknown respondent {rid!r}"
                    )

    def profile(self, respondent_id: str) -> SocioProfile:
        return self._by_id[respondent_id]

    @property
    def _by_id(self) -> dict[str, SocioProfile]:
        cached = self.__dict__.get("_by_id_cache")
        if cached is None:
            cached = {p.respondent_id: p for p in self.profiles}
            self.__dict__["_by_id_cache"] = cached
        return cached

    def case(self, question_id: str) -> SurveyCase:
        for c in self.cases:
            if c.question_id == question_id:
                return c
        raise KeyError(question_id)


def load_schema(schema_path: str | Path) -> tuple[AttributeSchema, list[dict]]:
    """Read the schema/codebook file.

    Returns the schema plus the raw question declarations (id, text,
    options, country, context) in file order.
    """
    raw = yaml.safe_load(Path(schema_path).read_text(encoding="utf-8"))
    attrs = tuple(
        Attribute(
            name=a["name"],
            categories=tuple(str(c) for c in a["categories"]),
            reference=str(a["reference"]),
        )
        for a in raw["attributes"]
    )
    questions = raw.get("questions", [])
    schema = AttributeSchema(
        attributes=attrs,
        id_column=raw["id_column"],
        answer_columns=tuple(q["id"] for q in questions),
    )
    return schema, questions


def load_dataset(csv_path: str | Path, schema_path: str | Path) -> Dataset:
    """Load a respondent CSV against its schema/codebook file.

    Category matching is exact after surrounding-whitespace trim; rows with
    unknown or empty values are rejected, never imputed.
    """
    schema, questions = load_schema(schema_path)
    csv_path = Path(csv_path)

    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.id_column, *schema.names, *schema.answer_columns]
        for col in needed:
            if col not in header:
                raise MissingColumn(f"CSV is missing column {col!r}")
        rows = list(reader)

    if not rows:
        raise EmptyDataset(f"{csv_path} contains no data rows")

    profiles: list[SocioProfile] = []
    seen: set[str] = set()
    answers: dict[str, dict[str, int]] = {q["id"]: {} for q in questions}
    option_index = {
        q["id"]: {str(o): i for i, o in enumerate(q["options"])} for q in questions
    }

    for rownum, row in enumerate(rows, start=2):  # 1-based, header is row 1
        rid = (row[schema.id_column] or "").strip()
        if not rid:
            raise UnknownCategory(rownum, schema.id_column, row[schema.id_column])
        if rid in seen:
            raise DuplicateRespondent(f"row {rownum}: duplicate respondent {rid!r}")
        seen.add(rid)

        values: dict[str, str] = {}
        for attr in schema.attributes:
            val = (row[attr.name] or "").strip()
            if val not in attr.categories:
                raise UnknownCategory(rownum, attr.name, row[attr.name])
            values[attr.name] = val
        profiles.append(SocioProfile(respondent_id=rid, values=values))

        for qid in schema.answer_columns:
            label = (row[qid] or "").strip()
            if label not in option_index[qid]:
                raise UnknownCategory(rownum, qid, row[qid])
            answers[qid][rid] = option_index[qid][label]

    cases = tuple(
        SurveyCase(
            question_id=q["id"],
            question_text=q.get("text", q["id"]),
            options=tuple(str(o) for o in q["options"]),
            country=q.get("country", ""),
            context_blurb=q.get("context"),
            answers=answers[q["id"]],
        )
        for q in questions
    )
    return Dataset(schema=schema, profiles=tuple(profiles), cases=cases)


def save_dataset(dataset: Dataset, csv_path: str | Path, schema_path: str | Path) -> None:
    """Write a dataset back to the CSV + schema file pair (load round-trips)."""
    schema = dataset.schema
    doc = {
        "id_column": schema.id_column,
        "attributes": [
            {
                "name": a.name,
                "categories": list(a.categories),
                "reference": a.reference,
            }
            for a in schema.attributes
        ],
        "questions": [
            {
                "id": c.question_id,
                "text": c.question_text,
                "options": list(c.options),
                "country": c.country,
                **({"context": c.context_blurb} if c.context_blurb else {}),
            }
            for c in dataset.cases
        ],
    }
    Path(schema_path).write_text(
        yaml.safe_dump(doc, sort_keys=False, allow_unicode=True), encoding="utf-8"
    )

    fieldnames = [schema.id_column, *schema.names, *schema.answer_columns]
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for p in dataset.profiles:
            row = {schema.id_column: p.respondent_id, **dict(p.values)}
            for c in dataset.cases:
                # the CSV schema has no missing-value encoding, by design
                if p.respondent_id not in c.answers:
                    raise EmptyDataset(
                        f"{p.respondent_id!r} lacks an answer for "
                        f"{c.question_id!r}; cannot serialize"
                    )
                row[c.question_id] = c.options[c.answers[p.respondent_id]]
            writer.writerow(row)


def partition_by(dataset: Dataset, attribute: str) -> list[tuple[str, frozenset[str]]]:
    """Split respondent ids by one attribute, in schema category order.

    Groups are disjoint and exhaustive; unused categories appear with an
    empty set so that group enumeration order is stable.
    """
    attr = dataset.schema.attribute(attribute)
    buckets: dict[str, set[str]] = {c: set() for c in attr.categories}
    for p in dataset.profiles:
        buckets[p.values[attribute]].add(p.respondent_id)
    return [(c, frozenset(buckets[c])) for c in attr.categories]


def recode(raw_value: str, codebook: Mapping[str, str]) -> str:
    """Map one raw survey coding onto a harmonized category label."""
    if not codebook:
        raise UnmappedValue("empty codebook")
    try:
        return codebook[raw_value]
    except KeyError:
        raise UnmappedValue(f"value {raw_value!r} not covered by codebook") from None
