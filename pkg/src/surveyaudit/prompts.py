"""Prompt rendering: four variants, ablation masks, few-shot selection.

Rendering is a pure function of its arguments, so identical inputs always
produce byte-identical prompt text.  Templates live in external text files
with named placeholders and can be swapped without touching code.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from .data import AttributeSchema, Dataset, SocioProfile, SurveyCase
from .errors import FewshotMismatch, InsufficientExamples, MissingContext

DEFAULT_FEWSHOT_K = 5
DEFAULT_POLITICAL = frozenset({"ideology", "party", "political_interest"})


class PromptVariant(enum.Enum):
    ORIGINAL = "original"
    SPANISH = "spanish"
    ZERO_SHOT = "zeroshot"
    WITH_CONTEXT = "with_context"

    @property
    def uses_fewshot(self) -> bool:
        return self is not PromptVariant.ZERO_SHOT


# answer prefix used in the few-shot block, per template language
_ANSWER_PREFIX = {
    PromptVariant.ORIGINAL: "Answer",
    PromptVariant.SPANISH: "Respuesta",
    PromptVariant.ZERO_SHOT: "Answer",
    PromptVariant.WITH_CONTEXT: "Answer",
}


class MaskMode(enum.Enum):
    ALL = "all"
    WITHOUT_ATTRIBUTE = "without_attribute"
    ONLY_POLITICAL = "only_political"
    WITHOUT_POLITICAL = "without_political"


@dataclass(frozen=True)
class AblationMask:
    """Selects which profile attributes survive into the prompt."""

    mode: MaskMode
    attribute: Optional[str] = None
    political_set: frozenset[str] = DEFAULT_POLITICAL

    @classmethod
    def all(cls) -> "AblationMask":
        return cls(MaskMode.ALL)

    @classmethod
    def without(cls, attribute: str) -> "AblationMask":
        return cls(MaskMode.WITHOUT_ATTRIBUTE, attribute=attribute)

    @classmethod
    def only_political(cls, political_set=DEFAULT_POLITICAL) -> "AblationMask":
        return cls(MaskMode.ONLY_POLITICAL, political_set=frozenset(political_set))

    @classmethod
    def without_political(cls, political_set=DEFAULT_POLITICAL) -> "AblationMask":
        return cls(MaskMode.WITHOUT_POLITICAL, political_set=frozenset(political_set))

    def included(self, schema: AttributeSchema) -> tuple[str, ...]:
        """Attribute names that remain in the prompt, in schema order."""
        return self.filter_names(schema.names)

    def filter_names(self, names: Sequence[str]) -> tuple[str, ...]:
        names = tuple(names)
        if self.mode is MaskMode.ALL:
            return names
        if self.mode is MaskMode.WITHOUT_ATTRIBUTE:
            if self.attribute not in names:
                raise ValueError(f"mask names unknown attribute {self.attribute!r}")
            return tuple(n for n in names if n != self.attribute)
        if self.mode is MaskMode.ONLY_POLITICAL:
            return tuple(n for n in names if n in self.political_set)
        return tuple(n for n in names if n not in self.political_set)

    def label(self) -> str:
        if self.mode is MaskMode.ALL:
            return "All"
        if self.mode is MaskMode.WITHOUT_POLITICAL:
            return "Without political variables"
        if self.mode is MaskMode.ONLY_POLITICAL:
            return "Only political variables"
        return f"Without {self.attribute}"


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    included_attributes: frozenset[str]
    fewshot_ids: tuple[str, ...]
    variant: PromptVariant
    case_id: str
    target_id: str


def ablation_plan(
    schema: AttributeSchema, political_set=DEFAULT_POLITICAL
) -> list[AblationMask]:
    """Full sweep: everything, the two political complements, then
    leave-one-out for each attribute."""
    political = frozenset(political_set)
    unknown = political - set(schema.names)
    if unknown:
        raise ValueError(f"political set names unknown attributes: {sorted(unknown)}")
    plan = [
        AblationMask.all(),
        AblationMask.without_political(political),
        AblationMask.only_political(political),
    ]
    plan.extend(AblationMask.without(name) for name in schema.names)
    return plan


def sample_fewshot(
    dataset: Dataset,
    case: SurveyCase,
    k: int,
    exclude: str,
    seed: int,
) -> list[str]:
    """Pick k distinct example respondents uniformly, never the target.

    Only respondents with a known answer for the case are eligible.
    Deterministic for a fixed (dataset, case, k, exclude, seed).
    """
    eligible = [
        p.respondent_id
        for p in dataset.profiles
        if p.respondent_id in case.answers and p.respondent_id != exclude
    ]
    if k > len(eligible):
        raise InsufficientExamples(
            f"need {k} examples for case {case.question_id!r} but only "
            f"{len(eligible)} eligible respondents"
        )
    return random.Random(seed).sample(eligible, k)


def _attribute_block(profile: SocioProfile, included: Sequence[str]) -> str:
    return "\n".join(f"- {name}: {profile.values[name]}" for name in included)


def _options_block(case: SurveyCase) -> str:
    return "\n".join(f"{i + 1}. {label}" for i, label in enumerate(case.options))


def _load_template(variant: PromptVariant) -> str:
    ref = resources.files("surveyaudit.templates") / f"{variant.value}.txt"
    return ref.read_text(encoding="utf-8")


def render(
    profile: SocioProfile,
    case: SurveyCase,
    variant: PromptVariant,
    mask: AblationMask,
    fewshot: Sequence[tuple[SocioProfile, int]] = (),
) -> RenderedPrompt:
    """Render one prompt for (profile, case) under a variant and mask.

    fewshot pairs are (example profile, true answer index); they are
    formatted like the target block with the answer appended.  The target's
    own answer never enters the text.
    """
    if variant is PromptVariant.ZERO_SHOT:
        if fewshot:
            raise FewshotMismatch("zero-shot prompts take no examples")
    elif not fewshot:
        raise FewshotMismatch(f"{variant.value} prompts require few-shot examples")
    if variant is PromptVariant.WITH_CONTEXT and not case.context_blurb:
        raise MissingContext(f"case {case.question_id!r} has no context blurb")
    for ex_profile, _ in fewshot:
        if ex_profile.respondent_id == profile.respondent_id:
            raise FewshotMismatch("target respondent appears among the examples")

    # profile insertion order is schema order, established at load time
    included = mask.filter_names(tuple(profile.values.keys()))
    answer_prefix = _ANSWER_PREFIX[variant]

    example_chunks = []
    for ex_profile, answer_idx in fewshot:
        chunk = _attribute_block(ex_profile, included)
        chunk += f"\n{answer_prefix}: {case.options[answer_idx]}"
        example_chunks.append(chunk)

    text = _load_template(variant).format(
        attribute_block=_attribute_block(profile, included),
        question=case.question_text,
        options=_options_block(case),
        examples="\n\n".join(example_chunks),
        context=case.context_blurb or "",
    )
    return RenderedPrompt(
        text=text,
        included_attributes=frozenset(included),
        fewshot_ids=tuple(p.respondent_id for p, _ in fewshot),
        variant=variant,
        case_id=case.question_id,
        target_id=profile.respondent_id,
    )
