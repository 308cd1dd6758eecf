"""Screening prompt templates, rendering, and parsing of the model's verdict."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class RenderError(ValueError):
    def __init__(self, placeholder: str, message: str | None = None):
        super().__init__(message or f"unfilled placeholder {{{placeholder}}}")
        self.placeholder = placeholder


class Choice(str, enum.Enum):
    YES = "YES"
    NO = "NO"
    DOUBT = "DOUBT"
    NOT_AVAILABLE = "NOT AVAILABLE"
    PARSE_FAILED = "PARSE FAILED"


class Disposition(str, enum.Enum):
    KEEP = "Keep"
    DISCARD = "Discard"
    UNAVAILABLE = "Unavailable"


_NUMBER_WORDS = (
    "zero one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen twenty"
).split()


def number_word(n: int) -> str:
    return _NUMBER_WORDS[n] if 0 <= n < len(_NUMBER_WORDS) else str(n)


# Rule strings are stored without terminal punctuation; each style adds its own.
SELECT_REJECT_BODY = """\
You are a {Role} specialized in selecting documents talking about {Subject}. \
You always select a document when all of these {InclusionCountWord} rules are satisfied:
{InclusionRules}

You always reject a document when any of these {ExclusionCountWord} rules are satisfied:
{ExclusionRules}

If your suggested confidence level is > {YesThreshold}, the <response> is *YES*.
If your suggesting confidence is < {NoThreshold}, the <response> is *NO*.
If your suggested confidence level is > {NoThreshold} and < {YesThreshold}, the <response> is *DOUBT*.
You always start your answer by informing the <response>, your confidence level in the range of 0-100, \
and a brief explanation about your decision."""

NUMBERED_BODY = """\
**Context**: You are an {Role}. You must choose software testing documents to support {Subject}. \
You consistently and professionally follow instructions and criteria to support your choice and provide an answer.

**Instructions**:
1. Clear all of your previous document evaluations.
2. Evaluate the documents base on the following {RuleCount} rules:
{Rules}
3. Provide your answer Observing a **Response Criteria** and using an **Output Template**.

**Response Criteria**:
Set the `<choice>` to "*YES*" if the software testing document satisfies all {RuleCount} rules.
Set the `<choice>` to "*NO*" if the software testing document does not satisfy any of the {RuleCount} rules.
Set the `<choice>` to "*DOUBT*" if you cannot decide based on the rules
Justify your decision by filling in an `<explanation>` with two short phrases extracted from the software testing document.
Set the `<confidence level>` with a 0 - 100% value to indicate your decision confidence.

**Output Template**:
{OutputTemplate}

**Examples of Output**:
{ExampleOutputs}"""

EXPERT_BODY = """\
[Expert] You are a {Role} specialized in selecting documents talking about {Subject}.

[Instruction] You always select a document when all of these {InclusionCount} rules are satisfied:
{InclusionRulesInline}.

[Instruction] You always reject a document when any of these {ExclusionCount} rules are satisfied:
{ExclusionRulesInline}.

[One Shot Answer] If your suggested confidence level is > {YesThreshold}, <response> is set to '*YES*'. \
If your suggested confidence is < {NoThreshold}, <response> is set to '*NO*'. \
If your suggested confidence level is >= {NoThreshold} and <= {YesThreshold}, <response> is set to '*DOUBT*'.

[Instruction] You always start your answer by informing the <response>, your confidence level in the range of 0-100%, \
and a brief explanation about your decision.

[Output Template] {OutputTemplate}"""

STYLE_BODIES = {
    "select_reject": SELECT_REJECT_BODY,
    "numbered": NUMBERED_BODY,
    "expert": EXPERT_BODY,
}

DEFAULT_OUTPUT_TEMPLATE = '`<choice>`; "Confidence = "; `<confidence level>`; `<explanation>`'

_PLACEHOLDER = re.compile(r"\{([A-Za-z][A-Za-z0-9 ]*)\}")


@dataclass
class PromptTemplate:
    role_line: str
    subject: str
    inclusion_rules: list[str]
    exclusion_rules: list[str] = field(default_factory=list)
    yes_threshold: int = 92
    no_threshold: int = 85
    output_template: str = DEFAULT_OUTPUT_TEMPLATE
    example_outputs: list[str] = field(default_factory=list)
    version_id: str = "custom"
    style: str = "expert"
    body: str | None = None

    def __post_init__(self) -> None:
        if not (0 <= self.no_threshold < self.yes_threshold <= 100):
            raise ValueError(
                f"thresholds must satisfy 0 <= no ({self.no_threshold}) < yes ({self.yes_threshold}) <= 100"
            )
        if self.body is None and self.style not in STYLE_BODIES:
            raise ValueError(f"unknown prompt style {self.style!r}; pick one of {sorted(STYLE_BODIES)}")

    @classmethod
    def load(cls, path: str | Path) -> "PromptTemplate":
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: prompt template must be a mapping")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"{path}: unknown prompt template keys {sorted(unknown)}")
        return cls(**data)

    def values(self) -> dict[str, str]:
        inc, exc = self.inclusion_rules, self.exclusion_rules
        every = list(inc) + list(exc)
        return {
            "Role": self.role_line,
            "Subject": self.subject,
            "InclusionCount": str(len(inc)) if inc else "",
            "ExclusionCount": str(len(exc)) if exc else "",
            "InclusionCountWord": number_word(len(inc)) if inc else "",
            "ExclusionCountWord": number_word(len(exc)) if exc else "",
            "InclusionRules": _dash_list(inc),
            "ExclusionRules": _dash_list(exc),
            "InclusionRulesInline": "; ".join(f"{i} - {r}" for i, r in enumerate(inc, 1)),
            "ExclusionRulesInline": "; ".join(f"{i} - {r}" for i, r in enumerate(exc, 1)),
            "RuleCount": str(len(every)) if every else "",
            "Rules": "\n".join(f"  - Rule {i}: {r}." for i, r in enumerate(every, 1)),
            "YesThreshold": str(self.yes_threshold),
            "NoThreshold": str(self.no_threshold),
            "OutputTemplate": self.output_template,
            "ExampleOutputs": "\n".join(f"- {e}" for e in self.example_outputs),
        }


def _dash_list(rules: list[str]) -> str:
    if not rules:
        return ""
    lines = [f"{i} - {r};" for i, r in enumerate(rules, 1)]
    lines[-1] = lines[-1][:-1] + "."
    return "\n".join(lines)


def render_prompt(tmpl: PromptTemplate) -> str:
    """Substitute the template fields into its body.

    Raises RenderError naming the first placeholder that has no value or an
    empty one.
    """
    body = tmpl.body if tmpl.body is not None else STYLE_BODIES[tmpl.style]
    values = tmpl.values()

    def fill(match: re.Match) -> str:
        name = match.group(1)
        value = values.get(name)
        if value is None:
            raise RenderError(name, f"unknown placeholder {{{name}}}")
        if not value.strip():
            raise RenderError(name)
        return value

    return _PLACEHOLDER.sub(fill, body)


@dataclass
class ScreeningQuestion:
    text: str
    version_id: str = "UQ"

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("screening question must not be empty")

    @classmethod
    def load(cls, path: str | Path) -> "ScreeningQuestion":
        path = Path(path)
        raw = path.read_text(encoding="utf-8")
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(raw) or {}
            return cls(text=str(data.get("text", "")).strip(), version_id=str(data.get("version_id", path.stem)))
        return cls(text=raw.strip(), version_id=path.stem)


@dataclass
class Verdict:
    source_id: str
    choice: Choice
    confidence: int | None = None
    explanation: str = ""
    raw_response: str = ""
    model_id: str = ""
    temperature: float | None = None
    prompt_version: str = ""

    def __post_init__(self) -> None:
        if self.choice in (Choice.YES, Choice.NO, Choice.DOUBT) and self.confidence is None:
            raise ValueError(f"{self.choice.value} verdict needs a confidence")


_STARRED_CHOICE = re.compile(r"\*\s*(YES|NO|DOUBT)\s*\*", re.IGNORECASE)
_BARE_CHOICE = re.compile(r"\b(YES|NO|DOUBT)\b", re.IGNORECASE)
_CONFIDENCE = re.compile(
    r"Confidence\s*(?:level)?\s*[=:]\s*\"?\s*(\d{1,3})\s*%?|\b(\d{1,3})\s*%", re.IGNORECASE
)


def parse_response(raw: str, source_id: str = "", **meta) -> Verdict:
    """Read choice, confidence and explanation out of a model reply.

    The first ``*YES*``/``*NO*``/``*DOUBT*`` token wins (asterisks optional).
    Confidence comes from the first ``Confidence = N`` or ``N%``. The
    explanation is whatever follows both, minus leading separators. Anything
    missing yields a PARSE FAILED verdict rather than an exception.
    """
    text = raw or ""
    choice_match = _STARRED_CHOICE.search(text) or _BARE_CHOICE.search(text)
    conf_match = _CONFIDENCE.search(text)
    confidence = None
    if conf_match:
        confidence = int(conf_match.group(1) or conf_match.group(2))
        if confidence > 100:
            confidence = None

    if choice_match is None or confidence is None:
        return Verdict(source_id, Choice.PARSE_FAILED, confidence, "", raw, **meta)

    end = max(choice_match.end(), conf_match.end())
    explanation = text[end:].lstrip(" \t\r\n;:,-\"'%)]").strip()
    choice = Choice(choice_match.group(1).upper())
    return Verdict(source_id, choice, confidence, explanation, raw, **meta)


def decide_disposition(verdict: Verdict) -> Disposition:
    """YES and DOUBT are kept; unparseable replies are kept as doubts."""
    if verdict.choice in (Choice.YES, Choice.DOUBT, Choice.PARSE_FAILED):
        return Disposition.KEEP
    if verdict.choice is Choice.NO:
        return Disposition.DISCARD
    return Disposition.UNAVAILABLE


# Presets for prompt versions V0.0 and V4.1.

V0_0 = PromptTemplate(
    role_line="software tester",
    subject="testing context-aware software systems of aircraft",
    inclusion_rules=[
        "An aircraft manned or piloted",
        "An aircraft operating within civil aviation",
        "The document indicates the existence of digital components or software in the aircraft",
        "The document describes the design, execution, or reporting of the testing of aircraft systems",
        "The document describes software testing techniques, software testing technologies, "
        "software testing processes, or software testing standards",
    ],
    exclusion_rules=[
        "The document is an Operating or installation manual",
        "The document describes Military applications",
        "The document describes Spacecraft",
        "The document describes only static analysis techniques",
    ],
    version_id="V0.0",
    style="select_reject",
)

V4_1 = PromptTemplate(
    role_line="expert in context-aware software testing",
    subject="testing context-aware avionics software systems for manned civil aircraft in the industry",
    inclusion_rules=[
        "The document concerns a manned or piloted aircraft",
        "The document concerns an aircraft operating within civil aviation",
        "The document indicates the aircraft's software",
        "The document describes the design, execution, or reporting of the testing of avionics software systems",
        "The document describes techniques, technologies, processes, or standards for avionics software testing",
        "The document describes the planning, design, execution, or reporting of testing avionics software systems",
        "The document describes an application in the industry",
    ],
    exclusion_rules=[
        "The document is not an operating or installation manual",
        "The document does not describe instruments, equipment, or toolkits to support software testing in general",
        "The document does not describe military applications",
        "The document does not describe space aircraft or airspace applications",
        "The document does not describe formal verification and validation methods",
        "The document does not describe static analysis or verification techniques",
    ],
    example_outputs=[
        "*YES*; Confidence = 94%; The document explains how to test context-awareness software testing.",
        "*DOUBT*; Confidence = 91%; The document regards model-based testing to support the generation "
        "of context-awareness test cases.",
        "*NO*; Confidence = 82%; The document explains how to use formal methods to test software systems.",
    ],
    version_id="V4.1",
    style="numbered",
)

PRESETS = {"V0.0": V0_0, "V4.1": V4_1}
