"""Render mined assumption candidates as yes/no questions, reusing the
referring expressions the user uttered for the grounded objects.

Templates are keyed by (sensor type, literal polarity) and shipped as data;
an unsupported pair raises rather than producing garbled English.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

from .grounding import GroundingSet
from .ltl import Proposition
from .mining import AssumptionCandidate
from .symbols import SensorSym


class UnknownPromptProposition(Exception):
    pass


class NoPromptTemplate(Exception):
    def __init__(self, sensor_type: str, polarity: bool):
        kind = "positive" if polarity else "negative"
        super().__init__(f"no prompt template for {sensor_type}:{kind}")
        self.sensor_type = sensor_type
        self.polarity = polarity


@dataclass(frozen=True)
class PromptTemplates:
    joiner: str
    templates: Mapping[str, str]  # "sensor_type:polarity" -> fragment

    def fragment(self, sensor_type: str, polarity: bool) -> str:
        key = f"{sensor_type}:{'positive' if polarity else 'negative'}"
        if key not in self.templates:
            raise NoPromptTemplate(sensor_type, polarity)
        return self.templates[key]


def load_templates(path=None) -> PromptTemplates:
    if path is None:
        source = resources.files("tablebot.data").joinpath("prompt_templates.json")
        data = json.loads(source.read_text(encoding="utf-8"))
    else:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    if data.get("version") != 1:
        raise ValueError(f"unsupported template version {data.get('version')}")
    return PromptTemplates(joiner=data["joiner"], templates=dict(data["templates"]))


@dataclass
class Prompt:
    text: str
    candidate: AssumptionCandidate
    references: list[tuple[str, str, tuple[int, int, int] | None]]
    # (sensor proposition name, surface phrase, source span or None)


def _sensor_for(prop_name: str, gs: GroundingSet) -> SensorSym | None:
    for scope in gs.scopes:
        for sensor in scope.sensors:
            if sensor.prop.name == prop_name:
                return sensor
    return None


def _sensor_kind(prop_name: str) -> str:
    if prop_name.startswith("observed_cube_"):
        return "observed_cube"
    if prop_name.endswith("_bin_clear"):
        return "bin_clear"
    if prop_name.startswith("understack_cube_"):
        return "understack"
    raise UnknownPromptProposition(prop_name)


def _canonical_phrase(prop_name: str) -> str:
    kind = _sensor_kind(prop_name)
    if kind == "observed_cube":
        return f"the {prop_name.removeprefix('observed_cube_')} cube"
    if kind == "understack":
        return f"the {prop_name.removeprefix('understack_cube_')} cube"
    side = prop_name.removesuffix("_bin_clear")
    return f"the {side} bin"


def referring_phrase(
    prop: Proposition | str, gs: GroundingSet
) -> tuple[str, tuple[int, int, int] | None]:
    """The user's own words for the sensor's grounded object (earliest span),
    falling back to a canonical description for scaffolding-introduced sensors."""
    name = prop if isinstance(prop, str) else prop.name
    _sensor_kind(name)  # validates the proposition family
    sensor = _sensor_for(name, gs)
    if sensor is not None and sensor.objects:
        spans = gs.alignment.get(sensor.objects[0].descriptor)
        if spans:
            sentence, start, end = spans[0]
            words = gs.sentences[sentence].tokens[start:end]
            return " ".join(words), (sentence, start, end)
    return _canonical_phrase(name), None


def render_prompt(
    candidate: AssumptionCandidate,
    gs: GroundingSet,
    templates: PromptTemplates | None = None,
) -> Prompt:
    """Join per-literal fragments with the configured connective, capitalize,
    and append the question mark."""
    templates = templates or load_templates()
    fragments = []
    references = []
    for name, polarity in candidate.literals:
        kind = _sensor_kind(name)
        template = templates.fragment(kind, polarity)
        phrase, span = referring_phrase(name, gs)
        fragments.append(template.format(ref=phrase))
        references.append((name, phrase, span))
    text = templates.joiner.join(fragments)
    text = text[0].upper() + text[1:] + "?"
    return Prompt(text=text, candidate=candidate, references=references)
