"""The six-part assume-guarantee specification container, shape validation, and dump files.

Slot templates:
  * env_init / sys_init — propositional only; env_init over sensor atoms.
  * env_safety — G(body); body over current atoms plus X on sensor atoms.
  * sys_safety — G(body); body over current atoms plus X on any atom.
  * env_liveness / sys_liveness — G(F(body)); body propositional, no X.

Dump files are JSON with a proposition table and the six sections, formulas
in the concrete syntax; dumps round-trip byte-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable

from .ltl import (
    Always,
    And,
    Eventually,
    Formula,
    Implies,
    Lit,
    Next,
    Not,
    Or,
    Prop,
    PropKind,
    Proposition,
    atoms,
    format_formula,
    parse_formula,
)

SLOTS = ("env_init", "env_safety", "env_liveness", "sys_init", "sys_safety", "sys_liveness")


@dataclass(frozen=True)
class GR1Spec:
    propositions: tuple[Proposition, ...]
    env_init: Formula | None = None
    sys_init: Formula | None = None
    env_safety: tuple[Formula, ...] = ()
    env_liveness: tuple[Formula, ...] = ()
    sys_safety: tuple[Formula, ...] = ()
    sys_liveness: tuple[Formula, ...] = ()

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.propositions, key=lambda p: p.name))
        names = [p.name for p in ordered]
        if len(set(names)) != len(names):
            raise ValueError("duplicate proposition names")
        object.__setattr__(self, "propositions", ordered)

    @property
    def sensors(self) -> tuple[Proposition, ...]:
        return tuple(p for p in self.propositions if p.kind is PropKind.SENSOR)

    @property
    def system_props(self) -> tuple[Proposition, ...]:
        return tuple(p for p in self.propositions if p.kind is not PropKind.SENSOR)

    def with_env_liveness(self, extra: Formula) -> "GR1Spec":
        return replace(self, env_liveness=self.env_liveness + (extra,))


@dataclass(frozen=True)
class ShapeViolation:
    slot: str
    index: int
    kind: str  # WrongTemporalShape | IllegalNextTarget | NonPropositionalBody | UndeclaredProposition
    detail: str


def safety_body(f: Formula) -> Formula:
    if not isinstance(f, Always):
        raise ValueError(f"not a safety formula: {format_formula(f)}")
    return f.operand


def liveness_body(f: Formula) -> Formula:
    if not isinstance(f, Always) or not isinstance(f.operand, Eventually):
        raise ValueError(f"not a liveness formula: {format_formula(f)}")
    return f.operand.operand


def _is_propositional(f: Formula) -> bool:
    if isinstance(f, (Lit, Prop)):
        return True
    if isinstance(f, Not):
        return _is_propositional(f.operand)
    if isinstance(f, (And, Or)):
        return all(_is_propositional(c) for c in f.children)
    if isinstance(f, Implies):
        return _is_propositional(f.lhs) and _is_propositional(f.rhs)
    return False


def _next_targets(f: Formula, out: list[Formula]) -> bool:
    """Collect X-wrapped subtrees; returns False if the body has deeper temporal nodes."""
    if isinstance(f, (Lit, Prop)):
        return True
    if isinstance(f, Next):
        out.append(f.operand)
        return isinstance(f.operand, Prop)
    if isinstance(f, Not):
        return _next_targets(f.operand, out)
    if isinstance(f, (And, Or)):
        return all(_next_targets(c, out) for c in f.children)
    if isinstance(f, Implies):
        lhs = _next_targets(f.lhs, out)
        return _next_targets(f.rhs, out) and lhs
    return False


def validate_spec(spec: GR1Spec) -> list[ShapeViolation]:
    """Check every formula against its slot template; violations are data, not errors."""
    violations: list[ShapeViolation] = []
    declared = set(spec.propositions)

    def check_declared(slot: str, index: int, f: Formula) -> None:
        for prop in sorted(atoms(f) - declared, key=lambda p: p.name):
            violations.append(
                ShapeViolation(slot, index, "UndeclaredProposition", prop.name)
            )

    for slot in ("env_init", "sys_init"):
        f = getattr(spec, slot)
        if f is None:
            continue
        check_declared(slot, 0, f)
        if not _is_propositional(f):
            violations.append(ShapeViolation(slot, 0, "WrongTemporalShape", format_formula(f)))
        elif slot == "env_init":
            for prop in sorted(atoms(f), key=lambda p: p.name):
                if prop.kind is not PropKind.SENSOR:
                    violations.append(
                        ShapeViolation(slot, 0, "IllegalNextTarget", f"non-sensor atom {prop.name}")
                    )

    for slot in ("env_safety", "sys_safety"):
        env_side = slot == "env_safety"
        for index, f in enumerate(getattr(spec, slot)):
            check_declared(slot, index, f)
            if not isinstance(f, Always):
                violations.append(ShapeViolation(slot, index, "WrongTemporalShape", format_formula(f)))
                continue
            body = f.operand
            targets: list[Formula] = []
            if not _next_targets(body, targets):
                violations.append(ShapeViolation(slot, index, "WrongTemporalShape", format_formula(body)))
                continue
            for target in targets:
                if not isinstance(target, Prop):
                    violations.append(
                        ShapeViolation(slot, index, "IllegalNextTarget", format_formula(target))
                    )
                elif env_side and target.prop.kind is not PropKind.SENSOR:
                    violations.append(
                        ShapeViolation(slot, index, "IllegalNextTarget", target.prop.name)
                    )

    for slot in ("env_liveness", "sys_liveness"):
        for index, f in enumerate(getattr(spec, slot)):
            check_declared(slot, index, f)
            if not isinstance(f, Always) or not isinstance(f.operand, Eventually):
                violations.append(ShapeViolation(slot, index, "WrongTemporalShape", format_formula(f)))
                continue
            if not _is_propositional(f.operand.operand):
                violations.append(
                    ShapeViolation(slot, index, "NonPropositionalBody", format_formula(f.operand.operand))
                )

    return violations


DUMP_VERSION = 1


def spec_to_dict(spec: GR1Spec) -> dict:
    return {
        "version": DUMP_VERSION,
        "propositions": [{"name": p.name, "kind": p.kind.value} for p in spec.propositions],
        "env_init": None if spec.env_init is None else format_formula(spec.env_init),
        "sys_init": None if spec.sys_init is None else format_formula(spec.sys_init),
        "env_safety": [format_formula(f) for f in spec.env_safety],
        "env_liveness": [format_formula(f) for f in spec.env_liveness],
        "sys_safety": [format_formula(f) for f in spec.sys_safety],
        "sys_liveness": [format_formula(f) for f in spec.sys_liveness],
    }


def spec_from_dict(data: dict) -> GR1Spec:
    if data.get("version") != DUMP_VERSION:
        raise ValueError(f"unsupported spec dump version: {data.get('version')}")
    props = tuple(
        Proposition(entry["name"], PropKind(entry["kind"])) for entry in data["propositions"]
    )

    def one(text: str | None) -> Formula | None:
        return None if text is None else parse_formula(text, props)

    def many(texts: Iterable[str]) -> tuple[Formula, ...]:
        return tuple(parse_formula(t, props) for t in texts)

    return GR1Spec(
        propositions=props,
        env_init=one(data["env_init"]),
        sys_init=one(data["sys_init"]),
        env_safety=many(data["env_safety"]),
        env_liveness=many(data["env_liveness"]),
        sys_safety=many(data["sys_safety"]),
        sys_liveness=many(data["sys_liveness"]),
    )


def dumps_spec(spec: GR1Spec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def loads_spec(text: str) -> GR1Spec:
    return spec_from_dict(json.loads(text))
