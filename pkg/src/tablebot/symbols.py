"""Grounding symbol hierarchy: objects, attribute values, regions, sensors,
actions, and scopes, plus canonical proposition naming.

Symbols are frozen and ordered by their descriptor string, which doubles as
the corpus annotation format.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .ltl import Formula, PropKind, Proposition


class Task(enum.Enum):
    SORTING = "sorting"
    STACKING = "stacking"


class ObjectType(enum.Enum):
    CUBE = "cube"
    BIN = "bin"
    GRIPPER = "gripper"


COLORS = ("blue", "red", "green", "none")
SIDES = ("left", "right")
SPATIAL_VALUES = ("center", "left", "right", "above")


class SensorType(enum.Enum):
    OBSERVED_CUBE = "observed_cube"
    BIN_CLEAR = "bin_clear"
    UNDER_STACK = "understack"


class ActionType(enum.Enum):
    PICKUP = "pickup"
    PLACE = "place"


@dataclass(frozen=True)
class ObjectSym:
    id: str
    type: ObjectType = None  # type: ignore[assignment]
    color: str = "none"
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")

    @property
    def descriptor(self) -> str:
        return f"obj:{self.id}"


@dataclass(frozen=True)
class ObjectTypeSym:
    value: ObjectType

    @property
    def descriptor(self) -> str:
        return f"type:{self.value.value}"


@dataclass(frozen=True)
class ObjectColorSym:
    value: str

    def __post_init__(self) -> None:
        if self.value not in COLORS:
            raise ValueError(f"unknown color {self.value!r}")

    @property
    def descriptor(self) -> str:
        return f"color:{self.value}"


@dataclass(frozen=True)
class SpatialRelationSym:
    value: str

    def __post_init__(self) -> None:
        if self.value not in SPATIAL_VALUES:
            raise ValueError(f"unknown spatial relation {self.value!r}")

    @property
    def descriptor(self) -> str:
        return f"spatial:{self.value}"


@dataclass(frozen=True)
class RegionSym:
    preposition: str
    target: ObjectSym

    @property
    def descriptor(self) -> str:
        return f"region:{self.preposition}:{self.target.id}"


def observed_prop(color: str) -> Proposition:
    return Proposition(f"observed_cube_{color}", PropKind.SENSOR)


def bin_clear_prop(side: str) -> Proposition:
    return Proposition(f"{side}_bin_clear", PropKind.SENSOR)


def understack_prop(color: str) -> Proposition:
    return Proposition(f"understack_cube_{color}", PropKind.SENSOR)


def pickup_prop(side: str) -> Proposition:
    return Proposition(f"pickup_{side}", PropKind.ACTION)


def place_bin_prop(side: str) -> Proposition:
    return Proposition(f"place_{side}_bin", PropKind.ACTION)


def place_on_prop(color: str) -> Proposition:
    return Proposition(f"place_on_{color}", PropKind.ACTION)


def gripper_prop(side: str) -> Proposition:
    return Proposition(f"{side}_gripper", PropKind.MEMORY)


@dataclass(frozen=True)
class SensorSym:
    sensor_type: SensorType
    prop: Proposition
    objects: tuple[ObjectSym, ...]

    @property
    def descriptor(self) -> str:
        return f"sensor:{self.prop.name}"


@dataclass(frozen=True)
class ActionSym:
    action_type: ActionType
    prop: Proposition
    side: str
    objects: tuple[ObjectSym, ...]  # pickup: target cube; place: destination

    @property
    def descriptor(self) -> str:
        ids = ",".join(o.id for o in self.objects)
        return f"action:{self.prop.name}:{ids}"

    @property
    def target_color(self) -> str:
        return self.objects[0].color if self.objects else "none"


@dataclass(frozen=True)
class ScopeSym:
    sensors: tuple[SensorSym, ...]
    action: ActionSym
    safety: Formula
    liveness: Formula

    @property
    def descriptor(self) -> str:
        sensor_names = ",".join(s.prop.name for s in self.sensors)
        return f"scope:{self.action.prop.name}:{sensor_names}"


GroundSymbol = (
    ObjectSym
    | ObjectTypeSym
    | ObjectColorSym
    | SpatialRelationSym
    | RegionSym
    | SensorSym
    | ActionSym
    | ScopeSym
)


def symbol_sort_key(sym) -> str:
    return sym.descriptor
