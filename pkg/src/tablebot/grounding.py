"""Log-linear grounding: symbol spaces, boolean feature templates, beam
inference over parse trees, corpus training, formula templates per scope, and
specification assembly.

Inference walks each parse tree bottom-up.  At every node a candidate pool is
scored (sum of fired feature weights given the children's beams) and the top
`beam` candidates survive.  Scope symbols form wherever a completed action is
available; the grounding set is read off the root beam, deduplicated per
action role.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .gr1spec import GR1Spec
from .grammar import Grammar, ParseTree, cyk_parse, split_instruction, tokenize
from .ltl import (
    Formula,
    Next,
    Not,
    Prop,
    PropKind,
    Proposition,
    conj,
    disj,
    parse_formula,
)
from .ltl import Always, Eventually, Implies
from .symbols import (
    COLORS,
    SIDES,
    SPATIAL_VALUES,
    ActionSym,
    ActionType,
    ObjectColorSym,
    ObjectSym,
    ObjectType,
    ObjectTypeSym,
    RegionSym,
    ScopeSym,
    SensorSym,
    SensorType,
    SpatialRelationSym,
    Task,
    bin_clear_prop,
    gripper_prop,
    observed_prop,
    pickup_prop,
    place_bin_prop,
    place_on_prop,
    understack_prop,
)
from .world import World, world_objects, world_sensor_symbols

SPATIAL_DELTA = 0.05
DEFAULT_PREPOSITIONS = ("in", "into", "on", "onto")

PICKUP_VERBS = frozenset({"pick", "take", "grab", "lift"})
PLACE_VERBS = frozenset({"put", "drop", "place", "sort", "stack"})
COMPOSITE_VERBS = frozenset({"put", "sort"})  # imply the pickup of their object

TYPE_WORDS = {
    "cube": (ObjectType.CUBE,),
    "cubes": (ObjectType.CUBE,),
    "block": (ObjectType.CUBE,),
    "blocks": (ObjectType.CUBE,),
    "box": (ObjectType.CUBE, ObjectType.BIN),
    "boxes": (ObjectType.CUBE, ObjectType.BIN),
    "bin": (ObjectType.BIN,),
    "bins": (ObjectType.BIN,),
    "hand": (ObjectType.GRIPPER,),
    "gripper": (ObjectType.GRIPPER,),
}


class NoTemplate(Exception):
    pass


class NoGrounding(Exception):
    pass


class InconsistentAnnotation(Exception):
    def __init__(self, example_id: str, path: str, detail: str):
        super().__init__(f"{example_id} node {path!r}: {detail}")
        self.example_id = example_id
        self.path = path


class CoverageGapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NullSym:
    @property
    def descriptor(self) -> str:
        return "null"


NULL = NullSym()


# ---------------------------------------------------------------------------
# Scope formula templates


def scope_to_formulae(
    sensors: Sequence[SensorSym], action: ActionSym, task: Task
) -> tuple[Formula, Formula]:
    """Safety and liveness for a (sensor types, action type) pair.

    Sensor atoms in safety guards are next-state (the system reacts to the
    incoming reading); the gripper memory is current-state.
    """
    kinds = tuple(s.sensor_type for s in sensors)
    act = Prop(action.prop)
    grip = Prop(gripper_prop(action.side))
    liveness = Always(Eventually(act))
    if task is Task.SORTING and action.action_type is ActionType.PICKUP:
        if kinds != (SensorType.OBSERVED_CUBE,):
            raise NoTemplate(f"sorting pickup with sensors {kinds}")
        obs = Prop(sensors[0].prop)
        guard = disj([Not(Next(obs)), grip])
        return Always(Implies(guard, Not(Next(act)))), liveness
    if task is Task.SORTING and action.action_type is ActionType.PLACE:
        if kinds != (SensorType.BIN_CLEAR,):
            raise NoTemplate(f"sorting place with sensors {kinds}")
        clear = Prop(sensors[0].prop)
        guard = disj([Not(Next(clear)), Not(grip)])
        return Always(Implies(guard, Not(Next(act)))), liveness
    if task is Task.STACKING and action.action_type is ActionType.PICKUP:
        if kinds != (SensorType.OBSERVED_CUBE, SensorType.UNDER_STACK):
            raise NoTemplate(f"stacking pickup with sensors {kinds}")
        obs, under = Prop(sensors[0].prop), Prop(sensors[1].prop)
        guard = disj([Not(Next(obs)), Next(under), grip])
        return Always(Implies(guard, Not(Next(act)))), liveness
    if task is Task.STACKING and action.action_type is ActionType.PLACE:
        if kinds != (SensorType.OBSERVED_CUBE, SensorType.UNDER_STACK):
            raise NoTemplate(f"stacking place with sensors {kinds}")
        obs, under = Prop(sensors[0].prop), Prop(sensors[1].prop)
        guard = disj([Not(Next(obs)), Next(under), Not(grip)])
        return Always(Implies(guard, Not(Next(act)))), liveness
    raise NoTemplate(f"({task}, {action.action_type}, {kinds})")


def sensors_for_action(action: ActionSym, task: Task, space: "SymbolSpace") -> tuple[SensorSym, ...]:
    by_name = {s.prop.name: s for s in space.sensors}
    if action.action_type is ActionType.PICKUP:
        color = action.target_color
        if task is Task.SORTING:
            return (by_name[observed_prop(color).name],)
        return (by_name[observed_prop(color).name], by_name[understack_prop(color).name])
    destination = action.objects[0]
    if destination.type is ObjectType.BIN:
        side = destination.id.removeprefix("bin_")
        return (by_name[bin_clear_prop(side).name],)
    color = destination.color
    return (by_name[observed_prop(color).name], by_name[understack_prop(color).name])


def make_scope(action: ActionSym, task: Task, space: "SymbolSpace") -> ScopeSym:
    sensors = sensors_for_action(action, task, space)
    safety, liveness = scope_to_formulae(sensors, action, task)
    return ScopeSym(sensors, action, safety, liveness)


# ---------------------------------------------------------------------------
# Symbol space


@dataclass(frozen=True)
class SymbolSpace:
    task: Task
    objects: tuple[ObjectSym, ...]
    types: tuple[ObjectTypeSym, ...]
    colors: tuple[ObjectColorSym, ...]
    spatials: tuple[SpatialRelationSym, ...]
    regions: tuple[RegionSym, ...]
    sensors: tuple[SensorSym, ...]
    actions: tuple[ActionSym, ...]

    def count(self) -> int:
        return (
            len(self.objects)
            + len(self.types)
            + len(self.colors)
            + len(self.spatials)
            + len(self.regions)
            + len(self.sensors)
            + len(self.actions)
        )


def symbol_space(
    world: World, task: Task, prepositions: Sequence[str] = DEFAULT_PREPOSITIONS
) -> SymbolSpace:
    objects = tuple(world_objects(world))
    sensors = tuple(world_sensor_symbols(world))
    actions: list[ActionSym] = []
    cubes = [o for o in objects if o.type is ObjectType.CUBE]
    for side in SIDES:
        for cube in cubes:
            actions.append(ActionSym(ActionType.PICKUP, pickup_prop(side), side, (cube,)))
    if task is Task.SORTING:
        for obj in objects:
            if obj.type is ObjectType.BIN:
                side = obj.id.removeprefix("bin_")
                actions.append(ActionSym(ActionType.PLACE, place_bin_prop(side), side, (obj,)))
    else:
        for cube in cubes:
            actions.append(
                ActionSym(ActionType.PLACE, place_on_prop(cube.color), "right", (cube,))
            )
    regions = tuple(
        RegionSym(prep, obj) for prep in prepositions for obj in objects
    )
    return SymbolSpace(
        task=task,
        objects=objects,
        types=tuple(ObjectTypeSym(t) for t in ObjectType),
        colors=tuple(ObjectColorSym(c) for c in COLORS),
        spatials=tuple(SpatialRelationSym(s) for s in SPATIAL_VALUES),
        regions=regions,
        sensors=sensors,
        actions=tuple(actions),
    )


# ---------------------------------------------------------------------------
# Feature templates


@dataclass
class FeatureConfig:
    templates: tuple[str, ...]
    spatial_delta: float = SPATIAL_DELTA

    @classmethod
    def load(cls, path) -> "FeatureConfig":
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        return cls(
            templates=tuple(data["templates"]),
            spatial_delta=float(data.get("spatial_delta", SPATIAL_DELTA)),
        )


def default_feature_config() -> FeatureConfig:
    return FeatureConfig(
        templates=(
            "lex",
            "tag",
            "compose_color",
            "compose_type",
            "compose_spatial",
            "region",
            "act_verb",
            "act_side",
            "act_target",
            "act_dest",
            "scope",
            "carry",
            "pronoun",
            "null",
        )
    )


def _spatial_holds(relation: str, obj: ObjectSym, delta: float) -> bool:
    y = obj.pose[1]
    if relation == "left":
        return y > delta
    if relation == "right":
        return y < -delta
    if relation == "center":
        return abs(y) <= delta
    return obj.pose[2] >= 0.05  # above: stacked height


@dataclass
class NodeView:
    tag: str
    span_words: tuple[str, ...]
    span_start: int
    leaf_word: str | None
    child_symbols: tuple[tuple, ...]  # per child, beam-ranked symbols (or golds)
    child_tags: tuple[str, ...]
    sentence_words: tuple[str, ...]
    leaf_index: int | None
    salient: ObjectSym | None

    def all_child_symbols(self):
        for group in self.child_symbols:
            yield from group


def object_words(obj: ObjectSym) -> set[str]:
    """Surface words that identify an object: its color, or its side for
    bins and grippers (taken from the canonical id)."""
    words: set[str] = set()
    if obj.color != "none":
        words.add(obj.color)
    if obj.type in (ObjectType.BIN, ObjectType.GRIPPER):
        words.add(obj.id.rsplit("_", 1)[-1])
    return words


def _symbol_label(candidate) -> str:
    if isinstance(candidate, NullSym):
        return "null"
    if isinstance(candidate, ObjectSym):
        return f"object:{candidate.type.value}"
    if isinstance(candidate, ObjectTypeSym):
        return f"type:{candidate.value.value}"
    if isinstance(candidate, ObjectColorSym):
        return f"color:{candidate.value}"
    if isinstance(candidate, SpatialRelationSym):
        return f"spatial:{candidate.value}"
    if isinstance(candidate, RegionSym):
        return f"region:{candidate.preposition}"
    if isinstance(candidate, SensorSym):
        return "sensor"
    if isinstance(candidate, ActionSym):
        return f"action:{candidate.action_type.value}"
    if isinstance(candidate, ScopeSym):
        return f"scope:{candidate.action.action_type.value}"
    return "other"


def fire_features(node: NodeView, candidate, config: FeatureConfig) -> list[str]:
    fired: list[str] = []
    enabled = set(config.templates)
    label = _symbol_label(candidate)

    if "tag" in enabled:
        fired.append(f"tag:{node.tag}:{label.split(':')[0]}")

    if "null" in enabled and isinstance(candidate, NullSym):
        fired.append(f"null:{node.tag}")
        return fired

    if "lex" in enabled and node.leaf_word is not None:
        fired.append(f"lex:{node.leaf_word}:{label}")

    if "carry" in enabled and node.leaf_word is None:
        if any(candidate == c for c in node.all_child_symbols()):
            fired.append(f"carry:{label.split(':')[0]}")

    if isinstance(candidate, ObjectSym) and node.leaf_word is None:
        child_colors = [c for c in node.all_child_symbols() if isinstance(c, ObjectColorSym)]
        if "compose_color" in enabled and child_colors:
            if any(c.value == candidate.color for c in child_colors):
                fired.append("color_match")
            else:
                fired.append("color_mismatch")
        child_types = [c for c in node.all_child_symbols() if isinstance(c, ObjectTypeSym)]
        if "compose_type" in enabled and child_types:
            if any(c.value == candidate.type for c in child_types):
                fired.append("type_match")
            else:
                fired.append("type_mismatch")
        child_spatials = [
            c for c in node.all_child_symbols() if isinstance(c, SpatialRelationSym)
        ]
        if "compose_spatial" in enabled and child_spatials:
            if any(
                _spatial_holds(c.value, candidate, config.spatial_delta)
                for c in child_spatials
            ):
                fired.append("spatial_match")
            else:
                fired.append("spatial_mismatch")

    if "pronoun" in enabled and isinstance(candidate, ObjectSym) and node.leaf_word == "it":
        fired.append("pronoun_object")
        if node.salient is not None and candidate == node.salient:
            fired.append("pronoun_salient")
        before = node.sentence_words[: node.leaf_index or 0]
        if candidate.color != "none" and candidate.color in before:
            fired.append("pronoun_mentioned")

    if "region" in enabled and isinstance(candidate, RegionSym):
        if candidate.preposition in node.span_words:
            fired.append(f"region_prep:{candidate.preposition}")
        if any(
            candidate.target == c for c in node.all_child_symbols() if isinstance(c, ObjectSym)
        ):
            fired.append("region_target")
        else:
            fired.append("region_orphan")
        if object_words(candidate.target) & set(node.span_words):
            fired.append("region_target_word")

    if isinstance(candidate, ActionSym):
        if "act_verb" in enabled:
            for word in node.span_words:
                if word in PICKUP_VERBS or word in PLACE_VERBS:
                    fired.append(f"act:{word}:{candidate.action_type.value}")
                    break
        if "act_side" in enabled:
            side_words = [w for w in node.span_words if w in ("left", "right")]
            if side_words:
                if candidate.side in side_words:
                    fired.append("act_side_word_match")
                else:
                    fired.append("act_side_word_mismatch")
            elif candidate.side == "right":
                fired.append("act_side_default_right")
        if "act_target" in enabled and candidate.action_type is ActionType.PICKUP:
            target = candidate.objects[0]
            child_objects = [
                c for c in node.all_child_symbols() if isinstance(c, ObjectSym)
            ]
            if target in child_objects:
                fired.append("act_target_match")
            elif node.salient is not None and target == node.salient:
                fired.append("act_target_salient")
            else:
                fired.append("act_target_missing")
            words = object_words(target)
            if words & set(node.span_words):
                fired.append("act_target_word_span")
            elif words & set(node.sentence_words[: node.span_start]):
                fired.append("act_target_word_before")
        if "act_dest" in enabled and candidate.action_type is ActionType.PLACE:
            dest = candidate.objects[0]
            child_regions = [
                c for c in node.all_child_symbols() if isinstance(c, RegionSym)
            ]
            if any(r.target == dest for r in child_regions):
                fired.append("act_dest_match")
            else:
                fired.append("act_dest_missing")
            if object_words(dest) & set(node.span_words):
                fired.append("act_dest_word_span")
            if dest.type is ObjectType.BIN:
                side = dest.id.removeprefix("bin_")
                if side == candidate.side:
                    fired.append("act_dest_side_agree")

    if "scope" in enabled and isinstance(candidate, ScopeSym):
        fired.append("scope_bias")
        action_features = fire_features(node, candidate.action, config)
        fired.extend(f"scope>{name}" for name in action_features if not name.startswith("tag:"))

    return fired


# ---------------------------------------------------------------------------
# Candidate pools


NP_TAGS = {"NPB", "NPL", "NML", "NPR", "PPS"}
PP_TAGS = {"PP", "PPW"}
VP_TAGS = {"VP", "VPC"}


def candidate_pool(node: NodeView, space: SymbolSpace) -> list:
    """Candidates scored at a node; NULL is always available."""
    pool: list = [NULL]
    if node.leaf_word is not None:
        word = node.leaf_word
        if word in ("blue", "red", "green"):
            pool.append(ObjectColorSym(word))
        if word in ("left", "right", "center", "above"):
            pool.append(SpatialRelationSym(word))
        if word in TYPE_WORDS:
            pool.extend(ObjectTypeSym(t) for t in TYPE_WORDS[word])
        if word == "it":
            pool.extend(space.objects)
        return pool

    all_children = {c.descriptor: c for group in node.child_symbols for c in group
                    if not isinstance(c, NullSym)}
    carried = all_children
    if node.tag in PP_TAGS:
        # prepositional phrases export regions and attributes, not bare objects
        carried = {
            k: c for k, c in all_children.items() if not isinstance(c, ObjectSym)
        }
    pool.extend(carried[key] for key in sorted(carried))

    if node.tag in NP_TAGS:
        for obj in space.objects:
            if obj.descriptor not in carried:
                pool.append(obj)
    if node.tag in PP_TAGS:
        preps = [w for w in node.span_words if w in {r.preposition for r in space.regions}]
        child_objects = [
            next((c for c in group if isinstance(c, ObjectSym)), None)
            for group in node.child_symbols
        ]
        for prep in preps:
            for obj in child_objects:
                if obj is None:
                    continue
                region = RegionSym(prep, obj)
                if region.descriptor not in carried:
                    pool.append(region)
    if node.tag in VP_TAGS:
        verbs = [w for w in node.span_words if w in PICKUP_VERBS | PLACE_VERBS]
        # actions compose from direct argument children only, taking each
        # child's top-ranked candidate: pickup targets from NP or pronoun
        # children, place destinations from PP children
        child_objects = [
            obj
            for tag, group in zip(node.child_tags, node.child_symbols)
            if tag in NP_TAGS or tag == "PRO"
            for obj in [
                next(
                    (c for c in group
                     if isinstance(c, ObjectSym) and c.type is ObjectType.CUBE),
                    None,
                )
            ]
            if obj is not None
        ]
        child_regions = [
            region
            for tag, group in zip(node.child_tags, node.child_symbols)
            if tag in PP_TAGS
            for region in [next((c for c in group if isinstance(c, RegionSym)), None)]
            if region is not None
        ]
        if node.salient is not None and node.salient not in child_objects:
            child_objects = child_objects + [node.salient]
        for verb in verbs:
            if verb in PICKUP_VERBS or verb in COMPOSITE_VERBS:
                for side in SIDES:
                    for target in child_objects:
                        action = ActionSym(
                            ActionType.PICKUP, pickup_prop(side), side, (target,)
                        )
                        if action.descriptor not in carried:
                            pool.append(action)
            if verb in PLACE_VERBS:
                for region in child_regions:
                    dest = region.target
                    if dest.type is ObjectType.BIN:
                        side = dest.id.removeprefix("bin_")
                        action = ActionSym(
                            ActionType.PLACE, place_bin_prop(side), side, (dest,)
                        )
                    elif dest.type is ObjectType.CUBE and space.task is Task.STACKING:
                        action = ActionSym(
                            ActionType.PLACE, place_on_prop(dest.color), "right", (dest,)
                        )
                    else:
                        continue
                    if action.descriptor not in carried:
                        pool.append(action)
    return pool


def scope_candidates(node: NodeView, phase_one: Iterable, space: SymbolSpace) -> list:
    """Scopes over every completed action visible at the node (bare actions,
    plus actions folded inside carried child scopes)."""
    if node.tag not in VP_TAGS:
        return []
    actions = {
        a.descriptor: a
        for a in (*phase_one, *node.all_child_symbols())
        if isinstance(a, ActionSym)
    }
    out = []
    for key in sorted(actions):
        try:
            out.append(make_scope(actions[key], space.task, space))
        except (NoTemplate, KeyError):
            continue
    return out


# ---------------------------------------------------------------------------
# Model weights


@dataclass
class ModelWeights:
    weights: dict[str, float]
    feature_config: FeatureConfig

    def score(self, fired: Sequence[str]) -> float:
        return sum(self.weights.get(name, 0.0) for name in fired)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "templates": list(self.feature_config.templates),
            "spatial_delta": self.feature_config.spatial_delta,
            "weights": {k: self.weights[k] for k in sorted(self.weights)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelWeights":
        if data.get("version") != 1:
            raise ValueError(f"unsupported model version {data.get('version')}")
        return cls(
            weights=dict(data["weights"]),
            feature_config=FeatureConfig(
                templates=tuple(data["templates"]),
                spatial_delta=float(data.get("spatial_delta", SPATIAL_DELTA)),
            ),
        )


def load_model(path) -> ModelWeights:
    with open(path, "r", encoding="utf-8") as handle:
        return ModelWeights.from_dict(json.load(handle))


def save_model(model: ModelWeights, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model.to_dict(), handle, indent=2)
        handle.write("\n")


# ---------------------------------------------------------------------------
# Inference


@dataclass
class SentenceGrounding:
    tokens: tuple[str, ...]
    tree: ParseTree
    root_beam: tuple[tuple[float, object], ...]
    scopes: tuple[ScopeSym, ...]


@dataclass
class GroundingSet:
    task: Task
    scopes: tuple[ScopeSym, ...]
    sentences: list[SentenceGrounding]
    alignment: dict[str, list[tuple[int, int, int]]]  # descriptor -> (sentence, start, end)

    def symbols(self) -> list:
        seen: dict[str, object] = {}
        for scope in self.scopes:
            seen[scope.descriptor] = scope
            seen[scope.action.descriptor] = scope.action
            for obj in scope.action.objects:
                seen[obj.descriptor] = obj
            for sensor in scope.sensors:
                seen[sensor.descriptor] = sensor
                for obj in sensor.objects:
                    seen[obj.descriptor] = obj
        return [seen[k] for k in sorted(seen)]

    def scope_set(self) -> frozenset:
        return frozenset(self.scopes)


@dataclass
class GroundConfig:
    beam: int = 4
    floor: float = -1e9
    l2: float = 0.1
    steps: int = 200
    step_size: float = 0.5
    seed: int = 0


def _node_view(
    tree: ParseTree,
    tokens: Sequence[str],
    child_symbol_sets: Sequence[frozenset],
    salient: ObjectSym | None,
) -> NodeView:
    return NodeView(
        tag=tree.tag,
        span_words=tuple(tokens[tree.start : tree.end]),
        span_start=tree.start,
        leaf_word=tree.word,
        child_symbols=tuple(child_symbol_sets),
        child_tags=tuple(child.tag for child in tree.children),
        sentence_words=tuple(tokens),
        leaf_index=tree.start if tree.is_leaf else None,
        salient=salient,
    )


@dataclass(frozen=True)
class BeamEntry:
    total: float
    sym: object
    base: float  # composition support from constituent subtrees
    fired: frozenset  # features accumulated along the carry chain, set semantics


def infer(
    tree: ParseTree,
    world: World,
    task: Task,
    model: ModelWeights,
    beam: int = 4,
    *,
    salient: ObjectSym | None = None,
    sentence_index: int = 0,
    alignment: dict[str, list[tuple[int, int, int]]] | None = None,
    floor: float = -1e9,
) -> SentenceGrounding:
    """Bottom-up beam inference.

    A candidate's score is its composition support (the best subtree score of
    its constituents: carried copy, pickup target, or matching destination
    region) plus the weights of features fired anywhere along its carry chain,
    counted once each, so depth alone never inflates a candidate.  Bare
    actions inform scope formation but do not occupy beam slots; their scopes
    subsume them.
    """
    space = symbol_space(world, task)
    tokens = tree.words()
    alignment = alignment if alignment is not None else {}

    def normalize(fired: frozenset) -> frozenset:
        # a mismatch seen at any span beats a match from a wider span
        drops = {
            name[: -len("_mismatch")] + "_match"
            for name in fired
            if name.endswith("_mismatch")
        }
        return fired - drops if drops else fired

    def finish(sym, base: float, sticky: frozenset, context: frozenset) -> BeamEntry:
        # evidence features accumulate along the carry chain (set semantics);
        # node-context features (tag/null/carry biases) score locally only
        sticky = normalize(sticky)
        total = base + model.score(sorted(sticky)) + model.score(sorted(context))
        return BeamEntry(total, sym, base, sticky)

    def split_fired(names) -> tuple[frozenset, frozenset]:
        sticky, context = set(), set()
        for name in names:
            if name.startswith(("tag:", "null:", "carry:")) or name.endswith(
                "_default_right"
            ):
                context.add(name)
            else:
                sticky.add(name)
        return frozenset(sticky), frozenset(context)

    def walk(node: ParseTree) -> list[BeamEntry]:
        child_beams = [walk(child) for child in node.children]
        child_sets = [tuple(e.sym for e in b) for b in child_beams]
        child_best: dict[str, BeamEntry] = {}
        for entries in child_beams:
            for entry in entries:
                key = entry.sym.descriptor
                if key not in child_best or entry.total > child_best[key].total:
                    child_best[key] = entry
        view = _node_view(node, tokens, child_sets, salient)

        def compose_base(cand) -> float:
            if isinstance(cand, RegionSym):
                target = child_best.get(cand.target.descriptor)
                return target.total if target else 0.0
            if isinstance(cand, (ActionSym, ScopeSym)):
                action = cand.action if isinstance(cand, ScopeSym) else cand
                if action.action_type is ActionType.PICKUP:
                    target = child_best.get(action.objects[0].descriptor)
                    return target.total if target else 0.0
                region_totals = [
                    e.total
                    for entries in child_beams
                    for e in entries
                    if isinstance(e.sym, RegionSym) and e.sym.target == action.objects[0]
                ]
                return max(region_totals) if region_totals else 0.0
            return 0.0

        scored: dict[str, BeamEntry] = {}
        for cand in candidate_pool(view, space):
            sticky, context = split_fired(fire_features(view, cand, model.feature_config))
            carried = child_best.get(cand.descriptor)
            if carried is not None:
                entry = finish(cand, carried.base, carried.fired | sticky, context)
            else:
                entry = finish(cand, compose_base(cand), sticky, context)
            scored[cand.descriptor] = entry

        phase_one = [e.sym for e in scored.values()]
        for cand in scope_candidates(view, phase_one, space):
            sticky, context = split_fired(fire_features(view, cand, model.feature_config))
            carried = child_best.get(cand.descriptor)
            candidates = []
            if carried is not None:
                candidates.append(finish(cand, carried.base, carried.fired | sticky, context))
            action_entry = scored.get(cand.action.descriptor)
            if action_entry is not None:
                candidates.append(finish(cand, action_entry.total, sticky, context))
            else:
                candidates.append(finish(cand, compose_base(cand), sticky, context))
            best = max(candidates, key=lambda e: e.total)
            prev = scored.get(cand.descriptor)
            if prev is None or best.total > prev.total:
                scored[cand.descriptor] = best

        visible = [
            e for e in scored.values() if not isinstance(e.sym, ActionSym)
        ]
        ranked = sorted(visible, key=lambda e: (-e.total, e.sym.descriptor))[: beam]
        for entry in ranked:
            if isinstance(entry.sym, NullSym):
                continue
            # objects align to full noun phrases so referring expressions keep
            # their determiners; other symbols align to their lowest node
            if isinstance(entry.sym, ObjectSym) and node.tag not in ("NPB", "NPL", "PRO"):
                continue
            key = entry.sym.descriptor
            if key not in alignment or alignment[key][-1][0] != sentence_index:
                alignment.setdefault(key, []).append(
                    (sentence_index, node.start, node.end)
                )
        return ranked

    root_entries = walk(tree)
    root_beam = tuple((e.total, e.sym) for e in root_entries)
    scopes = select_scopes(root_beam, tokens, floor)
    return SentenceGrounding(
        tokens=tuple(tokens), tree=tree, root_beam=root_beam, scopes=scopes
    )


def select_scopes(
    root_beam: Sequence[tuple[float, object]],
    tokens: Sequence[str],
    floor: float,
) -> tuple[ScopeSym, ...]:
    """Greedy best-first scope selection from the root beam.

    Composition is restricted to top-ranked arguments, so the beam's scopes
    are grounded in actual phrase attachments; duplicate target roles (arm
    variants) and duplicate action propositions keep only the best scorer.
    """
    ranked = sorted(
        (
            (score, sym)
            for score, sym in root_beam
            if isinstance(sym, ScopeSym) and score >= floor
        ),
        key=lambda pair: (-pair[0], pair[1].descriptor),
    )
    chosen: list[ScopeSym] = []
    roles: set[tuple] = set()
    props: set[str] = set()
    for score, scope in ranked:
        action = scope.action
        role = (action.action_type, action.objects)
        if role in roles or action.prop.name in props:
            continue
        roles.add(role)
        props.add(action.prop.name)
        chosen.append(scope)
    return tuple(sorted(chosen, key=lambda s: s.descriptor))


def ground_instruction(
    text: str,
    world: World,
    task: Task,
    model: ModelWeights,
    grammar: Grammar,
    config: GroundConfig | None = None,
) -> GroundingSet:
    """Split, parse, and ground an instruction; scopes union across sentences."""
    config = config or GroundConfig()
    sentences = split_instruction(text)
    if not sentences:
        raise NoGrounding("empty instruction")
    groundings: list[SentenceGrounding] = []
    alignment: dict[str, list[tuple[int, int, int]]] = {}
    salient: ObjectSym | None = None
    all_scopes: dict[str, ScopeSym] = {}
    for index, sentence in enumerate(sentences):
        tokens = tokenize(sentence)
        trees = cyk_parse(tokens, grammar, k=1)
        if not trees:
            raise NoGrounding(f"no parse for sentence {index + 1}: {sentence!r}")
        grounding = infer(
            trees[0],
            world,
            task,
            model,
            beam=config.beam,
            salient=salient,
            sentence_index=index,
            alignment=alignment,
            floor=config.floor,
        )
        groundings.append(grounding)
        for scope in grounding.scopes:
            all_scopes.setdefault(scope.descriptor, scope)
            if scope.action.action_type is ActionType.PICKUP:
                salient = scope.action.objects[0]
    if not all_scopes:
        raise NoGrounding("no scope symbols above the floor")
    scopes = tuple(all_scopes[k] for k in sorted(all_scopes))
    return GroundingSet(task=task, scopes=scopes, sentences=groundings, alignment=alignment)


# ---------------------------------------------------------------------------
# Specification assembly


class ConflictingScopes(Exception):
    def __init__(self, conflicts):
        super().__init__(f"conflicting scopes bind the same action: {conflicts}")
        self.conflicts = conflicts


def grounding_set_to_spec(gs: GroundingSet, task: Task) -> GR1Spec:
    """Conjoin scope formulas and add the fixed scaffolding: gripper memory
    updates, per-arm action mutual exclusion, and an all-false system start.

    Pickup goals on arms without any place action relax to
    (pickup | gripper): the memory latches, so a bare pickup goal could fire
    at most once and would poison the whole specification.
    """
    if not gs.scopes:
        raise NoGrounding("grounding set has no scopes")
    scopes = sorted(gs.scopes, key=lambda s: s.descriptor)

    by_action: dict[str, ScopeSym] = {}
    conflicts = []
    for scope in scopes:
        name = scope.action.prop.name
        if name in by_action and by_action[name].safety != scope.safety:
            conflicts.append((by_action[name].descriptor, scope.descriptor))
        by_action.setdefault(name, scope)
    if conflicts:
        raise ConflictingScopes(conflicts)

    props: dict[str, Proposition] = {}
    for scope in scopes:
        for sensor in scope.sensors:
            props[sensor.prop.name] = sensor.prop
        props[scope.action.prop.name] = scope.action.prop
        props[gripper_prop(scope.action.side).name] = gripper_prop(scope.action.side)

    arms: dict[str, dict[str, list[Proposition]]] = {}
    for scope in scopes:
        arm = arms.setdefault(scope.action.side, {"pickup": [], "place": []})
        kind = "pickup" if scope.action.action_type is ActionType.PICKUP else "place"
        if scope.action.prop not in arm[kind]:
            arm[kind].append(scope.action.prop)

    sys_safety: list[Formula] = []
    seen_safety: set[str] = set()
    for scope in scopes:
        text = str(scope.safety)
        if text not in seen_safety:
            seen_safety.add(text)
            sys_safety.append(scope.safety)

    for side in sorted(arms):
        arm = arms[side]
        grip = Prop(gripper_prop(side))
        picks = disj([Next(Prop(p)) for p in sorted(arm["pickup"], key=lambda p: p.name)])
        places = disj([Next(Prop(p)) for p in sorted(arm["place"], key=lambda p: p.name)])
        hold = disj([picks, conj([grip, Not(places)])])
        sys_safety.append(
            Always(conj([Implies(hold, Next(grip)), Implies(Next(grip), hold)]))
        )
        actions = sorted(arm["pickup"] + arm["place"], key=lambda p: p.name)
        for i, first in enumerate(actions):
            for second in actions[i + 1 :]:
                sys_safety.append(
                    Always(Not(conj([Next(Prop(first)), Next(Prop(second))])))
                )

    sys_liveness: list[Formula] = []
    for scope in scopes:
        goal = scope.liveness
        if scope.action.action_type is ActionType.PICKUP and not arms[scope.action.side]["place"]:
            goal = Always(
                Eventually(disj([Prop(scope.action.prop), Prop(gripper_prop(scope.action.side))]))
            )
        if goal not in sys_liveness:
            sys_liveness.append(goal)

    system = sorted(
        (p for p in props.values() if p.kind is not PropKind.SENSOR),
        key=lambda p: p.name,
    )
    sys_init = conj([Not(Prop(p)) for p in system])

    return GR1Spec(
        propositions=tuple(props.values()),
        env_init=None,
        sys_init=sys_init,
        env_safety=(),
        env_liveness=(),
        sys_safety=tuple(sys_safety),
        sys_liveness=tuple(sys_liveness),
    )


# ---------------------------------------------------------------------------
# Corpus and training


@dataclass
class AnnotatedSentence:
    tokens: tuple[str, ...]
    tree: ParseTree
    annotations: dict[str, tuple[str, ...]]  # node path -> gold descriptors


@dataclass
class AnnotatedExample:
    id: str
    text: str
    world_id: str
    task: Task
    sentences: list[AnnotatedSentence]


def descriptor_to_symbol(desc: str, space: SymbolSpace):
    """Resolve a corpus annotation descriptor against a world's symbol space."""
    kind, _, rest = desc.partition(":")
    if kind == "null":
        return NULL
    if kind == "type":
        return ObjectTypeSym(ObjectType(rest))
    if kind == "color":
        return ObjectColorSym(rest)
    if kind == "spatial":
        return SpatialRelationSym(rest)
    if kind == "obj":
        for obj in space.objects:
            if obj.id == rest:
                return obj
        raise KeyError(f"object {rest!r} not in world")
    if kind == "region":
        prep, _, obj_id = rest.partition(":")
        target = descriptor_to_symbol(f"obj:{obj_id}", space)
        return RegionSym(prep, target)
    if kind == "sensor":
        for sensor in space.sensors:
            if sensor.prop.name == rest:
                return sensor
        raise KeyError(f"sensor {rest!r} not instantiable")
    if kind in ("action", "scope"):
        prop_name, _, obj_id = rest.partition(":")
        target = descriptor_to_symbol(f"obj:{obj_id}", space)
        if prop_name.startswith("pickup_"):
            side = prop_name.removeprefix("pickup_")
            action = ActionSym(ActionType.PICKUP, pickup_prop(side), side, (target,))
        elif prop_name.endswith("_bin") and prop_name.startswith("place_"):
            side = prop_name.removeprefix("place_").removesuffix("_bin")
            action = ActionSym(ActionType.PLACE, place_bin_prop(side), side, (target,))
        elif prop_name.startswith("place_on_"):
            color = prop_name.removeprefix("place_on_")
            action = ActionSym(ActionType.PLACE, place_on_prop(color), "right", (target,))
        else:
            raise KeyError(f"unknown action proposition {prop_name!r}")
        if kind == "action":
            return action
        return make_scope(action, space.task, space)
    raise KeyError(f"unknown descriptor {desc!r}")


CORPUS_VERSION = 1


def load_corpus(path, worlds: Mapping[str, World]) -> list[AnnotatedExample]:
    from .grammar import parse_bracketed

    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    if data.get("version") != CORPUS_VERSION:
        raise ValueError(f"unsupported corpus version {data.get('version')}")
    out = []
    for record in data["instructions"]:
        sentences = [
            AnnotatedSentence(
                tokens=tuple(s["tokens"]),
                tree=parse_bracketed(s["tree"]),
                annotations={k: tuple(v) for k, v in s["annotations"].items()},
            )
            for s in record["sentences"]
        ]
        if record["world"] not in worlds:
            raise KeyError(f"corpus references unknown world {record['world']!r}")
        out.append(
            AnnotatedExample(
                id=record["id"],
                text=record["text"],
                world_id=record["world"],
                task=Task(record["task"]),
                sentences=sentences,
            )
        )
    return out


def _tree_paths(tree: ParseTree, prefix: str = "") -> list[tuple[str, ParseTree]]:
    out = [(prefix, tree)]
    for i, child in enumerate(tree.children):
        child_prefix = f"{prefix}.{i}" if prefix else str(i)
        out.extend(_tree_paths(child, child_prefix))
    return out


def _example_factors(
    example: AnnotatedExample,
    space: SymbolSpace,
    config: FeatureConfig,
):
    """Per-node training factors using gold child symbol assignments."""
    factors = []
    salient: ObjectSym | None = None
    for sentence in example.sentences:
        paths = dict(_tree_paths(sentence.tree))
        gold_map: dict[str, list] = {}
        for path, node in paths.items():
            descs = sentence.annotations.get(path, ())
            try:
                gold_map[path] = [descriptor_to_symbol(d, space) for d in descs] or [NULL]
            except KeyError as err:
                raise InconsistentAnnotation(example.id, path, str(err))

        def walk(node: ParseTree, path: str):
            child_paths = [
                f"{path}.{i}" if path else str(i) for i in range(len(node.children))
            ]
            for child, child_path in zip(node.children, child_paths):
                walk(child, child_path)
            child_sets = [tuple(gold_map[p]) for p in child_paths]
            view = _node_view(node, sentence.tokens, child_sets, salient)
            pool = candidate_pool(view, space)
            pool_keys = {c.descriptor for c in pool}
            scopes = scope_candidates(view, pool, space)
            pool = pool + [s for s in scopes if s.descriptor not in pool_keys]
            pool_keys |= {s.descriptor for s in scopes}
            golds = gold_map[path]
            for gold in golds:
                if gold.descriptor not in pool_keys:
                    raise InconsistentAnnotation(
                        example.id, path, f"gold {gold.descriptor} not in candidate pool"
                    )
            candidates = sorted(pool, key=lambda c: c.descriptor)
            fired = [tuple(fire_features(view, c, config)) for c in candidates]
            gold_idx = [
                next(i for i, c in enumerate(candidates) if c.descriptor == g.descriptor)
                for g in golds
            ]
            factors.append((fired, tuple(gold_idx), f"{example.id}:{path or 'root'}"))

        walk(sentence.tree, "")
        for path in sorted(gold_map):
            for sym in gold_map[path]:
                if isinstance(sym, ScopeSym) and sym.action.action_type is ActionType.PICKUP:
                    salient = sym.action.objects[0]
    return factors


def train(
    corpus: Sequence[AnnotatedExample],
    worlds: Mapping[str, World],
    feature_config: FeatureConfig | None = None,
    config: GroundConfig | None = None,
) -> ModelWeights:
    """Gradient ascent on per-node conditional log-likelihood with L2.

    Deterministic: zero init, full-batch updates, fixed iteration count.
    """
    feature_config = feature_config or default_feature_config()
    config = config or GroundConfig()
    factors = []
    for example in corpus:
        space = symbol_space(worlds[example.world_id], example.task)
        factors.extend(_example_factors(example, space, feature_config))

    gaps = [name for fired, gold_idx, name in factors if not any(fired[g] for g in gold_idx)]
    if not factors or gaps:
        warnings.warn(
            CoverageGapWarning(
                "no training factors" if not factors else f"uncovered factors: {gaps[:10]}"
            )
        )
    weights: dict[str, float] = {}
    for fired, _, _ in factors:
        for feats in fired:
            for name in feats:
                weights.setdefault(name, 0.0)

    for _ in range(config.steps):
        grad = {name: 0.0 for name in weights}
        for fired, gold_idx, _ in factors:
            scores = [sum(weights[f] for f in feats) for feats in fired]
            top = max(scores)
            exps = [math.exp(s - top) for s in scores]
            total = sum(exps)
            probs = [e / total for e in exps]
            for g in gold_idx:
                for name in fired[g]:
                    grad[name] += 1.0
                for feats, p in zip(fired, probs):
                    for name in feats:
                        grad[name] -= p
        for name in weights:
            grad[name] -= 2.0 * config.l2 * weights[name]
            weights[name] += config.step_size * grad[name] / max(len(factors), 1)

    return ModelWeights(weights=weights, feature_config=feature_config)


def recovery_report(
    corpus: Sequence[AnnotatedExample],
    worlds: Mapping[str, World],
    model: ModelWeights,
    grammar: Grammar,
    config: GroundConfig | None = None,
) -> dict:
    """Exact grounding-set recovery plus per-instruction detail."""
    config = config or GroundConfig()
    exact = 0
    detail = []
    for example in corpus:
        world = worlds[example.world_id]
        space = symbol_space(world, example.task)
        gold_scopes: set = set()
        for sentence in example.sentences:
            for descs in sentence.annotations.values():
                for desc in descs:
                    if desc.startswith("scope:"):
                        gold_scopes.add(descriptor_to_symbol(desc, space))
        gs = ground_instruction(example.text, world, example.task, model, grammar, config)
        ok = gs.scope_set() == frozenset(gold_scopes)
        exact += ok
        detail.append({"id": example.id, "recovered": ok})
    return {
        "instructions": len(corpus),
        "recovered": exact,
        "recovery": exact / len(corpus) if corpus else 0.0,
        "detail": detail,
    }
