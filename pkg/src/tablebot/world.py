"""Simulated tabletop: scene state, sensor evaluation, action effects, and
environment policies (scripted, random, cooperative, adversarial).

Worlds are immutable snapshots; actions and policy edits return new worlds.
The robot sits at the origin; per the spatial convention, left is y > delta
and right is y < -delta.  ObservedCube means an unheld cube of that color on
the table or a stack, within the workspace radius and not inside a bin.
"""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .game import CounterStrategy, Strategy
from .ltl import Formula, Proposition
from .symbols import (
    ActionSym,
    ActionType,
    ObjectSym,
    ObjectType,
    SensorSym,
    SensorType,
    Task,
    bin_clear_prop,
    observed_prop,
    understack_prop,
)

WORKSPACE_RADIUS = 0.9
WORLD_VERSION = 1


class UnknownSensorType(Exception):
    pass


class PreconditionViolated(Exception):
    pass


class UnmappableValuation(Exception):
    pass


@dataclass(frozen=True)
class Cube:
    id: str
    color: str
    pose: tuple[float, float, float]
    on_top_of: str | None = None


@dataclass(frozen=True)
class BinBox:
    side: str
    pose: tuple[float, float, float]
    lid_open: bool = True
    contents: tuple[str, ...] = ()


@dataclass(frozen=True)
class Gripper:
    side: str
    pose: tuple[float, float, float]
    holding: str | None = None


@dataclass(frozen=True)
class World:
    task: Task
    cubes: tuple[Cube, ...]
    bins: tuple[BinBox, ...]
    grippers: tuple[Gripper, ...]

    def __post_init__(self) -> None:
        ids = [c.id for c in self.cubes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cube ids")
        by_id = {c.id: c for c in self.cubes}
        held = {g.holding for g in self.grippers if g.holding}
        binned = {cid for b in self.bins for cid in b.contents}
        for cube in self.cubes:
            if cube.on_top_of is not None:
                if cube.on_top_of not in by_id:
                    raise ValueError(f"{cube.id} stacked on missing cube")
                if cube.id in held or cube.id in binned:
                    raise ValueError(f"{cube.id} cannot be both stacked and held/binned")
        # stacking relation must be acyclic
        for cube in self.cubes:
            seen = set()
            cur = cube
            while cur.on_top_of is not None:
                if cur.id in seen:
                    raise ValueError("stacking cycle")
                seen.add(cur.id)
                cur = by_id[cur.on_top_of]

    def cube(self, cube_id: str) -> Cube:
        for c in self.cubes:
            if c.id == cube_id:
                return c
        raise KeyError(cube_id)

    def bin(self, side: str) -> BinBox:
        for b in self.bins:
            if b.side == side:
                return b
        raise KeyError(side)

    def gripper(self, side: str) -> Gripper:
        for g in self.grippers:
            if g.side == side:
                return g
        raise KeyError(side)

    def held_ids(self) -> set[str]:
        return {g.holding for g in self.grippers if g.holding}

    def binned_ids(self) -> set[str]:
        return {cid for b in self.bins for cid in b.contents}

    def stacked_on_ids(self) -> set[str]:
        """Ids of cubes that have another cube directly on top."""
        return {c.on_top_of for c in self.cubes if c.on_top_of is not None}

    def on_table(self, cube: Cube) -> bool:
        return cube.id not in self.held_ids() and cube.id not in self.binned_ids()

    def observed_cubes(self, color: str) -> list[Cube]:
        out = []
        for cube in self.cubes:
            if cube.color != color or not self.on_table(cube):
                continue
            if math.hypot(cube.pose[0], cube.pose[1]) > WORKSPACE_RADIUS:
                continue
            out.append(cube)
        return sorted(out, key=lambda c: c.id)


# ---------------------------------------------------------------------------
# Scene files


def world_to_dict(world: World) -> dict:
    return {
        "version": WORLD_VERSION,
        "task": world.task.value,
        "cubes": [
            {
                "id": c.id,
                "color": c.color,
                "pose": list(c.pose),
                "on_top_of": c.on_top_of,
            }
            for c in world.cubes
        ],
        "bins": [
            {
                "side": b.side,
                "pose": list(b.pose),
                "lid_open": b.lid_open,
                "contents": list(b.contents),
            }
            for b in world.bins
        ],
        "grippers": [
            {"side": g.side, "pose": list(g.pose), "holding": g.holding}
            for g in world.grippers
        ],
    }


def world_from_dict(data: dict) -> World:
    if data.get("version") != WORLD_VERSION:
        raise ValueError(f"unsupported world version: {data.get('version')}")
    return World(
        task=Task(data["task"]),
        cubes=tuple(
            Cube(c["id"], c["color"], tuple(c["pose"]), c.get("on_top_of"))
            for c in data["cubes"]
        ),
        bins=tuple(
            BinBox(b["side"], tuple(b["pose"]), b["lid_open"], tuple(b["contents"]))
            for b in data["bins"]
        ),
        grippers=tuple(
            Gripper(g["side"], tuple(g["pose"]), g.get("holding")) for g in data["grippers"]
        ),
    )


def load_world(path) -> World:
    with open(path, "r", encoding="utf-8") as handle:
        return world_from_dict(json.load(handle))


def save_world(world: World, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(world_to_dict(world), handle, indent=2)
        handle.write("\n")


# ---------------------------------------------------------------------------
# Symbols from scenes


def world_objects(world: World) -> list[ObjectSym]:
    objects = [
        ObjectSym(c.id, ObjectType.CUBE, c.color, c.pose) for c in world.cubes
    ]
    objects += [
        ObjectSym(f"bin_{b.side}", ObjectType.BIN, "none", b.pose) for b in world.bins
    ]
    objects += [
        ObjectSym(f"gripper_{g.side}", ObjectType.GRIPPER, "none", g.pose)
        for g in world.grippers
    ]
    return sorted(objects, key=lambda o: o.descriptor)


def cube_colors(world: World) -> list[str]:
    return sorted({c.color for c in world.cubes})


def world_sensor_symbols(world: World) -> list[SensorSym]:
    """Every sensor instantiable for the world's task."""
    objects = {o.id: o for o in world_objects(world)}
    out: list[SensorSym] = []
    for color in cube_colors(world):
        rep = min(c.id for c in world.cubes if c.color == color)
        out.append(
            SensorSym(SensorType.OBSERVED_CUBE, observed_prop(color), (objects[rep],))
        )
        if world.task is Task.STACKING:
            out.append(
                SensorSym(SensorType.UNDER_STACK, understack_prop(color), (objects[rep],))
            )
    if world.task is Task.SORTING:
        for b in world.bins:
            out.append(
                SensorSym(
                    SensorType.BIN_CLEAR, bin_clear_prop(b.side), (objects[f"bin_{b.side}"],)
                )
            )
    return sorted(out, key=lambda s: s.descriptor)


def sense(world: World, sensors: Iterable[SensorSym]) -> dict[str, bool]:
    """Evaluate sensor propositions against the scene.

    Memory propositions are system-owned and never sensed.
    """
    out: dict[str, bool] = {}
    stacked_on = world.stacked_on_ids()
    for sensor in sensors:
        if sensor.sensor_type is SensorType.OBSERVED_CUBE:
            color = sensor.prop.name.removeprefix("observed_cube_")
            out[sensor.prop.name] = bool(world.observed_cubes(color))
        elif sensor.sensor_type is SensorType.BIN_CLEAR:
            side = sensor.prop.name.removesuffix("_bin_clear")
            out[sensor.prop.name] = world.bin(side).lid_open
        elif sensor.sensor_type is SensorType.UNDER_STACK:
            color = sensor.prop.name.removeprefix("understack_cube_")
            out[sensor.prop.name] = any(
                c.id in stacked_on
                for c in world.cubes
                if c.color == color and world.on_table(c)
            )
        else:
            raise UnknownSensorType(str(sensor.sensor_type))
    return out


# ---------------------------------------------------------------------------
# Action effects


def apply_action(world: World, action: ActionSym) -> World:
    """Apply one actuation primitive; raises PreconditionViolated on a
    controller/scaffolding bug rather than silently ignoring it."""
    side = action.side
    gripper = world.gripper(side)
    if action.action_type is ActionType.PICKUP:
        if gripper.holding is not None:
            raise PreconditionViolated(f"pickup_{side} with full gripper")
        color = action.target_color
        stacked_on = world.stacked_on_ids()
        candidates = [c for c in world.observed_cubes(color) if c.id not in stacked_on]
        if not candidates:
            raise PreconditionViolated(
                f"pickup_{side}: no free {color} cube observed"
            )
        target = candidates[0]
        cubes = tuple(
            replace(c, on_top_of=None) if c.id == target.id else c for c in world.cubes
        )
        grippers = tuple(
            replace(g, holding=target.id) if g.side == side else g
            for g in world.grippers
        )
        return replace(world, cubes=cubes, grippers=grippers)

    if action.action_type is ActionType.PLACE:
        if gripper.holding is None:
            raise PreconditionViolated(f"place with empty {side} gripper")
        held = world.cube(gripper.holding)
        destination = action.objects[0]
        if destination.type is ObjectType.BIN:
            box = world.bin(destination.id.removeprefix("bin_"))
            if not box.lid_open:
                raise PreconditionViolated(f"place into closed {box.side} bin")
            bins = tuple(
                replace(b, contents=b.contents + (held.id,)) if b.side == box.side else b
                for b in world.bins
            )
            grippers = tuple(
                replace(g, holding=None) if g.side == side else g for g in world.grippers
            )
            cubes = tuple(
                replace(c, pose=box.pose, on_top_of=None) if c.id == held.id else c
                for c in world.cubes
            )
            return replace(world, cubes=cubes, bins=bins, grippers=grippers)
        # stack onto a destination cube
        color = destination.color
        stacked_on = world.stacked_on_ids()
        candidates = [c for c in world.observed_cubes(color) if c.id not in stacked_on]
        candidates = [c for c in candidates if c.id != held.id]
        if not candidates:
            raise PreconditionViolated(f"place onto {color} cube: destination not clear")
        dest = candidates[0]
        new_pose = (dest.pose[0], dest.pose[1], dest.pose[2] + 0.05)
        cubes = tuple(
            replace(c, pose=new_pose, on_top_of=dest.id) if c.id == held.id else c
            for c in world.cubes
        )
        grippers = tuple(
            replace(g, holding=None) if g.side == side else g for g in world.grippers
        )
        return replace(world, cubes=cubes, grippers=grippers)

    raise PreconditionViolated(f"unknown action type {action.action_type}")


# ---------------------------------------------------------------------------
# Environment policies


class EnvironmentPolicy:
    """Per-step world edits affecting only environment-controlled facts."""

    def step(self, world: World, step_index: int) -> World:
        raise NotImplementedError


def apply_edit(world: World, edit: Mapping) -> World:
    op = edit["op"]
    if op == "set_lid":
        bins = tuple(
            replace(b, lid_open=bool(edit["open"])) if b.side == edit["side"] else b
            for b in world.bins
        )
        return replace(world, bins=bins)
    if op == "add_cube":
        cube = Cube(
            edit["id"], edit["color"], tuple(edit.get("pose", (0.5, 0.0, 0.02))),
            edit.get("on_top_of"),
        )
        return replace(world, cubes=world.cubes + (cube,))
    if op == "remove_cube":
        target = edit["id"]
        if target in world.held_ids():
            raise ValueError("environment cannot remove a held cube")
        cubes = tuple(
            replace(c, on_top_of=None) if c.on_top_of == target else c
            for c in world.cubes
            if c.id != target
        )
        bins = tuple(
            replace(b, contents=tuple(cid for cid in b.contents if cid != target))
            for b in world.bins
        )
        return replace(world, cubes=cubes, bins=bins)
    if op == "move_cube":
        cubes = tuple(
            replace(c, pose=tuple(edit["pose"])) if c.id == edit["id"] else c
            for c in world.cubes
        )
        return replace(world, cubes=cubes)
    raise ValueError(f"unknown edit op {op!r}")


class ScriptedPolicy(EnvironmentPolicy):
    def __init__(self, script: Sequence[Sequence[Mapping]]):
        self.script = [list(step) for step in script]

    def step(self, world: World, step_index: int) -> World:
        if step_index >= len(self.script):
            return world
        for edit in self.script[step_index]:
            world = apply_edit(world, edit)
        return world


class RandomPolicy(EnvironmentPolicy):
    """Seeded random legal edits: lid toggles, cube spawns and removals."""

    def __init__(self, seed: int, p_lid: float = 0.2, p_spawn: float = 0.3, p_remove: float = 0.1):
        self.rng = random.Random(seed)
        self.p_lid = p_lid
        self.p_spawn = p_spawn
        self.p_remove = p_remove
        self.counter = 0

    def step(self, world: World, step_index: int) -> World:
        for b in world.bins:
            if self.rng.random() < self.p_lid:
                world = apply_edit(world, {"op": "set_lid", "side": b.side, "open": not b.lid_open})
        colors = sorted({c.color for c in world.cubes}) or ["blue"]
        if self.rng.random() < self.p_spawn:
            self.counter += 1
            world = apply_edit(
                world,
                {
                    "op": "add_cube",
                    "id": f"rand_{self.counter}",
                    "color": self.rng.choice(colors),
                    "pose": (0.5, round(self.rng.uniform(-0.03, 0.03), 3), 0.02),
                },
            )
        removable = [
            c.id
            for c in world.cubes
            if world.on_table(c) and c.id not in world.stacked_on_ids()
        ]
        if removable and self.rng.random() < self.p_remove:
            world = apply_edit(world, {"op": "remove_cube", "id": self.rng.choice(removable)})
        return world


class CooperativePolicy(EnvironmentPolicy):
    """Keeps every accepted assumption's literals satisfied: spawns missing
    cubes, opens bins, and unstacks blockers, so liveness can be exercised."""

    def __init__(self, literal_sets: Sequence[Sequence[tuple[str, bool]]]):
        self.literal_sets = [list(ls) for ls in literal_sets]
        self.counter = 0

    def step(self, world: World, step_index: int) -> World:
        for literals in self.literal_sets:
            for name, polarity in literals:
                world = self._satisfy(world, name, polarity)
        return world

    def _satisfy(self, world: World, name: str, polarity: bool) -> World:
        if name.startswith("observed_cube_"):
            color = name.removeprefix("observed_cube_")
            observed = world.observed_cubes(color)
            if polarity and not observed:
                self.counter += 1
                return apply_edit(
                    world,
                    {"op": "add_cube", "id": f"coop_{color}_{self.counter}",
                     "color": color, "pose": (0.5, 0.0, 0.02)},
                )
            if not polarity and observed:
                for cube in observed:
                    if cube.id in world.stacked_on_ids():
                        continue
                    world = apply_edit(world, {"op": "remove_cube", "id": cube.id})
                return world
            return world
        if name.endswith("_bin_clear"):
            side = name.removesuffix("_bin_clear")
            if world.bin(side).lid_open != polarity:
                return apply_edit(world, {"op": "set_lid", "side": side, "open": polarity})
            return world
        if name.startswith("understack_cube_"):
            color = name.removeprefix("understack_cube_")
            stacked_on = world.stacked_on_ids()
            blocked = [
                c for c in world.cubes
                if c.color == color and world.on_table(c) and c.id in stacked_on
            ]
            if not polarity and blocked:
                for under in blocked:
                    for top in world.cubes:
                        if top.on_top_of == under.id:
                            world = apply_edit(world, {"op": "remove_cube", "id": top.id})
                return world
            if polarity and not blocked:
                targets = [
                    c for c in world.cubes
                    if c.color == color and world.on_table(c) and c.id not in stacked_on
                ]
                if targets:
                    self.counter += 1
                    under = targets[0]
                    return apply_edit(
                        world,
                        {"op": "add_cube", "id": f"coop_top_{self.counter}",
                         "color": under.color, "pose": (under.pose[0], under.pose[1], under.pose[2] + 0.05),
                         "on_top_of": under.id},
                    )
            return world
        return world


class AdversarialPolicy(EnvironmentPolicy):
    """Replays a counterstrategy by mapping its emitted sensor valuations to
    minimal world edits; unmappable valuations raise (a test failure)."""

    def __init__(self, counterstrategy: CounterStrategy, sensors: Sequence[SensorSym]):
        self.cs = counterstrategy
        self.sensors = {s.prop.name: s for s in sensors}
        self.node_id = min(counterstrategy.initial)
        self.counter = 0

    def current_emit(self) -> dict[str, bool]:
        node = self.cs.nodes[self.node_id]
        return dict(zip(self.cs.sensor_names, node.emit))

    def advance(self, sys_val: Mapping[str, bool]) -> None:
        key = tuple(bool(sys_val[n]) for n in self.cs.system_names)
        nxt = self.cs.transitions.get((self.node_id, key))
        if nxt is None:
            raise UnmappableValuation("system reply not covered by counterstrategy")
        self.node_id = nxt

    def step(self, world: World, step_index: int) -> World:
        target = self.current_emit()
        # understack edits first so stacking helpers respect observed targets
        for name in sorted(target, key=lambda n: not n.startswith("understack")):
            world = self._edit_towards(world, name, target[name], target)
        achieved = sense(world, list(self.sensors.values()))
        for name, want in target.items():
            if achieved.get(name) != want:
                raise UnmappableValuation(f"cannot realize {name}={want} in the scene")
        return world

    def _edit_towards(self, world: World, name: str, want: bool, target) -> World:
        if name.startswith("observed_cube_"):
            color = name.removeprefix("observed_cube_")
            observed = world.observed_cubes(color)
            if want and not observed:
                self.counter += 1
                return apply_edit(
                    world,
                    {"op": "add_cube", "id": f"adv_{color}_{self.counter}",
                     "color": color, "pose": (0.5, 0.0, 0.02)},
                )
            if not want:
                for cube in observed:
                    tops = [c for c in world.cubes if c.on_top_of == cube.id]
                    for top in tops:
                        world = apply_edit(world, {"op": "remove_cube", "id": top.id})
                    world = apply_edit(world, {"op": "remove_cube", "id": cube.id})
            return world
        if name.endswith("_bin_clear"):
            side = name.removesuffix("_bin_clear")
            if world.bin(side).lid_open != want:
                return apply_edit(world, {"op": "set_lid", "side": side, "open": want})
            return world
        if name.startswith("understack_cube_"):
            color = name.removeprefix("understack_cube_")
            stacked_on = world.stacked_on_ids()
            blocked = [
                c for c in world.cubes
                if c.color == color and world.on_table(c) and c.id in stacked_on
            ]
            if want and not blocked:
                bases = [
                    c for c in world.cubes
                    if c.color == color and world.on_table(c) and c.id not in stacked_on
                ]
                if not bases:
                    raise UnmappableValuation(f"no {color} cube available to block")
                base = bases[0]
                # the blocking cube's own color must not break an observed=False target
                top_color = base.color
                for candidate in ("blue", "red", "green"):
                    if target.get(f"observed_cube_{candidate}", True):
                        top_color = candidate
                        break
                self.counter += 1
                return apply_edit(
                    world,
                    {"op": "add_cube", "id": f"adv_top_{self.counter}", "color": top_color,
                     "pose": (base.pose[0], base.pose[1], base.pose[2] + 0.05),
                     "on_top_of": base.id},
                )
            if not want and blocked:
                for under in blocked:
                    for top in world.cubes:
                        if top.on_top_of == under.id:
                            world = apply_edit(world, {"op": "remove_cube", "id": top.id})
            return world
        return world


# ---------------------------------------------------------------------------
# Episodes


class EpisodeStatus(enum.Enum):
    RUNNING = "running"
    GOAL_CYCLE_COMPLETE = "goal_cycle_complete"
    ENV_VIOLATION = "env_violation"
    HALTED = "halted"


@dataclass
class ExecutionStep:
    env: dict[str, bool]
    sys: dict[str, bool]
    world: World
    goals_hit: tuple[int, ...]


@dataclass
class ExecutionTrace:
    steps: list[ExecutionStep] = field(default_factory=list)
    status: EpisodeStatus = EpisodeStatus.RUNNING
    violated_assumptions: tuple[str, ...] = ()


@dataclass
class Binding:
    """Links spec propositions to scene symbols for execution."""

    sensors: tuple[SensorSym, ...]
    actions: dict[str, ActionSym]


class EpisodeRunner:
    """Stepwise episode driver: policy edit, sense, strategy move, actions.

    Tracks goal-cycle completion, environment safety violations (recorded,
    not raised), and liveness-assumption starvation: if no still-needed goal
    progresses for a full window while some accepted assumption's body stays
    false throughout, the episode halts blaming that assumption.
    """

    def __init__(
        self,
        spec,
        strategy: Strategy,
        world: World,
        policy: EnvironmentPolicy,
        binding: Binding,
        cycles: int = 1,
    ):
        self.spec = spec
        self.strategy = strategy
        self.world = world
        self.policy = policy
        self.binding = binding
        self.cycles = cycles
        self.trace = ExecutionTrace()
        self.node_id = min(strategy.initial)
        self.goal_counts = [0] * strategy.n_goals
        self.assumptions = [(str(f), f) for f in getattr(spec, "env_liveness", ())]
        self.window = max(2 * len(strategy.nodes), 8) * (len(self.assumptions) + 1)
        self.stagnant = 0
        self.step_index = 0

    @property
    def status(self) -> EpisodeStatus:
        return self.trace.status

    def step(self, edits: Sequence[Mapping] | None = None) -> EpisodeStatus:
        """Advance one step; explicit edits override the policy for this step."""
        if self.trace.status is not EpisodeStatus.RUNNING:
            return self.trace.status
        if edits is not None:
            for edit in edits:
                self.world = apply_edit(self.world, edit)
        else:
            self.world = self.policy.step(self.world, self.step_index)
        self.step_index += 1
        sensed = sense(self.world, self.binding.sensors)
        env_key = tuple(bool(sensed[n]) for n in self.strategy.sensor_names)
        target = self.strategy.transitions.get((self.node_id, env_key))
        if target is None:
            self.trace.status = EpisodeStatus.ENV_VIOLATION
            return self.trace.status
        self.node_id = target
        state = dict(zip(self.strategy.prop_names, self.strategy.nodes[self.node_id].state))
        sys_val = {n: state[n] for n in self.strategy.system_names}
        for name in sorted(self.binding.actions):
            if sys_val.get(name):
                self.world = apply_action(self.world, self.binding.actions[name])
        goals = self.strategy.goals_hit[self.node_id]
        progressed = False
        for j in goals:
            if self.goal_counts[j] < self.cycles:
                progressed = True
            self.goal_counts[j] += 1
        self.trace.steps.append(ExecutionStep(sensed, sys_val, self.world, goals))
        if isinstance(self.policy, AdversarialPolicy) and edits is None:
            self.policy.advance(sys_val)
        if all(count >= self.cycles for count in self.goal_counts):
            self.trace.status = EpisodeStatus.GOAL_CYCLE_COMPLETE
            return self.trace.status
        self.stagnant = 0 if progressed else self.stagnant + 1
        if self.stagnant >= self.window and self.assumptions:
            from .gr1spec import liveness_body
            from .ltl import eval_prop

            recent = self.trace.steps[-self.window :]
            violated = []
            for text, formula in self.assumptions:
                body = liveness_body(formula)
                if all(not eval_prop(body, {**s.env, **s.sys}) for s in recent):
                    violated.append(text)
            if violated:
                self.trace.status = EpisodeStatus.HALTED
                self.trace.violated_assumptions = tuple(violated)
        return self.trace.status


def run_episode(
    spec,
    strategy: Strategy,
    world: World,
    policy: EnvironmentPolicy,
    binding: Binding,
    max_steps: int,
    cycles: int = 1,
) -> ExecutionTrace:
    """Drive an EpisodeRunner to completion or max_steps."""
    runner = EpisodeRunner(spec, strategy, world, policy, binding, cycles=cycles)
    for _ in range(max_steps):
        if runner.step() is not EpisodeStatus.RUNNING:
            break
    return runner.trace
