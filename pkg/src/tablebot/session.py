"""The interaction state machine: instruction, grounding, synthesis,
initial-state injection, assumption mining, prompting, and execution, with an
append-only transcript that replays deterministically.

Timestamps are logical event counters so transcripts are byte-identical
across runs with the same seed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .game import (
    NoInitialState,
    Strategy,
    Verdict,
    check_realizability,
)
from .gr1spec import GR1Spec, spec_to_dict
from .grammar import Grammar, OutOfVocabulary
from .grounding import (
    ConflictingScopes,
    GroundConfig,
    GroundingSet,
    ModelWeights,
    NoGrounding,
    ground_instruction,
    grounding_set_to_spec,
)
from .ltl import Formula, format_formula
from .mining import (
    AssumptionCandidate,
    apply_candidate,
    inject_initial_state,
    mine_candidates,
)
from .prompts import Prompt, PromptTemplates, load_templates, render_prompt
from .symbols import (
    ActionSym,
    ActionType,
    ObjectType,
    Task,
    pickup_prop,
    place_bin_prop,
    place_on_prop,
)
from .world import (
    Binding,
    CooperativePolicy,
    EnvironmentPolicy,
    EpisodeRunner,
    EpisodeStatus,
    World,
    world_objects,
    world_sensor_symbols,
)


class WrongState(Exception):
    pass


class SessionState(enum.Enum):
    AWAIT_INSTRUCTION = "await_instruction"
    GROUNDED = "grounded"
    SYNTHESIZING = "synthesizing"
    INIT_STATE_INJECTED = "init_state_injected"
    AWAIT_ANSWER = "await_answer"
    EXECUTING = "executing"
    DONE = "done"
    UNSATISFIABLE = "unsatisfiable"
    UNREPAIRABLE = "unrepairable"


@dataclass
class SessionConfig:
    seed: int = 0
    beam: int = 4
    max_literals: int = 2
    escalate: bool = True
    max_rounds: int = 5
    cycles: int = 1
    max_steps: int = 60
    prop_cap: int = 16


class Session:
    """One user's repair interaction; strictly sequential."""

    def __init__(
        self,
        world: World,
        model: ModelWeights,
        grammar: Grammar,
        config: SessionConfig | None = None,
        templates: PromptTemplates | None = None,
        policy: EnvironmentPolicy | None = None,
    ):
        self.world = world
        self.task = world.task
        self.model = model
        self.grammar = grammar
        self.config = config or SessionConfig()
        self.templates = templates or load_templates()
        self.policy = policy
        self.state = SessionState.AWAIT_INSTRUCTION
        self.events: list[dict] = []
        self.spec_versions: list[GR1Spec] = []
        self.grounding: GroundingSet | None = None
        self.binding: Binding | None = None
        self.strategy: Strategy | None = None
        self.candidates: list[AssumptionCandidate] = []
        self.prompt: Prompt | None = None
        self.rejected_sets: set[frozenset] = set()
        self.rounds = 0
        self.runner: EpisodeRunner | None = None
        self.done_status: EpisodeStatus | None = None
        self.violated: tuple[str, ...] = ()
        self._clock = 0

    # ------------------------------------------------------------------
    # transcript

    def _record(self, kind: str, **payload) -> None:
        self.events.append({"t": self._clock, "kind": kind, **payload})
        self._clock += 1

    def _enter(self, state: SessionState) -> None:
        self.state = state
        self._record("state", state=state.value)

    @property
    def spec(self) -> GR1Spec:
        return self.spec_versions[-1]

    def _push_spec(self, spec: GR1Spec, change: str, detail: str = "") -> None:
        self.spec_versions.append(spec)
        self._record(
            "spec",
            version=len(self.spec_versions) - 1,
            change=change,
            detail=detail,
            dump=spec_to_dict(spec),
        )

    def _synthesize(self):
        self._enter(SessionState.SYNTHESIZING)
        result = check_realizability(self.spec, cap=self.config.prop_cap)
        self._record(
            "verdict",
            version=len(self.spec_versions) - 1,
            verdict=result.verdict.value,
        )
        return result

    # ------------------------------------------------------------------
    # instruction handling

    def handle_instruction(self, text: str) -> SessionState:
        if self.state is not SessionState.AWAIT_INSTRUCTION:
            raise WrongState(f"instruction in state {self.state}")
        self._record("instruction", text=text)
        try:
            gs = ground_instruction(
                text,
                self.world,
                self.task,
                self.model,
                self.grammar,
                GroundConfig(beam=self.config.beam),
            )
        except (NoGrounding, OutOfVocabulary) as err:
            self._record("error", code=type(err).__name__, message=str(err))
            self._enter(SessionState.AWAIT_INSTRUCTION)
            return self.state
        self.grounding = gs
        for index, sentence in enumerate(gs.sentences):
            self._record("parse", sentence=index, tree=sentence.tree.bracketed())
        self._record("grounding", scopes=[s.descriptor for s in gs.scopes])
        self._enter(SessionState.GROUNDED)
        try:
            spec = grounding_set_to_spec(gs, self.task)
        except ConflictingScopes as err:
            self._record("error", code="ConflictingScopes", message=str(err))
            self._enter(SessionState.UNSATISFIABLE)
            return self.state
        self._push_spec(spec, change="grounded")
        return self._after_instruction_synthesis()

    def start_from_spec(self, spec: GR1Spec) -> SessionState:
        """Drive the loop from a prepared specification dump (no grounding)."""
        if self.state is not SessionState.AWAIT_INSTRUCTION:
            raise WrongState(f"spec input in state {self.state}")
        self._record("instruction", text="<spec dump>")
        self._push_spec(spec, change="loaded")
        return self._after_instruction_synthesis()

    def _after_instruction_synthesis(self) -> SessionState:
        result = self._synthesize()
        if result.verdict is Verdict.REALIZABLE:
            return self._begin_execution(result.strategy)
        if result.verdict is Verdict.UNSATISFIABLE:
            self._record("report", classification="unsatisfiable")
            self._enter(SessionState.UNSATISFIABLE)
            return self.state
        # unrealizable: supplement with the sensed initial state, retry
        sensors = world_sensor_symbols(self.world)
        injected = inject_initial_state(self.spec, self.world, sensors)
        self._push_spec(injected, change="init_state")
        self._enter(SessionState.INIT_STATE_INJECTED)
        try:
            result = self._synthesize()
        except NoInitialState:
            self._record("report", classification="unsatisfiable")
            self._enter(SessionState.UNSATISFIABLE)
            return self.state
        if result.verdict is Verdict.REALIZABLE:
            return self._begin_execution(result.strategy)
        if result.verdict is Verdict.UNSATISFIABLE:
            self._record("report", classification="unsatisfiable")
            self._enter(SessionState.UNSATISFIABLE)
            return self.state
        return self._mine_and_prompt(result.counterstrategy)

    # ------------------------------------------------------------------
    # mining and prompting

    def _mine_and_prompt(self, counterstrategy) -> SessionState:
        self.rounds += 1
        if self.rounds > self.config.max_rounds:
            self._record("report", reason="max mining rounds exhausted")
            self._enter(SessionState.UNREPAIRABLE)
            return self.state
        report = mine_candidates(
            self.spec,
            counterstrategy,
            self.config.max_literals,
            excluded=self.rejected_sets,
            cap=self.config.prop_cap,
        )
        sizes_tried = list(range(1, self.config.max_literals + 1))
        if not report.candidates and self.config.escalate:
            n_sensors = len(self.spec.sensors)
            for size in range(self.config.max_literals + 1, n_sensors + 1):
                sizes_tried.append(size)
                report = mine_candidates(
                    self.spec,
                    counterstrategy,
                    size,
                    sizes=[size],
                    excluded=self.rejected_sets,
                    cap=self.config.prop_cap,
                )
                if report.candidates:
                    break
        self._record(
            "mining",
            round=self.rounds,
            sizes=sizes_tried,
            candidates=[list(c.literals) for c in report.candidates],
            rejected=[
                {"literals": list(c.literals), "reason": reason.value}
                for c, reason in report.rejected
            ],
        )
        self.candidates = list(report.candidates)
        return self._next_prompt()

    def _next_prompt(self) -> SessionState:
        if not self.candidates:
            self._record("report", reason="all prompts denied or none minable")
            self._enter(SessionState.UNREPAIRABLE)
            return self.state
        candidate = self.candidates[0]
        if self.grounding is not None:
            self.prompt = render_prompt(candidate, self.grounding, self.templates)
        else:
            # spec-dump sessions have no uttered phrases to reuse
            from .prompts import _canonical_phrase

            fragments = []
            for name, polarity in candidate.literals:
                fragments.append((name, _canonical_phrase(name)))
            text = " and ".join(f"{p}" for _, p in fragments)
            self.prompt = Prompt(text=text, candidate=candidate, references=[])
        self._record(
            "prompt",
            text=self.prompt.text,
            literals=list(candidate.literals),
            formula=format_formula(candidate.formula),
        )
        self._enter(SessionState.AWAIT_ANSWER)
        return self.state

    def handle_answer(self, accept: bool) -> SessionState:
        if self.state is not SessionState.AWAIT_ANSWER:
            raise WrongState(f"answer in state {self.state}")
        self._record("answer", accept=bool(accept))
        candidate = self.candidates.pop(0)
        if not accept:
            self.rejected_sets.add(candidate.literal_set())
            return self._next_prompt()
        augmented = apply_candidate(self.spec, candidate)
        self._push_spec(
            augmented,
            change="assumption",
            detail=format_formula(candidate.formula),
        )
        result = self._synthesize()
        if result.verdict is Verdict.REALIZABLE:
            return self._begin_execution(result.strategy)
        if result.verdict is Verdict.UNSATISFIABLE:
            self._record("report", classification="unsatisfiable")
            self._enter(SessionState.UNSATISFIABLE)
            return self.state
        return self._mine_and_prompt(result.counterstrategy)

    # ------------------------------------------------------------------
    # execution

    def _begin_execution(self, strategy: Strategy) -> SessionState:
        self.strategy = strategy
        self.binding = make_binding(self.spec, self.world, self.grounding)
        if self.policy is None:
            self.policy = default_policy(self.spec)
        self.runner = EpisodeRunner(
            self.spec,
            strategy,
            self.world,
            self.policy,
            self.binding,
            cycles=self.config.cycles,
        )
        self._enter(SessionState.EXECUTING)
        return self.state

    def step_execution(self, policy_event: Sequence[Mapping] | None = None) -> SessionState:
        if self.state is not SessionState.EXECUTING:
            raise WrongState(f"execution step in state {self.state}")
        status = self.runner.step(policy_event)
        step = self.runner.trace.steps[-1] if self.runner.trace.steps else None
        if step is not None:
            self._record(
                "execution_step",
                index=len(self.runner.trace.steps) - 1,
                env=step.env,
                sys=step.sys,
                goals=list(step.goals_hit),
            )
        if status is EpisodeStatus.RUNNING:
            if self.runner.step_index >= self.config.max_steps:
                self.done_status = EpisodeStatus.RUNNING
                self._record("report", status="max_steps")
                self._enter(SessionState.DONE)
            return self.state
        self.done_status = status
        self.violated = self.runner.trace.violated_assumptions
        self._record(
            "report",
            status=status.value,
            violated=list(self.violated),
        )
        self._enter(SessionState.DONE)
        return self.state

    def run_to_completion(self) -> SessionState:
        while self.state is SessionState.EXECUTING:
            self.step_execution()
        return self.state

    def prompt_count(self) -> int:
        return sum(1 for e in self.events if e["kind"] == "prompt")


# ----------------------------------------------------------------------
# bindings


def make_binding(spec: GR1Spec, world: World, gs: GroundingSet | None) -> Binding:
    """Bind spec propositions to scene symbols; canonical names are invertible
    so dump-loaded specs rebind without a grounding set."""
    sensors = [
        s for s in world_sensor_symbols(world) if s.prop.name in {p.name for p in spec.sensors}
    ]
    missing = {p.name for p in spec.sensors} - {s.prop.name for s in sensors}
    if missing:
        raise KeyError(f"sensors not instantiable in this world: {sorted(missing)}")

    actions: dict[str, ActionSym] = {}
    if gs is not None:
        for scope in gs.scopes:
            actions[scope.action.prop.name] = scope.action
    objects = world_objects(world)
    cubes = [o for o in objects if o.type is ObjectType.CUBE]
    spec_safety_text = " ".join(format_formula(f) for f in spec.sys_safety)
    for prop in spec.propositions:
        name = prop.name
        if name in actions or prop.kind.value != "action":
            continue
        if name.startswith("pickup_"):
            side = name.removeprefix("pickup_")
            color = _pickup_color_from_safety(spec, name)
            target = next(
                (c for c in cubes if color and c.color == color), cubes[0] if cubes else None
            )
            if target is None:
                raise KeyError(f"no cube available to bind {name}")
            actions[name] = ActionSym(ActionType.PICKUP, pickup_prop(side), side, (target,))
        elif name.startswith("place_on_"):
            color = name.removeprefix("place_on_")
            dest = next((c for c in cubes if c.color == color), None)
            if dest is None:
                raise KeyError(f"no {color} cube to bind {name}")
            actions[name] = ActionSym(ActionType.PLACE, place_on_prop(color), "right", (dest,))
        elif name.startswith("place_") and name.endswith("_bin"):
            side = name.removeprefix("place_").removesuffix("_bin")
            dest = next((o for o in objects if o.id == f"bin_{side}"), None)
            if dest is None:
                raise KeyError(f"no bin to bind {name}")
            actions[name] = ActionSym(ActionType.PLACE, place_bin_prop(side), side, (dest,))
        else:
            raise KeyError(f"cannot bind action proposition {name}")
    _ = spec_safety_text
    return Binding(sensors=tuple(sensors), actions=actions)


def _pickup_color_from_safety(spec: GR1Spec, action_name: str) -> str | None:
    """Recover a pickup's target color from the scope safety guarding it."""
    for f in spec.sys_safety:
        text = format_formula(f)
        if f"X ({action_name})" in text and "observed_cube_" in text:
            for color in ("blue", "red", "green"):
                if f"observed_cube_{color}" in text:
                    return color
    return None


def default_policy(spec: GR1Spec) -> CooperativePolicy:
    """Keep every accepted assumption satisfiable so liveness can be exercised."""
    from .mining import _liveness_literclass

    literal_sets = []
    for f in spec.env_liveness:
        literals = _liveness_literclass(f)
        if literals:
            literal_sets.append(sorted(literals))
    return CooperativePolicy(literal_sets)


# ----------------------------------------------------------------------
# transcript replay


TRANSCRIPT_VERSION = 1


def transcript_to_dict(session: Session) -> dict:
    return {
        "version": TRANSCRIPT_VERSION,
        "config": {
            "seed": session.config.seed,
            "beam": session.config.beam,
            "max_literals": session.config.max_literals,
            "max_rounds": session.config.max_rounds,
            "cycles": session.config.cycles,
            "max_steps": session.config.max_steps,
        },
        "final_state": session.state.value,
        "events": session.events,
    }


def replay_transcript(
    data: dict,
    world: World,
    model: ModelWeights,
    grammar: Grammar,
    policy: EnvironmentPolicy | None = None,
) -> Session:
    """Re-drive a session from a transcript's instruction and answers; raises
    if any spec version or verdict diverges from the recording."""
    if data.get("version") != TRANSCRIPT_VERSION:
        raise ValueError(f"unsupported transcript version {data.get('version')}")
    cfg = data.get("config", {})
    config = SessionConfig(
        seed=cfg.get("seed", 0),
        beam=cfg.get("beam", 4),
        max_literals=cfg.get("max_literals", 2),
        max_rounds=cfg.get("max_rounds", 5),
        cycles=cfg.get("cycles", 1),
        max_steps=cfg.get("max_steps", 60),
    )
    session = Session(world, model, grammar, config=config, policy=policy)
    recorded = data["events"]
    instructions = [e for e in recorded if e["kind"] == "instruction"]
    answers = [e["accept"] for e in recorded if e["kind"] == "answer"]
    if not instructions:
        raise ValueError("transcript has no instruction")
    session.handle_instruction(instructions[0]["text"])
    for accept in answers:
        if session.state is not SessionState.AWAIT_ANSWER:
            break
        session.handle_answer(accept)
    if session.state is SessionState.EXECUTING:
        session.run_to_completion()

    def key_events(events):
        out = []
        for e in events:
            if e["kind"] == "spec":
                out.append(("spec", e["version"], e["change"], str(e["dump"])))
            elif e["kind"] == "verdict":
                out.append(("verdict", e["version"], e["verdict"]))
        return out

    if key_events(recorded) != key_events(session.events):
        raise AssertionError("replay diverged from the recorded transcript")
    return session
