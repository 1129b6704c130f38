"""Environment assumption mining: the sensed initial-state conjunction, and
candidate liveness assumptions of the form G F (conjunction of sensor
literals) validated by resynthesis.

Candidates are ranked by (literal count, how often the literal set is false
across the counterstrategy's recurrent nodes, lexicographic literal names);
an accepted candidate makes the augmented specification realizable and keeps
the environment side satisfiable on its own.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .game import Arena, CounterStrategy, Verdict, check_realizability
from .gr1spec import GR1Spec, liveness_body
from .ltl import (
    Always,
    Eventually,
    Formula,
    Not,
    Prop,
    PropKind,
    Proposition,
    conj,
    eval_prop,
    format_formula,
)
from .symbols import SensorSym
from .world import World, sense


class NotUnrealizable(Exception):
    pass


class DuplicateAssumption(Exception):
    pass


def initial_state_assumption(world: World, sensors: Sequence[SensorSym]) -> Formula:
    """Conjunction over all sensor propositions with their sensed polarities."""
    values = sense(world, sensors)
    literals = []
    for sensor in sorted(sensors, key=lambda s: s.prop.name):
        atom = Prop(sensor.prop)
        literals.append(atom if values[sensor.prop.name] else Not(atom))
    return conj(literals)


Literal = tuple[str, bool]


def _literal_sort_key(literal: Literal) -> tuple[str, int]:
    name, polarity = literal
    return (name, 0 if polarity else 1)


def candidate_formula(literals: Iterable[Literal], props: Mapping[str, Proposition]) -> Formula:
    parts = []
    for name, polarity in sorted(literals, key=_literal_sort_key):
        atom = Prop(props[name])
        parts.append(atom if polarity else Not(atom))
    return Always(Eventually(conj(parts)))


@dataclass(frozen=True)
class AssumptionCandidate:
    literals: tuple[Literal, ...]
    formula: Formula
    provenance: tuple[int, ...]  # counterstrategy node ids that motivated it
    rank_key: tuple

    def literal_set(self) -> frozenset[Literal]:
        return frozenset(self.literals)


class RejectReason(enum.Enum):
    STILL_UNREALIZABLE = "still_unrealizable"
    ENV_UNSATISFIABLE = "env_unsatisfiable"


@dataclass
class MiningReport:
    candidates: list[AssumptionCandidate]
    rejected: list[tuple[AssumptionCandidate, RejectReason]]


def _env_side_satisfiable(spec: GR1Spec, cap: int) -> bool:
    """A lasso of environment moves satisfying env_init, env_safety, and all
    env_liveness must exist (system values chosen cooperatively)."""
    arena = Arena(spec, cap=cap)
    if arena.init_mask == 0:
        return False
    live_masks = []
    for f in spec.env_liveness:
        body = liveness_body(f)
        mask = 0
        for i, state in enumerate(arena.states):
            if eval_prop(body, arena.valuation(state)):
                mask |= 1 << i
        live_masks.append(mask)

    succ: dict[int, list[int]] = {}
    frontier = [i for i in range(arena.n_states) if (arena.init_mask >> i) & 1]
    reachable = set(frontier)
    while frontier:
        idx = frontier.pop()
        children = sorted({nxt for _, replies in arena.succs[idx] for _, nxt in replies})
        succ[idx] = children
        for child in children:
            if child not in reachable:
                reachable.add(child)
                frontier.append(child)

    from .game import _scc_partition

    for scc in _scc_partition(succ):
        only = next(iter(scc))
        if len(scc) > 1 or only in succ.get(only, []):
            if all(any((mask >> s) & 1 for s in scc) for mask in live_masks):
                return True
    return False


def mine_candidates(
    spec: GR1Spec,
    cs: CounterStrategy,
    max_literals: int = 2,
    *,
    sizes: Sequence[int] | None = None,
    excluded: Iterable[frozenset[Literal]] = (),
    cap: int = 16,
) -> MiningReport:
    """Enumerate and validate sensor-literal conjunctions against the
    counterstrategy's recurrent behavior.

    A candidate is accepted iff appending its G F formula to env_liveness
    makes the specification realizable and leaves the environment assumptions
    satisfiable on their own.  Literal sets that are strict supersets of an
    accepted set are pruned without validation.
    """
    if max_literals < 1:
        raise ValueError("max_literals must be >= 1")
    if check_realizability(spec, cap=cap).verdict is Verdict.REALIZABLE:
        raise NotUnrealizable("specification is already realizable")

    props = {p.name: p for p in spec.propositions}
    sensor_names = sorted(p.name for p in spec.sensors)
    recurrent = cs.recurrent_node_ids()
    prop_index = {name: i for i, name in enumerate(cs.prop_names)}

    def literal_false_nodes(literals: Sequence[Literal]) -> tuple[int, ...]:
        out = []
        for node_id in recurrent:
            state = cs.nodes[node_id].state
            holds = all(
                state[prop_index[name]] == polarity for name, polarity in literals
            )
            if not holds:
                out.append(node_id)
        return tuple(out)

    existing = {
        frozenset(_liveness_literclass(f))
        for f in spec.env_liveness
        if _liveness_literclass(f) is not None
    }
    excluded_sets = set(excluded) | existing

    size_list = list(sizes) if sizes is not None else list(range(1, max_literals + 1))
    ranked: list[AssumptionCandidate] = []
    for size in size_list:
        for names in itertools.combinations(sensor_names, size):
            for polarities in itertools.product((True, False), repeat=size):
                literals = tuple(
                    sorted(zip(names, polarities), key=_literal_sort_key)
                )
                # supersets of an excluded set ask a strictly stronger version
                # of a question already declined or already present
                if any(ex <= frozenset(literals) for ex in excluded_sets):
                    continue
                provenance = literal_false_nodes(literals)
                rank_key = (
                    size,
                    -len(provenance),
                    tuple(_literal_sort_key(l) for l in literals),
                )
                ranked.append(
                    AssumptionCandidate(
                        literals=literals,
                        formula=candidate_formula(literals, props),
                        provenance=provenance,
                        rank_key=rank_key,
                    )
                )
    ranked.sort(key=lambda c: c.rank_key)

    accepted: list[AssumptionCandidate] = []
    rejected: list[tuple[AssumptionCandidate, RejectReason]] = []
    accepted_sets: list[frozenset[Literal]] = []
    for candidate in ranked:
        literal_set = candidate.literal_set()
        if any(acc < literal_set for acc in accepted_sets):
            continue  # strict superset of an accepted set: pruned, not rejected
        augmented = spec.with_env_liveness(candidate.formula)
        if not _env_side_satisfiable(augmented, cap):
            rejected.append((candidate, RejectReason.ENV_UNSATISFIABLE))
            continue
        if check_realizability(augmented, cap=cap).verdict is not Verdict.REALIZABLE:
            rejected.append((candidate, RejectReason.STILL_UNREALIZABLE))
            continue
        accepted.append(candidate)
        accepted_sets.append(literal_set)
    return MiningReport(candidates=accepted, rejected=rejected)


def _liveness_literclass(f: Formula) -> frozenset[Literal] | None:
    """Literal set of a mined-shape assumption, or None for other shapes."""
    try:
        body = liveness_body(f)
    except ValueError:
        return None
    literals: list[Literal] = []
    stack = [body]
    from .ltl import And, Lit

    while stack:
        node = stack.pop()
        if isinstance(node, And):
            stack.extend(node.children)
        elif isinstance(node, Prop):
            literals.append((node.prop.name, True))
        elif isinstance(node, Not) and isinstance(node.operand, Prop):
            literals.append((node.operand.prop.name, False))
        elif isinstance(node, Lit):
            continue
        else:
            return None
    return frozenset(literals)


def apply_candidate(spec: GR1Spec, candidate: AssumptionCandidate) -> GR1Spec:
    """New spec with the candidate's formula appended to env_liveness."""
    for f in spec.env_liveness:
        if _liveness_literclass(f) == candidate.literal_set():
            raise DuplicateAssumption(format_formula(candidate.formula))
    return spec.with_env_liveness(candidate.formula)


def inject_initial_state(spec: GR1Spec, world: World, sensors: Sequence[SensorSym]) -> GR1Spec:
    """Set env_init to the sensed conjunction, declaring any new sensor props."""
    assumption = initial_state_assumption(world, sensors)
    known = {p.name for p in spec.propositions}
    extra = tuple(
        s.prop for s in sorted(sensors, key=lambda s: s.prop.name) if s.prop.name not in known
    )
    return replace(
        spec,
        propositions=spec.propositions + extra,
        env_init=assumption,
    )
