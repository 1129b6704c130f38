"""Explicit-state GR(1) games: arena construction, realizability, strategy and
counterstrategy extraction, unsatisfiable/unrealizable classification, and
game-level simulation.

States are full valuations over the sorted proposition list; sets of states
are int bitmasks.  The environment moves first (next sensor values), then the
system replies (next action/memory values); both moves are filtered by the
corresponding safety conjunction evaluated over the (current, next) pair.

Realizability uses the standard triple-nested GR(1) fixed point.  The
counterstrategy comes from a rank decomposition of the complement region:
repeatedly peel off generalized-Büchi environment cores over states violating
one system goal (escaping to already-ranked states allowed), plus environment
attractors toward ranked states.  Every choice is ordered (lexicographic by
proposition name, False < True) so identical inputs produce identical automata.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .gr1spec import GR1Spec, liveness_body, safety_body, validate_spec
from .ltl import (
    And,
    Formula,
    Implies,
    Lit,
    Next,
    Not,
    Or,
    Prop,
    eval_prop,
    format_formula,
)


class TooManyPropositions(Exception):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} propositions exceeds cap {cap}")
        self.count = count
        self.cap = cap


class InvalidSpec(Exception):
    def __init__(self, violations):
        super().__init__(f"spec fails shape validation: {violations}")
        self.violations = violations


class NoInitialState(Exception):
    pass


class NotApplicable(Exception):
    pass


class IllegalEnvMove(Exception):
    def __init__(self, step: int, move: Mapping[str, bool]):
        super().__init__(f"environment move at step {step} violates env safety: {move}")
        self.step = step
        self.move = dict(move)


def _compile_step(body: Formula, positions: dict[str, int]):
    """Compile a safety body into a closure over (cur, nxt) state tuples."""
    if isinstance(body, Lit):
        value = body.value
        return lambda cur, nxt: value
    if isinstance(body, Prop):
        pos = positions[body.prop.name]
        return lambda cur, nxt: cur[pos]
    if isinstance(body, Next):
        if not isinstance(body.operand, Prop):
            raise TypeError("X must wrap an atom inside safety bodies")
        pos = positions[body.operand.prop.name]
        return lambda cur, nxt: nxt[pos]
    if isinstance(body, Not):
        inner = _compile_step(body.operand, positions)
        return lambda cur, nxt: not inner(cur, nxt)
    if isinstance(body, And):
        parts = [_compile_step(c, positions) for c in body.children]
        return lambda cur, nxt: all(p(cur, nxt) for p in parts)
    if isinstance(body, Or):
        parts = [_compile_step(c, positions) for c in body.children]
        return lambda cur, nxt: any(p(cur, nxt) for p in parts)
    if isinstance(body, Implies):
        lhs = _compile_step(body.lhs, positions)
        rhs = _compile_step(body.rhs, positions)
        return lambda cur, nxt: (not lhs(cur, nxt)) or rhs(cur, nxt)
    raise TypeError(f"illegal node in safety body: {body!r}")


def _mentions_next(f: Formula) -> bool:
    if isinstance(f, Next):
        return True
    if isinstance(f, Not):
        return _mentions_next(f.operand)
    if isinstance(f, (And, Or)):
        return any(_mentions_next(c) for c in f.children)
    if isinstance(f, Implies):
        return _mentions_next(f.lhs) or _mentions_next(f.rhs)
    return False


class Arena:
    """Move tables over all full valuations, with deterministic ordering."""

    def __init__(self, spec: GR1Spec, cap: int = 16):
        violations = validate_spec(spec)
        if violations:
            raise InvalidSpec(violations)
        if len(spec.propositions) > cap:
            raise TooManyPropositions(len(spec.propositions), cap)

        self.spec = spec
        self.prop_names = tuple(p.name for p in spec.propositions)
        self.sensor_names = tuple(p.name for p in spec.sensors)
        self.system_names = tuple(p.name for p in spec.system_props)
        self.positions = {name: i for i, name in enumerate(self.prop_names)}
        self._sensor_pos = [self.positions[n] for n in self.sensor_names]
        self._system_pos = [self.positions[n] for n in self.system_names]

        self.states: list[tuple[bool, ...]] = list(
            itertools.product((False, True), repeat=len(self.prop_names))
        )
        self.index = {s: i for i, s in enumerate(self.states)}
        self.n_states = len(self.states)
        self.all_mask = (1 << self.n_states) - 1

        env_bodies = [_compile_step(safety_body(f), self.positions) for f in spec.env_safety]
        sys_bodies = [_compile_step(safety_body(f), self.positions) for f in spec.sys_safety]

        self.env_tuples = list(itertools.product((False, True), repeat=len(self.sensor_names)))
        self.sys_tuples = list(itertools.product((False, True), repeat=len(self.system_names)))

        # succs[s] = [(env_tuple, [(sys_tuple, succ_idx), ...]), ...] legal moves only
        self.succs: list[list[tuple[tuple[bool, ...], list[tuple[tuple[bool, ...], int]]]]] = []
        for state in self.states:
            moves = []
            for env in self.env_tuples:
                nxt_partial = list(state)
                for pos, value in zip(self._sensor_pos, env):
                    nxt_partial[pos] = value
                probe = tuple(nxt_partial)
                if not all(body(state, probe) for body in env_bodies):
                    continue
                replies = []
                for sys in self.sys_tuples:
                    for pos, value in zip(self._system_pos, sys):
                        nxt_partial[pos] = value
                    succ = tuple(nxt_partial)
                    if all(body(state, succ) for body in sys_bodies):
                        replies.append((sys, self.index[succ]))
                moves.append((env, replies))
            self.succs.append(moves)

        # X-free safety bodies restrict the listed state set (spec invariant)
        invariant_bodies = [
            _compile_step(safety_body(f), self.positions)
            for f in (*spec.env_safety, *spec.sys_safety)
            if not _mentions_next(safety_body(f))
        ]
        self.invariant_mask = 0
        for i, state in enumerate(self.states):
            if all(body(state, state) for body in invariant_bodies):
                self.invariant_mask |= 1 << i

        self.init_mask = 0
        for i, state in enumerate(self.states):
            if not (self.invariant_mask >> i) & 1:
                continue
            val = self.valuation(state)
            if spec.env_init is not None and not eval_prop(spec.env_init, val):
                continue
            if spec.sys_init is not None and not eval_prop(spec.sys_init, val):
                continue
            self.init_mask |= 1 << i

        def goal_masks(formulas) -> tuple[list[int], list[Formula]]:
            if not formulas:
                return [self.all_mask], [Lit(True)]
            masks, bodies = [], []
            for f in formulas:
                body = liveness_body(f)
                mask = 0
                for i, state in enumerate(self.states):
                    if eval_prop(body, self.valuation(state)):
                        mask |= 1 << i
                masks.append(mask)
                bodies.append(body)
            return masks, bodies

        self.js_masks, self.js_bodies = goal_masks(spec.sys_liveness)
        self.je_masks, self.je_bodies = goal_masks(spec.env_liveness)
        self._force_sys_cache: dict[int, int] = {}
        self._force_env_cache: dict[int, int] = {}

    def valuation(self, state: tuple[bool, ...]) -> dict[str, bool]:
        return dict(zip(self.prop_names, state))

    def env_valuation(self, env: tuple[bool, ...]) -> dict[str, bool]:
        return dict(zip(self.sensor_names, env))

    def sys_valuation(self, sys: tuple[bool, ...]) -> dict[str, bool]:
        return dict(zip(self.system_names, sys))

    def env_part(self, state: tuple[bool, ...]) -> tuple[bool, ...]:
        return tuple(state[p] for p in self._sensor_pos)

    def sys_part(self, state: tuple[bool, ...]) -> tuple[bool, ...]:
        return tuple(state[p] for p in self._system_pos)

    def force_sys(self, target: int) -> int:
        """States where every legal env move has a system reply into target."""
        cached = self._force_sys_cache.get(target)
        if cached is not None:
            return cached
        out = 0
        for i, moves in enumerate(self.succs):
            for _, replies in moves:
                if not any((target >> succ) & 1 for _, succ in replies):
                    break
            else:
                out |= 1 << i
        self._force_sys_cache[target] = out
        return out

    def force_env(self, target: int) -> int:
        """States with a legal env move whose every system reply lands in target."""
        cached = self._force_env_cache.get(target)
        if cached is not None:
            return cached
        out = 0
        for i, moves in enumerate(self.succs):
            for _, replies in moves:
                if all((target >> succ) & 1 for _, succ in replies):
                    out |= 1 << i
                    break
        self._force_env_cache[target] = out
        return out


class GameGraph:
    """Spec-facing view of the arena (states satisfying the propositional constraints)."""

    def __init__(self, arena: Arena):
        self.arena = arena
        self.propositions = arena.spec.propositions

    @property
    def states(self) -> list[dict[str, bool]]:
        return [
            self.arena.valuation(s)
            for i, s in enumerate(self.arena.states)
            if (self.arena.invariant_mask >> i) & 1
        ]

    @property
    def initial_states(self) -> list[dict[str, bool]]:
        return [
            self.arena.valuation(s)
            for i, s in enumerate(self.arena.states)
            if (self.arena.init_mask >> i) & 1
        ]

    def env_moves(self, state: Mapping[str, bool]) -> list[dict[str, bool]]:
        key = tuple(bool(state[n]) for n in self.arena.prop_names)
        moves = self.arena.succs[self.arena.index[key]]
        return [self.arena.env_valuation(env) for env, _ in moves]

    def sys_moves(self, state: Mapping[str, bool], env: Mapping[str, bool]) -> list[dict[str, bool]]:
        key = tuple(bool(state[n]) for n in self.arena.prop_names)
        env_key = tuple(bool(env[n]) for n in self.arena.sensor_names)
        for env_tuple, replies in self.arena.succs[self.arena.index[key]]:
            if env_tuple == env_key:
                return [self.arena.sys_valuation(sys) for sys, _ in replies]
        return []


def build_game(spec: GR1Spec, cap: int = 16) -> GameGraph:
    return GameGraph(Arena(spec, cap=cap))


# ---------------------------------------------------------------------------
# GR(1) fixed point


def _winning_region(arena: Arena) -> int:
    force = arena.force_sys
    js, je = arena.js_masks, arena.je_masks
    all_mask = arena.all_mask
    z = all_mask
    while True:
        z_before = z
        for j in range(len(js)):
            y = 0
            while True:
                start = (js[j] & force(z)) | force(y)
                newy = y
                for i in range(len(je)):
                    x = all_mask
                    while True:
                        nxt = x & (start | ((~je[i] & all_mask) & force(x)))
                        if nxt == x:
                            break
                        x = nxt
                    newy |= x
                if newy == y:
                    break
                y = newy
            z = y
        if z == z_before:
            return z


class _SystemTables:
    """Per-goal Y levels and X traps recorded at the final Z for extraction."""

    def __init__(self, arena: Arena, winning: int):
        self.arena = arena
        self.winning = winning
        self.levels: list[list[int]] = []  # per j: cumulative Y^r masks, Y^0 = 0
        self.xsets: list[list[list[int]]] = []  # per j, per level r (1-based), per i
        force = arena.force_sys
        js, je = arena.js_masks, arena.je_masks
        all_mask = arena.all_mask
        for j in range(len(js)):
            ylevels = [0]
            xsets_j: list[list[int]] = []
            while True:
                y = ylevels[-1]
                start = (js[j] & force(winning)) | force(y)
                xs = []
                newy = y
                for i in range(len(je)):
                    x = all_mask
                    while True:
                        nxt = x & (start | ((~je[i] & all_mask) & force(x)))
                        if nxt == x:
                            break
                        x = nxt
                    xs.append(x)
                    newy |= x
                if newy == y:
                    break
                ylevels.append(newy)
                xsets_j.append(xs)
            if ylevels[-1] != winning:
                raise AssertionError("Y fixpoint at final Z does not reproduce the winning region")
            self.levels.append(ylevels)
            self.xsets.append(xsets_j)


@dataclass(frozen=True)
class StrategyNode:
    state: tuple[bool, ...]
    goal_index: int
    goal_holds: bool  # pursued goal satisfied here; the index advances on leaving


@dataclass
class Strategy:
    prop_names: tuple[str, ...]
    sensor_names: tuple[str, ...]
    system_names: tuple[str, ...]
    n_goals: int
    goal_names: tuple[str, ...]
    nodes: list[StrategyNode]
    initial: list[int]
    transitions: dict[tuple[int, tuple[bool, ...]], int]
    goals_hit: dict[int, tuple[int, ...]]  # node id -> sys goals true at its state

    def legal_env_moves(self, node_id: int) -> list[tuple[bool, ...]]:
        return sorted(env for (nid, env) in self.transitions if nid == node_id)


def _lexmin_reply(replies, target: int):
    for sys_tuple, succ in replies:  # replies are already in lexicographic order
        if (target >> succ) & 1:
            return sys_tuple, succ
    return None


def _extract_strategy(arena: Arena, winning: int) -> Strategy:
    tables = _SystemTables(arena, winning)
    js, je = arena.js_masks, arena.je_masks
    n = len(js)

    def plan(idx: int, j: int) -> int:
        """Target mask for all env moves at this node (state-level commitment)."""
        if (js[j] >> idx) & 1:
            return winning
        ylevels = tables.levels[j]
        r = next(r for r, mask in enumerate(ylevels) if (mask >> idx) & 1)
        prev = ylevels[r - 1]
        if (arena.force_sys(prev) >> idx) & 1:
            return prev
        for i, xmask in enumerate(tables.xsets[j][r - 1]):
            if not (je[i] >> idx) & 1 and (arena.force_sys(xmask) >> idx) & 1:
                return xmask
        raise AssertionError("winning state matches no strategy rule")

    nodes: list[StrategyNode] = []
    node_ids: dict[tuple[int, int], int] = {}
    transitions: dict[tuple[int, tuple[bool, ...]], int] = {}

    def intern(idx: int, j: int) -> int:
        key = (idx, j)
        if key in node_ids:
            return node_ids[key]
        nid = len(nodes)
        node_ids[key] = nid
        nodes.append(StrategyNode(arena.states[idx], j, bool((js[j] >> idx) & 1)))
        return nid

    initial = []
    queue: deque[tuple[int, int]] = deque()
    for idx in range(arena.n_states):
        if (arena.init_mask >> idx) & 1 and (winning >> idx) & 1:
            initial.append(intern(idx, 0))
            queue.append((idx, 0))

    seen = set(queue)
    while queue:
        idx, j = queue.popleft()
        nid = node_ids[(idx, j)]
        target = plan(idx, j)
        next_j = (j + 1) % n if (js[j] >> idx) & 1 else j
        for env_tuple, replies in arena.succs[idx]:
            choice = _lexmin_reply(replies, target)
            if choice is None:
                raise AssertionError("no winning system reply from a winning state")
            _, succ = choice
            if (succ, next_j) not in seen:
                seen.add((succ, next_j))
                queue.append((succ, next_j))
            transitions[(nid, env_tuple)] = intern(succ, next_j)

    goals_hit = {
        nid: tuple(j for j, mask in enumerate(js) if (mask >> arena.index[node.state]) & 1)
        for nid, node in enumerate(nodes)
    }
    return Strategy(
        prop_names=arena.prop_names,
        sensor_names=arena.sensor_names,
        system_names=arena.system_names,
        n_goals=n,
        goal_names=tuple(format_formula(b) for b in arena.js_bodies),
        nodes=nodes,
        initial=initial,
        transitions=transitions,
        goals_hit=goals_hit,
    )


# ---------------------------------------------------------------------------
# Counterstrategy: rank decomposition of the environment-winning region


@dataclass
class _CoreStructure:
    j: int
    core: int
    targets: list[int]  # per env goal i: je_i-states of the core able to continue
    attr_levels: list[list[int]]  # per env goal i: cumulative attractor level masks


@dataclass
class _AttrStructure:
    levels: list[int]  # cumulative masks; levels[0] = already-ranked base


class _EnvTables:
    def __init__(self, arena: Arena, winning: int):
        self.arena = arena
        self.not_w = arena.all_mask & ~winning
        self.structures: list[_CoreStructure | _AttrStructure] = []
        self.tag: dict[int, int] = {}  # state idx -> structure index
        self._build()

    def _attr_env(self, target: int, domain: int) -> list[int]:
        levels = [target]
        cur = target
        while True:
            nxt = cur | (domain & self.arena.force_env(cur))
            if nxt == cur:
                return levels
            levels.append(nxt)
            cur = nxt

    def _gbuchi_core(self, domain: int, escape: int):
        """Env wins: stay in (shrinking) domain visiting every env goal, or escape.

        The march domain shrinks with the candidate so the final attractor
        chains never leave core ∪ escape (keeps state tags self-consistent).
        """
        je = self.arena.je_masks
        m = len(je)
        y = domain
        while y:
            inner = y | escape  # continuing the cycle or escaping downward both win
            chain: list[tuple[int, list[int]]] = [(0, [])] * m
            for i in reversed(range(m)):
                target_core = je[i] & y & self.arena.force_env(inner)
                levels = self._attr_env(target_core | escape, y)
                chain[i] = (target_core, levels)
                inner = levels[-1]
            newy = y & inner
            if newy == y:
                targets = [t for t, _ in chain]
                attr_levels = [levels for _, levels in chain]
                return y, targets, attr_levels
            y = newy
        return 0, None, None

    def _build(self) -> None:
        arena = self.arena
        js = arena.js_masks
        ranked = 0
        while ranked != self.not_w:
            progressed = False
            for j in range(len(js)):
                domain = self.not_w & ~ranked & ~js[j]
                core, targets, attr_levels = self._gbuchi_core(domain, ranked)
                if not core:
                    continue
                sid = len(self.structures)
                self.structures.append(_CoreStructure(j, core, targets, attr_levels))
                for idx in range(arena.n_states):
                    if (core >> idx) & 1:
                        self.tag[idx] = sid
                ranked |= core
                progressed = True
            levels = self._attr_env(ranked, self.not_w & ~ranked)
            added = levels[-1] & ~ranked
            if added:
                sid = len(self.structures)
                self.structures.append(_AttrStructure(levels))
                for idx in range(arena.n_states):
                    if (added >> idx) & 1:
                        self.tag[idx] = sid
                ranked |= added
                progressed = True
            if not progressed:
                raise AssertionError(
                    "environment rank decomposition incomplete; dual construction bug"
                )


@dataclass(frozen=True)
class CounterStrategyNode:
    state: tuple[bool, ...]
    env_goal_index: int
    emit: tuple[bool, ...]  # sensor valuation the environment plays from this node


@dataclass
class CounterStrategy:
    prop_names: tuple[str, ...]
    sensor_names: tuple[str, ...]
    system_names: tuple[str, ...]
    n_env_goals: int
    env_goal_names: tuple[str, ...]
    nodes: list[CounterStrategyNode]
    initial: list[int]
    transitions: dict[tuple[int, tuple[bool, ...]], int]

    def recurrent_node_ids(self) -> list[int]:
        """Nodes on cycles of the transition graph (members of looping SCCs)."""
        succ: dict[int, list[int]] = {i: [] for i in range(len(self.nodes))}
        for (src, _), dst in sorted(self.transitions.items()):
            succ[src].append(dst)
        recurrent = _cyclic_scc_members(succ)
        return sorted(recurrent)


def _cyclic_scc_members(succ: Mapping[int, Sequence[int]]) -> set[int]:
    """Members of SCCs that contain a cycle (size > 1 or a self-loop)."""
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    counter = itertools.count()
    out: set[int] = set()

    def strongconnect(root: int) -> None:
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = next(counter)
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for child in it:
                if child not in index:
                    index[child] = low[child] = next(counter)
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(succ[child])))
                    advanced = True
                    break
                if child in on_stack:
                    low[node] = min(low[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                scc = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    scc.append(member)
                    if member == node:
                        break
                if len(scc) > 1 or any(d == node for d in succ[node]):
                    out.update(scc)

    for start in sorted(succ):
        if start not in index:
            strongconnect(start)
    return out


def _lexmin_env_move(arena: Arena, idx: int, target: int):
    for env_tuple, replies in arena.succs[idx]:
        if all((target >> succ) & 1 for _, succ in replies):
            return env_tuple, replies
    return None


def _extract_counterstrategy(arena: Arena, winning: int) -> CounterStrategy:
    tables = _EnvTables(arena, winning)
    m = len(arena.je_masks)

    def choose(idx: int, i: int) -> tuple[tuple[bool, ...], list, int]:
        structure = tables.structures[tables.tag[idx]]
        if isinstance(structure, _AttrStructure):
            level = next(r for r, mask in enumerate(structure.levels) if (mask >> idx) & 1)
            picked = _lexmin_env_move(arena, idx, structure.levels[level - 1])
            if picked is None:
                raise AssertionError("attractor state has no forcing move")
            return picked[0], picked[1], i
        if (structure.targets[i] >> idx) & 1:
            next_i = (i + 1) % m
            picked = _lexmin_env_move(arena, idx, structure.attr_levels[next_i][-1])
            if picked is None:
                raise AssertionError("core target state cannot continue the cycle")
            return picked[0], picked[1], next_i
        levels = structure.attr_levels[i]
        level = next(r for r, mask in enumerate(levels) if (mask >> idx) & 1)
        picked = _lexmin_env_move(arena, idx, levels[level - 1])
        if picked is None:
            raise AssertionError("core state has no forcing move")
        return picked[0], picked[1], i

    nodes: list[CounterStrategyNode] = []
    node_ids: dict[tuple[int, int], int] = {}
    plans: dict[int, tuple[tuple[bool, ...], list, int]] = {}
    transitions: dict[tuple[int, tuple[bool, ...]], int] = {}

    def intern(idx: int, i: int) -> int:
        key = (idx, i)
        if key in node_ids:
            return node_ids[key]
        emit, replies, next_i = choose(idx, i)
        nid = len(nodes)
        node_ids[key] = nid
        nodes.append(CounterStrategyNode(arena.states[idx], i, emit))
        plans[nid] = (emit, replies, next_i)
        return nid

    queue: deque[int] = deque()
    initial: list[int] = []
    for idx in range(arena.n_states):
        if (arena.init_mask >> idx) & 1:
            nid = intern(idx, 0)
            initial.append(nid)
            queue.append(nid)

    expanded: set[int] = set(queue)
    while queue:
        nid = queue.popleft()
        _, replies, next_i = plans[nid]
        for sys_tuple, succ in replies:
            child = intern(succ, next_i)
            transitions[(nid, sys_tuple)] = child
            if child not in expanded:
                expanded.add(child)
                queue.append(child)

    return CounterStrategy(
        prop_names=arena.prop_names,
        sensor_names=arena.sensor_names,
        system_names=arena.system_names,
        n_env_goals=m,
        env_goal_names=tuple(format_formula(b) for b in arena.je_bodies),
        nodes=nodes,
        initial=initial,
        transitions=transitions,
    )


# ---------------------------------------------------------------------------
# Verdicts


class Verdict(enum.Enum):
    REALIZABLE = "realizable"
    UNSATISFIABLE = "unsatisfiable"
    UNREALIZABLE = "unrealizable"


@dataclass
class SynthesisResult:
    verdict: Verdict
    strategy: Strategy | None = None
    counterstrategy: CounterStrategy | None = None

    def __post_init__(self) -> None:
        if self.verdict is Verdict.REALIZABLE and self.strategy is None:
            raise ValueError("realizable verdict must carry a strategy")
        if self.verdict is Verdict.UNREALIZABLE and self.counterstrategy is None:
            raise ValueError("unrealizable verdict must carry a counterstrategy")
        if self.verdict is Verdict.UNSATISFIABLE and (self.strategy or self.counterstrategy):
            raise ValueError("unsatisfiable verdict carries no automaton")


def _cooperatively_satisfiable(arena: Arena) -> bool:
    """One-player re-solve: the system drives the sensors too; satisfiable iff
    some reachable SCC jointly visits every system liveness goal."""
    succ: dict[int, list[int]] = {}
    frontier = [i for i in range(arena.n_states) if (arena.init_mask >> i) & 1]
    reachable = set(frontier)
    while frontier:
        idx = frontier.pop()
        children = sorted(
            {nxt for _, replies in arena.succs[idx] for _, nxt in replies}
        )
        succ[idx] = children
        for nxt in children:
            if nxt not in reachable:
                reachable.add(nxt)
                frontier.append(nxt)

    for scc in _scc_partition(succ):
        only = next(iter(scc))
        if len(scc) > 1 or only in succ.get(only, []):
            if all(any((mask >> idx) & 1 for idx in scc) for mask in arena.js_masks):
                return True
    return False


def _scc_partition(succ: Mapping[int, Sequence[int]]) -> list[set[int]]:
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    counter = itertools.count()
    sccs: list[set[int]] = []

    def strongconnect(root: int) -> None:
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = next(counter)
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for child in it:
                if child not in index:
                    index[child] = low[child] = next(counter)
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(succ[child])))
                    advanced = True
                    break
                if child in on_stack:
                    low[node] = min(low[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                scc = set()
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    scc.add(member)
                    if member == node:
                        break
                sccs.append(scc)

    for start in sorted(succ):
        if start not in index:
            strongconnect(start)
    return sccs


def check_realizability(spec: GR1Spec, cap: int = 16) -> SynthesisResult:
    """Solve the GR(1) game; the verdict carries the extracted automaton."""
    arena = Arena(spec, cap=cap)
    if arena.init_mask == 0:
        raise NoInitialState("env_init and sys_init admit no valuation")
    winning = _winning_region(arena)
    if arena.init_mask & winning:
        return SynthesisResult(Verdict.REALIZABLE, strategy=_extract_strategy(arena, winning))
    if _cooperatively_satisfiable(arena):
        return SynthesisResult(
            Verdict.UNREALIZABLE,
            counterstrategy=_extract_counterstrategy(arena, winning),
        )
    return SynthesisResult(Verdict.UNSATISFIABLE)


def classify_unsynthesizable(spec: GR1Spec, cap: int = 16) -> Verdict:
    """Distinguish unsatisfiable from unrealizable; NotApplicable if realizable."""
    result = check_realizability(spec, cap=cap)
    if result.verdict is Verdict.REALIZABLE:
        raise NotApplicable("specification is realizable")
    return result.verdict


# ---------------------------------------------------------------------------
# Game-level simulation


@dataclass
class PlayStep:
    env: dict[str, bool]
    sys: dict[str, bool]
    goals_hit: tuple[int, ...]


@dataclass
class PlayTrace:
    initial: dict[str, bool]
    steps: list[PlayStep]


EnvValuationPolicy = Callable[[int, Mapping[str, bool]], Mapping[str, bool]]


def simulate(strategy: Strategy, env_policy: EnvValuationPolicy, max_steps: int) -> PlayTrace:
    """Drive the strategy against a sensor-valuation policy for up to max_steps.

    Raises IllegalEnvMove if the policy emits a move outside env_safety at the
    current node (policy bugs surface rather than being masked).
    """
    node_id = min(strategy.initial)
    node = strategy.nodes[node_id]
    initial = dict(zip(strategy.prop_names, node.state))
    steps: list[PlayStep] = []
    current = initial
    for step in range(max_steps):
        move = env_policy(step, current)
        env_key = tuple(bool(move[n]) for n in strategy.sensor_names)
        target = strategy.transitions.get((node_id, env_key))
        if target is None:
            raise IllegalEnvMove(step, move)
        node_id = target
        node = strategy.nodes[node_id]
        current = dict(zip(strategy.prop_names, node.state))
        steps.append(
            PlayStep(
                env={n: current[n] for n in strategy.sensor_names},
                sys={n: current[n] for n in strategy.system_names},
                goals_hit=strategy.goals_hit[node_id],
            )
        )
    return PlayTrace(initial=initial, steps=steps)


# ---------------------------------------------------------------------------
# Automaton export


def _move_key(names: Sequence[str], values: Sequence[bool]) -> str:
    return ",".join(f"{n}={'1' if v else '0'}" for n, v in zip(names, values))


def strategy_to_dict(s: Strategy) -> dict:
    return {
        "kind": "strategy",
        "propositions": list(s.prop_names),
        "sensors": list(s.sensor_names),
        "systems": list(s.system_names),
        "goals": list(s.goal_names),
        "nodes": [
            {
                "id": i,
                "state": dict(zip(s.prop_names, node.state)),
                "goal_index": node.goal_index,
            }
            for i, node in enumerate(s.nodes)
        ],
        "initial": sorted(s.initial),
        "transitions": [
            {"from": src, "on": _move_key(s.sensor_names, env), "to": dst}
            for (src, env), dst in sorted(s.transitions.items())
        ],
    }


def counterstrategy_to_dict(c: CounterStrategy) -> dict:
    return {
        "kind": "counterstrategy",
        "propositions": list(c.prop_names),
        "sensors": list(c.sensor_names),
        "systems": list(c.system_names),
        "env_goals": list(c.env_goal_names),
        "nodes": [
            {
                "id": i,
                "state": dict(zip(c.prop_names, node.state)),
                "env_goal_index": node.env_goal_index,
                "emit": _move_key(c.sensor_names, node.emit),
            }
            for i, node in enumerate(c.nodes)
        ],
        "initial": sorted(c.initial),
        "transitions": [
            {"from": src, "on": _move_key(c.system_names, sys), "to": dst}
            for (src, sys), dst in sorted(c.transitions.items())
        ],
    }


def automaton_to_dot(data: dict) -> str:
    lines = [f"digraph {data['kind']} {{"]
    for node in data["nodes"]:
        labels = [f"{k}={'1' if v else '0'}" for k, v in node["state"].items()]
        goal = node.get("goal_index", node.get("env_goal_index"))
        label = f"#{node['id']} g{goal}\\n" + "\\n".join(labels)
        shape = "doublecircle" if node["id"] in data["initial"] else "circle"
        lines.append(f'  n{node["id"]} [shape={shape}, label="{label}"];')
    for edge in data["transitions"]:
        lines.append(f'  n{edge["from"]} -> n{edge["to"]} [label="{edge["on"]}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
