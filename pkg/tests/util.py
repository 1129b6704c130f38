"""Shared test helpers: independent oracles and seeded generators.

The synthesis oracle reduces the GR(1) condition to a 3-priority parity game
via cyclic goal counters and solves it with Zielonka's recursion — a different
algorithm over a different node space than the production fixed point.  The
LTL oracle is a depth-bounded naive unfolding.  Both deliberately avoid the
code paths they check.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from tablebot.game import Arena, CounterStrategy, Strategy
from tablebot.gr1spec import GR1Spec
from tablebot.ltl import (
    And,
    Always,
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
    Until,
    conj,
    disj,
    subformula_count,
)

# ---------------------------------------------------------------------------
# Naive unfolding LTL oracle


def naive_eval(f: Formula, trace, loopback: int) -> bool:
    """Depth-bounded unfolding; each temporal operator gets its own budget of
    |trace|·(|subformulas|+1) self-unrollings, reset on structural descent, so
    every fixpoint approximant stabilizes before its cutoff."""
    n = len(trace)
    period = n - loopback
    budget = n * (subformula_count(f) + 1)

    def lasso_index(pos: int) -> int:
        return pos if pos < n else loopback + (pos - loopback) % period

    memo: dict[tuple[int, int, int], bool] = {}

    def ev(node: Formula, pos: int, fuel: int) -> bool:
        key = (id(node), lasso_index(pos), fuel)
        if key in memo:
            return memo[key]
        if isinstance(node, Lit):
            out = node.value
        elif isinstance(node, Prop):
            out = bool(trace[lasso_index(pos)][node.prop.name])
        elif isinstance(node, Not):
            out = not ev(node.operand, pos, budget)
        elif isinstance(node, And):
            out = all(ev(c, pos, budget) for c in node.children)
        elif isinstance(node, Or):
            out = any(ev(c, pos, budget) for c in node.children)
        elif isinstance(node, Implies):
            out = (not ev(node.lhs, pos, budget)) or ev(node.rhs, pos, budget)
        elif isinstance(node, Next):
            out = ev(node.operand, pos + 1, budget)
        elif isinstance(node, Until):
            if fuel == 0:
                out = False
            else:
                out = ev(node.rhs, pos, budget) or (
                    ev(node.lhs, pos, budget) and ev(node, pos + 1, fuel - 1)
                )
        elif isinstance(node, Eventually):
            if fuel == 0:
                out = False
            else:
                out = ev(node.operand, pos, budget) or ev(node, pos + 1, fuel - 1)
        elif isinstance(node, Always):
            if fuel == 0:
                out = True
            else:
                out = ev(node.operand, pos, budget) and ev(node, pos + 1, fuel - 1)
        else:
            raise TypeError(node)
        memo[key] = out
        return out

    return ev(f, 0, budget)


# ---------------------------------------------------------------------------
# Random formulas and lassos


def random_formula(rng: random.Random, props: list[Proposition], depth: int) -> Formula:
    if depth == 0 or rng.random() < 0.25:
        roll = rng.random()
        if roll < 0.1:
            return Lit(rng.random() < 0.5)
        return Prop(rng.choice(props))
    kind = rng.choice(
        ["not", "next", "always", "eventually", "and", "or", "implies", "until"]
    )
    if kind == "not":
        return Not(random_formula(rng, props, depth - 1))
    if kind == "next":
        return Next(random_formula(rng, props, depth - 1))
    if kind == "always":
        return Always(random_formula(rng, props, depth - 1))
    if kind == "eventually":
        return Eventually(random_formula(rng, props, depth - 1))
    left = random_formula(rng, props, depth - 1)
    right = random_formula(rng, props, depth - 1)
    if kind == "and":
        return conj([left, right])
    if kind == "or":
        return disj([left, right])
    if kind == "implies":
        return Implies(left, right)
    return Until(left, right)


def random_lasso(rng: random.Random, names: list[str], max_len: int):
    length = rng.randint(1, max_len)
    trace = [{n: rng.random() < 0.5 for n in names} for _ in range(length)]
    loopback = rng.randrange(length)
    return trace, loopback


def enumerate_formulas(props: list[Proposition], depth: int):
    """All formulas of AST height <= depth over the given atoms.

    Operator pool: ! X G F over unary, & | U over binary (canonical n-ary
    forms for & and |).  Literals true/false excluded to keep the count flat.
    """
    seen: set[Formula] = {Prop(p) for p in props}
    for _ in range(depth):
        pool = list(seen)
        new: list[Formula] = []
        for f in pool:
            for op in (Not, Next, Always, Eventually):
                new.append(op(f))
        for a in pool:
            for b in pool:
                new.append(conj([a, b]))
                new.append(disj([a, b]))
                new.append(Until(a, b))
        seen.update(new)
    return sorted(seen, key=lambda f: (subformula_count(f), str(f)))


def enumerate_lassos(names: list[str], max_len: int):
    out = []
    for length in range(1, max_len + 1):
        for values in itertools.product(
            itertools.product((False, True), repeat=len(names)), repeat=length
        ):
            trace = [dict(zip(names, row)) for row in values]
            for loopback in range(length):
                out.append((trace, loopback))
    return out


# ---------------------------------------------------------------------------
# Random GR(1) specs


def _random_literal(rng: random.Random, pool: list[Formula]) -> Formula:
    atom = rng.choice(pool)
    return Not(atom) if rng.random() < 0.5 else atom


def _random_body(rng: random.Random, pool: list[Formula]) -> Formula:
    shape = rng.randrange(5)
    if shape == 0:
        return _random_literal(rng, pool)
    if shape == 1:
        return disj([_random_literal(rng, pool), _random_literal(rng, pool)])
    if shape == 2:
        return conj([_random_literal(rng, pool), _random_literal(rng, pool)])
    if shape == 3:
        return Implies(_random_literal(rng, pool), _random_literal(rng, pool))
    return Implies(
        disj([_random_literal(rng, pool), _random_literal(rng, pool)]),
        _random_literal(rng, pool),
    )


def random_spec(rng: random.Random, n_sensors: int, n_sys: int) -> GR1Spec:
    sensors = [Proposition(f"s{i}", PropKind.SENSOR) for i in range(n_sensors)]
    systems = [
        Proposition(f"a{i}", PropKind.ACTION if i % 2 == 0 else PropKind.MEMORY)
        for i in range(n_sys)
    ]
    props = sensors + systems
    cur = [Prop(p) for p in props]
    cur_env_next = cur + [Next(Prop(p)) for p in sensors]
    cur_any_next = cur + [Next(Prop(p)) for p in props]

    env_safety = tuple(
        Always(_random_body(rng, cur_env_next)) for _ in range(rng.randrange(3))
    )
    sys_safety = tuple(
        Always(_random_body(rng, cur_any_next)) for _ in range(rng.randrange(3))
    )
    env_liveness = tuple(
        Always(Eventually(_random_body(rng, cur))) for _ in range(rng.randint(0, 2))
    )
    sys_liveness = tuple(
        Always(Eventually(_random_body(rng, cur))) for _ in range(rng.randint(1, 2))
    )
    env_init = None
    sys_init = None
    if rng.random() < 0.4:
        env_init = conj([
            Not(Prop(p)) if rng.random() < 0.5 else Prop(p) for p in sensors
        ])
    if rng.random() < 0.4:
        sys_init = conj([
            Not(Prop(p)) if rng.random() < 0.5 else Prop(p) for p in systems
        ])
    return GR1Spec(
        propositions=tuple(props),
        env_init=env_init,
        sys_init=sys_init,
        env_safety=env_safety,
        env_liveness=env_liveness,
        sys_safety=sys_safety,
        sys_liveness=sys_liveness,
    )


# ---------------------------------------------------------------------------
# Parity-game oracle (counter reduction + Zielonka)


@dataclass(frozen=True)
class _EnvNode:
    state: int
    i: int
    j: int
    pri: int


@dataclass(frozen=True)
class _SysNode:
    state: int
    i: int
    j: int
    move: int  # index into the state's legal env move list


def _attractor(player: int, target: set, nodes: set, succ, owner) -> set:
    out = set(target)
    changed = True
    while changed:
        changed = False
        for v in nodes:
            if v in out:
                continue
            succs = [w for w in succ[v] if w in nodes]
            if owner[v] == player:
                if any(w in out for w in succs):
                    out.add(v)
                    changed = True
            else:
                if succs and all(w in out for w in succs):
                    out.add(v)
                    changed = True
                elif not succs:
                    # deadlocked opponent node: opponent loses, so attracted
                    out.add(v)
                    changed = True
    return out


def _zielonka(nodes: set, succ, owner, priority) -> tuple[set, set]:
    """Returns (win_even, win_odd) for max-parity; deadlocked owner loses."""
    if not nodes:
        return set(), set()
    d = max(priority[v] for v in nodes)
    if d == 0:
        # all priorities even: even player wins wherever it never deadlocks and
        # odd cannot force a deadlock of even; handle via attractor to deadlocks
        dead_even = {
            v for v in nodes if owner[v] == 0 and not [w for w in succ[v] if w in nodes]
        }
        if not dead_even:
            return set(nodes), set()
        bad = _attractor(1, dead_even, nodes, succ, owner)
        win_even, win_odd = _zielonka(nodes - bad, succ, owner, priority)
        return win_even, win_odd | bad
    player = 0 if d % 2 == 0 else 1
    target = {v for v in nodes if priority[v] == d}
    region = _attractor(player, target, nodes, succ, owner)
    win_even, win_odd = _zielonka(nodes - region, succ, owner, priority)
    opponent_win = win_odd if player == 0 else win_even
    if not opponent_win:
        return (set(nodes), set()) if player == 0 else (set(), set(nodes))
    counter = _attractor(1 - player, opponent_win, nodes, succ, owner)
    win_even2, win_odd2 = _zielonka(nodes - counter, succ, owner, priority)
    if player == 0:
        return win_even2, win_odd2 | counter
    return win_even2 | counter, win_odd2


def parity_oracle_realizable(spec: GR1Spec) -> bool:
    """System-winning check via counter-product parity game, Zielonka solver."""
    arena = Arena(spec)
    if arena.init_mask == 0:
        raise ValueError("no initial state")
    js, je = arena.js_masks, arena.je_masks
    n, m = len(js), len(je)

    def successors(v):
        if isinstance(v, _EnvNode):
            return [_SysNode(v.state, v.i, v.j, k) for k in range(len(arena.succs[v.state]))]
        out = []
        _, replies = arena.succs[v.state][v.move]
        for _, nxt in replies:
            i2, a_event = v.i, False
            if (je[v.i] >> nxt) & 1:
                a_event = v.i == m - 1
                i2 = (v.i + 1) % m
            j2, b_event = v.j, False
            if (js[v.j] >> nxt) & 1:
                b_event = v.j == n - 1
                j2 = (v.j + 1) % n
            pri = 2 if b_event else (1 if a_event else 0)
            out.append(_EnvNode(nxt, i2, j2, pri))
        return out

    nodes: set = set()
    succ: dict = {}
    owner: dict = {}
    priority: dict = {}

    def register(v) -> None:
        nodes.add(v)
        if isinstance(v, _EnvNode):
            owner[v] = 1  # environment chooses the sensor move
            priority[v] = v.pri
        else:
            owner[v] = 0
            priority[v] = 0

    inits = [idx for idx in range(arena.n_states) if (arena.init_mask >> idx) & 1]
    roots = [_EnvNode(idx, 0, 0, 0) for idx in inits]
    pending = list(roots)
    for root in roots:
        register(root)
    while pending:
        v = pending.pop()
        succ[v] = successors(v)
        for w in succ[v]:
            if w not in nodes:
                register(w)
                pending.append(w)

    # make the game total: a deadlocked node loops forever with the blame priority
    for v in nodes:
        if not succ[v]:
            succ[v] = [v]
            priority[v] = 1 if owner[v] == 0 else 0

    win_even, _ = _zielonka(set(nodes), succ, owner, priority)
    return any(root in win_even for root in roots)


# ---------------------------------------------------------------------------
# Policy-enumeration oracle and play-level checks (tiny arenas)


def _lasso_env_wins(states_on_cycle, je_masks, js_masks) -> bool:
    all_je = all(
        any((mask >> s) & 1 for s in states_on_cycle) for mask in je_masks
    )
    if not all_je:
        return False
    return any(
        all(not ((mask >> s) & 1) for s in states_on_cycle) for mask in js_masks
    )


def enumeration_oracle_realizable(spec: GR1Spec) -> bool:
    """Enumerate system policies f(state, env move) -> reply; complete for one
    system goal (the extracted strategy shape is memoryless then)."""
    arena = Arena(spec)
    if arena.init_mask == 0:
        raise ValueError("no initial state")
    assert len(arena.js_masks) == 1, "enumeration oracle only complete for 1 sys goal"

    points = []  # (state, move index) with at least one reply
    for state in range(arena.n_states):
        for k, (_, replies) in enumerate(arena.succs[state]):
            points.append((state, k, len(replies)))

    choice_space = [range(c) if c else [None] for _, _, c in points]
    point_index = {(s, k): n for n, (s, k, _) in enumerate(points)}

    inits = [idx for idx in range(arena.n_states) if (arena.init_mask >> idx) & 1]

    for combo in itertools.product(*choice_space):
        for s0 in inits:
            if _policy_wins_from(arena, s0, combo, point_index):
                return True
    return False


def _policy_wins_from(arena: Arena, s0: int, combo, point_index) -> bool:
    # build deterministic-system graph; env picks any legal move
    succ: dict[int, list[int]] = {}
    frontier = [s0]
    seen = {s0}
    while frontier:
        state = frontier.pop()
        outs = []
        for k, (_, replies) in enumerate(arena.succs[state]):
            pick = combo[point_index[(state, k)]]
            if pick is None:
                return False  # env forces a system deadlock
            _, nxt = replies[pick]
            outs.append(nxt)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
        succ[state] = outs
    # bad cycle: env-chosen lasso inside some !Js_j subgraph covering every Je_i
    for js_mask in arena.js_masks:
        sub = {
            s: [t for t in outs if not ((js_mask >> t) & 1)]
            for s, outs in succ.items()
            if not ((js_mask >> s) & 1)
        }
        for scc in _sccs_of(sub):
            only = next(iter(scc))
            if len(scc) > 1 or only in sub[only]:
                if all(
                    any((mask >> s) & 1 for s in scc) for mask in arena.je_masks
                ):
                    return False
    return True


def _sccs_of(succ: dict[int, list[int]]) -> list[set[int]]:
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


def _policy_combos(spaces, cap: int):
    """All policy combinations when the product is small, else a seeded sample."""
    total = 1
    for space in spaces:
        total *= len(space)
        if total > cap:
            break
    if total <= cap:
        yield from itertools.product(*spaces)
        return
    rng = random.Random(0)
    for _ in range(cap):
        yield tuple(rng.choice(space) for space in spaces)


def counterstrategy_beats_all_memoryless(
    cs: CounterStrategy, spec: GR1Spec, cap: int = 50000
) -> bool:
    """Play the counterstrategy against every memoryless system policy
    f(state, emitted sensor move) -> reply; env must win every play."""
    arena = Arena(spec)
    je, js = arena.je_masks, arena.js_masks

    # decision keys reachable in the CS graph
    reply_options: dict[tuple, list] = {}
    for node in cs.nodes:
        key = (node.state, node.emit)
        if key in reply_options:
            continue
        idx = arena.index[node.state]
        for env_tuple, replies in arena.succs[idx]:
            if env_tuple == node.emit:
                reply_options[key] = [sys for sys, _ in replies]
                break
        else:
            reply_options[key] = []

    keys = sorted(reply_options)
    spaces = [reply_options[k] if reply_options[k] else [None] for k in keys]
    key_pos = {k: n for n, k in enumerate(keys)}

    for combo in _policy_combos(spaces, cap):
        for start in cs.initial:
            visited: dict[int, int] = {}
            path: list[int] = []
            node_id = start
            env_won = False
            while True:
                if node_id in visited:
                    cycle_nodes = path[visited[node_id]:]
                    cycle_states = [arena.index[cs.nodes[n].state] for n in cycle_nodes]
                    env_won = _lasso_env_wins(cycle_states, je, js)
                    break
                visited[node_id] = len(path)
                path.append(node_id)
                node = cs.nodes[node_id]
                pick = combo[key_pos[(node.state, node.emit)]]
                if pick is None:
                    env_won = True  # system deadlocked against the emitted move
                    break
                nxt = cs.transitions.get((node_id, pick))
                if nxt is None:
                    raise AssertionError("counterstrategy not total over legal replies")
                node_id = nxt
            if not env_won:
                return False
    return True


def strategy_survives_all_memoryless(
    strategy: Strategy, spec: GR1Spec, cap: int = 50000
) -> bool:
    """Play the strategy against every memoryless env policy g(state) -> move;
    whenever the env keeps its liveness on the induced lasso, every system goal
    must recur with gap <= |nodes|."""
    arena = Arena(spec)
    je, js = arena.je_masks, arena.js_masks

    move_options: dict[tuple, list] = {}
    for nid in range(len(strategy.nodes)):
        state = strategy.nodes[nid].state
        if state in move_options:
            continue
        move_options[state] = strategy.legal_env_moves(nid)

    keys = sorted(move_options)
    spaces = [move_options[k] if move_options[k] else [None] for k in keys]
    key_pos = {k: n for n, k in enumerate(keys)}
    bound = len(strategy.nodes)

    for combo in _policy_combos(spaces, cap):
        node_id = min(strategy.initial)
        visited: dict[int, int] = {}
        path: list[int] = []
        while True:
            if node_id in visited:
                cycle = path[visited[node_id]:]
                break
            visited[node_id] = len(path)
            path.append(node_id)
            state = strategy.nodes[node_id].state
            move = combo[key_pos[state]]
            if move is None:
                cycle = None  # env deadlocked itself: system wins trivially
                break
            node_id = strategy.transitions[(node_id, move)]
        if cycle is None:
            continue
        cycle_states = [arena.index[strategy.nodes[n].state] for n in cycle]
        env_live = all(any((mask >> s) & 1 for s in cycle_states) for mask in je)
        if not env_live:
            continue
        for j, mask in enumerate(js):
            hits = [k for k, s in enumerate(cycle_states) if (mask >> s) & 1]
            if not hits:
                return False
            gaps = [
                (hits[(x + 1) % len(hits)] - h) % len(cycle_states) or len(cycle_states)
                for x, h in enumerate(hits)
            ]
            if max(gaps) > bound:
                return False
    return True
