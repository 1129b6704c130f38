import itertools
import random

import pytest

from tablebot.game import (
    IllegalEnvMove,
    NoInitialState,
    NotApplicable,
    TooManyPropositions,
    Verdict,
    automaton_to_dot,
    build_game,
    check_realizability,
    classify_unsynthesizable,
    counterstrategy_to_dict,
    simulate,
    strategy_to_dict,
)
from tablebot.gr1spec import GR1Spec
from tablebot.ltl import (
    Always,
    Eventually,
    Not,
    Prop,
    PropKind,
    Proposition,
    conj,
    eval_prop,
    eval_step,
    parse_formula,
)

from util import (
    counterstrategy_beats_all_memoryless,
    enumeration_oracle_realizable,
    parity_oracle_realizable,
    random_spec,
    strategy_survives_all_memoryless,
)

OBS = Proposition("observed_cube_blue", PropKind.SENSOR)
PICKUP = Proposition("pickup_right", PropKind.ACTION)
GRIPPER = Proposition("right_gripper", PropKind.MEMORY)
SORTING_PROPS = (OBS, PICKUP, GRIPPER)


def sorting_fragment(with_assumption: bool = False) -> GR1Spec:
    safety = parse_formula(
        "G ((!(X observed_cube_blue) | right_gripper) -> !(X pickup_right))",
        SORTING_PROPS,
    )
    goal = parse_formula("G F pickup_right", SORTING_PROPS)
    env_liveness = ()
    if with_assumption:
        env_liveness = (parse_formula("G F observed_cube_blue", SORTING_PROPS),)
    return GR1Spec(
        propositions=SORTING_PROPS,
        env_init=Not(Prop(OBS)),
        sys_init=conj([Not(Prop(PICKUP)), Not(Prop(GRIPPER))]),
        env_liveness=env_liveness,
        sys_safety=(safety,),
        sys_liveness=(goal,),
    )


def test_unconstrained_arena_has_all_states_and_moves():
    a = Proposition("a", PropKind.SENSOR)
    b = Proposition("b", PropKind.ACTION)
    game = build_game(GR1Spec(propositions=(a, b)))
    assert len(game.states) == 4
    for state in game.states:
        moves = game.env_moves(state)
        assert len(moves) == 2
        for move in moves:
            assert len(game.sys_moves(state, move)) == 2


def test_sorting_arena_disables_pickup():
    spec = sorting_fragment()
    game = build_game(spec)
    for state in game.states:
        for env in game.env_moves(state):
            for sys in game.sys_moves(state, env):
                if not env["observed_cube_blue"] or state["right_gripper"]:
                    assert not sys["pickup_right"]


def test_moves_match_bruteforce_filter_oracle():
    rng = random.Random(5)
    for _ in range(30):
        spec = random_spec(rng, 2, 2)
        game = build_game(spec)
        names = [p.name for p in spec.propositions]
        sensor_names = [p.name for p in spec.sensors]
        system_names = [p.name for p in spec.system_props]
        for state in game.states:
            legal_env = []
            for bits in itertools.product([False, True], repeat=len(sensor_names)):
                env = dict(zip(sensor_names, bits))
                nxt = dict(state)
                nxt.update(env)
                if all(
                    eval_step(f.operand, state, nxt) for f in spec.env_safety
                ):
                    legal_env.append(env)
            assert game.env_moves(state) == legal_env
            for env in legal_env:
                legal_sys = []
                for bits in itertools.product([False, True], repeat=len(system_names)):
                    sys = dict(zip(system_names, bits))
                    nxt = dict(state)
                    nxt.update(env)
                    nxt.update(sys)
                    if all(
                        eval_step(f.operand, state, nxt) for f in spec.sys_safety
                    ):
                        legal_sys.append(sys)
                assert game.sys_moves(state, env) == legal_sys


def test_sorting_fragment_unrealizable_without_assumption():
    result = check_realizability(sorting_fragment(with_assumption=False))
    assert result.verdict is Verdict.UNREALIZABLE
    assert result.counterstrategy is not None


def test_sorting_fragment_realizable_with_assumption():
    result = check_realizability(sorting_fragment(with_assumption=True))
    assert result.verdict is Verdict.REALIZABLE
    assert result.strategy is not None


def test_self_contradictory_goal_unsatisfiable():
    a = Proposition("a", PropKind.ACTION)
    s = Proposition("s", PropKind.SENSOR)
    spec = GR1Spec(
        propositions=(s, a),
        sys_safety=(Always(Not(Prop(a))),),
        sys_liveness=(Always(Eventually(Prop(a))),),
    )
    result = check_realizability(spec)
    assert result.verdict is Verdict.UNSATISFIABLE
    assert classify_unsynthesizable(spec) is Verdict.UNSATISFIABLE


def test_classify_rejects_realizable():
    with pytest.raises(NotApplicable):
        classify_unsynthesizable(sorting_fragment(with_assumption=True))


def test_no_initial_state():
    a = Proposition("a", PropKind.ACTION)
    s = Proposition("s", PropKind.SENSOR)
    spec = GR1Spec(
        propositions=(s, a),
        sys_init=conj([Prop(a), Not(Prop(a))]),
        sys_liveness=(Always(Eventually(Prop(a))),),
    )
    with pytest.raises(NoInitialState):
        check_realizability(spec)


def test_proposition_cap():
    props = tuple(Proposition(f"p{i}", PropKind.SENSOR) for i in range(5))
    with pytest.raises(TooManyPropositions):
        build_game(GR1Spec(propositions=props), cap=4)


def test_simulate_runs_and_flags_illegal_moves():
    spec = sorting_fragment(with_assumption=True)
    result = check_realizability(spec)
    strategy = result.strategy

    def benign(step, state):
        return {"observed_cube_blue": True}

    trace = simulate(strategy, benign, max_steps=8)
    assert len(trace.steps) == 8
    assert any(trace.steps[k].sys["pickup_right"] for k in range(8))

    # every goal recurs within |nodes| steps under this policy
    bound = len(strategy.nodes)
    hits = [k for k, step in enumerate(trace.steps) if 0 in step.goals_hit]
    assert hits and hits[0] <= bound

    empty = simulate(strategy, benign, max_steps=0)
    assert empty.steps == []

    constrained = GR1Spec(
        propositions=SORTING_PROPS,
        env_safety=(parse_formula("G (X observed_cube_blue)", SORTING_PROPS),),
        sys_liveness=(parse_formula("G F pickup_right", SORTING_PROPS),),
    )
    outcome = check_realizability(constrained)
    assert outcome.verdict is Verdict.REALIZABLE

    def illegal(step, state):
        return {"observed_cube_blue": False}

    with pytest.raises(IllegalEnvMove):
        simulate(outcome.strategy, illegal, max_steps=3)


def test_export_shapes_and_determinism():
    spec = sorting_fragment(with_assumption=True)
    d1 = strategy_to_dict(check_realizability(spec).strategy)
    d2 = strategy_to_dict(check_realizability(spec).strategy)
    assert d1 == d2
    assert d1["kind"] == "strategy"
    assert automaton_to_dot(d1).startswith("digraph strategy {")

    weak = sorting_fragment(with_assumption=False)
    c1 = counterstrategy_to_dict(check_realizability(weak).counterstrategy)
    c2 = counterstrategy_to_dict(check_realizability(weak).counterstrategy)
    assert c1 == c2
    assert c1["kind"] == "counterstrategy"
    for node in c1["nodes"]:
        assert "emit" in node


def test_counterstrategy_defeats_all_memoryless_policies_small():
    spec = sorting_fragment(with_assumption=False)
    cs = check_realizability(spec).counterstrategy
    assert counterstrategy_beats_all_memoryless(cs, spec)


def test_strategy_survives_all_memoryless_policies_small():
    spec = sorting_fragment(with_assumption=True)
    strategy = check_realizability(spec).strategy
    assert strategy_survives_all_memoryless(strategy, spec)


def test_oracle_agreement_random_sample():
    rng = random.Random(42)
    checked = 0
    while checked < 40:
        spec = random_spec(rng, 2, 2)
        try:
            result = check_realizability(spec)
        except NoInitialState:
            continue
        expected = parity_oracle_realizable(spec)
        assert (result.verdict is Verdict.REALIZABLE) == expected, spec
        checked += 1


def test_enumeration_oracle_agreement_tiny():
    rng = random.Random(17)
    checked = 0
    while checked < 30:
        spec = random_spec(rng, 1, 1)
        if len(spec.sys_liveness) != 1:
            continue
        try:
            result = check_realizability(spec)
        except NoInitialState:
            continue
        expected = enumeration_oracle_realizable(spec)
        assert (result.verdict is Verdict.REALIZABLE) == expected, spec
        checked += 1


def test_determinacy_dichotomy():
    rng = random.Random(23)
    checked = 0
    while checked < 25:
        spec = random_spec(rng, 2, 2)
        try:
            result = check_realizability(spec)
        except NoInitialState:
            continue
        if result.verdict is Verdict.REALIZABLE:
            assert result.strategy.initial
        elif result.verdict is Verdict.UNREALIZABLE:
            cs = result.counterstrategy
            game = build_game(spec)
            assert len(cs.initial) == len(game.initial_states)
        checked += 1
