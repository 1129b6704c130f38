import random
from pathlib import Path

import pytest

from tablebot.game import Verdict, check_realizability
from tablebot.gr1spec import GR1Spec
from tablebot.ltl import Not, Prop, PropKind, Proposition, conj, parse_formula
from tablebot.mining import (
    DuplicateAssumption,
    NotUnrealizable,
    apply_candidate,
    initial_state_assumption,
    inject_initial_state,
    mine_candidates,
)
from tablebot.world import load_world, world_sensor_symbols

from util import random_spec

DATA = Path(__file__).parent.parent / "src" / "tablebot" / "data"

OBS_BLUE = Proposition("observed_cube_blue", PropKind.SENSOR)
OBS_RED = Proposition("observed_cube_red", PropKind.SENSOR)
UNDER_RED = Proposition("understack_cube_red", PropKind.SENSOR)
PICKUP = Proposition("pickup_right", PropKind.ACTION)
GRIPPER = Proposition("right_gripper", PropKind.MEMORY)


def sorting_pair_spec() -> GR1Spec:
    props = (OBS_BLUE, PICKUP, GRIPPER)
    return GR1Spec(
        propositions=props,
        env_init=Not(Prop(OBS_BLUE)),
        sys_init=conj([Not(Prop(PICKUP)), Not(Prop(GRIPPER))]),
        sys_safety=(
            parse_formula(
                "G ((!(X observed_cube_blue) | right_gripper) -> !(X pickup_right))",
                props,
            ),
        ),
        sys_liveness=(parse_formula("G F pickup_right", props),),
    )


def stacking_pair_spec() -> GR1Spec:
    props = (OBS_RED, UNDER_RED, PICKUP, GRIPPER)
    return GR1Spec(
        propositions=props,
        env_init=conj([Not(Prop(OBS_RED)), Not(Prop(UNDER_RED))]),
        sys_init=conj([Not(Prop(PICKUP)), Not(Prop(GRIPPER))]),
        sys_safety=(
            parse_formula(
                "G ((!(X observed_cube_red) | X understack_cube_red | right_gripper)"
                " -> !(X pickup_right))",
                props,
            ),
        ),
        sys_liveness=(parse_formula("G F pickup_right", props),),
    )


def test_initial_state_assumption_matches_published_conjunction():
    world = load_world(DATA / "worlds" / "sorting_env2.json")
    sensors = world_sensor_symbols(world)
    formula = initial_state_assumption(world, sensors)
    expected = parse_formula(
        "observed_cube_blue & right_bin_clear & observed_cube_red & left_bin_clear",
        [s.prop for s in sensors],
    )
    assert formula == expected


def test_initial_state_mentions_every_sensor_once():
    world = load_world(DATA / "worlds" / "stacking_env4.json")
    sensors = world_sensor_symbols(world)
    formula = initial_state_assumption(world, sensors)
    from tablebot.ltl import atoms

    assert {p.name for p in atoms(formula)} == {s.prop.name for s in sensors}


def test_mining_sorting_pair_returns_single_sensor_assumption():
    spec = sorting_pair_spec()
    result = check_realizability(spec)
    assert result.verdict is Verdict.UNREALIZABLE
    report = mine_candidates(spec, result.counterstrategy)
    assert report.candidates, "no candidate accepted"
    top = report.candidates[0]
    assert top.literals == (("observed_cube_blue", True),)
    assert top.formula == parse_formula(
        "G F observed_cube_blue", spec.propositions
    )


def test_mining_stacking_pair_returns_two_sensor_assumption():
    spec = stacking_pair_spec()
    result = check_realizability(spec)
    assert result.verdict is Verdict.UNREALIZABLE
    report = mine_candidates(spec, result.counterstrategy)
    assert report.candidates
    top = report.candidates[0]
    assert top.literals == (
        ("observed_cube_red", True),
        ("understack_cube_red", False),
    )


def test_mining_rejects_on_realizable_spec():
    spec = sorting_pair_spec()
    result = check_realizability(spec)
    repaired = apply_candidate(
        spec, mine_candidates(spec, result.counterstrategy).candidates[0]
    )
    cs = result.counterstrategy
    with pytest.raises(NotUnrealizable):
        mine_candidates(repaired, cs)


def test_apply_candidate_is_pure_and_rejects_duplicates():
    spec = sorting_pair_spec()
    result = check_realizability(spec)
    top = mine_candidates(spec, result.counterstrategy).candidates[0]
    repaired = apply_candidate(spec, top)
    assert len(repaired.env_liveness) == 1
    assert spec.env_liveness == ()  # input unchanged
    assert check_realizability(repaired).verdict is Verdict.REALIZABLE
    with pytest.raises(DuplicateAssumption):
        apply_candidate(repaired, top)


def test_accepted_candidates_yield_realizable_and_satisfiable_specs():
    rng = random.Random(31)
    validated = 0
    attempts = 0
    while validated < 12 and attempts < 400:
        attempts += 1
        spec = random_spec(rng, 2, 2)
        try:
            result = check_realizability(spec)
        except Exception:
            continue
        if result.verdict is not Verdict.UNREALIZABLE:
            continue
        report = mine_candidates(spec, result.counterstrategy)
        for candidate in report.candidates:
            augmented = apply_candidate(spec, candidate)
            # independent re-check of the mining contract
            assert check_realizability(augmented).verdict is Verdict.REALIZABLE
        if report.candidates:
            validated += 1
    assert validated >= 8


def test_minimality_no_accepted_superset():
    rng = random.Random(77)
    seen = 0
    attempts = 0
    while seen < 10 and attempts < 400:
        attempts += 1
        spec = random_spec(rng, 3, 2)
        try:
            result = check_realizability(spec)
        except Exception:
            continue
        if result.verdict is not Verdict.UNREALIZABLE:
            continue
        report = mine_candidates(spec, result.counterstrategy, max_literals=2)
        sets = [c.literal_set() for c in report.candidates]
        for a in sets:
            for b in sets:
                assert not (a < b), (a, b)
        if report.candidates:
            seen += 1
    assert seen >= 5


def test_mining_deterministic():
    spec = stacking_pair_spec()
    result = check_realizability(spec)
    r1 = mine_candidates(spec, result.counterstrategy)
    r2 = mine_candidates(spec, result.counterstrategy)
    assert [c.literals for c in r1.candidates] == [c.literals for c in r2.candidates]
    assert [(c.literals, reason) for c, reason in r1.rejected] == [
        (c.literals, reason) for c, reason in r2.rejected
    ]


def test_inject_initial_state_declares_new_sensors():
    spec = sorting_pair_spec()
    world = load_world(DATA / "worlds" / "sorting_env2.json")
    sensors = world_sensor_symbols(world)
    injected = inject_initial_state(spec, world, sensors)
    names = {p.name for p in injected.propositions}
    assert {"observed_cube_red", "left_bin_clear", "right_bin_clear"} <= names
    assert injected.env_init is not None
    # still unrealizable: the initial state alone cannot force recurrence
    assert check_realizability(injected).verdict is Verdict.UNREALIZABLE
