import pytest

from tablebot.gr1spec import (
    GR1Spec,
    dumps_spec,
    loads_spec,
    spec_from_dict,
    spec_to_dict,
    validate_spec,
)
from tablebot.ltl import (
    Always,
    Eventually,
    Next,
    Not,
    Prop,
    PropKind,
    Proposition,
    conj,
    parse_formula,
)

OBS = Proposition("observed_cube_blue", PropKind.SENSOR)
PICKUP = Proposition("pickup_right", PropKind.ACTION)
GRIPPER = Proposition("right_gripper", PropKind.MEMORY)
PROPS = (OBS, PICKUP, GRIPPER)


def sorting_fragment() -> GR1Spec:
    safety = parse_formula(
        "G ((!(X observed_cube_blue) | right_gripper) -> !(X pickup_right))", PROPS
    )
    goal = parse_formula("G F pickup_right", PROPS)
    return GR1Spec(propositions=PROPS, sys_safety=(safety,), sys_liveness=(goal,))


def test_empty_spec_validates():
    assert validate_spec(GR1Spec(propositions=())) == []


def test_sorting_fragment_validates():
    assert validate_spec(sorting_fragment()) == []


def test_liveness_in_safety_slot_flagged():
    bad = GR1Spec(
        propositions=PROPS,
        sys_safety=(Always(Eventually(Prop(PICKUP))),),
    )
    violations = validate_spec(bad)
    assert len(violations) == 1
    assert violations[0].slot == "sys_safety"
    assert violations[0].kind == "WrongTemporalShape"


def test_env_safety_next_on_action_flagged():
    bad = GR1Spec(
        propositions=PROPS,
        env_safety=(Always(Not(Next(Prop(PICKUP)))),),
    )
    violations = validate_spec(bad)
    assert [v.kind for v in violations] == ["IllegalNextTarget"]


def test_undeclared_prop_flagged():
    ghost = Proposition("ghost", PropKind.SENSOR)
    bad = GR1Spec(propositions=PROPS, sys_liveness=(Always(Eventually(Prop(ghost))),))
    violations = validate_spec(bad)
    assert [v.kind for v in violations] == ["UndeclaredProposition"]


def test_env_init_non_sensor_flagged():
    bad = GR1Spec(propositions=PROPS, env_init=Prop(GRIPPER))
    violations = validate_spec(bad)
    assert [v.kind for v in violations] == ["IllegalNextTarget"]


def test_liveness_body_with_next_flagged():
    bad = GR1Spec(
        propositions=PROPS,
        env_liveness=(Always(Eventually(Next(Prop(OBS)))),),
    )
    violations = validate_spec(bad)
    assert [v.kind for v in violations] == ["NonPropositionalBody"]


def test_dump_roundtrip_bit_exact():
    spec = sorting_fragment()
    spec = GR1Spec(
        propositions=PROPS,
        env_init=Prop(OBS),
        sys_init=conj([Not(Prop(PICKUP)), Not(Prop(GRIPPER))]),
        env_safety=spec.env_safety,
        env_liveness=(parse_formula("G F observed_cube_blue", PROPS),),
        sys_safety=spec.sys_safety,
        sys_liveness=spec.sys_liveness,
    )
    text = dumps_spec(spec)
    again = loads_spec(text)
    assert again == spec
    assert dumps_spec(again) == text


def test_dump_preserves_list_order():
    goals = (
        parse_formula("G F pickup_right", PROPS),
        parse_formula("G F right_gripper", PROPS),
    )
    spec = GR1Spec(propositions=PROPS, sys_liveness=goals)
    data = spec_to_dict(spec)
    assert data["sys_liveness"] == ["G (F (pickup_right))", "G (F (right_gripper))"]
    assert spec_from_dict(data).sys_liveness == goals


def test_duplicate_proposition_rejected():
    with pytest.raises(ValueError):
        GR1Spec(propositions=(OBS, Proposition("observed_cube_blue", PropKind.ACTION)))
