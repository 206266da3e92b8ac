import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlrdyn.model import (
    DamageEvent,
    HEXAPOD_HIPS,
    InconsistentLegFlag,
    InvalidMorphology,
    MorphologyVectors,
    NonPrefixPattern,
    RobotFileError,
    apply_damage,
    build_hexapod_default,
    com_offset,
    generalized_inertia,
    load_robot,
    robot_from_dict,
    robot_to_dict,
    save_robot,
    validate_morphology,
    yaw_pitch_pitch_leg,
)


def test_hexapod_dimensions(hexapod):
    assert hexapod.N == 6
    assert hexapod.leg_sizes == (3,) * 6
    assert hexapod.N_T == 18 and hexapod.dof == 24
    assert list(hexapod.offsets) == [0, 3, 6, 9, 12, 15]
    assert hexapod.total_mass == pytest.approx(1.35 + 6 * 0.2)


def test_hexapod_hips_and_mirroring(hexapod):
    for mount, hip in zip(hexapod.legs, HEXAPOD_HIPS):
        np.testing.assert_array_equal(mount.attachment.position, hip)
        x_axis = mount.attachment.rotation[:, 0]
        # every leg points away from the body's long axis
        assert np.sign(x_axis[0]) == np.sign(hip[0])
        # the 180 degree flip is exact, no sin(pi) residue
        assert set(np.unique(mount.attachment.rotation)) <= {-1.0, 0.0, 1.0}


def test_generalized_inertia_and_com_offset():
    I = generalized_inertia(2.0, (1.0, 2.0, 3.0))
    assert np.array_equal(np.diag(I), [2, 2, 2, 1, 2, 3])
    assert np.array_equal(com_offset(I), np.zeros(3))


def test_link_inertias_rejected_when_not_spd():
    leg = yaw_pitch_pitch_leg()
    bad = leg.link_inertias.copy()
    bad[1, 4, 4] = -1.0
    with pytest.raises(ValueError):
        type(leg)(leg.screws, leg.home_link_poses, bad, leg.tip_home_pose)


def test_truncation_drops_the_tip():
    leg = yaw_pitch_pitch_leg()
    t = leg.truncated(1)
    assert t.dof == 1 and not t.has_tip
    assert leg.truncated(3).has_tip
    with pytest.raises(ValueError):
        leg.truncated(0)


def test_fingerprint_tracks_content():
    a = yaw_pitch_pitch_leg()
    b = yaw_pitch_pitch_leg()
    c = yaw_pitch_pitch_leg(lengths=(0.045, 0.078, 0.123))
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


# morphology vectors ---------------------------------------------------------


def test_healthy_morphology(hexapod):
    mv = MorphologyVectors.healthy(hexapod)
    assert mv.reduced_dof == 24
    assert mv.tip_present(hexapod).all()
    validate_morphology(hexapod, mv)


def test_scenario_morphologies(hexapod, morphologies):
    s1 = morphologies["legs34_removed"]
    assert list(s1.leg_existence) == [1, 1, 0, 0, 1, 1]
    assert s1.reduced_dof == 18
    s2 = morphologies["legs45_one_link"]
    assert list(s2.leg_existence) == [1] * 6
    assert s2.reduced_dof == 20
    assert list(s2.tip_present(hexapod)) == [True, True, True, False, False, True]


def test_non_prefix_pattern_rejected(hexapod):
    x = np.ones(18, dtype=int)
    x[4] = 0  # leg 2 keeps links 1 and 3
    mv = MorphologyVectors.from_links(x, hexapod.leg_sizes)
    with pytest.raises(NonPrefixPattern) as err:
        validate_morphology(hexapod, mv)
    assert err.value.leg == 1


def test_inconsistent_leg_flag_rejected(hexapod):
    mv = MorphologyVectors(np.ones(18), [1, 1, 0, 1, 1, 1], hexapod.leg_sizes)
    with pytest.raises(InconsistentLegFlag):
        validate_morphology(hexapod, mv)
    with pytest.raises(InconsistentLegFlag):
        apply_damage(mv, DamageEvent.remove_legs(0))


def test_non_binary_rejected(hexapod):
    with pytest.raises(ValueError):
        MorphologyVectors(np.full(18, 2), np.ones(6), hexapod.leg_sizes)


def test_damage_unknown_leg(hexapod):
    with pytest.raises(InvalidMorphology):
        apply_damage(MorphologyVectors.healthy(hexapod), DamageEvent.remove_legs(7))


events = st.lists(
    st.builds(
        DamageEvent,
        st.lists(st.integers(0, 5), min_size=1, max_size=3).map(tuple),
        st.integers(0, 3),
    ),
    max_size=4,
)


@given(events)
def test_damage_is_idempotent_and_valid(evs):
    model = build_hexapod_default()
    mv = apply_damage(MorphologyVectors.healthy(model), evs)
    validate_morphology(model, mv)
    assert apply_damage(mv, evs) == mv
    # damage never restores links
    assert np.all(mv.link_existence <= 1)


@given(events, events)
def test_damage_commutes(a, b):
    model = build_hexapod_default()
    h = MorphologyVectors.healthy(model)
    assert apply_damage(apply_damage(h, a), b) == apply_damage(apply_damage(h, b), a)


def test_reduced_model_matches_morphology(hexapod, morphologies):
    for mv in morphologies.values():
        red = hexapod.reduced(mv)
        assert red.dof == mv.reduced_dof
        assert red.N == int(mv.leg_existence.sum())


# robot files ----------------------------------------------------------------


def test_json_round_trip(tmp_path, hexapod):
    p = tmp_path / "robot.json"
    save_robot(hexapod, p)
    m2 = load_robot(p)
    assert m2.dof == hexapod.dof
    np.testing.assert_array_equal(m2.body_inertia, hexapod.body_inertia)
    for a, b in zip(m2.attached_legs, hexapod.attached_legs):
        np.testing.assert_allclose(a.screws, b.screws, atol=0)
        assert a.fingerprint() == b.fingerprint()


def test_json_alternative_forms(hexapod):
    d = robot_to_dict(hexapod)
    d["body"] = {"mass": 1.35, "inertia": [46e-4, 9.36e-4, 52e-4]}
    d["legs"][0]["attachment"] = {"yaw": 0.0, "position": list(HEXAPOD_HIPS[0])}
    d["legs"][1]["morphology"] = d["catalog"][0]["name"]
    m = robot_from_dict(d)
    np.testing.assert_array_equal(m.body_inertia, hexapod.body_inertia)
    assert m.legs[1].morphology == 0


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(extra=1),
        lambda d: d.update(schema_version=2),
        lambda d: d.pop("body"),
        lambda d: d["body"].update(colour="red"),
        lambda d: d["catalog"][0].update(prismatic=True),
        lambda d: d["catalog"][0]["links"][0].update(friction=0.1),
        lambda d: d["legs"][0].update(morphology="nope"),
        lambda d: d["legs"][0]["attachment"].update(rotation=[[2, 0, 0], [0, 1, 0], [0, 0, 1]]),
        lambda d: d["legs"][0]["attachment"].update(yaw=0.1),
        lambda d: d["catalog"][0]["links"].pop(),
    ],
)
def test_json_rejects_bad_files(hexapod, mutate):
    d = json.loads(json.dumps(robot_to_dict(hexapod)))
    mutate(d)
    with pytest.raises(RobotFileError):
        robot_from_dict(d)
