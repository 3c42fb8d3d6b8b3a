import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetskel.autodiff import Parameter, Tensor, gradient_check
from hetskel.errors import ConsistencyError, ShapeError, TopologyError
from hetskel.topology import (
    C17,
    C20,
    C20_3D,
    COMMON_BAND,
    EXTREMITY_BAND,
    FACIAL_BAND,
    J25,
    U30,
    PromptSet,
    Provenance,
    SkeletonSequence,
    build_prompted_unified,
    common_joint_pairs,
    from_unified_slots,
    interpolate_spine,
    reference_json_path,
    slot_map,
    to_unified_slots,
    topology_reference,
)


def prompts(rng=None, zero=False):
    def p(shape):
        return Parameter(np.zeros(shape) if zero else rng.normal(size=shape))

    return PromptSet(p((5, 3)), p((10, 3)), p((5, 3)))


def c17(rng, m=1, t=3):
    return SkeletonSequence(C17, rng.normal(size=(m, t, 17, 2)))


def test_topology_sizes():
    assert (J25.n_joints, J25.dims) == (25, 3)
    assert (C17.n_joints, C17.dims) == (17, 2)
    assert C20.names == C17.names + ("spine", "base_of_spine", "middle_of_spine")
    assert U30.n_joints == 30 and U30.dims == 3


def test_slot_maps_are_injective_with_expected_images():
    j = slot_map(J25)
    c = slot_map(C20)
    assert len(set(j.values())) == 25
    assert len(set(c.values())) == 20
    assert set(j.values()) == set(range(5, 30))
    assert set(c.values()) == set(range(0, 20))
    assert set(j.values()) & set(c.values()) == set(COMMON_BAND)


def test_bands_partition_all_slots():
    bands = [set(FACIAL_BAND), set(COMMON_BAND), set(EXTREMITY_BAND)]
    assert sum(len(b) for b in bands) == 30
    assert set().union(*bands) == set(range(30))
    assert len(COMMON_BAND) == 15


def test_c17_has_no_slot_map():
    with pytest.raises(TopologyError):
        slot_map(C17)


def test_spine_example():
    x = np.zeros((1, 1, 17, 2))
    x[0, 0, C17.index("left_shoulder")] = (1, 2)
    x[0, 0, C17.index("right_shoulder")] = (-1, 2)
    x[0, 0, C17.index("left_hip")] = (0.5, 0)
    x[0, 0, C17.index("right_hip")] = (-0.5, 0)
    out = interpolate_spine(SkeletonSequence(C17, x)).array[0, 0]
    np.testing.assert_array_equal(out[C20.index("spine")], (0, 2))
    np.testing.assert_array_equal(out[C20.index("base_of_spine")], (0, 0))
    np.testing.assert_array_equal(out[C20.index("middle_of_spine")], (0, 1))
    np.testing.assert_array_equal(out[:17], x[0, 0])


def test_spine_of_origin_pose_is_origin():
    out = interpolate_spine(SkeletonSequence(C17, np.zeros((2, 4, 17, 2)))).array
    np.testing.assert_array_equal(out[..., 17:, :], 0.0)


def spine_oracle(frame):
    ls, rs, lh, rh = (frame[C17.index(n)] for n in ("left_shoulder", "right_shoulder", "left_hip", "right_hip"))
    spine = [(ls[d] + rs[d]) / 2 for d in range(2)]
    base = [(lh[d] + rh[d]) / 2 for d in range(2)]
    middle = [(spine[d] + base[d]) / 2 for d in range(2)]
    return np.array([spine, base, middle])


@given(st.integers(1, 2), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_spine_matches_scalar_oracle(m, t, seed):
    x = np.random.default_rng(seed).normal(size=(m, t, 17, 2))
    out = interpolate_spine(SkeletonSequence(C17, x)).array
    for p in range(m):
        for f in range(t):
            np.testing.assert_array_equal(out[p, f, 17:], spine_oracle(x[p, f]))
    # middle of spine is the mean of the four shoulder/hip joints
    four = [C17.index(n) for n in ("left_shoulder", "right_shoulder", "left_hip", "right_hip")]
    np.testing.assert_allclose(out[..., 19, :], x[..., four, :].mean(axis=-2), rtol=0, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_spine_is_affine_equivariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 17, 2))
    a = rng.normal(size=(2, 2))
    b = rng.normal(size=2)
    mapped_first = interpolate_spine(SkeletonSequence(C17, x @ a.T + b)).array
    mapped_after = interpolate_spine(SkeletonSequence(C17, x)).array @ a.T + b
    np.testing.assert_allclose(mapped_first, mapped_after, rtol=0, atol=1e-12)


def test_spine_rejects_other_topologies(rng):
    with pytest.raises(TopologyError):
        interpolate_spine(SkeletonSequence(J25, rng.normal(size=(1, 2, 25, 3))))


def test_sequence_validation(rng):
    with pytest.raises(ShapeError):
        SkeletonSequence(C17, rng.normal(size=(3, 2, 17, 2)))
    with pytest.raises(TopologyError):
        SkeletonSequence(C17, rng.normal(size=(1, 2, 17, 3)))


def test_occupancy_masks(rng):
    j = to_unified_slots(SkeletonSequence(J25, rng.normal(size=(1, 2, 25, 3))))
    c = to_unified_slots(SkeletonSequence(C20_3D, rng.normal(size=(1, 2, 20, 3))))
    assert np.array_equal(np.flatnonzero(j.occupied), np.arange(5, 30))
    assert np.array_equal(np.flatnonzero(c.occupied), np.arange(0, 20))
    spine_slots = [U30.index(n) for n in ("spine", "middle_of_spine", "base_of_spine")]
    assert np.all(c.provenance[spine_slots] == Provenance.INTERPOLATED)


def test_unified_slots_round_trip(rng):
    for topo, n in ((J25, 25), (C20_3D, 20)):
        x = rng.normal(size=(2, 3, n, 3))
        back = from_unified_slots(to_unified_slots(SkeletonSequence(topo, x)), topo)
        np.testing.assert_array_equal(back, x)


def test_unified_slots_need_3d(rng):
    with pytest.raises(TopologyError, match="lift"):
        to_unified_slots(interpolate_spine(c17(rng)))


def test_zero_prompt_fills_facial_slots_with_zeros(rng):
    u = build_prompted_unified(
        to_unified_slots(SkeletonSequence(J25, rng.normal(size=(1, 4, 25, 3)))), prompts(zero=True), "J"
    )
    assert u.shape == (1, 4, 30, 3)
    np.testing.assert_array_equal(u.data.data[..., :5, :], 0.0)
    assert np.all(u.provenance[:5] == Provenance.PROMPT)
    assert np.all(u.provenance[5:] == Provenance.REAL)


def test_c_prompt_is_broadcast_over_frames_and_persons(rng):
    ps = prompts(rng)
    u = build_prompted_unified(to_unified_slots(SkeletonSequence(C20_3D, rng.normal(size=(2, 5, 20, 3)))), ps, "C")
    for p in range(2):
        for f in range(5):
            np.testing.assert_array_equal(u.data.data[p, f, 20:], ps.C.data)


def test_prompting_never_overwrites_real_slots(rng):
    x = rng.normal(size=(2, 3, 25, 3))
    partial = to_unified_slots(SkeletonSequence(J25, x))
    u = build_prompted_unified(partial, prompts(rng), "J")
    np.testing.assert_array_equal(u.data.data[..., 5:, :], partial.values.data)
    assert u.data.shape[-2] == 30


def test_gradient_of_one_slot_reaches_one_prompt_row(rng):
    ps = prompts(rng)
    partial = to_unified_slots(SkeletonSequence(J25, rng.normal(size=(1, 3, 25, 3))))

    def loss():
        u = build_prompted_unified(partial, ps, "J")
        return (u.data[..., 2, :] * u.data[..., 2, :]).sum()

    assert gradient_check(loss, [ps.J]) < 1e-8
    loss().backward()
    rows = np.flatnonzero(np.abs(ps.J.grad).sum(axis=1))
    assert rows.tolist() == [2]


def test_occupancy_stream_mismatch(rng):
    partial = to_unified_slots(SkeletonSequence(J25, rng.normal(size=(1, 2, 25, 3))))
    with pytest.raises(ConsistencyError):
        build_prompted_unified(partial, prompts(rng), "C")


def test_prompt_shapes_are_validated():
    with pytest.raises(ShapeError):
        PromptSet(Parameter(np.zeros((4, 3))), Parameter(np.zeros((10, 3))), Parameter(np.zeros((5, 3))))


def unified_pair(rng, m=1, t=2):
    ps = prompts(rng)
    uj = build_prompted_unified(to_unified_slots(SkeletonSequence(J25, rng.normal(size=(m, t, 25, 3)))), ps, "J")
    uc = build_prompted_unified(to_unified_slots(SkeletonSequence(C20_3D, rng.normal(size=(m, t, 20, 3)))), ps, "C")
    return uc, uj


def test_common_pairs_cover_fifteen_slots(rng):
    uc, uj = unified_pair(rng)
    pc, pj = common_joint_pairs(uc, uj)
    assert pc.shape[-2] == pj.shape[-2] == 15


def test_identical_common_slots_give_zero_differences(rng):
    uc, uj = unified_pair(rng)
    uc.data.data[..., 5:20, :] = uj.data.data[..., 5:20, :]
    pc, pj = common_joint_pairs(uc, uj)
    np.testing.assert_array_equal(pc.data - pj.data, 0.0)


def test_common_pair_msd_matches_double_loop(rng):
    uc, uj = unified_pair(rng, m=2, t=3)
    pc, pj = common_joint_pairs(uc, uj)
    got = float(((pc.data - pj.data) ** 2).sum(axis=-1).mean())
    total, count = 0.0, 0
    for p in range(2):
        for f in range(3):
            for slot in range(5, 20):
                total += sum((uc.data.data[p, f, slot, d] - uj.data.data[p, f, slot, d]) ** 2 for d in range(3))
                count += 1
    assert got == pytest.approx(total / count, rel=1e-12)


def test_common_pairs_shape_mismatch(rng):
    uc, _ = unified_pair(rng, t=2)
    _, uj = unified_pair(rng, t=3)
    with pytest.raises(ShapeError):
        common_joint_pairs(uc, uj)


def test_reference_json_matches_tables():
    doc = json.loads(reference_json_path().read_text())
    assert doc == json.loads(json.dumps(topology_reference()))
    assert len(doc["common_set"]) == 15
    assert doc["topologies"]["C17"]["joints"][0] == "nose"
    assert doc["topologies"]["J25"]["joints"][0] == "base_of_spine"
