from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reactmotion.errors import ConfigError, TopologyMismatchError, ValidationError
from reactmotion.skeleton import (
    COCO17_JOINTS,
    H36M17_JOINTS,
    H36M17_PARENTS,
    MotionClip,
    PairedClip,
    PoseFrame,
    SkeletonTopology,
    bone_lengths,
    default_topology,
    mirror_frame,
    mirror_joints,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def _frame(joints, pid=0, idx=0):
    return PoseFrame(np.asarray(joints, dtype=float), pid, idx)


def test_joint_orders():
    assert len(H36M17_JOINTS) == len(COCO17_JOINTS) == 17
    assert H36M17_JOINTS[0] == "pelvis" and H36M17_JOINTS[16] == "right_wrist"
    assert H36M17_JOINTS[10] == "head_top"
    assert COCO17_JOINTS[0] == "nose" and COCO17_JOINTS[11] == "left_hip"


def test_tree_edges_match_kinematic_chain():
    name = dict(enumerate(H36M17_JOINTS))
    edges = {(name[p], name[j]) for j, p in enumerate(H36M17_PARENTS) if p >= 0}
    assert ("pelvis", "right_hip") in edges and ("pelvis", "left_hip") in edges
    assert ("pelvis", "spine") in edges and ("spine", "neck") in edges
    assert ("neck", "nose") in edges and ("nose", "head_top") in edges
    assert ("neck", "left_shoulder") in edges and ("right_elbow", "right_wrist") in edges
    assert len(edges) == 16


def test_default_topology_is_a_tree(topo):
    order = topo.traversal_order()
    assert order[0] == 0 and sorted(order) == list(range(17))
    assert topo.root == 0 and topo.num_bones == 16
    assert np.all(topo.bone_reference > 0)


@pytest.mark.parametrize(
    "parents",
    [
        (-1, -1) + H36M17_PARENTS[2:],  # two roots
        (1, 0) + H36M17_PARENTS[2:],  # cycle, no root
        (-1, 2, 1) + H36M17_PARENTS[3:],  # cycle off the root
    ],
)
def test_bad_trees_rejected(parents):
    with pytest.raises(ConfigError):
        SkeletonTopology(default_topology().joint_set, parents, default_topology().reference_bone_lengths)


@pytest.mark.parametrize("bad", [0.0, -0.1, float("nan"), float("inf")])
def test_bone_lengths_must_be_positive_finite(bad):
    ref = list(default_topology().reference_bone_lengths)
    ref[5] = bad
    with pytest.raises(ConfigError):
        SkeletonTopology(default_topology().joint_set, H36M17_PARENTS, ref)


def test_topology_file_roundtrip(tmp_path, topo):
    path = tmp_path / "topo.json"
    path.write_text(json.dumps(topo.to_dict()))
    again = SkeletonTopology.from_file(path)
    assert again.parent == topo.parent
    np.testing.assert_array_equal(again.bone_reference, topo.bone_reference)


def test_pose_frame_invariants():
    with pytest.raises(ValidationError):
        _frame(np.full((17, 3), np.nan))
    with pytest.raises(ValidationError):
        _frame(np.zeros((17, 3)), pid=2)
    with pytest.raises(ValidationError):
        _frame(np.zeros((17, 3)), idx=-1)
    with pytest.raises(TopologyMismatchError):
        _frame(np.zeros((16, 3)))
    f = _frame(np.arange(51.0).reshape(17, 3))
    assert f.features.shape == (51,)
    assert not f.joints.flags.writeable


def test_mirror_examples():
    j = np.zeros((17, 3))
    j[3] = (1.0, 2.0, 3.0)
    j[4] = (0.0, 1.0, 0.0)
    m = mirror_frame(_frame(j, pid=0, idx=7))
    np.testing.assert_array_equal(m.joints[3], [-1.0, 2.0, -3.0])
    np.testing.assert_array_equal(m.joints[4], [0.0, 1.0, 0.0])
    assert m.person_id == 1 and m.frame_index == 7


@given(arrays(np.float64, (17, 3), elements=finite), st.integers(0, 1), st.integers(0, 10**6))
def test_mirror_is_an_involution(joints, pid, idx):
    f = _frame(joints, pid, idx)
    back = mirror_frame(mirror_frame(f))
    assert back == f
    assert back.joints.tobytes() == f.joints.tobytes()


def test_mirror_preserves_bone_lengths(topo, rng):
    j = rng.normal(size=(17, 3))
    np.testing.assert_array_equal(bone_lengths(j, topo), bone_lengths(mirror_joints(j), topo))


def test_bone_length_examples(topo):
    j = np.zeros((17, 3))
    j[3] = (0, 0, 3)  # right ankle; its parent, the right knee, sits at the origin
    lengths = bone_lengths(_frame(j), topo)
    assert lengths.shape == (16,)
    assert lengths[2] == 3.0
    assert np.count_nonzero(lengths) == 1


@settings(max_examples=50)
@given(arrays(np.float64, (17, 3), elements=finite))
def test_bone_lengths_nonnegative(joints):
    lengths = bone_lengths(joints, default_topology())
    assert lengths.shape == (16,) and np.all(lengths >= 0)


def test_bone_lengths_topology_mismatch(topo):
    with pytest.raises(TopologyMismatchError):
        bone_lengths(np.zeros((15, 3)), topo)


def test_motion_clip_indexing():
    clip = MotionClip(np.zeros((5, 17, 3)), 1, 10)
    assert len(clip) == 5 and list(clip.frame_indices) == [10, 11, 12, 13, 14]
    assert clip[-1].frame_index == 14 and clip[0].person_id == 1
    assert clip.slice(1, 3).start_index == 11
    with pytest.raises(IndexError):
        clip[5]
    again = MotionClip.from_frames(clip.frames)
    assert again == clip


def test_motion_clip_rejects_index_gaps():
    f0 = PoseFrame(np.zeros((17, 3)), 0, 0)
    f2 = PoseFrame(np.zeros((17, 3)), 0, 2)
    with pytest.raises(ValidationError):
        MotionClip.from_frames([f0, f2])


def test_paired_clip_alignment():
    a = MotionClip(np.zeros((4, 17, 3)), 0, 0)
    with pytest.raises(ValidationError):
        PairedClip(a, MotionClip(np.zeros((3, 17, 3)), 1, 0))
    with pytest.raises(ValidationError):
        PairedClip(a, MotionClip(np.zeros((4, 17, 3)), 1, 1))
    with pytest.raises(ValidationError):
        PairedClip(a, MotionClip(np.zeros((4, 17, 3)), 0, 0))
    assert len(PairedClip(a, MotionClip(np.zeros((4, 17, 3)), 1, 0))) == 4
