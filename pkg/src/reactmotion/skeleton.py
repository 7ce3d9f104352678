"""Joint sets, the H36M bone tree, pose containers and mirroring.

Coordinates are meters, y up. Every frame carries 17 joints in Human3.6M
order; the COCO-17 ordering only exists on the 2D side of preprocessing.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, TopologyMismatchError, ValidationError

NUM_JOINTS = 17
FEATS_PER_PERSON = NUM_JOINTS * 3


class JointSetName(str, enum.Enum):
    COCO17 = "COCO17"
    H36M17 = "H36M17"


COCO17_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

H36M17_JOINTS = (
    "pelvis", "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle", "spine",
    "neck", "nose", "head_top",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)

# -1 marks the root (pelvis).
H36M17_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)

PELVIS = 0


@dataclass(frozen=True)
class JointSet:
    name: JointSetName
    joint_names: tuple[str, ...]

    @property
    def count(self) -> int:
        return len(self.joint_names)

    def index(self, joint: str) -> int:
        return self.joint_names.index(joint)


COCO17 = JointSet(JointSetName.COCO17, COCO17_JOINTS)
H36M17 = JointSet(JointSetName.H36M17, H36M17_JOINTS)


@dataclass(frozen=True)
class SkeletonTopology:
    """Bone tree over a joint set with reference (target) bone lengths.

    ``reference_bone_lengths[j]`` is the length of the bone ending at joint
    ``j``; the root entry is 0 and is never used.
    """

    joint_set: JointSet
    parent: tuple[int, ...]
    reference_bone_lengths: np.ndarray = field(repr=False)

    def __post_init__(self):
        ref = np.array(self.reference_bone_lengths, dtype=np.float64)
        ref.setflags(write=False)
        object.__setattr__(self, "reference_bone_lengths", ref)
        if len(self.parent) != self.joint_set.count or ref.shape != (self.joint_set.count,):
            raise ConfigError("parent/length tables must have one entry per joint")
        self.traversal_order()  # tree check
        bones = ref[list(self.child_joints)]
        if not np.all(np.isfinite(bones)) or np.any(bones <= 0):
            raise ConfigError("reference bone lengths must be positive and finite")

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    @property
    def child_joints(self) -> tuple[int, ...]:
        """Non-root joints in index order; bone ``k`` ends at ``child_joints[k]``."""
        return tuple(j for j, p in enumerate(self.parent) if p >= 0)

    @property
    def num_bones(self) -> int:
        return len(self.child_joints)

    @property
    def bone_reference(self) -> np.ndarray:
        return self.reference_bone_lengths[list(self.child_joints)]

    def traversal_order(self) -> list[int]:
        """Root-to-leaf (breadth-first) joint order; raises on a malformed tree."""
        roots = [j for j, p in enumerate(self.parent) if p < 0]
        if len(roots) != 1:
            raise ConfigError(f"bone tree needs exactly one root, found {len(roots)}")
        children: dict[int, list[int]] = {j: [] for j in range(len(self.parent))}
        for j, p in enumerate(self.parent):
            if p >= 0:
                if p >= len(self.parent):
                    raise ConfigError(f"joint {j} has out-of-range parent {p}")
                children[p].append(j)
        order, queue, seen = [], [roots[0]], set()
        while queue:
            j = queue.pop(0)
            if j in seen:
                raise ConfigError("bone tree contains a cycle")
            seen.add(j)
            order.append(j)
            queue.extend(children[j])
        if len(order) != len(self.parent):
            raise ConfigError("bone tree does not reach every joint")
        return order

    @classmethod
    def from_file(cls, path: str | Path) -> "SkeletonTopology":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_dict(cls, cfg: dict) -> "SkeletonTopology":
        if cfg.get("joint_set", "H36M17") != "H36M17":
            raise ConfigError("only H36M17 reference skeletons are supported")
        lengths = np.zeros(NUM_JOINTS)
        table = cfg["bone_lengths"]
        for j, p in enumerate(H36M17_PARENTS):
            if p < 0:
                continue
            name = H36M17_JOINTS[j]
            if name not in table:
                raise ConfigError(f"missing reference length for bone ending at {name!r}")
            lengths[j] = float(table[name])
        return cls(H36M17, H36M17_PARENTS, lengths)

    def to_dict(self) -> dict:
        return {
            "joint_set": self.joint_set.name.value,
            "units": "m",
            "bone_lengths": {
                H36M17_JOINTS[j]: float(self.reference_bone_lengths[j]) for j in self.child_joints
            },
        }


def default_topology() -> SkeletonTopology:
    """The bundled reference skeleton (``data/reference_bones.json``)."""
    text = resources.files("reactmotion").joinpath("data/reference_bones.json").read_text()
    return SkeletonTopology.from_dict(json.loads(text))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PoseFrame:
    joints: np.ndarray
    person_id: int = 0
    frame_index: int = 0

    def __post_init__(self):
        joints = _frozen(self.joints)
        if joints.shape == (FEATS_PER_PERSON,):
            joints = _frozen(joints.reshape(NUM_JOINTS, 3))
        if joints.shape != (NUM_JOINTS, 3):
            raise TopologyMismatchError(f"expected 17x3 joints, got shape {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValidationError("pose frame has non-finite coordinates")
        if self.person_id not in (0, 1):
            raise ValidationError(f"person_id must be 0 or 1, got {self.person_id}")
        if self.frame_index < 0:
            raise ValidationError("frame_index must be non-negative")
        object.__setattr__(self, "joints", joints)

    def __eq__(self, other):
        if not isinstance(other, PoseFrame):
            return NotImplemented
        return (
            self.person_id == other.person_id
            and self.frame_index == other.frame_index
            and np.array_equal(self.joints, other.joints)
        )

    __hash__ = None

    @property
    def features(self) -> np.ndarray:
        """The 51-value feature vector (x, y, z per joint)."""
        return self.joints.reshape(-1)

    def replace(self, **changes) -> "PoseFrame":
        kw = {"joints": self.joints, "person_id": self.person_id, "frame_index": self.frame_index}
        kw.update(changes)
        return PoseFrame(**kw)


@dataclass(frozen=True, eq=False)
class MotionClip:
    """Gap-free run of frames for one person, stored as a (T, 17, 3) array."""

    joints: np.ndarray
    person_id: int = 0
    start_index: int = 0
    fps: Fraction = Fraction(50)

    def __post_init__(self):
        joints = _frozen(self.joints)
        if joints.ndim == 2 and joints.shape[1] == FEATS_PER_PERSON:
            joints = _frozen(joints.reshape(-1, NUM_JOINTS, 3))
        if joints.ndim != 3 or joints.shape[1:] != (NUM_JOINTS, 3):
            raise TopologyMismatchError(f"expected (T, 17, 3) joints, got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValidationError("clip has non-finite coordinates")
        fps = Fraction(self.fps)
        if fps <= 0:
            raise ValidationError("fps must be positive")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "fps", fps)

    def __len__(self) -> int:
        return self.joints.shape[0]

    def __eq__(self, other):
        if not isinstance(other, MotionClip):
            return NotImplemented
        return (
            self.person_id == other.person_id
            and self.start_index == other.start_index
            and self.fps == other.fps
            and np.array_equal(self.joints, other.joints)
        )

    __hash__ = None

    def __iter__(self) -> Iterator[PoseFrame]:
        return iter(self.frames)

    def __getitem__(self, i: int) -> PoseFrame:
        n = len(self)
        if i < 0:
            i += n
        if not 0 <= i < n:
            raise IndexError(i)
        return PoseFrame(self.joints[i], self.person_id, self.start_index + i)

    @property
    def frames(self) -> list[PoseFrame]:
        return [self[i] for i in range(len(self))]

    @property
    def features(self) -> np.ndarray:
        return self.joints.reshape(len(self), FEATS_PER_PERSON)

    @property
    def frame_indices(self) -> range:
        return range(self.start_index, self.start_index + len(self))

    def slice(self, start: int, stop: int) -> "MotionClip":
        """Sub-clip by position (not by frame index)."""
        return MotionClip(self.joints[start:stop], self.person_id, self.start_index + start, self.fps)

    @classmethod
    def from_frames(cls, frames: Sequence[PoseFrame], fps=Fraction(50)) -> "MotionClip":
        if not frames:
            raise ValidationError("a clip needs at least one frame")
        pid = frames[0].person_id
        start = frames[0].frame_index
        for k, f in enumerate(frames):
            if f.person_id != pid:
                raise ValidationError("clip frames must share one person_id")
            if f.frame_index != start + k:
                raise ValidationError(f"frame index gap at position {k}")
        return cls(np.stack([f.joints for f in frames]), pid, start, fps)


@dataclass(frozen=True)
class PairedClip:
    subject: MotionClip
    counterpart: MotionClip

    def __post_init__(self):
        if len(self.subject) != len(self.counterpart):
            raise ValidationError("paired clips must have equal length")
        if self.subject.start_index != self.counterpart.start_index:
            raise ValidationError("paired clips must have aligned frame indices")
        if self.subject.person_id != 0 or self.counterpart.person_id != 1:
            raise ValidationError("subject must be person 0 and counterpart person 1")

    def __len__(self) -> int:
        return len(self.subject)

    def slice(self, start: int, stop: int) -> "PairedClip":
        return PairedClip(self.subject.slice(start, stop), self.counterpart.slice(start, stop))


_MIRROR = np.array([-1.0, 1.0, -1.0])


def mirror_joints(joints: np.ndarray) -> np.ndarray:
    """Negate x and z on any (..., 3) array. Left/right labels are kept."""
    return np.asarray(joints, dtype=np.float64) * _MIRROR


def mirror_frame(frame: PoseFrame) -> PoseFrame:
    return PoseFrame(mirror_joints(frame.joints), 1 - frame.person_id, frame.frame_index)


def bone_vectors(joints: np.ndarray, topo: SkeletonTopology) -> np.ndarray:
    """Child minus parent for every bone; works on (..., 17, 3)."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape[-2:] != (topo.joint_set.count, 3):
        raise TopologyMismatchError(
            f"joint array {joints.shape} does not match a {topo.joint_set.count}-joint topology"
        )
    children = list(topo.child_joints)
    parents = [topo.parent[j] for j in children]
    return joints[..., children, :] - joints[..., parents, :]


def bone_lengths(frame: PoseFrame | np.ndarray, topo: SkeletonTopology) -> np.ndarray:
    """Euclidean length of each of the 16 bones, ordered by child joint index."""
    joints = frame.joints if isinstance(frame, PoseFrame) else frame
    return np.linalg.norm(bone_vectors(joints, topo), axis=-1)


def stack_frames(frames: Iterable[PoseFrame]) -> np.ndarray:
    return np.stack([f.joints for f in frames])
