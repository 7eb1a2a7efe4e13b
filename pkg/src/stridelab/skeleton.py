"""Reduced-order 15-joint humanoid skeleton."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

WHOLE = "WHOLE"
UPPER = "UPPER"
LOWER = "LOWER"
LEFT_ARM = "LEFT_ARM"
RIGHT_ARM = "RIGHT_ARM"

GROUP_NAMES = (WHOLE, UPPER, LOWER, LEFT_ARM, RIGHT_ARM)


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: int
    offset: tuple  # meters, position in parent frame at rest
    dof_limits: tuple  # ((lo, hi),) * 3 per axis, radians
    kp: float
    kd: float
    inertia: float
    torque_max: float

    def __post_init__(self):
        if self.name != "pelvis":
            if self.kp <= 0 or self.kd <= 0 or self.inertia <= 0 or self.torque_max <= 0:
                raise DataError(f"joint {self.name}: gains must be positive")
        for lo, hi in self.dof_limits:
            if not lo < hi:
                raise DataError(f"joint {self.name}: dof limit lower must be < upper")


@dataclass(frozen=True)
class Skeleton:
    joints: tuple  # ordered JointSpec, root first
    body_part_groups: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.joints[0].parent != -1:
            raise DataError("joint 0 must be the root with parent -1")
        for i, j in enumerate(self.joints[1:], start=1):
            if not 0 <= j.parent < i:
                raise DataError(f"joint {i} parent must precede it in the order")

    @property
    def num_joints(self):
        return len(self.joints)

    @property
    def names(self):
        return [j.name for j in self.joints]

    def index(self, name):
        return self.names.index(name)

    @property
    def parents(self):
        return np.array([j.parent for j in self.joints])

    @property
    def offsets(self):
        return np.array([j.offset for j in self.joints])

    @property
    def dof_low(self):
        # (J-1, 3) limits for the non-root joints
        return np.array([[lo for lo, _ in j.dof_limits] for j in self.joints[1:]])

    @property
    def dof_high(self):
        return np.array([[hi for _, hi in j.dof_limits] for j in self.joints[1:]])

    @property
    def kp(self):
        return np.array([j.kp for j in self.joints[1:]])

    @property
    def kd(self):
        return np.array([j.kd for j in self.joints[1:]])

    @property
    def inertia(self):
        return np.array([j.inertia for j in self.joints[1:]])

    @property
    def torque_max(self):
        return np.array([j.torque_max for j in self.joints[1:]])

    def group(self, name):
        return self.body_part_groups[name]


_LIMIT_FULL = ((-2.6, 2.6), (-2.6, 2.6), (-2.6, 2.6))

# Heavier segments (torso, hips) get doubled gains/inertia/torque.
_LIGHT = dict(kp=60.0, kd=5.0, inertia=0.5, torque_max=50.0)
_HEAVY = dict(kp=120.0, kd=10.0, inertia=1.0, torque_max=100.0)

# A-pose: arms abducted 30 deg from vertical in the frontal plane.
_ARM30_Y = float(np.sin(np.deg2rad(30.0)))
_ARM30_Z = -float(np.cos(np.deg2rad(30.0)))
_UPPER_ARM = 0.28
_FOREARM = 0.25


def default_skeleton():
    """The fixed 15-joint humanoid.

    Standing height (head joint) 1.7 m, hip height 0.9 m, feet on the
    ground plane at rest. Identity local rotations give the A-pose.
    """
    j = [
        JointSpec("pelvis", -1, (0.0, 0.0, 0.0), _LIMIT_FULL, 1.0, 1.0, 1.0, 1.0),
        JointSpec("torso", 0, (0.0, 0.0, 0.45), _LIMIT_FULL, **_HEAVY),
        JointSpec("head", 1, (0.0, 0.0, 0.35), _LIMIT_FULL, **_LIGHT),
        JointSpec("l_shoulder", 1, (0.0, 0.20, 0.12), _LIMIT_FULL, **_LIGHT),
        JointSpec("l_elbow", 3, (0.0, _ARM30_Y * _UPPER_ARM, _ARM30_Z * _UPPER_ARM),
                  _LIMIT_FULL, **_LIGHT),
        JointSpec("l_hand", 4, (0.0, _ARM30_Y * _FOREARM, _ARM30_Z * _FOREARM),
                  _LIMIT_FULL, **_LIGHT),
        JointSpec("r_shoulder", 1, (0.0, -0.20, 0.12), _LIMIT_FULL, **_LIGHT),
        JointSpec("r_elbow", 6, (0.0, -_ARM30_Y * _UPPER_ARM, _ARM30_Z * _UPPER_ARM),
                  _LIMIT_FULL, **_LIGHT),
        JointSpec("r_hand", 7, (0.0, -_ARM30_Y * _FOREARM, _ARM30_Z * _FOREARM),
                  _LIMIT_FULL, **_LIGHT),
        JointSpec("l_hip", 0, (0.0, 0.10, 0.0), _LIMIT_FULL, **_HEAVY),
        JointSpec("l_knee", 9, (0.0, 0.0, -0.42), _LIMIT_FULL, **_LIGHT),
        JointSpec("l_foot", 10, (0.0, 0.0, -0.48), _LIMIT_FULL, **_LIGHT),
        JointSpec("r_hip", 0, (0.0, -0.10, 0.0), _LIMIT_FULL, **_HEAVY),
        JointSpec("r_knee", 12, (0.0, 0.0, -0.42), _LIMIT_FULL, **_LIGHT),
        JointSpec("r_foot", 13, (0.0, 0.0, -0.48), _LIMIT_FULL, **_LIGHT),
    ]
    groups = {
        WHOLE: frozenset(range(1, 15)),
        UPPER: frozenset({1, 2, 3, 4, 5, 6, 7, 8}),
        LOWER: frozenset({9, 10, 11, 12, 13, 14}),
        LEFT_ARM: frozenset({3, 4, 5}),
        RIGHT_ARM: frozenset({6, 7, 8}),
    }
    return Skeleton(joints=tuple(j), body_part_groups=groups)


FOOT_JOINT_NAMES = ("l_foot", "r_foot")
