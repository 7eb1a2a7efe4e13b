"""Humanoid state, forward kinematics, and heading-local proprioception.

All functions broadcast over leading batch axes; a single state uses
unbatched shapes (root_pos (3,), joint_rot (J-1, 4), ...).
"""
from dataclasses import dataclass

import numpy as np

from . import rotations as rot
from .errors import DataError

PROPRIO_PER_JOINT = 15  # pos 3 + rot 6 + lin vel 3 + ang vel 3
PROPRIO_DIM = 15 * PROPRIO_PER_JOINT


@dataclass
class HumanoidState:
    root_pos: np.ndarray  # (..., 3) meters, world
    root_yaw: np.ndarray  # (...,) radians
    root_lin_vel: np.ndarray  # (..., 3) m/s
    root_yaw_rate: np.ndarray  # (...,) rad/s
    joint_rot: np.ndarray  # (..., J-1, 4) unit quaternions, local
    joint_ang_vel: np.ndarray  # (..., J-1, 3) rad/s, parent frame
    time: np.ndarray  # (...,) seconds

    def copy(self):
        return HumanoidState(*(np.array(getattr(self, f)) for f in _FIELDS))

    def validate(self):
        for f in _FIELDS:
            if not np.all(np.isfinite(getattr(self, f))):
                raise DataError(f"state.{f} contains non-finite values")
        norms = np.linalg.norm(self.joint_rot, axis=-1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise DataError("joint_rot quaternions must be unit norm within 1e-9")

    def select(self, idx):
        """Pick one environment out of a batched state."""
        return HumanoidState(*(np.array(getattr(self, f)[idx]) for f in _FIELDS))


_FIELDS = (
    "root_pos",
    "root_yaw",
    "root_lin_vel",
    "root_yaw_rate",
    "joint_rot",
    "joint_ang_vel",
    "time",
)


def rest_state(skel, root_xy=(0.0, 0.0), root_yaw=0.0, root_z=None):
    """Standing A-pose at rest."""
    if root_z is None:
        root_z = -min(0.0, _lowest_rest_offset(skel))
    nj = skel.num_joints - 1
    return HumanoidState(
        root_pos=np.array([root_xy[0], root_xy[1], root_z]),
        root_yaw=np.asarray(float(root_yaw)),
        root_lin_vel=np.zeros(3),
        root_yaw_rate=np.asarray(0.0),
        joint_rot=rot.quat_identity((nj,)),
        joint_ang_vel=np.zeros((nj, 3)),
        time=np.asarray(0.0),
    )


def _lowest_rest_offset(skel):
    pos = np.zeros((skel.num_joints, 3))
    for i in range(1, skel.num_joints):
        pos[i] = pos[skel.joints[i].parent] + np.asarray(skel.joints[i].offset)
    return float(pos[:, 2].min())


def stack_states(states):
    return HumanoidState(
        *(np.stack([getattr(s, f) for s in states]) for f in _FIELDS)
    )


def forward_kinematics(skel, state):
    """World positions (..., J, 3) and world rotations (..., J, 4)."""
    batch = np.shape(state.root_yaw)
    nj = skel.num_joints
    pos = np.zeros(batch + (nj, 3))
    quat = np.zeros(batch + (nj, 4))
    pos[..., 0, :] = state.root_pos
    quat[..., 0, :] = rot.quat_from_yaw(state.root_yaw)
    offsets = skel.offsets
    for i in range(1, nj):
        p = skel.joints[i].parent
        quat[..., i, :] = rot.quat_mul(quat[..., p, :], state.joint_rot[..., i - 1, :])
        pos[..., i, :] = pos[..., p, :] + rot.quat_rotate(quat[..., p, :], offsets[i])
    return pos, rot.quat_canonical(quat)


def forward_velocities(skel, state, pos=None, quat=None):
    """World linear (..., J, 3) and angular (..., J, 3) joint velocities.

    Rigid-chain propagation: each joint adds its local angular velocity
    (expressed in the parent's world frame) to the parent's.
    """
    if pos is None or quat is None:
        pos, quat = forward_kinematics(skel, state)
    batch = np.shape(state.root_yaw)
    nj = skel.num_joints
    lin = np.zeros(batch + (nj, 3))
    ang = np.zeros(batch + (nj, 3))
    lin[..., 0, :] = state.root_lin_vel
    ang[..., 0, 2] = state.root_yaw_rate
    for i in range(1, nj):
        p = skel.joints[i].parent
        ang[..., i, :] = ang[..., p, :] + rot.quat_rotate(
            quat[..., p, :], state.joint_ang_vel[..., i - 1, :]
        )
        lin[..., i, :] = lin[..., p, :] + rot._cross3(
            ang[..., p, :], pos[..., i, :] - pos[..., p, :]
        )
    return lin, ang


def heading_frame(state):
    """(-root_xy translation, -yaw rotation) pair used for normalization."""
    inv_yaw = rot.quat_from_yaw(-state.root_yaw)
    origin = np.concatenate(
        [state.root_pos[..., :2], np.zeros(np.shape(state.root_yaw) + (1,))], axis=-1
    )
    return origin, inv_yaw


def proprioception(skel, state, fk=None, vel=None):
    """225-dim heading-local self-state: per joint pos, 6D rot, lin/ang vel."""
    pos, quat = fk if fk is not None else forward_kinematics(skel, state)
    lin, ang = vel if vel is not None else forward_velocities(skel, state, pos, quat)
    origin, inv_yaw = heading_frame(state)
    inv_yaw_j = inv_yaw[..., None, :]
    p_loc = rot.quat_rotate(inv_yaw_j, pos - origin[..., None, :])
    r_loc = rot.quat_to_6d(rot.quat_mul(inv_yaw_j, quat))
    v_loc = rot.quat_rotate(inv_yaw_j, lin)
    w_loc = rot.quat_rotate(inv_yaw_j, ang)
    feat = np.concatenate([p_loc, r_loc, v_loc, w_loc], axis=-1)
    return feat.reshape(feat.shape[:-2] + (PROPRIO_DIM,))
