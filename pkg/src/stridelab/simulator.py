"""Reduced-order deterministic physics stepper.

Joints: per-axis PD torque on rotation-vector coordinates, semi-implicit
Euler at sim_hz. Root: bounded planar/yaw acceleration with a kinematic
height clamp to the terrain.
"""
from dataclasses import dataclass

import numpy as np

from . import rotations as rot
from .errors import ParameterError, SimulationFault
from .humanoid import HumanoidState
from .terrain import sample_height


@dataclass
class Action:
    root_accel: np.ndarray  # (..., 2) m/s^2, heading-local
    yaw_accel: np.ndarray  # (...,) rad/s^2
    pd_targets: np.ndarray  # (..., J-1, 3) target angles, radians

    def copy(self):
        return Action(
            np.array(self.root_accel), np.array(self.yaw_accel), np.array(self.pd_targets)
        )


ROOT_ACCEL_MAX = 3.0  # m/s^2
YAW_ACCEL_MAX = 4.0  # rad/s^2
YAW_RATE_MAX = 2.0  # rad/s, turn-rate cap mirroring the planar speed cap


@dataclass(frozen=True)
class SimConfig:
    control_hz: int = 30
    sim_hz: int = 60
    substeps_per_control: int = 2
    hip_height: float = 0.9
    max_speed: float = 3.0
    slope_speed_coeff: float = 0.5

    def __post_init__(self):
        if self.sim_hz != self.control_hz * self.substeps_per_control:
            raise ParameterError("sim_hz must equal control_hz * substeps_per_control")
        if min(self.control_hz, self.sim_hz, self.substeps_per_control) <= 0:
            raise ParameterError("rates must be positive")
        if self.hip_height <= 0 or self.max_speed <= 0:
            raise ParameterError("hip_height and max_speed must be positive")


def clamp_action(action, skel):
    """Apply the documented action bounds in place-free fashion."""
    ra = np.asarray(action.root_accel, dtype=float)
    norm = np.linalg.norm(ra, axis=-1, keepdims=True)
    scale = np.where(norm > ROOT_ACCEL_MAX, ROOT_ACCEL_MAX / np.maximum(norm, 1e-12), 1.0)
    return Action(
        root_accel=ra * scale,
        yaw_accel=np.clip(np.asarray(action.yaw_accel, dtype=float), -YAW_ACCEL_MAX, YAW_ACCEL_MAX),
        pd_targets=np.clip(np.asarray(action.pd_targets, dtype=float), skel.dof_low, skel.dof_high),
    )


def _check_finite(state, action):
    for name in ("root_pos", "root_yaw", "root_lin_vel", "root_yaw_rate", "joint_rot", "joint_ang_vel"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise SimulationFault(f"state.{name}")
    for name in ("root_accel", "yaw_accel", "pd_targets"):
        if not np.all(np.isfinite(getattr(action, name))):
            raise SimulationFault(f"action.{name}")


def step(state, action, terrain, cfg, skel):
    """Advance one control step (substeps_per_control sim substeps).

    Pure: returns a new HumanoidState. Broadcasts over leading batch axes.
    """
    _check_finite(state, action)
    action = clamp_action(action, skel)
    dt = 1.0 / cfg.sim_hz

    theta = rot.quat_log(state.joint_rot)  # rotation-vector joint coordinates
    theta_dot = np.array(state.joint_ang_vel)
    xy = np.array(state.root_pos[..., :2])
    vel_xy = np.array(state.root_lin_vel[..., :2])
    yaw = np.array(state.root_yaw, dtype=float)
    yaw_rate = np.array(state.root_yaw_rate, dtype=float)
    z_prev = np.array(state.root_pos[..., 2])

    kp = skel.kp[:, None]
    kd = skel.kd[:, None]
    inertia = skel.inertia[:, None]
    tq_max = skel.torque_max[:, None]
    lo = skel.dof_low
    hi = skel.dof_high

    for _ in range(cfg.substeps_per_control):
        # Joint PD dynamics, per axis, semi-implicit Euler.
        tau = np.clip(kp * (action.pd_targets - theta) - kd * theta_dot, -tq_max, tq_max)
        theta_dot = theta_dot + (tau / inertia) * dt
        theta = theta + theta_dot * dt
        at_limit = (theta < lo) | (theta > hi)
        theta = np.clip(theta, lo, hi)
        theta_dot = np.where(at_limit, 0.0, theta_dot)

        # Root planar dynamics with terrain-coupled speed cap.
        a_world = rot.rotate_xy(action.root_accel, yaw)
        vel_xy = vel_xy + a_world * dt
        speed = np.linalg.norm(vel_xy, axis=-1)
        slope = _uphill_slope(terrain, xy, vel_xy, speed)
        cap = cfg.max_speed * (1.0 - cfg.slope_speed_coeff * slope)
        over = speed > cap
        scale = np.where(over, cap / np.maximum(speed, 1e-12), 1.0)
        vel_xy = vel_xy * scale[..., None]
        xy = xy + vel_xy * dt
        yaw_rate = np.clip(yaw_rate + action.yaw_accel * dt, -YAW_RATE_MAX, YAW_RATE_MAX)
        yaw = yaw + yaw_rate * dt

    z = sample_height(terrain, xy[..., 0], xy[..., 1]) + cfg.hip_height
    vz = (z - z_prev) * cfg.control_hz
    root_pos = np.concatenate([xy, z[..., None]], axis=-1)
    root_lin_vel = np.concatenate([vel_xy, vz[..., None]], axis=-1)
    return HumanoidState(
        root_pos=root_pos,
        root_yaw=yaw,
        root_lin_vel=root_lin_vel,
        root_yaw_rate=yaw_rate,
        joint_rot=rot.quat_exp(theta),
        joint_ang_vel=theta_dot,
        time=state.time + 1.0 / cfg.control_hz,
    )


def _uphill_slope(terrain, xy, vel_xy, speed, probe=0.1):
    """Terrain grade along the direction of travel, clipped at zero."""
    moving = speed > 1e-9
    d = vel_xy / np.maximum(speed, 1e-9)[..., None]
    h0 = sample_height(terrain, xy[..., 0], xy[..., 1])
    h1 = sample_height(terrain, xy[..., 0] + probe * d[..., 0], xy[..., 1] + probe * d[..., 1])
    return np.where(moving, np.maximum(0.0, (h1 - h0) / probe), 0.0)


def check_fall(state, terrain):
    """Always False: the reduced-order root clamp cannot fall.

    Retained as an extension hook; a full floating-base root model would
    give this real semantics.
    """
    return False
