"""Trajectories, spatial-temporal masks, goal assembly, rewards, termination."""
import enum
from dataclasses import dataclass, field

import numpy as np

from . import rotations as rot
from .errors import DataError, ParameterError
from .humanoid import forward_kinematics, forward_velocities, heading_frame
from .motion import clip_state

TRAJ_FPS = 30
WAYPOINT_COUNT = 10
WAYPOINT_SPACING_S = 0.5
TRAJ_GOAL_DIM = 2 * WAYPOINT_COUNT

NUM_JOINTS = 15
MOTION_GOAL_PER_JOINT = 25  # d_rot 6 + d_pos 3 + d_linvel 3 + d_angvel 3 + rot 6 + pos 3 + mask 1
MOTION_GOAL_DIM = NUM_JOINTS * MOTION_GOAL_PER_JOINT

MIN_PATH_LENGTH_M = 3.0

DEFAULT_GROUP_PROBS = {
    "NONE": 0.3,
    "WHOLE": 0.1,
    "UPPER": 0.3,
    "LEFT_ARM": 0.15,
    "RIGHT_ARM": 0.15,
}


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray  # (T, 2) world xy
    fps: int = TRAJ_FPS

    def __post_init__(self):
        if len(self.points) < 2:
            raise DataError("trajectory needs at least 2 points")

    @property
    def num_frames(self):
        return len(self.points)

    @property
    def duration(self):
        return (self.num_frames - 1) / self.fps

    @property
    def length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def point_at(self, frame):
        frame = np.clip(frame, 0, self.num_frames - 1)
        return self.points[frame]

    def heading_at(self, frame):
        frame = int(np.clip(frame, 0, self.num_frames - 2))
        d = self.points[frame + 1] - self.points[frame]
        if np.linalg.norm(d) < 1e-9:
            # scan forward for the next moving segment
            for k in range(frame + 1, self.num_frames - 1):
                d = self.points[k + 1] - self.points[k]
                if np.linalg.norm(d) >= 1e-9:
                    break
        if np.linalg.norm(d) < 1e-9:
            return 0.0
        return float(np.arctan2(d[1], d[0]))


@dataclass
class MaskPlan:
    mask: np.ndarray  # (T, 15) binary; column 0 always 0
    clip_id: str = None
    t_start: int = 0

    def __post_init__(self):
        m = np.asarray(self.mask)
        if not np.all((m == 0) | (m == 1)):
            raise DataError("mask entries must be 0 or 1")
        if np.any(m[:, 0] != 0):
            raise DataError("root joint (column 0) is never tracked")

    @property
    def num_frames(self):
        return len(self.mask)

    def active_at(self, frame):
        if frame < 0 or frame >= len(self.mask):
            return np.zeros(NUM_JOINTS)
        return self.mask[frame]


def empty_mask_plan(T):
    return MaskPlan(mask=np.zeros((T, NUM_JOINTS)))


@dataclass(frozen=True)
class RewardWeights:
    w_jp: float = 0.5
    w_jr: float = 0.3
    w_jv: float = 0.1
    w_rv: float = 0.1

    def __post_init__(self):
        w = (self.w_jp, self.w_jr, self.w_jv, self.w_rv)
        if any(x < 0 for x in w):
            raise ParameterError("reward weights must be nonnegative")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ParameterError("reward weights must sum to 1")


@dataclass(frozen=True)
class EpisodeConfig:
    traj_term_threshold: float = 0.5  # m
    track_term_threshold: float = 0.3  # m
    waypoint_spacing_s: float = WAYPOINT_SPACING_S
    waypoint_count: int = WAYPOINT_COUNT
    episode_length: int = 300  # frames

    def __post_init__(self):
        if self.traj_term_threshold <= 0 or self.track_term_threshold <= 0:
            raise ParameterError("termination thresholds must be positive")


class Termination(enum.Enum):
    CONTINUE = "continue"
    TRAJECTORY_DEVIATION = "trajectory_deviation"
    TRACKING_FAILURE = "tracking_failure"
    EPISODE_END = "episode_end"


def generate_trajectory(seed, duration_s, speed_range=(0.5, 2.0), max_turn_rate=0.6,
                        start_xy=(0.0, 0.0), start_heading=0.0):
    """Seeded random-walk path at 30 fps.

    Speed is piecewise constant (resampled every 2 s), heading rate every
    1 s. Paths shorter than 3 m are regenerated with a derived sub-seed.
    """
    lo, hi = float(speed_range[0]), float(speed_range[1])
    if not (0.0 <= lo <= hi <= 3.0):
        raise ParameterError("speed_range must be within [0, 3] m/s")
    if duration_s < 3.0:
        raise ParameterError("duration must be at least 3 s")
    if max_turn_rate < 0:
        raise ParameterError("max_turn_rate must be nonnegative")

    sub_seed = seed
    for _ in range(64):
        traj = _random_walk(sub_seed, duration_s, lo, hi, max_turn_rate, start_xy, start_heading)
        if traj.length >= MIN_PATH_LENGTH_M:
            return traj
        sub_seed = sub_seed * 2 + 1
    raise ParameterError(
        "speed_range too slow to reach the 3 m minimum path length at this duration"
    )


def _random_walk(seed, duration_s, lo, hi, max_turn_rate, start_xy, start_heading):
    rng = np.random.default_rng(seed)
    T = int(round(duration_s * TRAJ_FPS)) + 1
    t = np.arange(T) / TRAJ_FPS
    speed = rng.uniform(lo, hi, size=int(np.ceil(duration_s / 2.0)) + 1)[(t // 2.0).astype(int)]
    turn = rng.uniform(-max_turn_rate, max_turn_rate, size=int(np.ceil(duration_s)) + 1)[
        t.astype(int)
    ]
    heading = start_heading + np.concatenate([[0.0], np.cumsum(turn[:-1]) / TRAJ_FPS])
    step = np.stack([np.cos(heading), np.sin(heading)], axis=-1) * speed[:, None] / TRAJ_FPS
    pts = np.concatenate([[[0.0, 0.0]], np.cumsum(step[:-1], axis=0)]) + np.asarray(start_xy)
    return Trajectory(points=pts)


def straight_trajectory(duration_s, speed, start_xy=(0.0, 0.0), heading=0.0):
    T = int(round(duration_s * TRAJ_FPS)) + 1
    t = np.arange(T) / TRAJ_FPS
    d = np.array([np.cos(heading), np.sin(heading)])
    pts = np.asarray(start_xy) + t[:, None] * speed * d
    return Trajectory(points=pts)


def traj_goal(traj, frame, state, cfg=None):
    """Ten future waypoints, root-relative xy in the heading-local frame."""
    cfg = cfg or EpisodeConfig()
    step = int(round(cfg.waypoint_spacing_s * traj.fps))
    idx = frame + step * np.arange(1, cfg.waypoint_count + 1)
    wp = traj.point_at(idx)
    rel = wp - state.root_pos[..., None, :2]
    return rot.rotate_xy(rel, -state.root_yaw[..., None]).reshape(
        np.shape(state.root_yaw) + (2 * cfg.waypoint_count,)
    )


def generate_mask_plan(seed, T, skel, group_probs=None, window_range_s=None, fps=TRAJ_FPS,
                       from_start=False):
    """Sample one body-part group and one time window for an episode.

    With `from_start` the window begins at frame 0, where clips ramp their
    performance in from the rest pose, keeping the tracking onset feasible.
    """
    probs = dict(DEFAULT_GROUP_PROBS if group_probs is None else group_probs)
    total = sum(probs.values())
    if abs(total - 1.0) > 1e-9:
        raise ParameterError("group probabilities must sum to 1")
    rng = np.random.default_rng(seed)
    names = sorted(probs)
    group = rng.choice(names, p=[probs[n] for n in names])
    mask = np.zeros((T, NUM_JOINTS))
    if group == "NONE":
        return MaskPlan(mask=mask)
    lo_s, hi_s = window_range_s if window_range_s is not None else (1.0, T / fps)
    w_lo = max(1, int(round(lo_s * fps)))
    w_hi = max(w_lo, int(round(hi_s * fps)))
    t_s = 0 if from_start else int(rng.integers(0, max(1, T - w_lo)))
    w = int(rng.integers(w_lo, w_hi + 1))
    t_e = min(T, t_s + w)
    if group == "RANDOM":
        # arbitrary non-empty joint subset, so confidence-derived masks at
        # deployment stay in distribution
        joints = [j for j in range(1, NUM_JOINTS) if rng.random() < 0.5]
        if not joints:
            joints = [int(rng.integers(1, NUM_JOINTS))]
    else:
        joints = sorted(skel.group(group))
    mask[t_s:t_e, joints] = 1.0
    return MaskPlan(mask=mask, t_start=t_s)


def mask_plan_for_window(skel, T, group, t_start, t_end, clip_id=None, joints=None):
    """Deterministic plan: `group` (or explicit joints) active on [t_start, t_end)."""
    mask = np.zeros((T, NUM_JOINTS))
    idx = sorted(skel.group(group)) if joints is None else sorted(set(joints) - {0})
    t_start = max(0, int(t_start))
    t_end = min(T, int(t_end))
    if t_end > t_start:
        mask[t_start:t_end, idx] = 1.0
    return MaskPlan(mask=mask, clip_id=clip_id, t_start=t_start)


def mask_from_confidence(conf, kappa=0.6, clip_id=None, t_start=0):
    """Threshold per-joint confidences into a mask; root column forced to 0."""
    conf = np.asarray(conf, dtype=float)
    if not 0.0 < kappa < 1.0:
        raise ParameterError("kappa must be in (0, 1)")
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise DataError("confidence values must lie in [0, 1]")
    mask = (conf >= kappa).astype(float)
    mask[:, 0] = 0.0
    return MaskPlan(mask=mask, clip_id=clip_id, t_start=t_start)


def align_clip_to_trajectory(clip, traj, t_start):
    """Rigidly move a clip so frame 0 sits on the trajectory at t_start."""
    if t_start + clip.num_frames > traj.num_frames:
        raise DataError("clip extends past the end of the trajectory")
    target_xy = traj.point_at(t_start)
    target_yaw = traj.heading_at(t_start)
    dyaw = target_yaw - float(clip.root_yaw[0])
    out = clip.copy()
    rel = out.root_pos[:, :2] - out.root_pos[0, :2]
    out.root_pos[:, :2] = target_xy + rot.rotate_xy(rel, dyaw)
    out.root_yaw = out.root_yaw + dyaw
    return out


def _heading_local_target(skel, state, target_state):
    """Per-joint target kinematics expressed in the simulated character's
    heading-local frame."""
    origin, inv_yaw = heading_frame(state)
    t_pos, t_quat = forward_kinematics(skel, target_state)
    t_lin, t_ang = forward_velocities(skel, target_state, t_pos, t_quat)
    inv_j = inv_yaw[..., None, :]
    return (
        rot.quat_rotate(inv_j, t_pos - origin[..., None, :]),
        rot.quat_mul(inv_j, t_quat),
        rot.quat_rotate(inv_j, t_lin),
        rot.quat_rotate(inv_j, t_ang),
    )


def motion_goal(skel, state, clip, mask_row, frame, clip_vels=None, sim_fk=None, sim_vel=None):
    """375-dim tracking goal: per joint, target deltas and absolutes.

    Masked-out joints read identically zero (targets defined equal to the
    simulated state).
    """
    mask_row = np.asarray(mask_row, dtype=float)
    out = np.zeros((NUM_JOINTS, MOTION_GOAL_PER_JOINT))
    if clip is None or not np.any(mask_row):
        return out.ravel()
    frame = int(np.clip(frame, 0, clip.num_frames - 1))
    target_state = clip_state(clip, min(frame + 1, clip.num_frames - 1), clip_vels)

    pos, quat = sim_fk if sim_fk is not None else forward_kinematics(skel, state)
    lin, ang = sim_vel if sim_vel is not None else forward_velocities(skel, state, pos, quat)
    origin, inv_yaw = heading_frame(state)
    inv_j = inv_yaw[..., None, :]
    s_pos = rot.quat_rotate(inv_j, pos - origin[..., None, :])
    s_quat = rot.quat_mul(inv_j, quat)
    s_lin = rot.quat_rotate(inv_j, lin)
    s_ang = rot.quat_rotate(inv_j, ang)

    t_pos, t_quat, t_lin, t_ang = _heading_local_target(skel, state, target_state)

    # Rotation features use local joint rotations (the PD-target
    # coordinates); the root row falls back to heading-local orientation.
    s_loc = np.concatenate([s_quat[..., :1, :], state.joint_rot], axis=-2)
    t_loc = np.concatenate([t_quat[..., :1, :], target_state.joint_rot], axis=-2)
    out[:, 0:6] = rot.quat_to_6d(rot.quat_mul(t_loc, rot.quat_conj(s_loc)))
    out[:, 6:9] = t_pos - s_pos
    out[:, 9:12] = t_lin - s_lin
    out[:, 12:15] = rot.quat_log(t_loc)
    out[:, 15:21] = rot.quat_to_6d(t_loc)
    out[:, 21:24] = t_pos
    out[:, 24] = 1.0
    # the root row carries heading/position error whenever any joint is
    # tracked, so the policy can steer the (unmasked) root to keep masked
    # joints reachable; an all-zero mask still reads identically zero
    row_eff = mask_row.copy()
    row_eff[0] = float(mask_row.any())
    out *= row_eff[:, None]
    return out.ravel()


def reward_traj(state, traj, frame):
    """exp(-2 d) with d the planar distance to the trajectory point."""
    target = traj.point_at(int(frame))
    d = np.linalg.norm(np.asarray(state.root_pos)[..., :2] - target, axis=-1)
    return np.exp(-2.0 * d)


def _masked_mean(err, mask):
    total = np.sum(mask, axis=-1)
    s = np.sum(err * mask, axis=-1)
    return np.where(total > 0, s / np.maximum(total, 1.0), 0.0)


def reward_motion(skel, state, target_state, mask_row, weights=None,
                  sim_fk=None, sim_vel=None, target_fk=None, target_vel=None):
    """Weighted exponential tracking reward over masked-in joints.

    Each norm is the masked mean of per-joint error magnitudes; with an
    empty mask every norm is 0 and the reward is 1.
    """
    weights = weights or RewardWeights()
    mask_row = np.asarray(mask_row, dtype=float)

    pos, quat = sim_fk if sim_fk is not None else forward_kinematics(skel, state)
    lin, ang = sim_vel if sim_vel is not None else forward_velocities(skel, state, pos, quat)
    t_pos, t_quat = target_fk if target_fk is not None else forward_kinematics(skel, target_state)
    t_lin, t_ang = (
        target_vel
        if target_vel is not None
        else forward_velocities(skel, target_state, t_pos, t_quat)
    )

    e_pos = _masked_mean(np.linalg.norm(t_pos - pos, axis=-1), mask_row)
    e_rot = _masked_mean(rot.quat_diff_angle(t_quat, quat), mask_row)
    e_lin = _masked_mean(np.linalg.norm(t_lin - lin, axis=-1), mask_row)
    e_ang = _masked_mean(np.linalg.norm(t_ang - ang, axis=-1), mask_row)
    return (
        weights.w_jp * np.exp(-100.0 * e_pos)
        + weights.w_jr * np.exp(-10.0 * e_rot)
        + weights.w_jv * np.exp(-0.1 * e_lin)
        + weights.w_rv * np.exp(-0.1 * e_ang)
    )


def total_reward(r_amp, r_traj, r_motion):
    """Equal mixing of the style reward and the summed task rewards."""
    return 0.5 * np.asarray(r_amp) + 0.5 * (np.asarray(r_traj) + np.asarray(r_motion))


def check_termination(state, traj, frame, clip=None, mask_row=None, cfg=None,
                      skel=None, clip_frame=None, sim_fk=None, target_fk=None):
    """Trajectory check first, then masked tracking, then episode end.

    Tracking uses the max world joint-position distance over masked-in
    joints; the target pose is `clip_frame` of `clip` (or a precomputed
    `target_fk`).
    """
    cfg = cfg or EpisodeConfig()
    d = float(np.linalg.norm(np.asarray(state.root_pos)[:2] - traj.point_at(int(frame))))
    if d > cfg.traj_term_threshold:
        return Termination.TRAJECTORY_DEVIATION
    if mask_row is not None and np.any(np.asarray(mask_row) > 0):
        pos = sim_fk[0] if sim_fk is not None else forward_kinematics(skel, state)[0]
        if target_fk is not None:
            t_pos = target_fk[0]
        elif clip is not None and clip_frame is not None:
            idx = int(np.clip(clip_frame, 0, clip.num_frames - 1))
            t_pos = forward_kinematics(skel, clip_state(clip, idx))[0]
        else:
            raise DataError("tracking termination needs a target pose")
        dist = np.linalg.norm(t_pos - pos, axis=-1)
        active = np.asarray(mask_row) > 0
        if np.max(dist[active]) > cfg.track_term_threshold:
            return Termination.TRACKING_FAILURE
    if frame >= cfg.episode_length - 1:
        return Termination.EPISODE_END
    return Termination.CONTINUE

TRAJECTORY_FILE_VERSION = 1


def save_trajectory(traj, path):
    import json

    doc = {
        "version": TRAJECTORY_FILE_VERSION,
        "fps": traj.fps,
        "points": np.asarray(traj.points, dtype=float).tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f)
    return path


def load_trajectory(path):
    import json

    from .errors import SchemaError, VersionError

    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: not valid JSON ({e})", field_path="$")
    for key in ("version", "fps", "points"):
        if key not in doc:
            raise SchemaError(f"{path}: missing {key!r}", field_path=key)
    if doc["version"] != TRAJECTORY_FILE_VERSION:
        raise VersionError(f"{path}: unsupported trajectory version {doc['version']}")
    return Trajectory(points=np.asarray(doc["points"], dtype=float), fps=doc["fps"])
