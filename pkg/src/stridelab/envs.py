"""Batched training/rollout environments.

All environments advance in lockstep at 30 Hz. Heavy math (FK, simulator
substeps, observations) is vectorized across environments; per-environment
work is limited to episode bookkeeping and masked-goal assembly.
"""
from dataclasses import dataclass

import numpy as np

from . import rotations as rot
from .humanoid import (
    HumanoidState,
    forward_kinematics,
    forward_velocities,
    proprioception,
    rest_state,
)
from .motion import amp_feature, clip_state, clip_velocities
from .simulator import (
    Action,
    ROOT_ACCEL_MAX,
    SimConfig,
    YAW_ACCEL_MAX,
    step as sim_step,
)
from .tasks import (
    MOTION_GOAL_DIM,
    MOTION_GOAL_PER_JOINT,
    NUM_JOINTS,
    EpisodeConfig,
    RewardWeights,
    Termination,
    align_clip_to_trajectory,
    generate_mask_plan,
    generate_trajectory,
    reward_traj,
    straight_trajectory,
)
from .terrain import local_patch

ACTION_DIM = 45


def clip_kinematics(skel, clip):
    """Precomputed world kinematics for every clip frame."""
    vels = clip_velocities(clip)
    batch = HumanoidState(
        root_pos=np.array(clip.root_pos),
        root_yaw=np.array(clip.root_yaw),
        root_lin_vel=vels[0],
        root_yaw_rate=vels[1],
        joint_rot=np.array(clip.joint_rot),
        joint_ang_vel=vels[2],
        time=np.arange(clip.num_frames) / clip.fps,
    )
    pos, quat = forward_kinematics(skel, batch)
    lin, ang = forward_velocities(skel, batch, pos, quat)
    return {"pos": pos, "quat": quat, "lin": lin, "ang": ang}


@dataclass
class TrajectorySampler:
    """Episode trajectory generator; straight-line mode for curriculum runs."""

    duration_s: float = 10.0
    speed_range: tuple = (0.5, 2.0)
    max_turn_rate: float = 0.6
    straight: bool = False

    def sample(self, seed):
        if self.straight:
            rng = np.random.default_rng(seed)
            speed = float(rng.uniform(*self.speed_range))
            heading = float(rng.uniform(-np.pi, np.pi))
            return straight_trajectory(self.duration_s, speed, heading=heading)
        return generate_trajectory(seed, self.duration_s, self.speed_range, self.max_turn_rate)


@dataclass
class _EpisodeAssets:
    traj: object
    mask: np.ndarray  # (T, 15)
    clip: object = None
    t_start: int = 0
    kin: dict = None  # precomputed clip kinematics


class VecEnv:
    """num_envs lockstep environments sharing one skeleton and terrain set."""

    def __init__(self, skel, terrains, clip_lib=None, num_envs=64, seed=0,
                 sim_cfg=None, ep_cfg=None, weights=None, traj_sampler=None,
                 mask_probability=0.0, group_probs=None, mask_window_s=(1.5, 6.0),
                 mask_from_clip_start=False, rsi_probability=0.0,
                 motion_kernel_scale=1.0,
                 early_termination=True, auto_reset=True):
        self.skel = skel
        self.terrains = list(terrains)
        self.clip_lib = clip_lib
        self.num_envs = num_envs
        self.sim_cfg = sim_cfg or SimConfig()
        self.ep_cfg = ep_cfg or EpisodeConfig()
        self.weights = weights or RewardWeights()
        self.traj_sampler = traj_sampler or TrajectorySampler()
        self.mask_probability = mask_probability
        self.group_probs = group_probs
        self.mask_window_s = mask_window_s
        self.mask_from_clip_start = mask_from_clip_start
        self.rsi_probability = rsi_probability
        self.motion_kernel_scale = motion_kernel_scale
        self.early_termination = early_termination
        self.auto_reset = auto_reset
        self.rng = np.random.default_rng(seed)

        self.assets = [None] * num_envs
        self.terrain_idx = np.zeros(num_envs, dtype=int)
        self.frames = np.zeros(num_envs, dtype=int)
        self.state = None  # batched HumanoidState
        self._wp_pad = int(round(self.ep_cfg.waypoint_spacing_s * 30)) * self.ep_cfg.waypoint_count
        self._traj_buf = None  # (E, T + pad, 2) edge-padded waypoints
        for i in range(num_envs):
            self._reset_env(i)
        self._refresh_cache()

    # -- episode setup -------------------------------------------------

    def _reset_env(self, i):
        seed = int(self.rng.integers(0, 2**63 - 1))
        traj = self.traj_sampler.sample(seed)
        T = min(traj.num_frames, self.ep_cfg.episode_length)
        mask = np.zeros((traj.num_frames, NUM_JOINTS))
        clip = None
        t_start = 0
        kin = None
        if (
            self.clip_lib is not None
            and self.clip_lib.tracking_ids
            and self.rng.random() < self.mask_probability
        ):
            cid = self.clip_lib.tracking_ids[int(self.rng.integers(len(self.clip_lib.tracking_ids)))]
            raw = self.clip_lib.clips[cid]
            n_fit = min(raw.num_frames, traj.num_frames)
            t_start = int(self.rng.integers(0, max(1, traj.num_frames - n_fit + 1)))
            trimmed = raw
            if n_fit < raw.num_frames:
                trimmed = raw.copy()
                trimmed.root_pos = trimmed.root_pos[:n_fit]
                trimmed.root_yaw = trimmed.root_yaw[:n_fit]
                trimmed.joint_rot = trimmed.joint_rot[:n_fit]
            clip = align_clip_to_trajectory(trimmed, traj, t_start)
            kin = clip_kinematics(self.skel, clip)
            plan_seed = int(self.rng.integers(0, 2**63 - 1))
            plan = generate_mask_plan(
                plan_seed, clip.num_frames, self.skel,
                group_probs=self.group_probs, window_range_s=self.mask_window_s,
                from_start=self.mask_from_clip_start,
            )
            mask[t_start : t_start + clip.num_frames] = plan.mask
            if not mask.any():
                clip, kin, t_start = None, None, 0

        self.assets[i] = _EpisodeAssets(traj=traj, mask=mask, clip=clip, t_start=t_start, kin=kin)
        self.terrain_idx[i] = int(self.rng.integers(len(self.terrains)))
        st = None
        start_frame = 0
        if clip is not None and self.rng.random() < self.rsi_probability:
            # reference-state initialization: drop in mid-performance so the
            # policy gathers on-target experience inside the mask window
            horizon = min(self.ep_cfg.episode_length, traj.num_frames) - 1
            active = np.flatnonzero(mask.any(axis=1))
            active = active[active < horizon - 15]
            if len(active):
                # half the inits land on the window onset so the approach
                # into a performance is as well-trained as its middle
                if self.rng.random() < 0.5:
                    start_frame = int(active[0])
                else:
                    start_frame = int(self.rng.choice(active))
                st = clip_state(clip, start_frame - t_start, clip_velocities(clip)).copy()
                hm = self.terrains[self.terrain_idx[i]]
                from .terrain import sample_height

                st.root_pos[2] = float(
                    sample_height(hm, st.root_pos[0], st.root_pos[1])
                ) + self.sim_cfg.hip_height
        self.frames[i] = start_frame
        if st is None:
            st = self._initial_state(i, traj)
        if self.state is None:
            self.state = _batch_like(st, self.num_envs)
        _set_env_state(self.state, i, st)

    def set_scenario(self, i, traj, terrain_index=0, mask=None, clip=None, t_start=0,
                     init_from_clip=False):
        """Pin a fixed scenario into slot i (evaluation / rollout use).

        init_from_clip starts the character on the clip's first frame (pose
        and velocities) instead of the trajectory rest pose, which keeps a
        performance masked from frame 0 trackable from the start.
        """
        kin = clip_kinematics(self.skel, clip) if clip is not None else None
        full_mask = np.zeros((traj.num_frames, NUM_JOINTS)) if mask is None else np.asarray(mask, dtype=float)
        self.assets[i] = _EpisodeAssets(traj=traj, mask=full_mask, clip=clip, t_start=t_start, kin=kin)
        self.terrain_idx[i] = terrain_index
        self.frames[i] = 0
        if init_from_clip and clip is not None:
            st = clip_state(clip, 0, clip_velocities(clip)).copy()
            hm = self.terrains[terrain_index]
            from .terrain import sample_height

            st.root_pos[2] = float(
                sample_height(hm, st.root_pos[0], st.root_pos[1])
            ) + self.sim_cfg.hip_height
        else:
            st = self._initial_state(i, traj)
        _set_env_state(self.state, i, st)
        self._refresh_cache()

    def _initial_state(self, i, traj):
        hm = self.terrains[self.terrain_idx[i]]
        xy = traj.points[0]
        yaw = traj.heading_at(0)
        from .terrain import sample_height

        z = float(sample_height(hm, xy[0], xy[1])) + self.sim_cfg.hip_height
        st = rest_state(self.skel, root_xy=xy, root_yaw=yaw, root_z=z)
        v0 = (traj.points[1] - traj.points[0]) * traj.fps
        st.root_lin_vel = np.array([v0[0], v0[1], 0.0])
        return st

    def _refresh_cache(self):
        Tmax = max(a.traj.num_frames for a in self.assets)
        buf = np.empty((self.num_envs, Tmax + self._wp_pad, 2))
        for i, a in enumerate(self.assets):
            pts = a.traj.points
            buf[i, : len(pts)] = pts
            buf[i, len(pts) :] = pts[-1]
        self._traj_buf = buf
        self._update_kinematics()

    def _update_kinematics(self):
        self._fk = forward_kinematics(self.skel, self.state)
        self._vel = forward_velocities(self.skel, self.state, *self._fk)

    # -- observation ---------------------------------------------------

    def observe(self):
        """(E, 1020) observations plus (E, 133) AMP features."""
        pos, quat = self._fk
        lin, ang = self._vel
        proprio = proprioception(self.skel, self.state, fk=self._fk, vel=self._vel)
        tg = self._traj_goals()
        patch = self._terrain_patches()
        mg = self._motion_goals()
        obs = np.concatenate([proprio, tg, patch, mg], axis=1)
        feats = amp_feature(self.skel, self.state, fk=self._fk)
        return obs, feats

    def _traj_goals(self):
        stride = int(round(self.ep_cfg.waypoint_spacing_s * 30))
        ks = stride * np.arange(1, self.ep_cfg.waypoint_count + 1)
        idx = self.frames[:, None] + ks[None, :]
        # clamp per env to its own trajectory end (buffer is edge padded)
        wp = self._traj_buf[np.arange(self.num_envs)[:, None], idx]
        rel = wp - self.state.root_pos[:, None, :2]
        local = rot.rotate_xy(rel, -self.state.root_yaw[:, None])
        return local.reshape(self.num_envs, -1)

    def _terrain_patches(self):
        out = np.empty((self.num_envs, 400))
        for t_idx in np.unique(self.terrain_idx):
            sel = self.terrain_idx == t_idx
            out[sel] = local_patch(
                self.terrains[t_idx], self.state.root_pos[sel], self.state.root_yaw[sel]
            )
        return out

    def _motion_goals(self):
        out = np.zeros((self.num_envs, MOTION_GOAL_DIM))
        pos, quat = self._fk
        lin, ang = self._vel
        inv_yaw = rot.quat_from_yaw(-self.state.root_yaw)
        for i, a in enumerate(self.assets):
            if a.clip is None:
                continue
            f = self.frames[i]
            row = a.mask[f] if f < len(a.mask) else None
            if row is None or not row.any():
                continue
            cf = int(np.clip(f - a.t_start, 0, a.clip.num_frames - 1))
            tf = min(cf + 1, a.clip.num_frames - 1)
            origin = np.array([self.state.root_pos[i, 0], self.state.root_pos[i, 1], 0.0])
            iy = inv_yaw[i]
            s_pos = rot.quat_rotate(iy, pos[i] - origin)
            s_quat = rot.quat_mul(iy, quat[i])
            s_lin = rot.quat_rotate(iy, lin[i])
            t_pos = rot.quat_rotate(iy, a.kin["pos"][tf] - origin)
            t_quat = rot.quat_mul(iy, a.kin["quat"][tf])
            t_lin = rot.quat_rotate(iy, a.kin["lin"][tf])
            s_loc = np.concatenate([s_quat[:1], self.state.joint_rot[i]])
            t_loc = np.concatenate([t_quat[:1], a.clip.joint_rot[tf]])
            block = np.zeros((NUM_JOINTS, MOTION_GOAL_PER_JOINT))
            block[:, 0:6] = rot.quat_to_6d(rot.quat_mul(t_loc, rot.quat_conj(s_loc)))
            block[:, 6:9] = t_pos - s_pos
            block[:, 9:12] = t_lin - s_lin
            block[:, 12:15] = rot.quat_log(t_loc)
            block[:, 15:21] = rot.quat_to_6d(t_loc)
            block[:, 21:24] = t_pos
            block[:, 24] = 1.0
            # root row active whenever any joint is tracked (steering signal)
            row_eff = row.copy()
            row_eff[0] = float(row.any())
            block *= row_eff[:, None]
            out[i] = block.ravel()
        return out

    def reference_actions(self):
        """(E, 45) reference actions and per-dim tracking weights.

        For envs whose next frame has active mask rows, the PD-target slice
        holds the rotation-vector of the clip's local joint rotations, and
        the root-accel/yaw-accel dims hold a smooth feedback controller
        toward the aligned clip's root motion (which rides the trajectory),
        so imitation also supervises steering while a performance is
        tracked. Weights mark the masked joint dims plus the root dims.
        """
        tgt = np.zeros((self.num_envs, 3 + 3 * (NUM_JOINTS - 1)))
        w = np.zeros_like(tgt)
        for i, a in enumerate(self.assets):
            if a.clip is None:
                continue
            f = self.frames[i] + 1
            if f >= len(a.mask) or not a.mask[f].any():
                continue
            cf = int(np.clip(f - a.t_start, 0, a.clip.num_frames - 1))
            tgt[i, 3:] = rot.quat_log(a.clip.joint_rot[cf]).ravel()
            w[i, 3:] = np.repeat(a.mask[f, 1:], 3)
            # root steering: accelerate toward the clip root's velocity with
            # a position-correction term, in the heading frame
            yaw = float(self.state.root_yaw[i])
            v_des = a.kin["lin"][cf][0][:2] + 1.5 * (
                a.clip.root_pos[cf][:2] - self.state.root_pos[i, :2]
            )
            a_world = 4.0 * (v_des - self.state.root_lin_vel[i, :2])
            n = np.linalg.norm(a_world)
            if n > ROOT_ACCEL_MAX:
                a_world *= ROOT_ACCEL_MAX / n
            tgt[i, 0:2] = rot.rotate_xy(a_world, -yaw)
            yaw_err = float(
                np.arctan2(np.sin(a.clip.root_yaw[cf] - yaw),
                           np.cos(a.clip.root_yaw[cf] - yaw))
            )
            w_des = float(a.kin["ang"][cf][0][2]) + 1.5 * yaw_err
            tgt[i, 2] = np.clip(
                4.0 * (w_des - float(self.state.root_yaw_rate[i])),
                -YAW_ACCEL_MAX, YAW_ACCEL_MAX,
            )
            w[i, 0:3] = 1.0
        return tgt, w

    # -- stepping ------------------------------------------------------

    def split_action(self, raw):
        """Raw policy output (E, 45) -> simulator Action."""
        raw = np.asarray(raw, dtype=float)
        return Action(
            root_accel=raw[..., 0:2],
            yaw_accel=raw[..., 2],
            pd_targets=raw[..., 3:].reshape(raw.shape[:-1] + (14, 3)),
        )

    def step(self, raw_actions):
        """Advance every env one control step.

        Returns (rewards dict of (E,) arrays, dones (E,), term_causes list,
        amp feature pairs (E, 266)). Terminated envs are reset afterwards;
        call observe() for the post-reset observations.
        """
        prev_feats = amp_feature(self.skel, self.state, fk=self._fk)
        action = self.split_action(raw_actions)
        new_state = self.state
        for t_idx in np.unique(self.terrain_idx):
            sel = self.terrain_idx == t_idx
            sub_action = Action(
                root_accel=action.root_accel[sel],
                yaw_accel=action.yaw_accel[sel],
                pd_targets=action.pd_targets[sel],
            )
            sub = sim_step(_select_envs(self.state, sel), sub_action,
                           self.terrains[t_idx], self.sim_cfg, self.skel)
            _assign_envs(new_state, sel, sub)
        self.state = new_state
        self.frames += 1
        self._update_kinematics()

        pos, _ = self._fk
        feats = amp_feature(self.skel, self.state, fk=self._fk)
        pairs = np.concatenate([prev_feats, feats], axis=1)

        r_traj = np.empty(self.num_envs)
        r_motion = np.empty(self.num_envs)
        dones = np.zeros(self.num_envs)
        causes = [Termination.CONTINUE] * self.num_envs
        for i, a in enumerate(self.assets):
            f = self.frames[i]
            r_traj[i] = reward_traj(self.state.select(i), a.traj, f)
            r_motion[i], cause = self._motion_reward_and_term(i, a, f, pos[i])
            d = np.linalg.norm(self.state.root_pos[i, :2] - a.traj.point_at(f))
            if self.early_termination and d > self.ep_cfg.traj_term_threshold:
                cause = Termination.TRAJECTORY_DEVIATION
            if cause is Termination.CONTINUE and f >= min(
                self.ep_cfg.episode_length, a.traj.num_frames
            ) - 1:
                cause = Termination.EPISODE_END
            causes[i] = cause
            dones[i] = float(cause is not Termination.CONTINUE)
        rewards = {"traj": r_traj, "motion": r_motion}
        infos = {
            "causes": causes,
            "done_lengths": self.frames[dones > 0].copy(),
        }
        if self.auto_reset:
            for i in range(self.num_envs):
                if dones[i]:
                    self._reset_env(i)
            if dones.any():
                self._refresh_cache()
        return rewards, dones, infos, pairs

    def _motion_reward_and_term(self, i, a, f, sim_pos):
        if a.clip is None or f >= len(a.mask) or not a.mask[f].any():
            return 1.0, Termination.CONTINUE
        row = a.mask[f]
        cf = int(np.clip(f - a.t_start, 0, a.clip.num_frames - 1))
        t_pos = a.kin["pos"][cf]
        t_quat = a.kin["quat"][cf]
        t_lin = a.kin["lin"][cf]
        t_ang = a.kin["ang"][cf]
        pos, quat = self._fk
        lin, ang = self._vel
        m = row
        msum = m.sum()
        e_pos = float(np.sum(np.linalg.norm(t_pos - pos[i], axis=-1) * m) / msum)
        e_rot = float(np.sum(rot.quat_diff_angle(t_quat, quat[i]) * m) / msum)
        e_lin = float(np.sum(np.linalg.norm(t_lin - lin[i], axis=-1) * m) / msum)
        e_ang = float(np.sum(np.linalg.norm(t_ang - ang[i], axis=-1) * m) / msum)
        w = self.weights
        # motion_kernel_scale < 1 widens the tracking kernels during
        # training so the reward keeps a gradient at large errors
        k = self.motion_kernel_scale
        r = (
            w.w_jp * np.exp(-100.0 * k * e_pos)
            + w.w_jr * np.exp(-10.0 * k * e_rot)
            + w.w_jv * np.exp(-0.1 * k * e_lin)
            + w.w_rv * np.exp(-0.1 * k * e_ang)
        )
        cause = Termination.CONTINUE
        if self.early_termination:
            max_d = float(np.max(np.linalg.norm(t_pos - sim_pos, axis=-1)[m > 0]))
            if max_d > self.ep_cfg.track_term_threshold:
                cause = Termination.TRACKING_FAILURE
        return float(r), cause


def _batch_like(st, n):
    return HumanoidState(
        root_pos=np.tile(st.root_pos, (n, 1)),
        root_yaw=np.tile(st.root_yaw, n),
        root_lin_vel=np.tile(st.root_lin_vel, (n, 1)),
        root_yaw_rate=np.tile(st.root_yaw_rate, n),
        joint_rot=np.tile(st.joint_rot, (n, 1, 1)),
        joint_ang_vel=np.tile(st.joint_ang_vel, (n, 1, 1)),
        time=np.tile(st.time, n),
    )


def _set_env_state(batch, i, st):
    batch.root_pos[i] = st.root_pos
    batch.root_yaw[i] = st.root_yaw
    batch.root_lin_vel[i] = st.root_lin_vel
    batch.root_yaw_rate[i] = st.root_yaw_rate
    batch.joint_rot[i] = st.joint_rot
    batch.joint_ang_vel[i] = st.joint_ang_vel
    batch.time[i] = st.time


def _select_envs(batch, sel):
    return HumanoidState(
        root_pos=batch.root_pos[sel],
        root_yaw=batch.root_yaw[sel],
        root_lin_vel=batch.root_lin_vel[sel],
        root_yaw_rate=batch.root_yaw_rate[sel],
        joint_rot=batch.joint_rot[sel],
        joint_ang_vel=batch.joint_ang_vel[sel],
        time=batch.time[sel],
    )


def _assign_envs(batch, sel, sub):
    batch.root_pos[sel] = sub.root_pos
    batch.root_yaw[sel] = sub.root_yaw
    batch.root_lin_vel[sel] = sub.root_lin_vel
    batch.root_yaw_rate[sel] = sub.root_yaw_rate
    batch.joint_rot[sel] = sub.joint_rot
    batch.joint_ang_vel[sel] = sub.joint_ang_vel
    batch.time[sel] = sub.time
