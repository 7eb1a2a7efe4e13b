"""Motion quality metrics and the evaluation suite.

Tracking errors (MPJPE/G-MPJPE), physical plausibility (foot sliding and
penetration), jitter, trajectory deviation, and a Fréchet/diversity pair
over hand-crafted 48-dim kinematic features.
"""
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import rotations as rot
from .envs import VecEnv
from .errors import DataError
from .humanoid import HumanoidState, forward_kinematics
from .motion import MotionClip, clip_velocities
from .ppo import style_reward
from .skeleton import FOOT_JOINT_NAMES
from .tasks import Termination, total_reward
from .terrain import sample_height

MM = 1000.0
CONTACT_HEIGHT = 0.05  # m, foot-sliding height cutoff


def motion_world_positions(skel, clip):
    """(T, 15, 3) world joint positions for every clip frame."""
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
    return forward_kinematics(skel, batch)[0]


def _as_positions(skel, motion):
    if isinstance(motion, MotionClip):
        return motion_world_positions(skel, motion), np.asarray(motion.root_pos), np.asarray(motion.root_yaw)
    raise DataError("expected a MotionClip")


def _check_compatible(sim, ref):
    if sim.num_frames != ref.num_frames:
        raise DataError(
            f"frame count mismatch: {sim.num_frames} vs {ref.num_frames}"
        )
    if sim.fps != ref.fps:
        raise DataError(f"fps mismatch: {sim.fps} vs {ref.fps}")


def _heading_local(pos, root_pos, root_yaw):
    origin = np.concatenate([root_pos[:, :2], np.zeros((len(root_pos), 1))], axis=1)
    inv = rot.quat_from_yaw(-root_yaw)
    return rot.quat_rotate(inv[:, None, :], pos - origin[:, None, :])


def mpjpe(sim, ref, skel, mask=None):
    """Mean per-joint position error in each pose's heading-local frame, mm."""
    _check_compatible(sim, ref)
    ps, rps, rys = _as_positions(skel, sim)
    pr, rpr, ryr = _as_positions(skel, ref)
    ds = np.linalg.norm(
        _heading_local(ps, rps, rys) - _heading_local(pr, rpr, ryr), axis=-1
    )
    return _masked_frame_mean(ds, mask) * MM


def gmpjpe(sim, ref, skel, mask=None):
    """World-frame mean per-joint position error, mm."""
    _check_compatible(sim, ref)
    ps = motion_world_positions(skel, sim)
    pr = motion_world_positions(skel, ref)
    return _masked_frame_mean(np.linalg.norm(ps - pr, axis=-1), mask) * MM


def _masked_frame_mean(d, mask):
    """Mean of (T, J) distances over masked-in entries."""
    if mask is None:
        return float(d.mean())
    m = np.asarray(mask, dtype=float)
    if m.sum() == 0:
        raise DataError("mask selects no joints")
    return float(np.sum(d * m) / m.sum())


def foot_sliding(sim, skel, terrain):
    """Height-weighted horizontal foot displacement during contact, mm."""
    pos = motion_world_positions(skel, sim)
    feet = [skel.index(n) for n in FOOT_JOINT_NAMES]
    vals = []
    for j in feet:
        p = pos[:, j]
        ground = sample_height(terrain, p[:, 0], p[:, 1])
        h = p[:, 2] - ground
        disp = np.linalg.norm(np.diff(p[:, :2], axis=0), axis=1)
        # frame 0 has no displacement; contact applies from frame 1 on
        contact = h[1:] < CONTACT_HEIGHT
        w = 2.0 - 2.0 ** (np.clip(h[1:], 0.0, None) / CONTACT_HEIGHT)
        vals.extend(disp[contact] * w[contact])
    return float(np.mean(vals)) * MM if vals else 0.0


def foot_penetration(sim, skel, terrain):
    """Mean depth of feet below the terrain surface, mm."""
    pos = motion_world_positions(skel, sim)
    feet = [skel.index(n) for n in FOOT_JOINT_NAMES]
    p = pos[:, feet]
    ground = sample_height(terrain, p[..., 0], p[..., 1])
    return float(np.mean(np.maximum(0.0, ground - p[..., 2]))) * MM


def jitter(sim, ref, skel):
    """(velocity, acceleration) magnitude deviations, mm/frame and mm/frame²."""
    _check_compatible(sim, ref)
    if sim.num_frames < 3:
        raise DataError("jitter needs at least 3 frames")
    ps = motion_world_positions(skel, sim)
    pr = motion_world_positions(skel, ref)
    vs = np.linalg.norm(np.diff(ps, axis=0), axis=-1)
    vr = np.linalg.norm(np.diff(pr, axis=0), axis=-1)
    vel = float(np.mean(np.abs(vs - vr))) * MM
    as_ = np.linalg.norm(ps[2:] - 2 * ps[1:-1] + ps[:-2], axis=-1)
    ar = np.linalg.norm(pr[2:] - 2 * pr[1:-1] + pr[:-2], axis=-1)
    acc = float(np.mean(np.abs(as_ - ar))) * MM
    return vel, acc


def traj_error(root_xy, traj):
    """Mean planar deviation between the root path and the trajectory, m."""
    root_xy = np.asarray(root_xy)
    T = len(root_xy)
    targets = np.stack([traj.point_at(t) for t in range(T)])
    return float(np.mean(np.linalg.norm(root_xy - targets, axis=1)))


# -- distribution metrics ----------------------------------------------


def feature_vector(clip, skel):
    """48 kinematic summary features for one motion clip."""
    pos = motion_world_positions(skel, clip)
    speeds = np.linalg.norm(np.diff(pos, axis=0), axis=-1) * clip.fps  # (T-1, 15)
    root_speed = np.linalg.norm(np.diff(np.asarray(clip.root_pos)[:, :2], axis=0), axis=1) * clip.fps
    lf = skel.index(FOOT_JOINT_NAMES[0])
    rf = skel.index(FOOT_JOINT_NAMES[1])
    sep = pos[:, lf, :2] - pos[:, rf, :2]
    heading = np.stack([np.cos(clip.root_yaw), np.sin(clip.root_yaw)], axis=-1)
    signal = np.sum(sep * heading, axis=-1)
    signal = signal - signal.mean()
    spectrum = np.abs(np.fft.rfft(signal))
    freqs = np.fft.rfftfreq(len(signal), d=1.0 / clip.fps)
    stride_hz = float(freqs[1 + np.argmax(spectrum[1:])]) if len(spectrum) > 1 else 0.0
    return np.concatenate([
        speeds.mean(axis=0),
        speeds.std(axis=0),
        [root_speed.mean(), root_speed.std(), stride_hz],
        pos[:, :, 2].mean(axis=0),
    ])


def _fit_gaussian(feats, name):
    feats = np.asarray(feats, dtype=float)
    if feats.ndim != 2 or len(feats) < 2:
        raise DataError(f"set {name!r} needs at least 2 feature vectors")
    if not np.isfinite(feats).all():
        raise DataError(f"set {name!r} contains non-finite features")
    return feats.mean(axis=0), np.cov(feats, rowvar=False)


def _psd_sqrt(m):
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_from_moments(mu1, s1, mu2, s2):
    """d² = ‖Δμ‖² + Tr(Σ₁ + Σ₂ − 2·(Σ₁Σ₂)^{1/2}) for Gaussian moments."""
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    s1, s2 = np.atleast_2d(s1), np.atleast_2d(s2)
    r1 = _psd_sqrt(s1)
    cross = _psd_sqrt(r1 @ s2 @ r1)
    d2 = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2.0 * cross))
    return max(d2, 0.0)


def frechet(feats_a, feats_b):
    """Fréchet distance between Gaussian fits of two feature sets."""
    mu1, s1 = _fit_gaussian(feats_a, "A")
    mu2, s2 = _fit_gaussian(feats_b, "B")
    return frechet_from_moments(mu1, s1, mu2, s2)


def diversity(feats, seed=0, num_pairs=100):
    """Mean feature distance over seeded random pairs."""
    feats = np.asarray(feats, dtype=float)
    if len(feats) < 2:
        raise DataError("diversity needs at least 2 feature vectors")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(num_pairs):
        i, j = rng.choice(len(feats), size=2, replace=False)
        total += float(np.linalg.norm(feats[i] - feats[j]))
    return total / num_pairs


# -- rollouts and the evaluation suite ---------------------------------


@dataclass
class Scenario:
    traj: object
    terrain_index: int = 0
    clip: object = None  # aligned reference clip
    mask: np.ndarray = None  # (T, 15)
    t_start: int = 0
    group: str = None  # part label for the breakdown map


def rollout_scenarios(policy, skel, terrains, scenarios, disc=None,
                      early_termination=True, sim_cfg=None, ep_cfg=None):
    """Deterministic (mean-action) lockstep rollouts; one record per scenario."""
    n = len(scenarios)
    env = VecEnv(
        skel, terrains, clip_lib=None, num_envs=n, seed=0, sim_cfg=sim_cfg,
        ep_cfg=ep_cfg, early_termination=early_termination, auto_reset=False,
    )
    for i, sc in enumerate(scenarios):
        env.set_scenario(i, sc.traj, terrain_index=sc.terrain_index,
                         mask=sc.mask, clip=sc.clip, t_start=sc.t_start)
    horizon = min(
        max(sc.traj.num_frames for sc in scenarios), env.ep_cfg.episode_length
    )
    recs = [
        {"root_pos": [], "root_yaw": [], "joint_rot": [], "pos": [],
         "r_traj": [], "r_motion": [], "r_amp": [], "r_total": [],
         "mask": [], "cause": Termination.EPISODE_END.value}
        for _ in range(n)
    ]
    alive = np.ones(n, dtype=bool)
    def snapshot():
        pos, _ = env._fk
        for i in range(n):
            if alive[i]:
                recs[i]["root_pos"].append(env.state.root_pos[i].copy())
                recs[i]["root_yaw"].append(float(env.state.root_yaw[i]))
                recs[i]["joint_rot"].append(env.state.joint_rot[i].copy())
                recs[i]["pos"].append(pos[i].copy())
                f = env.frames[i]
                m = env.assets[i].mask
                recs[i]["mask"].append(
                    m[f].copy() if f < len(m) else np.zeros(m.shape[1])
                )
    snapshot()
    for _ in range(horizon - 1):
        if not alive.any():
            break
        obs, _ = env.observe()
        actions = policy.mean_action(obs.astype(np.float32))
        rewards, dones, infos, pairs = env.step(np.asarray(actions, dtype=float))
        r_amp = (
            style_reward(disc, pairs.astype(np.float32))
            if disc is not None else np.zeros(n)
        )
        snapshot()
        for i in range(n):
            if not alive[i]:
                continue
            recs[i]["r_traj"].append(float(rewards["traj"][i]))
            recs[i]["r_motion"].append(float(rewards["motion"][i]))
            recs[i]["r_amp"].append(float(r_amp[i]))
            recs[i]["r_total"].append(
                float(total_reward(r_amp[i], rewards["traj"][i], rewards["motion"][i]))
            )
            if dones[i]:
                recs[i]["cause"] = infos["causes"][i].value
                alive[i] = False
    out = []
    for r in recs:
        out.append({
            "root_pos": np.array(r["root_pos"]),
            "root_yaw": np.array(r["root_yaw"]),
            "joint_rot": np.array(r["joint_rot"]),
            "pos": np.array(r["pos"]),
            "r_traj": np.array(r["r_traj"]),
            "r_motion": np.array(r["r_motion"]),
            "r_amp": np.array(r["r_amp"]),
            "r_total": np.array(r["r_total"]),
            "mask": np.array(r["mask"]),
            "cause": r["cause"],
            "frames": len(r["root_pos"]),
        })
    return out


def record_to_clip(rec, fps=30):
    return MotionClip(
        fps=fps,
        root_pos=rec["root_pos"],
        root_yaw=rec["root_yaw"],
        joint_rot=rec["joint_rot"],
    )


@dataclass
class MetricsReport:
    mpjpe_mm: float = 0.0
    gmpjpe_mm: float = 0.0
    fs_mm: float = 0.0
    fl_mm: float = 0.0
    vel_mm_per_frame: float = 0.0
    accel_mm_per_frame2: float = 0.0
    traj_err_m: float = 0.0
    frechet: float = 0.0
    diversity: float = 0.0
    per_part: dict = field(default_factory=dict)
    scenario_count: int = 0
    failed_count: int = 0
    episode_end_fraction: float = 0.0
    config_hash: str = ""
    seed: int = 0

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def eval_suite(policy, skel, terrains, scenarios, disc=None, ref_features=None,
               early_termination=True, seed=0, config_digest="", sim_cfg=None,
               ep_cfg=None):
    """Run every scenario deterministically and aggregate the metrics.

    Scenarios that raise are counted in failed_count and excluded from the
    aggregates. Tracking metrics cover only scenarios carrying a reference
    clip and mask; Fréchet/diversity need ref_features (N, 48).
    """
    recs = []
    ok_scen = []
    failed = 0
    try:
        recs = rollout_scenarios(
            policy, skel, terrains, scenarios, disc=disc,
            early_termination=early_termination, sim_cfg=sim_cfg, ep_cfg=ep_cfg,
        )
        ok_scen = list(scenarios)
    except Exception:
        # batched path failed somewhere; fall back to one-by-one
        for sc in scenarios:
            try:
                recs.extend(rollout_scenarios(
                    policy, skel, terrains, [sc], disc=disc,
                    early_termination=early_termination, sim_cfg=sim_cfg,
                    ep_cfg=ep_cfg,
                ))
                ok_scen.append(sc)
            except Exception:
                failed += 1
    rep = MetricsReport(
        scenario_count=len(scenarios), failed_count=failed,
        config_hash=config_digest, seed=seed,
    )
    if not recs:
        return rep
    traj_errs, fss, fls, ends = [], [], [], []
    mps, gmps, vels, accs = [], [], [], []
    parts = {}
    feats = []
    for sc, rec in zip(ok_scen, recs):
        clip = record_to_clip(rec)
        terr = terrains[sc.terrain_index]
        traj_errs.append(traj_error(rec["root_pos"][:, :2], sc.traj))
        fss.append(foot_sliding(clip, skel, terr))
        fls.append(foot_penetration(clip, skel, terr))
        ends.append(rec["cause"] == Termination.EPISODE_END.value)
        feats.append(feature_vector(clip, skel))
        if sc.clip is not None and sc.mask is not None:
            T = rec["frames"]
            ref = _trim_clip(sc.clip, sc.t_start, T)
            if ref is None:
                continue
            m = rec["mask"][sc.t_start : sc.t_start + ref.num_frames]
            if m.sum() == 0:
                continue
            sim = _slice_clip(clip, sc.t_start, sc.t_start + ref.num_frames)
            e_mp = mpjpe(sim, ref, skel, mask=m)
            e_gmp = gmpjpe(sim, ref, skel, mask=m)
            v, a = jitter(sim, ref, skel)
            mps.append(e_mp)
            gmps.append(e_gmp)
            vels.append(v)
            accs.append(a)
            if sc.group:
                parts.setdefault(sc.group, []).append(e_mp)
    rep.traj_err_m = float(np.mean(traj_errs))
    rep.fs_mm = float(np.mean(fss))
    rep.fl_mm = float(np.mean(fls))
    rep.episode_end_fraction = float(np.mean(ends))
    if mps:
        rep.mpjpe_mm = float(np.mean(mps))
        rep.gmpjpe_mm = float(np.mean(gmps))
        rep.vel_mm_per_frame = float(np.mean(vels))
        rep.accel_mm_per_frame2 = float(np.mean(accs))
    rep.per_part = {k: float(np.mean(v)) for k, v in parts.items()}
    if ref_features is not None and len(feats) >= 2:
        rep.frechet = frechet(np.array(feats), ref_features)
        rep.diversity = diversity(np.array(feats), seed=seed)
    return rep


def _slice_clip(clip, a, b):
    return MotionClip(
        fps=clip.fps,
        root_pos=np.asarray(clip.root_pos)[a:b],
        root_yaw=np.asarray(clip.root_yaw)[a:b],
        joint_rot=np.asarray(clip.joint_rot)[a:b],
    )


def _trim_clip(clip, t_start, total_frames):
    """Clip frames that fit inside a rollout of total_frames frames."""
    n = min(clip.num_frames, total_frames - t_start)
    if n < 3:
        return None
    return _slice_clip(clip, 0, n)
