"""Motion clips: procedural synthesis, resampling, file IO, AMP dataset."""
import json
from dataclasses import dataclass, field

import numpy as np

from . import rotations as rot
from .errors import DataError, ParameterError, SchemaError, VersionError
from .humanoid import HumanoidState

CLIP_FILE_VERSION = 1
CLIP_KINDS = ("walk", "run", "idle", "wave", "phone", "turn_look")

AMP_FEATURE_DIM = 14 * 6 + 15 * 3 + 3 + 1  # 133


@dataclass
class MotionClip:
    fps: float
    root_pos: np.ndarray  # (T, 3) m
    root_yaw: np.ndarray  # (T,)
    joint_rot: np.ndarray  # (T, 14, 4) local quaternions
    confidence: np.ndarray = None  # optional (T, 15) in [0, 1]

    def __post_init__(self):
        if self.fps <= 0:
            raise DataError("fps must be positive")
        if len(self.root_pos) < 2:
            raise DataError("clip needs at least 2 frames")
        if self.confidence is not None and (
            np.any(self.confidence < 0) or np.any(self.confidence > 1)
        ):
            raise DataError("confidence values must lie in [0, 1]")

    @property
    def num_frames(self):
        return len(self.root_pos)

    @property
    def duration(self):
        return (self.num_frames - 1) / self.fps

    def copy(self):
        return MotionClip(
            fps=self.fps,
            root_pos=np.array(self.root_pos),
            root_yaw=np.array(self.root_yaw),
            joint_rot=np.array(self.joint_rot),
            confidence=None if self.confidence is None else np.array(self.confidence),
        )


def _central_diff(x, fps):
    """Central differences, one-sided at the boundaries."""
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) * (fps / 2.0)
    d[0] = (x[1] - x[0]) * fps
    d[-1] = (x[-1] - x[-2]) * fps
    return d


def clip_velocities(clip):
    """(root_lin_vel (T,3), root_yaw_rate (T,), joint_ang_vel (T,14,3))."""
    theta = rot.quat_log(clip.joint_rot)
    return (
        _central_diff(clip.root_pos, clip.fps),
        _central_diff(np.unwrap(clip.root_yaw), clip.fps),
        _central_diff(theta, clip.fps),
    )


def clip_state(clip, frame, velocities=None):
    """HumanoidState snapshot of one clip frame."""
    lin, yaw_rate, ang = velocities if velocities is not None else clip_velocities(clip)
    return HumanoidState(
        root_pos=np.array(clip.root_pos[frame]),
        root_yaw=np.asarray(float(clip.root_yaw[frame])),
        root_lin_vel=np.array(lin[frame]),
        root_yaw_rate=np.asarray(float(yaw_rate[frame])),
        joint_rot=np.array(clip.joint_rot[frame]),
        joint_ang_vel=np.array(ang[frame]),
        time=np.asarray(frame / clip.fps),
    )


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def synth_clip(kind, params=None, seed=0, skel=None):
    """Procedural clip generator (30 fps), deterministic per (kind, params, seed).

    Gait content: hips/knees antiphase sinusoids with counter-phase arm
    swing; wave and phone overlay an arm performance (ramped in from the
    A-pose over 1 s) on top of the base gait.
    """
    params = dict(params or {})
    if kind not in CLIP_KINDS:
        raise ParameterError(f"unknown clip kind {kind!r}")
    fps = 30.0
    duration = float(params.get("duration_s", 8.0))
    speed = float(params.get("speed", 0.0 if kind in ("idle", "wave", "phone", "turn_look") else 1.2))
    if kind == "idle":
        speed = 0.0
    stride_hz = float(params.get("stride_hz", 0.9 if kind != "run" else 1.5))
    jitter = float(params.get("amplitude_jitter", 0.1))
    if duration < 1.0 or duration > 120.0:
        raise ParameterError("duration_s must be in [1, 120] seconds")
    if not 0.0 <= speed <= 3.0:
        raise ParameterError("speed must be in [0, 3] m/s")
    if not 0.0 < stride_hz <= 3.0:
        raise ParameterError("stride_hz must be in (0, 3] Hz")
    if not 0.0 <= jitter <= 0.5:
        raise ParameterError("amplitude_jitter must be in [0, 0.5]")

    rng = np.random.default_rng(seed)
    amp_scale = 1.0 + jitter * (2.0 * rng.random() - 1.0)

    T = int(round(duration * fps)) + 1
    t = np.arange(T) / fps
    theta = np.zeros((T, 14, 3))  # rotation-vector joint angles; index = joint-1

    moving = speed > 1e-9
    if kind == "run":
        leg_amp, knee_amp, arm_amp = 0.7, 0.9, 0.45
    else:
        leg_amp, knee_amp, arm_amp = 0.45, 0.55, 0.25
    leg_amp *= amp_scale * min(1.0, speed / 1.2 if moving else 0.0)
    knee_amp *= amp_scale * min(1.0, speed / 1.2 if moving else 0.0)
    arm_amp *= amp_scale * (1.0 if moving else 0.0)

    phase = 2.0 * np.pi * stride_hz * t
    if moving:
        # hips pitch (about y): left/right antiphase; knees flex on swing.
        theta[:, 8, 1] = -leg_amp * np.sin(phase)  # l_hip
        theta[:, 11, 1] = -leg_amp * np.sin(phase + np.pi)  # r_hip
        theta[:, 9, 1] = knee_amp * 0.5 * (1.0 - np.cos(phase))  # l_knee
        theta[:, 12, 1] = knee_amp * 0.5 * (1.0 - np.cos(phase + np.pi))  # r_knee
        # arms counter-phase to the same-side leg.
        theta[:, 2, 1] = -arm_amp * np.sin(phase + np.pi)  # l_shoulder
        theta[:, 5, 1] = -arm_amp * np.sin(phase)  # r_shoulder

    ramp = _smoothstep(t / 1.0)
    if kind == "wave":
        # Right arm raised to horizontal (90 deg total abduction) with a
        # 1 Hz elbow oscillation.
        theta[:, 5, 1] = 0.0
        theta[:, 5, 0] = -ramp * (np.pi / 3.0)
        theta[:, 6, 0] = -ramp * (0.35 + 0.4 * amp_scale * np.sin(2.0 * np.pi * 1.0 * t))
    elif kind == "phone":
        # Left elbow flexed ~120 deg, hand held near the head.
        theta[:, 2, 1] = 0.0
        theta[:, 2, 0] = ramp * 0.5
        theta[:, 3, 0] = ramp * (2.1 * amp_scale)
    elif kind == "turn_look":
        theta[:, 1, 2] = 0.6 * amp_scale * np.sin(2.0 * np.pi * 0.4 * t)  # head yaw

    root_pos = np.zeros((T, 3))
    root_pos[:, 0] = speed * t
    root_pos[:, 2] = 0.9
    root_yaw = np.zeros(T)
    return MotionClip(fps=fps, root_pos=root_pos, root_yaw=root_yaw, joint_rot=rot.quat_exp(theta))


def resample(clip, target_fps):
    """Resample to target_fps: linear root interpolation, shortest-arc slerp."""
    if target_fps <= 0:
        raise ParameterError("target_fps must be positive")
    if abs(target_fps - clip.fps) < 1e-12:
        return clip.copy()
    T_new = int(np.floor(clip.duration * target_fps)) + 1
    T_new = max(T_new, 2)
    times = np.arange(T_new) / target_fps
    src = np.clip(times * clip.fps, 0.0, clip.num_frames - 1)
    i0 = np.minimum(np.floor(src).astype(int), clip.num_frames - 2)
    frac = src - i0
    yaw = np.unwrap(clip.root_yaw)
    out_pos = clip.root_pos[i0] + (clip.root_pos[i0 + 1] - clip.root_pos[i0]) * frac[:, None]
    out_yaw = yaw[i0] + (yaw[i0 + 1] - yaw[i0]) * frac
    out_rot = rot.slerp(clip.joint_rot[i0], clip.joint_rot[i0 + 1], frac[:, None])
    out_conf = None
    if clip.confidence is not None:
        c = clip.confidence
        out_conf = c[i0] + (c[i0 + 1] - c[i0]) * frac[:, None]
    return MotionClip(fps=float(target_fps), root_pos=out_pos, root_yaw=out_yaw,
                      joint_rot=out_rot, confidence=out_conf)


def save_clip(clip, path):
    doc = {
        "version": CLIP_FILE_VERSION,
        "fps": clip.fps,
        "joint_names": _JOINT_NAMES,
        "frames": [
            {
                "root_pos": [float(v) for v in clip.root_pos[i]],
                "root_yaw": float(clip.root_yaw[i]),
                "joint_rot": [[float(c) for c in q] for q in clip.joint_rot[i]],
            }
            for i in range(clip.num_frames)
        ],
    }
    if clip.confidence is not None:
        doc["confidence"] = [[float(v) for v in row] for row in clip.confidence]
    with open(path, "w") as f:
        json.dump(doc, f)


_JOINT_NAMES = [
    "pelvis", "torso", "head", "l_shoulder", "l_elbow", "l_hand",
    "r_shoulder", "r_elbow", "r_hand", "l_hip", "l_knee", "l_foot",
    "r_hip", "r_knee", "r_foot",
]


def load_clip(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(str(e), field_path=str(path))
    if not isinstance(doc, dict) or "version" not in doc:
        raise SchemaError("missing version", field_path=str(path))
    if doc["version"] != CLIP_FILE_VERSION:
        raise VersionError(f"clip file version {doc['version']} unsupported")
    try:
        frames = doc["frames"]
        root_pos = np.array([f["root_pos"] for f in frames], dtype=float)
        root_yaw = np.array([f["root_yaw"] for f in frames], dtype=float)
        joint_rot = np.array([f["joint_rot"] for f in frames], dtype=float)
        if root_pos.shape[1:] != (3,) or joint_rot.shape[1:] != (14, 4):
            raise SchemaError("bad frame shapes", field_path="frames")
        conf = None
        if "confidence" in doc:
            conf = np.array(doc["confidence"], dtype=float)
        return MotionClip(fps=float(doc["fps"]), root_pos=root_pos, root_yaw=root_yaw,
                          joint_rot=joint_rot, confidence=conf)
    except (KeyError, ValueError, TypeError, IndexError) as e:
        raise SchemaError(str(e), field_path=str(path))


@dataclass
class ClipLibrary:
    clips: dict = field(default_factory=dict)  # id -> MotionClip
    tags: dict = field(default_factory=dict)  # id -> {"style": ..., "params": ...}
    amp_style_ids: list = field(default_factory=list)
    tracking_ids: list = field(default_factory=list)

    def add(self, clip_id, clip, style, params=None, amp_style=False, tracking=False):
        if clip_id in self.clips:
            raise DataError(f"duplicate clip id {clip_id!r}")
        self.clips[clip_id] = clip
        self.tags[clip_id] = {"style": style, "params": params or {}}
        if amp_style:
            self.amp_style_ids.append(clip_id)
        if tracking:
            self.tracking_ids.append(clip_id)

    def get(self, clip_id):
        if clip_id not in self.clips:
            raise DataError(f"unknown clip id {clip_id!r}")
        return self.clips[clip_id]


def make_library(seed=0, n_style=20, n_tracking=60, duration_s=8.0):
    """Procedural stand-in for a mocap corpus.

    The discriminator style set stays small relative to the tracking set,
    mirroring a curated-style / broad-content split.
    """
    lib = ClipLibrary()
    rng = np.random.default_rng(seed)
    style_kinds = ["walk", "run", "idle"]
    for i in range(n_style):
        kind = style_kinds[i % len(style_kinds)]
        params = {"duration_s": duration_s, "amplitude_jitter": 0.15}
        if kind != "idle":
            params["speed"] = float(rng.uniform(0.6, 1.8))
            params["stride_hz"] = float(rng.uniform(0.7, 1.2))
        clip_seed = int(rng.integers(0, 2**31))
        lib.add(f"style_{i:03d}_{kind}", synth_clip(kind, params, clip_seed),
                kind, params, amp_style=True)
    track_kinds = ["walk", "wave", "phone", "turn_look", "run"]
    for i in range(n_tracking):
        kind = track_kinds[i % len(track_kinds)]
        params = {"duration_s": duration_s, "amplitude_jitter": 0.15,
                  "speed": float(rng.uniform(0.6, 1.6))}
        clip_seed = int(rng.integers(0, 2**31))
        lib.add(f"track_{i:03d}_{kind}", synth_clip(kind, params, clip_seed),
                kind, params, tracking=True)
    return lib


def amp_feature(skel, state, fk=None, vel=None):
    """133-dim discriminator observation for one state.

    Local joint rotations (6D), heading-local joint positions, heading-local
    root linear velocity, and the yaw rate.
    """
    from .humanoid import forward_kinematics, heading_frame

    pos, quat = fk if fk is not None else forward_kinematics(skel, state)
    origin, inv_yaw = heading_frame(state)
    local6d = rot.quat_to_6d(state.joint_rot)
    p_loc = rot.quat_rotate(inv_yaw[..., None, :], pos - origin[..., None, :])
    v_loc = rot.quat_rotate(inv_yaw, state.root_lin_vel)
    parts = [
        local6d.reshape(local6d.shape[:-2] + (14 * 6,)),
        p_loc.reshape(p_loc.shape[:-2] + (15 * 3,)),
        v_loc,
        np.asarray(state.root_yaw_rate)[..., None],
    ]
    return np.concatenate(parts, axis=-1)


def clip_amp_features(skel, clip):
    """(T, 133) AMP features for every frame of a clip."""
    vels = clip_velocities(clip)
    feats = np.empty((clip.num_frames, AMP_FEATURE_DIM))
    for i in range(clip.num_frames):
        feats[i] = amp_feature(skel, clip_state(clip, i, vels))
    return feats


def build_amp_dataset(library, skel):
    """All consecutive-frame AMP feature pairs from the style set, (N, 266)."""
    if not library.amp_style_ids:
        raise DataError("amp_style_set is empty")
    pairs = []
    for cid in library.amp_style_ids:
        feats = clip_amp_features(skel, library.clips[cid])
        pairs.append(np.concatenate([feats[:-1], feats[1:]], axis=-1))
    return np.concatenate(pairs, axis=0)


class AmpPairSampler:
    """Uniform minibatch sampler over real AMP pairs with seeded shuffling."""

    def __init__(self, pairs, seed=0):
        if len(pairs) == 0:
            raise DataError("no AMP pairs to sample")
        self.pairs = pairs
        self.rng = np.random.default_rng(seed)

    def sample(self, n):
        idx = self.rng.integers(0, len(self.pairs), size=n)
        return self.pairs[idx]
