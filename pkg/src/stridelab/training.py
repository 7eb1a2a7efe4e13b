"""Training loop, checkpoint persistence, and metrics logging.

Checkpoint files are little-endian binary: header {magic "SLCK", version
u32, sha-256 config hash}, then a count of named float32 tensors
(name length u16, utf-8 name, ndim u8, dims u32 each, raw data).
Integer counters and generator states are packed losslessly into float32
tensors as 16-bit words so the on-disk format stays homogeneous.
"""
import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import nets
from .envs import VecEnv, TrajectorySampler
from .errors import DataError, TrainingFault, VersionError
from .motion import AmpPairSampler, build_amp_dataset
from .policy import Discriminator, PolicyNet, ValueNet
from .ppo import RolloutBuffer, TrainConfig, disc_update, ppo_update, style_reward
from .skeleton import default_skeleton
from .tasks import total_reward

CHECKPOINT_MAGIC = b"SLCK"
CHECKPOINT_VERSION = 1


def config_hash(cfg):
    """sha-256 over the canonical JSON form of a TrainConfig."""
    d = dataclasses.asdict(cfg)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).digest()


def _pack_ints(values, widths):
    """Integers -> 16-bit words stored exactly in float32."""
    words = []
    for v, n in zip(values, widths):
        v = int(v)
        for k in range(n):
            words.append((v >> (16 * k)) & 0xFFFF)
    return np.array(words, dtype=np.float32)


def _unpack_ints(arr, widths):
    words = [int(round(x)) for x in arr]
    out = []
    pos = 0
    for n in widths:
        v = 0
        for k in range(n):
            v |= words[pos + k] << (16 * k)
        out.append(v)
        pos += n
    return out

_RNG_WIDTHS = (8, 8, 1, 2)  # pcg64 state, inc, has_uint32, uinteger


def _encode_rng(rng):
    st = rng.bit_generator.state
    return _pack_ints(
        [st["state"]["state"], st["state"]["inc"], st["has_uint32"], st["uinteger"]],
        _RNG_WIDTHS,
    )


def _decode_rng(arr):
    state, inc, has32, uint = _unpack_ints(arr, _RNG_WIDTHS)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": state, "inc": inc},
        "has_uint32": has32,
        "uinteger": uint,
    }
    return rng


def _encode_text(s):
    return np.frombuffer(s.encode(), dtype=np.uint8).astype(np.float32)


def _decode_text(arr):
    return bytes(int(round(x)) for x in arr).decode()


@dataclass
class TrainerState:
    """Everything needed to continue (or evaluate) a run."""

    cfg: TrainConfig
    policy: PolicyNet
    value: ValueNet
    disc: Discriminator
    policy_opt: dict
    value_opt: dict
    disc_opt: dict
    rng_train: np.random.Generator
    rng_env: np.random.Generator
    update: int = 0

    @classmethod
    def fresh(cls, cfg):
        policy = PolicyNet(hidden=cfg.hidden, seed=cfg.seed,
                           log_std_init=cfg.log_std_init)
        value = ValueNet(hidden=cfg.hidden, seed=cfg.seed + 1)
        disc = Discriminator(seed=cfg.seed + 2)
        return cls(
            cfg=cfg,
            policy=policy,
            value=value,
            disc=disc,
            policy_opt=nets.adam_init(policy.params),
            value_opt=nets.adam_init(value.params),
            disc_opt=nets.adam_init(disc.params),
            rng_train=np.random.default_rng(cfg.seed + 3),
            rng_env=np.random.default_rng(cfg.seed + 4),
            update=0,
        )

    def mask_probability(self):
        """Phase the current update counter falls in."""
        u = self.update
        for count, p in self.cfg.phase_schedule:
            if u < count:
                return p
            u -= count
        return self.cfg.phase_schedule[-1][1]

    def total_updates(self):
        return sum(c for c, _ in self.cfg.phase_schedule)


def _tensor_dict(state):
    t = {}
    for group, params in (
        ("policy", state.policy.params),
        ("value", state.value.params),
        ("disc", state.disc.params),
    ):
        for k, v in params.items():
            t[f"{group}/{k}"] = v
    for group, opt in (
        ("policy_opt", state.policy_opt),
        ("value_opt", state.value_opt),
        ("disc_opt", state.disc_opt),
    ):
        for moment in ("m", "v"):
            for k, arr in opt[moment].items():
                t[f"{group}/{moment}/{k}"] = arr
        t[f"{group}/t"] = _pack_ints([opt["t"]], (3,))
    t["rng_train"] = _encode_rng(state.rng_train)
    t["rng_env"] = _encode_rng(state.rng_env)
    t["update"] = _pack_ints([state.update], (3,))
    t["config_json"] = _encode_text(
        json.dumps(dataclasses.asdict(state.cfg), sort_keys=True)
    )
    return t


def save_checkpoint(state, path):
    tensors = _tensor_dict(state)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(config_hash(state.cfg))
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
            enc = name.encode()
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.astype("<f4").tobytes())
    return path


def read_checkpoint_tensors(path):
    """(config hash, {name: float32 array}) from an SLCK file."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise VersionError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    h = blob[8:40]
    (count,) = struct.unpack_from("<I", blob, 40)
    pos = 44
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + nlen].decode()
        pos += nlen
        ndim = blob[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        tensors[name] = np.array(arr)
    return h, tensors


def load_checkpoint(path, expected_cfg=None):
    h, tensors = read_checkpoint_tensors(path)
    cfg_dict = json.loads(_decode_text(tensors["config_json"]))
    for k in ("phase_schedule", "hidden"):
        cfg_dict[k] = tuple(
            tuple(x) if isinstance(x, list) else x for x in cfg_dict[k]
        )
    cfg = TrainConfig(**cfg_dict)
    if expected_cfg is not None and config_hash(expected_cfg) != h:
        raise VersionError(f"{path}: config hash mismatch")
    # hash the stored dict, not the reconstructed dataclass, so checkpoints
    # written before a config field existed still verify
    stored = json.dumps(cfg_dict, sort_keys=True, separators=(",", ":"))
    if hashlib.sha256(stored.encode()).digest() != h:
        raise VersionError(f"{path}: config hash does not match stored config")
    state = TrainerState.fresh(cfg)
    for group, params in (
        ("policy", state.policy.params),
        ("value", state.value.params),
        ("disc", state.disc.params),
    ):
        for k in params:
            # parameters introduced after the checkpoint was written keep
            # their zero init
            if f"{group}/{k}" in tensors:
                params[k] = tensors[f"{group}/{k}"].astype(np.float32)
    state.policy_opt = _load_opt(tensors, "policy_opt", state.policy.params)
    state.value_opt = _load_opt(tensors, "value_opt", state.value.params)
    state.disc_opt = _load_opt(tensors, "disc_opt", state.disc.params)
    state.rng_train = _decode_rng(tensors["rng_train"])
    state.rng_env = _decode_rng(tensors["rng_env"])
    state.update = _unpack_ints(tensors["update"], (3,))[0]
    return state


def _load_opt(tensors, group, params):
    opt = {"m": {}, "v": {}, "t": _unpack_ints(tensors[f"{group}/t"], (3,))[0]}
    for k in params:
        if f"{group}/m/{k}" in tensors:
            opt["m"][k] = tensors[f"{group}/m/{k}"].astype(np.float32)
            opt["v"][k] = tensors[f"{group}/v/{k}"].astype(np.float32)
        else:
            opt["m"][k] = np.zeros_like(params[k])
            opt["v"][k] = np.zeros_like(params[k])
    return opt


def collect_rollout(env, state, cfg):
    """One on-policy segment of cfg.rollout_len steps across all envs."""
    L, E = cfg.rollout_len, env.num_envs
    obs_buf = np.empty((L, E, 1020), dtype=np.float32)
    act_buf = np.empty((L, E, 45), dtype=np.float32)
    logp_buf = np.empty((L, E))
    val_buf = np.empty((L, E))
    rew_buf = np.empty((L, E))
    done_buf = np.empty((L, E))
    pair_buf = np.empty((L, E, 266), dtype=np.float32)
    use_bc = cfg.bc_weight > 0.0
    if use_bc:
        bc_t_buf = np.empty((L, E, 45), dtype=np.float32)
        bc_w_buf = np.empty((L, E, 45), dtype=np.float32)
    comp = {"traj": 0.0, "motion": 0.0, "amp": 0.0}
    term_counts = {}
    done_lengths = []
    for t in range(L):
        obs, _ = env.observe()
        obs = obs.astype(np.float32)
        actions, logp = state.policy.sample(obs, state.rng_train)
        values = state.value.value(obs)
        if use_bc:
            bc_t_buf[t], bc_w_buf[t] = env.reference_actions()
        rewards, dones, infos, pairs = env.step(actions)
        r_amp = style_reward(state.disc, pairs.astype(np.float32))
        total = total_reward(r_amp, rewards["traj"], rewards["motion"])
        obs_buf[t] = obs
        act_buf[t] = actions
        logp_buf[t] = logp
        val_buf[t] = values
        rew_buf[t] = total
        done_buf[t] = dones
        pair_buf[t] = pairs
        comp["traj"] += float(rewards["traj"].mean())
        comp["motion"] += float(rewards["motion"].mean())
        comp["amp"] += float(r_amp.mean())
        done_lengths.extend(int(x) for x in infos["done_lengths"])
        for c, d in zip(infos["causes"], dones):
            if d:
                term_counts[c.value] = term_counts.get(c.value, 0) + 1
    final_obs, _ = env.observe()
    bootstrap = state.value.value(final_obs.astype(np.float32))
    buf = RolloutBuffer(
        obs=obs_buf, actions=act_buf, log_probs=logp_buf, values=val_buf,
        rewards=rew_buf, dones=done_buf, amp_pairs=pair_buf,
        bootstrap_value=np.asarray(bootstrap),
        bc_targets=bc_t_buf if use_bc else None,
        bc_mask=bc_w_buf if use_bc else None,
    )
    stats = {k: v / L for k, v in comp.items()}
    stats["term_counts"] = term_counts
    stats["done_lengths"] = done_lengths
    return buf, stats


def train(cfg, terrains, clip_lib, out_path, skel=None, state=None,
          traj_sampler=None, ep_cfg=None, log_path=None, checkpoint_every=100,
          max_updates=None, callback=None, group_probs=None,
          mask_from_clip_start=False, rsi_probability=0.0,
          motion_kernel_scale=1.0, mask_window_s=None):
    """Run the phase schedule; returns the final TrainerState.

    `state` resumes from a loaded checkpoint. `callback(update, state)` is
    invoked after every update; returning True stops training early. On a
    training fault the last periodic checkpoint on disk is left untouched.
    """
    skel = skel or default_skeleton()
    state = state or TrainerState.fresh(cfg)
    if not clip_lib.amp_style_ids:
        raise DataError("clip library has no style clips for the discriminator")
    real_pairs = build_amp_dataset(clip_lib, skel).astype(np.float32)
    sampler = AmpPairSampler(real_pairs, seed=cfg.seed + 5)
    traj_sampler = traj_sampler or TrajectorySampler()

    env = VecEnv(
        skel, terrains, clip_lib=clip_lib, num_envs=cfg.num_envs,
        seed=int(state.rng_env.integers(2**63 - 1)), ep_cfg=ep_cfg,
        traj_sampler=traj_sampler, mask_probability=state.mask_probability(),
        group_probs=group_probs, mask_from_clip_start=mask_from_clip_start,
        rsi_probability=rsi_probability,
        motion_kernel_scale=motion_kernel_scale,
        **({} if mask_window_s is None else {"mask_window_s": mask_window_s}),
    )
    total = state.total_updates() if max_updates is None else min(
        state.total_updates(), state.update + max_updates
    )
    log_f = open(log_path, "a") if log_path else None
    try:
        while state.update < total:
            env.mask_probability = state.mask_probability()
            buf, stats = collect_rollout(env, state, cfg)
            fake = buf.amp_pairs.reshape(-1, 266)
            real = sampler.sample(len(fake))
            disc_stats = disc_update(state.disc, real, fake, cfg, state.disc_opt)
            buf.compute_advantages(cfg.gamma, cfg.gae_lambda)
            ppo_stats = ppo_update(
                buf, state.policy, state.value, cfg,
                state.policy_opt, state.value_opt, state.rng_train,
            )
            state.update += 1
            lens = stats.pop("done_lengths")
            line = {
                "update": state.update,
                "r_traj": round(stats["traj"], 6),
                "r_motion": round(stats["motion"], 6),
                "r_amp": round(stats["amp"], 6),
                "ep_len": round(float(np.mean(lens)), 2) if lens else None,
                "term_counts": stats["term_counts"],
                "surrogate": round(ppo_stats["surrogate"], 6),
                "bc": round(ppo_stats["bc"], 6),
            }
            if log_f:
                log_f.write(json.dumps(line) + "\n")
                log_f.flush()
            if state.update % checkpoint_every == 0 or state.update == total:
                save_checkpoint(state, out_path)
            if callback is not None and callback(state.update, state):
                break
    except TrainingFault:
        # leave the last periodic checkpoint as the recovery point
        raise
    finally:
        if log_f:
            log_f.close()
    save_checkpoint(state, out_path)
    return state
