"""PPO with GAE, plus the least-squares adversarial motion prior updates."""
from dataclasses import dataclass

import numpy as np

from . import nets
from .errors import ParameterError, TrainingFault

ENTROPY_COEF = 0.01
VALUE_COEF = 0.5


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 5e-4
    update_epochs: int = 5
    minibatch_count: int = 4
    num_envs: int = 64
    rollout_len: int = 32
    disc_grad_penalty: float = 5.0
    # (update_count, mask_probability) pairs run in order
    phase_schedule: tuple = ((2000, 0.7), (1000, 0.0))
    seed: int = 0
    hidden: tuple = (512, 256)
    log_std_init: float = -1.0
    # pulls the mean PD-target action toward the reference pose on masked
    # joints (auxiliary imitation loss; 0 disables)
    bc_weight: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError("gamma must be in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ParameterError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ParameterError("clip_eps must be positive")


@dataclass
class RolloutBuffer:
    """E x L arrays collected during one rollout segment."""

    obs: np.ndarray  # (L, E, obs_dim)
    actions: np.ndarray  # (L, E, act_dim)
    log_probs: np.ndarray  # (L, E)
    values: np.ndarray  # (L, E)
    rewards: np.ndarray  # (L, E)
    dones: np.ndarray  # (L, E) 1.0 where the episode ended at this step
    amp_pairs: np.ndarray  # (L, E, 266)
    bootstrap_value: np.ndarray  # (E,)
    advantages: np.ndarray = None
    returns: np.ndarray = None
    bc_targets: np.ndarray = None  # (L, E, act_dim) reference actions
    bc_mask: np.ndarray = None  # (L, E, act_dim) per-dim tracking weights

    def compute_advantages(self, gamma, lam):
        self.advantages, self.returns = gae(
            self.rewards, self.values, self.dones, gamma, lam, self.bootstrap_value
        )


def gae(rewards, values, dones, gamma, lam, bootstrap_value=None):
    """Generalized advantage estimation over (L,) or (L, E) arrays."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    L = rewards.shape[0]
    if bootstrap_value is None:
        bootstrap_value = np.zeros(rewards.shape[1:])
    adv = np.zeros_like(rewards)
    next_adv = np.zeros(rewards.shape[1:])
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    for t in reversed(range(L)):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        next_adv = delta + gamma * lam * not_done * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv, eps=1e-8):
    return (adv - adv.mean()) / (adv.std() + eps)


def style_reward(disc, pairs):
    """clamp(1 - 0.25 (D - 1)^2, 0, 1)."""
    d = disc.score(pairs)
    return np.clip(1.0 - 0.25 * (d - 1.0) ** 2, 0.0, 1.0)


def ppo_update(buffer, policy, value_net, cfg, policy_opt, value_opt, rng):
    """Clipped-surrogate PPO over shuffled minibatches; returns loss stats."""
    L, E = buffer.rewards.shape
    n = L * E
    obs = buffer.obs.reshape(n, -1)
    actions = buffer.actions.reshape(n, -1)
    old_logp = buffer.log_probs.reshape(n)
    returns = buffer.returns.reshape(n)
    adv = normalize_advantages(buffer.advantages.reshape(n))

    use_bc = cfg.bc_weight > 0.0 and buffer.bc_targets is not None
    if use_bc:
        bc_t = buffer.bc_targets.reshape(n, -1)
        bc_w = buffer.bc_mask.reshape(n, -1)

    stats = {"surrogate": 0.0, "value": 0.0, "entropy": 0.0, "clip_frac": 0.0, "bc": 0.0}
    count = 0
    mb = max(1, n // cfg.minibatch_count)
    eps = cfg.clip_eps
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start : start + mb]
            o = obs[idx]
            a = actions[idx]
            advb = adv[idx]
            m = len(idx)

            mean, cache = policy.forward(o)
            log_std = policy.log_std
            std = np.exp(log_std)
            z = (a - mean) / std
            logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * a.shape[1] * np.log(2 * np.pi)
            ratio = np.exp(logp - old_logp[idx])

            unclipped = ratio * advb
            clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advb
            surrogate = -np.mean(np.minimum(unclipped, clipped))
            if not np.isfinite(surrogate):
                raise TrainingFault(f"non-finite surrogate loss (ratio max {ratio.max()})")

            # d(-min)/dlogp: active only where the unclipped branch is the min
            active = unclipped <= clipped
            g_logp = np.where(active, -advb * ratio, 0.0) / m
            # logp gradients: mean and log_std
            g_mean = g_logp[:, None] * (z / std)
            g_log_std = np.sum(g_logp[:, None] * (z * z - 1.0), axis=0)
            # entropy bonus: d(-c*H)/dlog_std = -c per dim
            g_log_std = g_log_std - ENTROPY_COEF

            if use_bc:
                wb = bc_w[idx]
                denom = float(wb.sum()) + 1e-8
                diff = (mean - bc_t[idx]) * wb
                stats["bc"] += float(np.sum(diff * (mean - bc_t[idx])) / denom)
                g_mean = g_mean + cfg.bc_weight * 2.0 * diff / denom

            grads = policy.backward(cache, g_mean.astype(policy.dtype))
            grads["log_std"] = g_log_std.astype(policy.dtype)
            nets.adam_step(policy.params, grads, policy_opt, cfg.learning_rate)
            np.clip(policy.params["log_std"], -4.0, 1.0, out=policy.params["log_std"])

            v, v_cache = value_net.forward(o)
            v = v[:, 0]
            err = v - returns[idx]
            value_loss = float(np.mean(err * err))
            g_v = (2.0 * err / m)[:, None] * VALUE_COEF
            v_grads = value_net.backward(v_cache, g_v.astype(value_net.dtype))
            nets.adam_step(value_net.params, v_grads, value_opt, cfg.learning_rate)

            stats["surrogate"] += float(surrogate)
            stats["value"] += value_loss
            stats["entropy"] += policy.entropy()
            stats["clip_frac"] += float(np.mean(~active))
            count += 1
    for k in stats:
        stats[k] /= max(count, 1)
    return stats


def _disc_grad_penalty_grads(disc, cache, _unused=None):
    """Parameter gradients of mean ||d D/d input||^2 with fixed relu masks.

    The input gradient r_1 W_0^T is multilinear in the weights; a second
    reverse pass through the same chain yields its derivative.
    """
    acts, masks, prefix, n = cache
    p = disc.params
    batch = acts[0].shape[0]
    # Recompute the intermediate rows r_l of the input-gradient chain.
    r = [None] * (n + 1)
    r[n] = np.ones((batch, 1), dtype=acts[0].dtype)
    for i in reversed(range(n)):
        g = r[i + 1] @ p[f"{prefix}W{i}"].T
        if i > 0:
            g = g * masks[i - 1]
        r[i] = g
    # r[0] is the input gradient; penalty P = mean ||r[0]||^2.
    s = 2.0 * r[0] / batch  # dP/dr[0]
    grads = {}
    q = s
    for i in range(n):
        w = p[f"{prefix}W{i}"]
        # r[i] = (r[i+1] @ W_i^T) * m_{i-1}; dP/dW_i = q_masked^T outer r[i+1]
        qm = q if i == 0 else q * masks[i - 1]
        grads[f"{prefix}W{i}"] = (r[i + 1].T @ qm).T
        grads[f"{prefix}b{i}"] = np.zeros_like(p[f"{prefix}b{i}"])
        q = qm @ w
    return grads, float(np.mean(np.sum(r[0] * r[0], axis=-1)))


def disc_update(disc, real_pairs, fake_pairs, cfg, disc_opt):
    """Least-squares objective with a gradient penalty on real samples."""
    if len(real_pairs) == 0 or len(fake_pairs) == 0:
        raise TrainingFault("empty discriminator batch")
    d_real, cache_r = disc.forward(real_pairs)
    d_fake, cache_f = disc.forward(fake_pairs)
    n_r = len(d_real)
    n_f = len(d_fake)
    loss_real = float(np.mean((d_real - 1.0) ** 2))
    loss_fake = float(np.mean((d_fake + 1.0) ** 2))

    g_real = (2.0 * (d_real - 1.0) / n_r)[:, None]
    g_fake = (2.0 * (d_fake + 1.0) / n_f)[:, None]
    grads_r, _ = nets.mlp_backward(disc.params, cache_r, g_real.astype(disc.dtype))
    grads_f, _ = nets.mlp_backward(disc.params, cache_f, g_fake.astype(disc.dtype))
    pen_grads, penalty = _disc_grad_penalty_grads(disc, cache_r, None)

    grads = {
        k: grads_r[k] + grads_f[k] + cfg.disc_grad_penalty * pen_grads[k]
        for k in disc.params
    }
    nets.adam_step(disc.params, grads, disc_opt, cfg.learning_rate)
    total = loss_real + loss_fake + cfg.disc_grad_penalty * penalty
    if not np.isfinite(total):
        raise TrainingFault("non-finite discriminator loss")
    return {"real": loss_real, "fake": loss_fake, "penalty": penalty, "total": total}
