"""Policy, value, and discriminator networks over structured observations.

Observation layout (1020 reals):
    [proprioception 225 | trajectory waypoints 20 | terrain patch 400 |
     motion tracking goal 375]
The terrain block goes through a 2-layer strided conv encoder; trajectory
and motion goal share an MLP goal encoder; the trunk consumes
proprioception + terrain embedding + goal embedding.
"""
import numpy as np

from . import nets
from .humanoid import PROPRIO_DIM
from .motion import AMP_FEATURE_DIM
from .tasks import MOTION_GOAL_DIM, TRAJ_GOAL_DIM
from .terrain import PATCH_DIM, PATCH_RES

OBS_PROPRIO = slice(0, PROPRIO_DIM)
OBS_TRAJ = slice(PROPRIO_DIM, PROPRIO_DIM + TRAJ_GOAL_DIM)
OBS_TERRAIN = slice(PROPRIO_DIM + TRAJ_GOAL_DIM, PROPRIO_DIM + TRAJ_GOAL_DIM + PATCH_DIM)
OBS_MOTION = slice(PROPRIO_DIM + TRAJ_GOAL_DIM + PATCH_DIM,
                   PROPRIO_DIM + TRAJ_GOAL_DIM + PATCH_DIM + MOTION_GOAL_DIM)
OBS_DIM = PROPRIO_DIM + TRAJ_GOAL_DIM + PATCH_DIM + MOTION_GOAL_DIM

ACTION_DIM = 2 + 1 + 14 * 3  # root accel, yaw accel, PD targets

TERRAIN_EMBED = 32
GOAL_EMBED = 128
CONV1_CH = 8
CONV2_CH = 16
CONV_FLAT = CONV2_CH * 5 * 5

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0


class ObsNet:
    """Conv terrain encoder + goal encoder + MLP trunk, manual backprop."""

    def __init__(self, out_dim, hidden=(512, 256), seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.out_dim = out_dim
        self.dtype = dtype
        p = {}
        p["conv1_W"], p["conv1_b"] = nets.conv_init(rng, 1, CONV1_CH, dtype=dtype)
        p["conv2_W"], p["conv2_b"] = nets.conv_init(rng, CONV1_CH, CONV2_CH, dtype=dtype)
        p["convfc_W"], p["convfc_b"] = nets.linear_init(rng, CONV_FLAT, TERRAIN_EMBED, dtype=dtype)
        p.update(
            nets.mlp_init(rng, [TRAJ_GOAL_DIM + MOTION_GOAL_DIM, GOAL_EMBED],
                          out_scale=None, dtype=dtype, prefix="goal_")
        )
        trunk_in = PROPRIO_DIM + TERRAIN_EMBED + GOAL_EMBED
        p.update(
            nets.mlp_init(rng, [trunk_in, *hidden, out_dim], out_scale=0.01,
                          dtype=dtype, prefix="trunk_")
        )
        # zero-init direct path from the motion goal to the output; inactive
        # (exactly zero) whenever the mask is empty
        p["skip_W"] = np.zeros((MOTION_GOAL_DIM, out_dim), dtype=dtype)
        self.params = p

    def forward(self, obs):
        p = self.params
        obs = np.asarray(obs, dtype=self.dtype)
        squeeze = obs.ndim == 1
        if squeeze:
            obs = obs[None]
        n = obs.shape[0]
        terr = obs[:, OBS_TERRAIN].reshape(n, 1, PATCH_RES, PATCH_RES)
        c1, c1_cache = nets.conv2d_forward(p["conv1_W"], p["conv1_b"], terr)
        m1 = c1 > 0
        h1 = c1 * m1
        c2, c2_cache = nets.conv2d_forward(p["conv2_W"], p["conv2_b"], h1)
        m2 = c2 > 0
        h2 = (c2 * m2).reshape(n, CONV_FLAT)
        fc = h2 @ p["convfc_W"] + p["convfc_b"]
        mfc = fc > 0
        emb = fc * mfc

        goal_in = np.concatenate([obs[:, OBS_TRAJ], obs[:, OBS_MOTION]], axis=1)
        g_pre = goal_in @ p["goal_W0"] + p["goal_b0"]
        mg = g_pre > 0
        goal = g_pre * mg

        trunk_in = np.concatenate([obs[:, OBS_PROPRIO], emb, goal], axis=1)
        out, trunk_cache = nets.mlp_forward(p, trunk_in, prefix="trunk_")
        out = out + obs[:, OBS_MOTION] @ p["skip_W"]
        cache = (obs, c1_cache, m1, c2_cache, m2, h2, mfc, goal_in, mg, trunk_cache, squeeze)
        return (out[0] if squeeze else out), cache

    def backward(self, cache, gout):
        p = self.params
        obs, c1_cache, m1, c2_cache, m2, h2, mfc, goal_in, mg, trunk_cache, squeeze = cache
        if squeeze:
            gout = gout[None]
        gout = np.asarray(gout, dtype=self.dtype)
        grads, g_trunk_in = nets.mlp_backward(p, trunk_cache, gout)
        grads["skip_W"] = obs[:, OBS_MOTION].T @ gout
        g_emb = g_trunk_in[:, PROPRIO_DIM : PROPRIO_DIM + TERRAIN_EMBED]
        g_goal = g_trunk_in[:, PROPRIO_DIM + TERRAIN_EMBED :]

        g_gpre = g_goal * mg
        grads["goal_W0"] = goal_in.T @ g_gpre
        grads["goal_b0"] = g_gpre.sum(axis=0)

        g_fc = g_emb * mfc
        grads["convfc_W"] = h2.T @ g_fc
        grads["convfc_b"] = g_fc.sum(axis=0)
        g_h2 = (g_fc @ p["convfc_W"].T).reshape(-1, CONV2_CH, 5, 5)
        g_c2 = g_h2 * m2
        grads["conv2_W"], grads["conv2_b"], g_h1 = nets.conv2d_backward(
            p["conv2_W"], c2_cache, g_c2
        )
        g_c1 = g_h1 * m1
        grads["conv1_W"], grads["conv1_b"], _ = nets.conv2d_backward(
            p["conv1_W"], c1_cache, g_c1
        )
        return grads


class PolicyNet(ObsNet):
    """Diagonal Gaussian policy with a learned state-independent log std."""

    def __init__(self, hidden=(512, 256), seed=0, dtype=np.float32, log_std_init=-1.0):
        super().__init__(ACTION_DIM, hidden=hidden, seed=seed, dtype=dtype)
        self.params["log_std"] = np.full(ACTION_DIM, log_std_init, dtype=dtype)

    @property
    def log_std(self):
        return np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, obs, rng):
        mean, _ = self.forward(obs)
        std = np.exp(self.log_std)
        noise = rng.standard_normal(mean.shape).astype(self.dtype)
        action = mean + std * noise
        return action, self.log_prob(mean, action)

    def mean_action(self, obs):
        mean, _ = self.forward(obs)
        return mean

    def log_prob(self, mean, action):
        log_std = self.log_std
        z = (action - mean) / np.exp(log_std)
        return (
            -0.5 * np.sum(z * z, axis=-1)
            - np.sum(log_std)
            - 0.5 * ACTION_DIM * np.log(2.0 * np.pi)
        )

    def entropy(self):
        return float(np.sum(self.log_std) + 0.5 * ACTION_DIM * (1.0 + np.log(2.0 * np.pi)))


class ValueNet(ObsNet):
    def __init__(self, hidden=(512, 256), seed=0, dtype=np.float32):
        super().__init__(1, hidden=hidden, seed=seed, dtype=dtype)

    def value(self, obs):
        v, _ = self.forward(obs)
        return v[..., 0]


class Discriminator:
    """MLP scoring consecutive AMP feature pairs (266 -> 1)."""

    def __init__(self, hidden=(256, 128), seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.params = nets.mlp_init(
            rng, [2 * AMP_FEATURE_DIM, *hidden, 1], out_scale=0.01, dtype=dtype
        )

    def forward(self, pairs):
        pairs = np.asarray(pairs, dtype=self.dtype)
        out, cache = nets.mlp_forward(self.params, pairs)
        return out[..., 0], cache

    def score(self, pairs):
        return self.forward(pairs)[0]
