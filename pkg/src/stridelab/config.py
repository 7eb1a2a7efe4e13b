"""Merged run configuration: one JSON file validated against a strict schema.

Unknown keys are rejected everywhere so a typo like "gama" fails loudly
instead of silently using a default.
"""
import json

import jsonschema

from .errors import SchemaError
from .ppo import TrainConfig
from .simulator import SimConfig
from .tasks import EpisodeConfig, RewardWeights

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "gae_lambda": {"type": "number", "minimum": 0, "maximum": 1},
                "clip_eps": {"type": "number", "exclusiveMinimum": 0},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "update_epochs": _POS_INT,
                "minibatch_count": _POS_INT,
                "num_envs": _POS_INT,
                "rollout_len": _POS_INT,
                "disc_grad_penalty": {"type": "number", "minimum": 0},
                "phase_schedule": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "array",
                        "prefixItems": [
                            {"type": "integer", "minimum": 0},
                            {"type": "number", "minimum": 0, "maximum": 1},
                        ],
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
                "seed": {"type": "integer", "minimum": 0},
                "hidden": {"type": "array", "items": _POS_INT, "minItems": 1},
                "log_std_init": _NUM,
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "control_hz": _POS_INT,
                "sim_hz": _POS_INT,
                "substeps_per_control": _POS_INT,
                "hip_height": {"type": "number", "exclusiveMinimum": 0},
                "max_speed": {"type": "number", "exclusiveMinimum": 0},
                "slope_speed_coeff": {"type": "number", "minimum": 0},
            },
        },
        "episode": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "traj_term_threshold": {"type": "number", "exclusiveMinimum": 0},
                "track_term_threshold": {"type": "number", "exclusiveMinimum": 0},
                "waypoint_spacing_s": {"type": "number", "exclusiveMinimum": 0},
                "waypoint_count": _POS_INT,
                "episode_length": _POS_INT,
            },
        },
        "rewards": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "w_jp": _NUM, "w_jr": _NUM, "w_jv": _NUM, "w_rv": _NUM,
            },
        },
        "trajectory": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "straight": {"type": "boolean"},
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "speed_range": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "max_turn_rate": {"type": "number", "minimum": 0},
            },
        },
        "assets": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "clip_dir": {"type": "string"},
                "terrain_files": {"type": "array", "items": {"type": "string"}},
                "trajectory_files": {"type": "array", "items": {"type": "string"}},
            },
        },
        "checkpoint_every": _POS_INT,
    },
}


class RunConfig:
    """Validated bundle of per-module configs plus asset paths."""

    def __init__(self, doc=None):
        doc = doc or {}
        validate_run_config(doc)
        self.doc = doc
        self.seed = doc.get("seed", 0)
        train = dict(doc.get("train", {}))
        if "phase_schedule" in train:
            train["phase_schedule"] = tuple(tuple(p) for p in train["phase_schedule"])
        if "hidden" in train:
            train["hidden"] = tuple(train["hidden"])
        train.setdefault("seed", self.seed)
        self.train = TrainConfig(**train)
        self.sim = SimConfig(**doc.get("sim", {}))
        self.episode = EpisodeConfig(**doc.get("episode", {}))
        self.rewards = RewardWeights(**doc.get("rewards", {}))
        self.trajectory = doc.get("trajectory", {})
        self.assets = doc.get("assets", {})
        self.checkpoint_every = doc.get("checkpoint_every", 100)


def validate_run_config(doc):
    validator = jsonschema.Draft202012Validator(RUN_CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "$"
        raise SchemaError(e.message, field_path=path)


def load_run_config(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: not valid JSON ({e})", field_path="$")
    return RunConfig(doc)
