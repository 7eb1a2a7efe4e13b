"""Command-line entry points.

Exit codes: 0 ok, 2 IO, 3 config, 4 training fault, 5 incompatible
inputs, 6 network. STRIDELAB_THREADS caps internal worker count.
"""
import json
import os
import sys

import click
import numpy as np

from .config import load_run_config
from .errors import (
    DataError,
    ParameterError,
    SchemaError,
    TrainingFault,
    VersionError,
)
from .skeleton import default_skeleton

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_TRAINING = 4
EXIT_INCOMPATIBLE = 5
EXIT_NETWORK = 6


def thread_cap():
    """Worker-count limit from STRIDELAB_THREADS (default: os.cpu_count)."""
    raw = os.environ.get("STRIDELAB_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return os.cpu_count() or 1
    return max(1, n)


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Terrain-aware pedestrian controller: assets, training, evaluation, serving."""


@main.command("make-assets")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, type=int)
@click.option("--clips", "n_clips", default=20, type=int, help="style clip count")
@click.option("--terrains", "n_terrains", default=4, type=int)
def cmd_make_assets(out_dir, seed, n_clips, n_terrains):
    """Write a clip library, terrain files, and trajectory files."""
    from .motion import make_library, save_clip
    from .tasks import generate_trajectory, save_trajectory
    from .terrain import TERRAIN_KINDS, generate_terrain, save_terrain

    try:
        os.makedirs(out_dir, exist_ok=True)
        for sub in ("clips", "terrains", "trajectories"):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as f:
            f.write("ok")
        os.remove(probe)
    except OSError as e:
        _fail(EXIT_IO, f"cannot write to {out_dir}: {e}")

    lib = make_library(seed=seed, n_style=n_clips, n_tracking=3 * n_clips)
    manifest = {"seed": seed, "style_clips": [], "tracking_clips": [],
                "terrains": [], "trajectories": []}
    try:
        for cid, clip in lib.clips.items():
            path = os.path.join(out_dir, "clips", f"{cid}.json")
            save_clip(clip, path)
            key = "style_clips" if cid in lib.amp_style_ids else "tracking_clips"
            manifest[key].append({"id": cid, "file": path, **lib.tags[cid]})
        for i in range(n_terrains):
            kind = TERRAIN_KINDS[i % len(TERRAIN_KINDS)]
            hm = generate_terrain(kind, {}, seed=seed + i)
            path = os.path.join(out_dir, "terrains", f"{i:02d}_{kind}.json")
            save_terrain(hm, path)
            manifest["terrains"].append({"kind": kind, "file": path})
        rng = np.random.default_rng(seed)
        for i in range(8):
            traj = generate_trajectory(int(rng.integers(2**31)), 10.0)
            path = os.path.join(out_dir, "trajectories", f"{i:02d}.json")
            save_trajectory(traj, path)
            manifest["trajectories"].append({"file": path})
        with open(os.path.join(out_dir, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except OSError as e:
        _fail(EXIT_IO, str(e))
    click.echo(json.dumps(manifest, indent=2, sort_keys=True))


def _load_assets(run_cfg):
    from .motion import ClipLibrary, load_clip, make_library
    from .terrain import generate_terrain, load_terrain

    terrains = []
    for path in run_cfg.assets.get("terrain_files", []):
        terrains.append(load_terrain(path))
    if not terrains:
        terrains = [generate_terrain("flat", {}, seed=run_cfg.seed)]
    clip_dir = run_cfg.assets.get("clip_dir")
    if clip_dir:
        lib = ClipLibrary()
        for name in sorted(os.listdir(clip_dir)):
            if not name.endswith(".json"):
                continue
            cid = name[:-5]
            clip = load_clip(os.path.join(clip_dir, name))
            lib.add(cid, clip, style="file", amp_style=cid.startswith("style_"),
                    tracking=not cid.startswith("style_"))
    else:
        lib = make_library(seed=run_cfg.seed)
    return terrains, lib


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--resume", "resume_path", default=None, type=click.Path())
def cmd_train(config_path, out_path, resume_path):
    """Run the phase schedule and write checkpoint + metrics log."""
    from . import training
    from .envs import TrajectorySampler

    try:
        run_cfg = load_run_config(config_path)
    except FileNotFoundError as e:
        _fail(EXIT_IO, str(e))
    except (SchemaError, ParameterError) as e:
        _fail(EXIT_CONFIG, str(e))
    state = None
    if resume_path:
        try:
            state = training.load_checkpoint(resume_path, expected_cfg=run_cfg.train)
        except (OSError, VersionError) as e:
            _fail(EXIT_CONFIG, str(e))
    try:
        terrains, lib = _load_assets(run_cfg)
    except (OSError, SchemaError, VersionError, DataError) as e:
        _fail(EXIT_IO, str(e))
    tcfg = run_cfg.trajectory
    sampler = TrajectorySampler(
        duration_s=tcfg.get("duration_s", 10.0),
        speed_range=tuple(tcfg.get("speed_range", (0.5, 2.0))),
        max_turn_rate=tcfg.get("max_turn_rate", 0.6),
        straight=tcfg.get("straight", False),
    )
    log_path = os.path.splitext(out_path)[0] + ".metrics.jsonl"
    try:
        training.train(
            run_cfg.train, terrains, lib, out_path, state=state,
            traj_sampler=sampler, ep_cfg=run_cfg.episode, log_path=log_path,
            checkpoint_every=run_cfg.checkpoint_every,
        )
    except TrainingFault as e:
        _fail(EXIT_TRAINING, f"training fault: {e} (last checkpoint retained)")
    except OSError as e:
        _fail(EXIT_IO, str(e))
    click.echo(f"checkpoint: {out_path}\nmetrics: {log_path}")


def _build_mask(spec, traj, clip, skel):
    """mask-spec dict -> (T, 15) mask aligned at t_start frames."""
    from .tasks import NUM_JOINTS, mask_from_confidence, mask_plan_for_window

    T = traj.num_frames
    t_start = int(round(spec.get("t_start_s", 0.0) * 30))
    if clip is None:
        raise DataError("mask-spec requires --clip")
    n_fit = min(clip.num_frames, T - t_start)
    if n_fit < 2:
        raise DataError("clip does not fit inside the trajectory")
    mask = np.zeros((T, NUM_JOINTS))
    if "kappa" in spec:
        if clip.confidence is None:
            raise DataError("kappa given but the clip carries no confidence")
        plan = mask_from_confidence(clip.confidence[:n_fit], kappa=spec["kappa"])
        mask[t_start : t_start + n_fit] = plan.mask
    else:
        w0 = int(round(spec.get("window_start_s", 0.0) * 30))
        w1 = int(round(spec.get("window_end_s", n_fit / 30) * 30))
        w1 = min(w1, n_fit)
        plan = mask_plan_for_window(
            skel, n_fit, spec.get("group", "WHOLE"), w0, w1,
            joints=spec.get("joints"),
        )
        mask[t_start : t_start + n_fit] = plan.mask
    return mask, t_start, n_fit


@main.command("rollout")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path())
@click.option("--terrain", "terrain_path", default=None, type=click.Path())
@click.option("--traj", "traj_path", required=True, type=click.Path())
@click.option("--clip", "clip_path", default=None, type=click.Path())
@click.option("--mask-spec", "mask_spec", default=None,
              help="inline JSON, e.g. '{\"group\":\"UPPER\",\"t_start_s\":2}'")
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_rollout(ckpt_path, terrain_path, traj_path, clip_path, mask_spec, out_path):
    """Deterministic mean-action rollout; writes a clip + reward sidecar."""
    from . import training
    from .metrics import Scenario, record_to_clip, rollout_scenarios
    from .motion import load_clip, save_clip
    from .tasks import align_clip_to_trajectory, load_trajectory
    from .terrain import generate_terrain, load_terrain

    skel = default_skeleton()
    try:
        state = training.load_checkpoint(ckpt_path)
        traj = load_trajectory(traj_path)
        terrain = load_terrain(terrain_path) if terrain_path else generate_terrain("flat", {})
        clip = load_clip(clip_path) if clip_path else None
    except FileNotFoundError as e:
        _fail(EXIT_IO, str(e))
    except (SchemaError, VersionError, DataError) as e:
        _fail(EXIT_CONFIG, str(e))
    mask = None
    t_start = 0
    aligned = None
    if mask_spec:
        try:
            spec = json.loads(mask_spec)
            mask, t_start, n_fit = _build_mask(spec, traj, clip, skel)
            trimmed = clip
            if n_fit < clip.num_frames:
                from .metrics import _slice_clip

                trimmed = _slice_clip(clip, 0, n_fit)
            aligned = align_clip_to_trajectory(trimmed, traj, t_start)
        except json.JSONDecodeError as e:
            _fail(EXIT_CONFIG, f"mask-spec: {e}")
        except DataError as e:
            _fail(EXIT_INCOMPATIBLE, str(e))
    rec = rollout_scenarios(
        state.policy, skel, [terrain],
        [Scenario(traj=traj, clip=aligned, mask=mask, t_start=t_start)],
        disc=state.disc,
    )[0]
    try:
        save_clip(record_to_clip(rec), out_path)
        sidecar = os.path.splitext(out_path)[0] + ".rewards.json"
        with open(sidecar, "w") as f:
            json.dump({
                "r_traj": rec["r_traj"].tolist(),
                "r_motion": rec["r_motion"].tolist(),
                "r_amp": rec["r_amp"].tolist(),
                "r_total": rec["r_total"].tolist(),
                "cause": rec["cause"],
                "frames": rec["frames"],
            }, f)
    except OSError as e:
        _fail(EXIT_IO, str(e))
    click.echo(f"motion: {out_path}\nrewards: {sidecar}\ncause: {rec['cause']}")


@main.command("eval")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path())
@click.option("--suite", "suite_path", required=True, type=click.Path())
@click.option("--report", "report_path", required=True, type=click.Path())
def cmd_eval(ckpt_path, suite_path, report_path):
    """Evaluate a checkpoint over a scenario suite; writes a JSON report."""
    from . import training
    from .metrics import Scenario, eval_suite
    from .motion import load_clip
    from .tasks import align_clip_to_trajectory, load_trajectory
    from .terrain import generate_terrain, load_terrain

    skel = default_skeleton()
    try:
        state = training.load_checkpoint(ckpt_path)
        with open(suite_path) as f:
            suite = json.load(f)
    except FileNotFoundError as e:
        _fail(EXIT_IO, str(e))
    except json.JSONDecodeError as e:
        _fail(EXIT_CONFIG, f"{suite_path}: {e}")
    except (SchemaError, VersionError) as e:
        _fail(EXIT_CONFIG, str(e))
    terrains = []
    scenarios = []
    try:
        for sc in suite.get("scenarios", []):
            if sc.get("terrain"):
                terrains.append(load_terrain(sc["terrain"]))
                t_idx = len(terrains) - 1
            else:
                if not terrains:
                    terrains.append(generate_terrain("flat", {}))
                t_idx = 0
            traj = load_trajectory(sc["trajectory"])
            clip = load_clip(sc["clip"]) if sc.get("clip") else None
            mask = None
            t_start = int(round(sc.get("t_start_s", 0.0) * 30))
            aligned = None
            if clip is not None and sc.get("mask"):
                mask, t_start, n_fit = _build_mask(
                    {**sc["mask"], "t_start_s": sc.get("t_start_s", 0.0)},
                    traj, clip, skel,
                )
                from .metrics import _slice_clip

                aligned = align_clip_to_trajectory(
                    _slice_clip(clip, 0, n_fit), traj, t_start
                )
            scenarios.append(Scenario(
                traj=traj, terrain_index=t_idx, clip=aligned, mask=mask,
                t_start=t_start, group=(sc.get("mask") or {}).get("group"),
            ))
    except FileNotFoundError as e:
        _fail(EXIT_IO, str(e))
    except (KeyError, SchemaError, VersionError, DataError) as e:
        _fail(EXIT_CONFIG, str(e))
    report = eval_suite(
        state.policy, skel, terrains, scenarios, disc=state.disc,
        early_termination=suite.get("early_termination", True),
        seed=suite.get("seed", 0),
        config_digest=training.config_hash(state.cfg).hex(),
    )
    try:
        with open(report_path, "w") as f:
            f.write(report.to_json())
    except OSError as e:
        _fail(EXIT_IO, str(e))
    click.echo(report.to_json())


@main.command("serve")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path())
@click.option("--port", default=8765, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--clip-dir", "clip_dir", default=None, type=click.Path(),
              help="clip library directory (defaults to the built-in set)")
def cmd_serve(ckpt_path, port, host, clip_dir):
    """Run the interactive control service until interrupted."""
    import asyncio

    from . import training
    from .motion import ClipLibrary, load_clip, make_library
    from .service import ControlServer

    try:
        state = training.load_checkpoint(ckpt_path)
    except FileNotFoundError as e:
        _fail(EXIT_IO, str(e))
    except (SchemaError, VersionError) as e:
        _fail(EXIT_CONFIG, str(e))
    if clip_dir:
        lib = ClipLibrary()
        for name in sorted(os.listdir(clip_dir)):
            if name.endswith(".json"):
                lib.add(name[:-5], load_clip(os.path.join(clip_dir, name)),
                        style="file", tracking=True)
    else:
        lib = make_library(seed=0)
    server = ControlServer(state.policy, default_skeleton(), lib,
                           max_sessions=thread_cap() * 8)
    try:
        asyncio.run(server.serve(host, port))
    except OSError as e:
        _fail(EXIT_NETWORK, f"cannot bind {host}:{port}: {e}")
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
