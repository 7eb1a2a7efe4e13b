"""Run-config validation and command-line workflows."""
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from stridelab import cli
from stridelab.config import RunConfig, load_run_config, validate_run_config
from stridelab.errors import SchemaError
from stridelab.motion import load_clip
from stridelab.tasks import save_trajectory, straight_trajectory

TINY_TRAIN = {
    "num_envs": 4,
    "rollout_len": 8,
    "phase_schedule": [[3, 0.0]],
    "hidden": [32, 32],
    "seed": 5,
}


def tiny_doc(**kw):
    doc = {
        "seed": 5,
        "train": dict(TINY_TRAIN),
        "trajectory": {"straight": True, "speed_range": [1.0, 1.0]},
        "checkpoint_every": 50,
    }
    doc.update(kw)
    return doc


def write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f)
    return path


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def trained(tmp_path_factory, runner):
    """One tiny training run shared by the rollout/eval/resume tests."""
    d = tmp_path_factory.mktemp("trained")
    cfg = write_json(os.path.join(d, "cfg.json"), tiny_doc())
    out = os.path.join(d, "ck.slck")
    res = runner.invoke(cli.main, ["train", "--config", cfg, "--out", out])
    assert res.exit_code == 0, res.output
    return {"dir": str(d), "cfg": cfg, "ckpt": out}


class TestSchema:
    def test_empty_doc_gives_defaults(self):
        rc = RunConfig({})
        assert rc.train.gamma == 0.99
        assert rc.episode.episode_length == 300

    def test_gamma_out_of_range_names_path(self):
        with pytest.raises(SchemaError) as ei:
            validate_run_config({"train": {"gamma": 1.5}})
        assert ei.value.field_path == "train.gamma"

    def test_unknown_key_rejected(self):
        with pytest.raises(SchemaError):
            validate_run_config({"train": {"gama": 0.99}})
        with pytest.raises(SchemaError):
            validate_run_config({"simulator": {}})

    def test_phase_schedule_becomes_tuples(self):
        rc = RunConfig({"train": {"phase_schedule": [[10, 0.7], [5, 0.0]]}})
        assert rc.train.phase_schedule == ((10, 0.7), (5, 0.0))

    def test_train_seed_defaults_to_top_seed(self):
        assert RunConfig({"seed": 9}).train.seed == 9
        assert RunConfig({"seed": 9, "train": {"seed": 2}}).train.seed == 2

    def test_load_rejects_bad_json(self, tmp_path):
        path = os.path.join(tmp_path, "broken.json")
        with open(path, "w") as f:
            f.write("{not json")
        with pytest.raises(SchemaError):
            load_run_config(path)


class TestMakeAssets:
    def test_writes_manifest_and_files(self, tmp_path, runner):
        out = os.path.join(tmp_path, "assets")
        res = runner.invoke(cli.main, [
            "make-assets", "--out", out, "--seed", "1",
            "--clips", "2", "--terrains", "2",
        ])
        assert res.exit_code == 0, res.output
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert len(manifest["style_clips"]) == 2
        assert len(manifest["terrains"]) == 2
        assert len(manifest["trajectories"]) == 8
        for entry in manifest["style_clips"]:
            clip = load_clip(entry["file"])
            assert clip.num_frames > 0

    def test_deterministic_given_seed(self, tmp_path, runner):
        outs = []
        for name in ("a", "b"):
            out = os.path.join(tmp_path, name)
            res = runner.invoke(cli.main, [
                "make-assets", "--out", out, "--seed", "3",
                "--clips", "1", "--terrains", "1",
            ])
            assert res.exit_code == 0
            cid = json.load(open(os.path.join(out, "manifest.json")))["style_clips"][0]["id"]
            outs.append(open(os.path.join(out, "clips", cid + ".json")).read())
        assert outs[0] == outs[1]

    def test_unwritable_target_exits_io(self, tmp_path, runner):
        blocker = os.path.join(tmp_path, "occupied")
        with open(blocker, "w") as f:
            f.write("file, not a directory")
        res = runner.invoke(cli.main, ["make-assets", "--out", blocker])
        assert res.exit_code == cli.EXIT_IO


class TestTrain:
    def test_smoke_writes_checkpoint_and_log(self, trained):
        from stridelab import training

        state = training.load_checkpoint(trained["ckpt"])
        assert state.update == 3
        log = os.path.splitext(trained["ckpt"])[0] + ".metrics.jsonl"
        lines = [json.loads(x) for x in open(log)]
        assert [l["update"] for l in lines] == [1, 2, 3]

    def test_invalid_config_exits_config(self, tmp_path, runner):
        cfg = write_json(os.path.join(tmp_path, "bad.json"),
                         {"train": {"gamma": 1.5}})
        res = runner.invoke(cli.main, [
            "train", "--config", cfg, "--out", os.path.join(tmp_path, "x.slck")])
        assert res.exit_code == cli.EXIT_CONFIG
        assert "train.gamma" in res.output

    def test_missing_config_exits_io(self, tmp_path, runner):
        res = runner.invoke(cli.main, [
            "train", "--config", os.path.join(tmp_path, "nope.json"),
            "--out", os.path.join(tmp_path, "x.slck")])
        assert res.exit_code == cli.EXIT_IO

    def test_resume_with_matching_config_is_noop(self, trained, runner, tmp_path):
        out2 = os.path.join(tmp_path, "resumed.slck")
        res = runner.invoke(cli.main, [
            "train", "--config", trained["cfg"], "--out", out2,
            "--resume", trained["ckpt"]])
        assert res.exit_code == 0, res.output
        from stridelab import training

        assert training.load_checkpoint(out2).update == 3

    def test_resume_with_different_config_refused(self, trained, runner, tmp_path):
        cfg = write_json(os.path.join(tmp_path, "other.json"),
                         tiny_doc(train={**TINY_TRAIN, "seed": 6}))
        res = runner.invoke(cli.main, [
            "train", "--config", cfg, "--out", os.path.join(tmp_path, "y.slck"),
            "--resume", trained["ckpt"]])
        assert res.exit_code == cli.EXIT_CONFIG


@pytest.fixture(scope="module")
def traj_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("traj")
    path = os.path.join(d, "straight.json")
    save_trajectory(straight_trajectory(6.0, 1.0), path)
    return path


class TestRollout:
    def test_writes_clip_and_sidecar(self, trained, traj_file, runner, tmp_path):
        out = os.path.join(tmp_path, "roll.json")
        res = runner.invoke(cli.main, [
            "rollout", "--ckpt", trained["ckpt"], "--traj", traj_file,
            "--out", out])
        assert res.exit_code == 0, res.output
        clip = load_clip(out)
        assert clip.num_frames > 0
        sidecar = json.load(open(os.path.join(tmp_path, "roll.rewards.json")))
        assert set(sidecar) == {"r_traj", "r_motion", "r_amp", "r_total",
                                "cause", "frames"}
        # one reward per transition; the pose count includes the initial frame
        assert len(sidecar["r_traj"]) == sidecar["frames"] - 1

    def test_deterministic(self, trained, traj_file, runner, tmp_path):
        blobs = []
        for name in ("r1.json", "r2.json"):
            out = os.path.join(tmp_path, name)
            res = runner.invoke(cli.main, [
                "rollout", "--ckpt", trained["ckpt"], "--traj", traj_file,
                "--out", out])
            assert res.exit_code == 0
            blobs.append(open(out).read())
        assert blobs[0] == blobs[1]

    def test_bad_mask_spec_json_exits_config(self, trained, traj_file, runner, tmp_path):
        res = runner.invoke(cli.main, [
            "rollout", "--ckpt", trained["ckpt"], "--traj", traj_file,
            "--mask-spec", "{nope", "--out", os.path.join(tmp_path, "x.json")])
        assert res.exit_code == cli.EXIT_CONFIG

    def test_mask_spec_without_clip_exits_incompatible(self, trained, traj_file,
                                                       runner, tmp_path):
        res = runner.invoke(cli.main, [
            "rollout", "--ckpt", trained["ckpt"], "--traj", traj_file,
            "--mask-spec", '{"group": "UPPER"}',
            "--out", os.path.join(tmp_path, "x.json")])
        assert res.exit_code == cli.EXIT_INCOMPATIBLE


class TestEval:
    def test_report_schema(self, trained, runner, tmp_path):
        traj_path = os.path.join(tmp_path, "t.json")
        save_trajectory(straight_trajectory(5.0, 1.0), traj_path)
        suite = write_json(os.path.join(tmp_path, "suite.json"), {
            "scenarios": [{"trajectory": traj_path}],
            "early_termination": True,
        })
        report_path = os.path.join(tmp_path, "report.json")
        res = runner.invoke(cli.main, [
            "eval", "--ckpt", trained["ckpt"], "--suite", suite,
            "--report", report_path])
        assert res.exit_code == 0, res.output
        report = json.load(open(report_path))
        for key in ("traj_err_m", "episode_end_fraction", "fs_mm",
                    "config_hash"):
            assert key in report
        assert np.isfinite(report["traj_err_m"])


class TestThreadCap:
    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("STRIDELAB_THREADS", "3")
        assert cli.thread_cap() == 3
        monkeypatch.setenv("STRIDELAB_THREADS", "garbage")
        assert cli.thread_cap() >= 1
