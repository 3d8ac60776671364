import json

import pytest

from autoloop import cli


SPECS = {"scenes": [
    {"scene_id": "alpha", "n_frames": 150,
     "revisits": [[5, 120], [20, 135]], "seed": 31},
]}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-scenes -> build-db -> train, shared by the read-only tests below."""
    root = tmp_path_factory.mktemp("pipeline")
    spec_path = root / "specs.json"
    spec_path.write_text(json.dumps(SPECS))
    scenes = root / "scenes"
    assert cli.main(["gen-scenes", str(spec_path), "--out", str(scenes)]) == 0
    db = root / "db.jsonl"
    assert cli.main(["build-db", str(scenes), "--out", str(db)]) == 0
    run = root / "run"
    assert cli.main(["train", str(scenes / "alpha.scene.json"), str(db),
                     "--out", str(run), "--steps", "60", "--window", "32"]) == 0
    return root


class TestGenScenes:
    def test_outputs_exist(self, pipeline):
        scenes = pipeline / "scenes"
        for suffix in (".scene.json", ".gt.tum", ".features.txt"):
            assert (scenes / f"alpha{suffix}").exists()

    def test_manifest_written(self, pipeline):
        manifest = json.loads((pipeline / "scenes" / "manifest.json").read_text())
        assert manifest["tool"] == "autoloop"
        assert manifest["command"] == "gen-scenes"
        assert len(manifest["inputs"]) == 1
        assert any(p.endswith("alpha.gt.tum") for p in manifest["outputs"])

    def test_rerun_byte_identical(self, pipeline, tmp_path):
        spec_path = pipeline / "specs.json"
        out = tmp_path / "again"
        assert cli.main(["gen-scenes", str(spec_path), "--out", str(out)]) == 0
        for name in ("alpha.gt.tum", "alpha.features.txt"):
            assert (out / name).read_bytes() == (pipeline / "scenes" / name).read_bytes()

    def test_missing_spec_is_user_error(self, tmp_path, capsys):
        code = cli.main(["gen-scenes", str(tmp_path / "nope.json"),
                         "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_invalid_spec_is_user_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"scene_id": "x", "n_frames": 1}))
        assert cli.main(["gen-scenes", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_malformed_json_is_user_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["gen-scenes", str(bad), "--out", str(tmp_path / "o")]) == 1


class TestBuildDb:
    def test_database_loads_and_has_pairs(self, pipeline):
        from autoloop.loopdb import LoopDatabase
        db = LoopDatabase.load(pipeline / "db.jsonl")
        assert db.pairs_for_scene("alpha")

    def test_histogram_written(self, pipeline):
        lines = (pipeline / "pairs_per_scene.csv").read_text().splitlines()
        assert lines[0] == "scene,pairs"
        scene, pairs = lines[1].split(",")
        assert scene == "alpha" and int(pairs) >= 1

    def test_rerun_byte_identical(self, pipeline, tmp_path):
        out = tmp_path / "db2.jsonl"
        assert cli.main(["build-db", str(pipeline / "scenes"),
                         "--out", str(out)]) == 0
        assert out.read_bytes() == (pipeline / "db.jsonl").read_bytes()

    def test_empty_corpus_gives_empty_db(self, tmp_path):
        empty = tmp_path / "nothing"
        empty.mkdir()
        out = tmp_path / "db.jsonl"
        assert cli.main(["build-db", str(empty), "--out", str(out)]) == 0
        from autoloop.loopdb import LoopDatabase
        assert LoopDatabase.load(out).pairs == []

    def test_missing_directory_is_user_error(self, tmp_path):
        assert cli.main(["build-db", str(tmp_path / "nope"),
                         "--out", str(tmp_path / "db.jsonl")]) == 1


class TestTrain:
    def test_outputs_exist(self, pipeline):
        run = pipeline / "run"
        for name in ("manifest.json", "config.json", "trainlog.csv",
                     "trajectory.tum", "agent.json"):
            assert (run / name).exists()

    def test_manifest_records_resolved_config(self, pipeline):
        manifest = json.loads((pipeline / "run" / "manifest.json").read_text())
        assert manifest["config"]["total_steps"] == 60
        assert manifest["config"]["window"] == 32
        assert len(manifest["inputs"]) == 2

    def test_trainlog_has_row_per_step(self, pipeline):
        lines = (pipeline / "run" / "trainlog.csv").read_text().splitlines()
        assert len(lines) == 61  # header + 60 steps

    def test_rerun_byte_identical(self, pipeline, tmp_path):
        out = tmp_path / "run2"
        assert cli.main(["train", str(pipeline / "scenes" / "alpha.scene.json"),
                         str(pipeline / "db.jsonl"), "--out", str(out),
                         "--steps", "60", "--window", "32"]) == 0
        for name in ("trainlog.csv", "trajectory.tum", "agent.json"):
            assert (out / name).read_bytes() == (pipeline / "run" / name).read_bytes()

    def test_agent_off_skips_checkpoint(self, pipeline, tmp_path):
        out = tmp_path / "ctl"
        assert cli.main(["train", str(pipeline / "scenes" / "alpha.scene.json"),
                         str(pipeline / "db.jsonl"), "--out", str(out),
                         "--steps", "10", "--window", "32",
                         "--agent", "off", "--w-loop", "0.5"]) == 0
        assert not (out / "agent.json").exists()
        config = json.loads((out / "config.json").read_text())
        assert config["agent_enabled"] is False
        assert config["fixed_w_loop"] == 0.5

    def test_config_file_with_flag_override(self, pipeline, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"total_steps": 500, "window": 32,
                                        "cadence": 10}))
        out = tmp_path / "run3"
        assert cli.main(["train", str(pipeline / "scenes" / "alpha.scene.json"),
                         str(pipeline / "db.jsonl"), "--out", str(out),
                         "--config", str(cfg_path), "--steps", "10"]) == 0
        config = json.loads((out / "config.json").read_text())
        assert config["total_steps"] == 10   # flag wins
        assert config["cadence"] == 10       # file value kept

    def test_scene_without_pairs_is_user_error(self, pipeline, tmp_path):
        spec = tmp_path / "lonely.scene.json"
        spec.write_text(json.dumps({"scene_id": "lonely", "n_frames": 40}))
        assert cli.main(["train", str(spec), str(pipeline / "db.jsonl"),
                         "--out", str(tmp_path / "r"), "--steps", "5"]) == 1


class TestEval:
    def test_single_pair(self, pipeline, capsys):
        run = pipeline / "run"
        gt = pipeline / "scenes" / "alpha.gt.tum"
        assert cli.main(["eval", str(run / "trajectory.tum"), str(gt)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["alignment"] == "rigid"
        assert payload["rmse"] >= 0.0

    def test_similarity_mode_and_out_file(self, pipeline, tmp_path, capsys):
        run = pipeline / "run"
        gt = pipeline / "scenes" / "alpha.gt.tum"
        out = tmp_path / "report.json"
        assert cli.main(["eval", str(run / "trajectory.tum"), str(gt),
                         "--align", "sim", "--out", str(out)]) == 0
        printed = json.loads(capsys.readouterr().out)
        saved = json.loads(out.read_text())
        assert printed == saved
        assert saved["alignment"] == "similarity"

    def test_runs_directory_median(self, pipeline, tmp_path, capsys):
        gt = pipeline / "scenes" / "alpha.gt.tum"
        runs = tmp_path / "runs"
        runs.mkdir()
        for k, seed in enumerate((0, 1, 2)):
            out = tmp_path / f"r{k}"
            assert cli.main(["train",
                             str(pipeline / "scenes" / "alpha.scene.json"),
                             str(pipeline / "db.jsonl"), "--out", str(out),
                             "--steps", "20", "--window", "32",
                             "--seed", str(seed)]) == 0
            (runs / f"seed{seed}.tum").write_bytes(
                (out / "trajectory.tum").read_bytes())
        capsys.readouterr()  # discard the train progress lines
        assert cli.main(["eval", str(gt), "--runs", str(runs)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload["runs"]) == 3
        ordered = sorted(payload["runs"].values())
        assert payload["median"]["rmse"] == ordered[1]

    def test_missing_estimate_is_user_error(self, pipeline, tmp_path):
        gt = pipeline / "scenes" / "alpha.gt.tum"
        assert cli.main(["eval", str(tmp_path / "none.tum"), str(gt)]) == 1

    def test_malformed_tum_is_user_error(self, pipeline, tmp_path):
        bad = tmp_path / "bad.tum"
        bad.write_text("0.0 1.0 2.0\n")
        gt = pipeline / "scenes" / "alpha.gt.tum"
        assert cli.main(["eval", str(bad), str(gt)]) == 1


class TestCost:
    def test_reference_budget(self, capsys):
        assert cli.main(["cost", "--frames", "2000"]) == 0
        assert "9.4e+09 FLOPs" in capsys.readouterr().out

    def test_scenes_multiplier(self, capsys):
        assert cli.main(["cost", "--frames", "1000", "--scenes", "4"]) == 0
        assert "1.88e+10 FLOPs" in capsys.readouterr().out

    def test_negative_is_user_error(self, capsys):
        assert cli.main(["cost", "--frames", "-5"]) == 1
        assert "error:" in capsys.readouterr().err


class TestManifestOrdering:
    def test_manifest_written_before_failure(self, pipeline, tmp_path):
        # the train command fails (no pairs for this scene), but the manifest
        # is already on disk for post-mortem
        spec = tmp_path / "lonely.scene.json"
        spec.write_text(json.dumps({"scene_id": "lonely", "n_frames": 40}))
        out = tmp_path / "failed-run"
        assert cli.main(["train", str(spec), str(pipeline / "db.jsonl"),
                         "--out", str(out), "--steps", "5"]) == 1
        assert (out / "manifest.json").exists()
