from __future__ import annotations

import json

import pytest
import yaml

from bitextgen import cli
from bitextgen import pipeline as pl
from bitextgen.config import load_config
from bitextgen.gateway import Gateway
from bitextgen.model import MANIFEST_FILE, RunManifest, StageCounts


@pytest.fixture
def demo_workspace(tmp_path):
    return pl.make_demo_workspace(tmp_path, seed=7, n_paragraphs=12)


class TestDemoAndPipeline:
    def test_demo_command_prints_stats(self, tmp_path, capsys):
        rc = cli.main(["demo", "--out", str(tmp_path / "w"), "--n", "8", "--demo-seed", "5"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "hau_Latn" in out
        assert "Paragraphs" in out

    def test_pipeline_command(self, demo_workspace, capsys):
        rc = cli.main(["--config", str(demo_workspace), "pipeline", "--stages", "generate,process"])
        assert rc == 0

    def test_process_without_generate_is_precondition_error(self, demo_workspace):
        rc = cli.main(["--config", str(demo_workspace), "--run-id", "fresh", "process"])
        assert rc == pl.EXIT_PRECONDITION

    def test_generation_shortfall_warning_exit_code(self, demo_workspace, tmp_path):
        cfg_raw = yaml.safe_load(demo_workspace.read_text())
        cfg_raw["generation"]["rouge_threshold"] = 0.0001
        cfg_raw["generation"]["max_attempts_per_slot"] = 2
        tweaked = demo_workspace.parent / "config_shortfall.yaml"
        tweaked.write_text(yaml.safe_dump(cfg_raw), encoding="utf-8")
        rc = cli.main(["--config", str(tweaked), "generate"])
        assert rc == pl.EXIT_SHORTFALL

    def test_resume_flag_with_run_id_value(self, demo_workspace):
        rc = cli.main(["--config", str(demo_workspace), "generate", "--lang", "hau_Latn"])
        assert rc == 0
        cfg = load_config(demo_workspace)
        default_id = pl.default_run_id(cfg)
        rc = cli.main(["--config", str(demo_workspace), "--resume", default_id, "generate"])
        assert rc == 0

    def test_resume_performs_no_backend_calls(self, demo_workspace):
        cfg = load_config(demo_workspace)
        gw = Gateway(sleeper=lambda s: None)
        pl.run_pipeline(cfg, run_id="r-resume", gw=gw)
        calls = len(gw.request_log)
        result = pl.run_pipeline(cfg, run_id="r-resume", resume=True, gw=gw)
        assert len(gw.request_log) == calls
        assert result.exit_code == 0

    def test_rerun_without_new_run_id_rejected_on_config_change(self, demo_workspace):
        cfg = load_config(demo_workspace)
        pl.run_pipeline(cfg, stages=["generate"], run_id="r-fixed")
        cfg2 = load_config(demo_workspace, overrides={"master_seed": 999})
        from bitextgen.errors import ConfigurationError

        with pytest.raises(ConfigurationError):
            pl.run_pipeline(cfg2, stages=["generate"], run_id="r-fixed")

    def test_backend_role_override_flag(self, demo_workspace):
        cfg = load_config(demo_workspace, overrides={"roles": {"generator": "mock_mt"}})
        assert cfg.profile_for("generator").backend_id == "mock_mt"

    def test_seed_flag_changes_fingerprint(self, demo_workspace):
        a = load_config(demo_workspace)
        b = load_config(demo_workspace, overrides={"master_seed": 123})
        assert a.fingerprint != b.fingerprint


class TestFewshotPipeline:
    def test_full_pipeline_with_generator_as_backtranslator(self, tmp_path, capsys):
        # first run (supervised mock MT) provides the retrieval pool
        config_path = pl.make_demo_workspace(tmp_path, seed=11, n_paragraphs=8)
        rc = cli.main(["--config", str(config_path), "--run-id", "poolrun", "pipeline",
                       "--stages", "generate,process,backtranslate"])
        assert rc == 0
        cfg = load_config(config_path)
        pool = cfg.runs_path / "poolrun" / "pairs.jsonl"

        cfg_raw = yaml.safe_load(config_path.read_text())
        cfg_raw["backtranslation"] = {"mode": "fewshot", "shots": 3, "pool": str(pool)}
        fs_config = config_path.parent / "config_fewshot.yaml"
        fs_config.write_text(yaml.safe_dump(cfg_raw), encoding="utf-8")

        rc = cli.main(["--config", str(fs_config), "--run-id", "fsrun", "pipeline"])
        assert rc == 0
        pairs_lines = (load_config(fs_config).runs_path / "fsrun" / "pairs.jsonl").read_text().splitlines()
        modes = {json.loads(l).get("bt_mode") for l in pairs_lines if "bt_error" not in l}
        assert modes == {"fewshot_generator"}


class TestStatsCommand:
    def test_renders_table_fixture_row(self, tmp_path, capsys):
        # the published Hausa column: 14,981 paragraphs / 101,488 sentences /
        # 101,466 after decontamination
        config_path = pl.make_demo_workspace(tmp_path, seed=1, n_paragraphs=4)
        cfg = load_config(config_path)
        run_dir = cfg.runs_path / "fixture"
        run_dir.mkdir(parents=True)
        manifest = RunManifest(
            run_id="fixture",
            config_fingerprint=cfg.fingerprint,
            counts={"hau_Latn": StageCounts(14981, 101488, 101470, 101466, 0)},
        )
        manifest.save(run_dir / MANIFEST_FILE)
        rc = cli.main(["--config", str(config_path), "--run-id", "fixture", "stats"])
        assert rc == 0
        out = capsys.readouterr().out
        row = next(line for line in out.splitlines() if line.startswith("hau_Latn"))
        assert "14,981" in row and "101,488" in row and "101,466" in row

    def test_multi_language_rows_sorted(self, tmp_path, capsys):
        config_path = pl.make_demo_workspace(tmp_path, seed=1, n_paragraphs=4)
        cfg = load_config(config_path)
        run_dir = cfg.runs_path / "multi"
        run_dir.mkdir(parents=True)
        manifest = RunManifest(
            run_id="multi",
            config_fingerprint=cfg.fingerprint,
            counts={
                "swh_Latn": StageCounts(2, 2, 2, 2, 2),
                "hau_Latn": StageCounts(1, 1, 1, 1, 1),
            },
        )
        manifest.save(run_dir / MANIFEST_FILE)
        cli.main(["--config", str(config_path), "--run-id", "multi", "stats"])
        out = capsys.readouterr().out.splitlines()
        langs = [l.split()[0] for l in out if l and l[0].islower()]
        assert langs == ["hau_Latn", "swh_Latn"]

    def test_missing_manifest_is_error(self, tmp_path):
        config_path = pl.make_demo_workspace(tmp_path, seed=1, n_paragraphs=4)
        rc = cli.main(["--config", str(config_path), "--run-id", "nothere", "stats"])
        assert rc == pl.EXIT_ERROR


class TestValidateCommand:
    def test_clean_run_validates(self, tmp_path, capsys):
        config_path = pl.make_demo_workspace(tmp_path, seed=3, n_paragraphs=8)
        cli.main(["--config", str(config_path), "--run-id", "v1", "pipeline"])
        rc = cli.main(["--config", str(config_path), "--run-id", "v1", "validate", "--data"])
        assert rc == 0
        assert capsys.readouterr().out.strip() == ""

    def test_violations_reported(self, tmp_path, capsys):
        config_path = pl.make_demo_workspace(tmp_path, seed=3, n_paragraphs=4)
        cfg = load_config(config_path)
        run_dir = cfg.runs_path / "bad"
        run_dir.mkdir(parents=True)
        manifest = RunManifest(
            run_id="bad",
            config_fingerprint=cfg.fingerprint,
            counts={"hau_Latn": StageCounts(1, 10, 11, 9, 9)},
        )
        manifest.save(run_dir / MANIFEST_FILE)
        rc = cli.main(["--config", str(config_path), "--run-id", "bad", "validate"])
        assert rc == pl.EXIT_ERROR
        assert "sentences_after_langid" in capsys.readouterr().out


class TestEvaluateCommand:
    def test_score_and_significance(self, tmp_path, capsys):
        ref = tmp_path / "ref.txt"
        hyp = tmp_path / "hyp.txt"
        hyp_b = tmp_path / "hyp_b.txt"
        segments = [f"segment number {i} with words" for i in range(30)]
        ref.write_text("\n".join(segments), encoding="utf-8")
        hyp.write_text("\n".join(segments), encoding="utf-8")
        hyp_b.write_text("\n".join("all different text" for _ in segments), encoding="utf-8")
        rc = cli.main(
            ["evaluate", "--hyp", str(hyp), "--ref", str(ref), "--hyp-b", str(hyp_b), "--significance"]
        )
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["score"] == pytest.approx(100.0)
        assert out["score_b"] == 0.0
        assert 0.0 <= out["p_value"] <= 1.0

    def test_chrf_metric_choice(self, tmp_path, capsys):
        ref = tmp_path / "ref.txt"
        hyp = tmp_path / "hyp.txt"
        ref.write_text("hello there\n", encoding="utf-8")
        hyp.write_text("hello there\n", encoding="utf-8")
        rc = cli.main(["evaluate", "--hyp", str(hyp), "--ref", str(ref), "--metric", "chrf"])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["score"] == pytest.approx(100.0)


class TestSelectCommand:
    def test_topk_output(self, tmp_path, capsys):
        config_path = pl.make_demo_workspace(tmp_path, seed=9, n_paragraphs=10)
        cli.main(["--config", str(config_path), "--run-id", "sel", "pipeline",
                  "--stages", "generate,process,backtranslate"])
        cfg = load_config(config_path)
        pool = cfg.runs_path / "sel" / "pairs.jsonl"
        first_pair = json.loads(pool.read_text().splitlines()[0])
        queries = tmp_path / "queries.txt"
        queries.write_text(first_pair["hrl_text"] + "\n", encoding="utf-8")
        rc = cli.main(["select", "--pool", str(pool), "--queries", str(queries), "--k", "5"])
        assert rc == 0
        hits = json.loads(capsys.readouterr().out)["hits"]
        assert len(hits) <= 5
        assert hits[0]["hrl_text"] == first_pair["hrl_text"]


class TestSelfloopCommand:
    def test_selfloop_over_processed_run(self, tmp_path, capsys):
        config_path = pl.make_demo_workspace(tmp_path, seed=4, n_paragraphs=8)
        cli.main(["--config", str(config_path), "--run-id", "s1", "pipeline",
                  "--stages", "generate,process,backtranslate"])
        cfg = load_config(config_path)
        pool = cfg.runs_path / "s1" / "pairs.jsonl"
        rc = cli.main([
            "--config", str(config_path), "--run-id", "s1", "selfloop",
            "--rounds", "1", "--trainer-cmd", "sh -c 'echo \"$2\"' t", "--pool", str(pool),
        ])
        assert rc == 0
        states = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        assert states[0]["round_index"] == 0
