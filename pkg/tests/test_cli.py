import json
from pathlib import Path

import pytest

from convogen.cli import EXIT_CONFIG, EXIT_ENDPOINT, EXIT_FINDINGS, EXIT_OK, main
from convogen.metadata import record_line

from conftest import PROMPTS_DIR
from test_pipeline import rich_record, write_fixture_manifest


def write_config(tmp_path, manifest, **overrides) -> Path:
    data = {
        "manifest_path": str(manifest),
        "output_dir": str(tmp_path / "out"),
        "prompts_dir": str(PROMPTS_DIR),
        "prompts_set": "staged_min",
        "shard_dir": str(tmp_path / "shards"),
        "parallelism": 2,
        "gateway": {"mode": "scripted", "backoff_base_ms": 1},
        "features": {"filtering": True, "bbox_conversion": True, "reduction": True},
    }
    data.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestValidate:
    def test_clean_manifest_exit_zero(self, tmp_path, capsys):
        manifest = write_fixture_manifest(tmp_path / "m.jsonl", 3)
        assert main(["validate", "--manifest", str(manifest)]) == EXIT_OK
        assert "0 problems" in capsys.readouterr().out

    def test_problems_exit_one(self, tmp_path, capsys):
        manifest = tmp_path / "m.jsonl"
        lines = [record_line(rich_record(1)), "un-parseable line", record_line(rich_record(1))]
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
        assert main(["validate", "--manifest", str(manifest)]) == EXIT_FINDINGS
        out = capsys.readouterr().out
        assert "duplicate" in out


class TestTree:
    def test_renders_record(self, tmp_path, capsys):
        manifest = write_fixture_manifest(tmp_path / "m.jsonl", 2)
        assert main(["tree", "--manifest", str(manifest), "--index", "1"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "lamp" in out and "center=" in out

    def test_missing_record(self, tmp_path):
        manifest = write_fixture_manifest(tmp_path / "m.jsonl", 1)
        assert main(["tree", "--manifest", str(manifest), "--index", "9"]) == EXIT_CONFIG


class TestRun:
    def test_missing_config_exits_two(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_unknown_config_key_exits_two(self, tmp_path):
        manifest = write_fixture_manifest(tmp_path / "m.jsonl", 1)
        path = write_config(tmp_path, manifest)
        data = json.loads(path.read_text())
        data["surprise"] = 1
        path.write_text(json.dumps(data))
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG

    def test_unreachable_live_endpoint_exits_three(self, tmp_path):
        manifest = write_fixture_manifest(tmp_path / "m.jsonl", 1)
        from convogen.sharding import plan_shards

        plan_shards(manifest, 1, tmp_path / "shards")
        config = write_config(
            tmp_path,
            manifest,
            gateway={"mode": "live", "endpoint_url": "http://127.0.0.1:9"},
        )
        assert main(["run", "--config", str(config)]) == EXIT_ENDPOINT

    def test_scripted_run_end_to_end(self, tmp_path, capsys):
        manifest = write_fixture_manifest(tmp_path / "m.jsonl", 4)
        config = write_config(tmp_path, manifest)
        assert main(["plan", "--manifest", str(manifest), "--shards", "1",
                     "--out-dir", str(tmp_path / "shards")]) == EXIT_OK
        assert main(["run", "--config", str(config), "--worker-id", "cli-w"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "4 conversations" in out

    def test_feature_flag_override(self, tmp_path):
        manifest = write_fixture_manifest(tmp_path / "m.jsonl", 2)
        config = write_config(tmp_path, manifest, prompts_set="direct_min")
        main(["plan", "--manifest", str(manifest), "--shards", "1",
              "--out-dir", str(tmp_path / "shards")])
        assert main(["run", "--config", str(config), "--features", ""]) == EXIT_OK
        line = json.loads(
            (tmp_path / "out" / "conversations_shard_00000.jsonl").read_text().splitlines()[0]
        )
        prov = line["provenance"]
        assert prov["context_chars_final"] == prov["context_chars_initial"]


class TestIngest:
    def test_ingest_groups_across_datasets(self, tmp_path, capsys):
        rec_a = rich_record(0)
        rec_b = {
            "dataset": "other",
            "image_id": "zz",
            "uri": "elsewhere/FIXTURE_0000.JPG",  # same stem as fixture_0000
            "width": 640,
            "height": 480,
            "captions": [{"text": "An overlapping dataset caption.", "source": "other"}],
            "boxes": [],
            "qas": [],
        }
        (tmp_path / "a.jsonl").write_text(record_line(rec_a) + "\n")
        (tmp_path / "b.jsonl").write_text(record_line(rec_b) + "\n")
        registry = tmp_path / "registry.json"
        registry.write_text(
            json.dumps(
                [
                    {"dataset_id": "fixture", "manifest_path": str(tmp_path / "a.jsonl")},
                    {"dataset_id": "other", "manifest_path": str(tmp_path / "b.jsonl")},
                ]
            )
        )
        out = tmp_path / "grouped.jsonl"
        assert main(["ingest", "--registry", str(registry), "--out", str(out)]) == EXIT_OK
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 1
        assert len(records[0]["captions"]) == 3  # 2 fixture + 1 other


class TestBench:
    def test_tiny_bench_row(self, tmp_path, capsys):
        code = main(
            [
                "bench", "--out", str(tmp_path / "bench"),
                "--prompts-dir", str(PROMPTS_DIR),
                "--images", "4", "--rows", "direct", "--parallelism", "4",
                "--latency-base-ms", "0", "--latency-per-char-ms", "0",
                "--sidecar-ms", "0",
            ]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "direct" in out and "conv/hour" in out
