import json

import pytest

from conftest import FIXTURES, REPO
from ctigraph.cli import main
from ctigraph.model import EntityType, node_id_for
from ctigraph.store import load


def write_config(tmp_path, data_dir=None) -> str:
    """Copy the fixture config with the data dir pointed into the test tmp."""
    data_dir = data_dir or (tmp_path / "data")
    text = (FIXTURES / "config.toml").read_text()
    text = text.replace('data_dir = "../data"', f'data_dir = "{data_dir}"')
    text = text.replace('"../', f'"{REPO}/')  # shared repo assets stay shared
    path = tmp_path / "config.toml"
    path.write_text(text)
    # the corpus paths are relative to the config file; mirror the layout
    for name in ("corpus", "train_texts", "gold"):
        target = tmp_path / name
        if not target.exists():
            target.symlink_to(FIXTURES / name)
    return str(path)


@pytest.fixture()
def config_path(tmp_path):
    return write_config(tmp_path)


class TestDispatch:
    def test_unknown_subcommand_exit_1(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "invalid choice" in capsys.readouterr().err

    def test_no_subcommand_exit_1(self):
        assert main([]) == 1

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as err:
            main(["--help"])
        assert err.value.code == 0

    def test_subcommand_help_exists(self):
        for command in ("ingest", "train-ner", "eval-ner", "fuse", "serve", "export", "stats"):
            with pytest.raises(SystemExit) as err:
                main([command, "--help"])
            assert err.value.code == 0

    def test_missing_config_file_exit_1(self, capsys):
        assert main(["ingest", "--config", "/nonexistent/config.toml"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_override_exit_1(self, config_path, capsys):
        assert main(["ingest", "--config", config_path, "--override", "bogus"]) == 1


class TestIngestCommand:
    def test_ingest_fixture_corpus(self, config_path, tmp_path, capsys, gold):
        assert main(["ingest", "--config", config_path]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["reports_merged"] == gold["counts"]["reports_merged"]
        assert out["reports_per_minute"] > 0
        assert (tmp_path / "data" / "run_stats.json").exists()

    def test_reingest_idempotent_at_store_level(self, config_path, tmp_path, capsys, gold):
        assert main(["ingest", "--config", config_path]) == 0
        capsys.readouterr()
        assert main(["ingest", "--config", config_path]) == 0
        out = json.loads(capsys.readouterr().out)
        # persisted ledger: second run fetches nothing and merges nothing
        assert out["reports_in"] == 0
        assert out["fetch"]["skipped_unchanged"] == gold["counts"]["raw_items"]
        graph = load(tmp_path / "data" / "graph.ctikg")
        assert graph.node_count() == gold["counts"]["nodes_total"]


class TestExportCommand:
    def test_line_count_equals_nodes_plus_edges(self, config_path, tmp_path, capsys, gold):
        assert main(["ingest", "--config", config_path]) == 0
        capsys.readouterr()
        out_file = tmp_path / "graph.ndjson"
        assert main(["export", "--config", config_path, "--out", str(out_file)]) == 0
        summary = json.loads(capsys.readouterr().out)
        lines = out_file.read_text().splitlines()
        assert len(lines) == summary["lines"]
        assert len(lines) == gold["counts"]["nodes_total"] + gold["counts"]["edges_total"]
        parsed = [json.loads(line) for line in lines]
        assert {p["type"] for p in parsed} == {"node", "edge"}


class TestFuseCommand:
    def test_fuse_then_refuse_noop(self, config_path, tmp_path, capsys):
        assert main(["ingest", "--config", config_path]) == 0
        capsys.readouterr()
        aliases = str(REPO / "sources" / "aliases.toml")
        assert main(["fuse", "--config", config_path, "--aliases", aliases]) == 0
        first = json.loads(capsys.readouterr().out)
        assert first["groups_applied"] >= 1
        graph = load(tmp_path / "data" / "graph.ctikg")
        wannacry = graph.lookup(EntityType.REPORT_MALWARE, "wannacry")
        assert sorted(wannacry.attribute_values("alias_of")) == ["wannacrypt", "wcry"]
        assert graph.lookup(EntityType.REPORT_MALWARE, "wcry") is None

        assert main(["fuse", "--config", config_path, "--aliases", aliases]) == 0
        second = json.loads(capsys.readouterr().out)
        assert second["groups_applied"] == 0


class TestStatsCommand:
    def test_stats_after_ingest(self, config_path, capsys, gold):
        assert main(["ingest", "--config", config_path]) == 0
        capsys.readouterr()
        assert main(["stats", "--config", config_path]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["nodes_by_type"] == gold["counts"]["nodes_by_type"]
        assert "reports_per_minute" in stats["last_run"]

    def test_stats_on_fresh_store(self, config_path, capsys):
        assert main(["stats", "--config", config_path]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["nodes_total"] == 0


class TestEvalCommand:
    def test_eval_ner_emits_per_type_json(self, config_path, capsys):
        gold_path = str(FIXTURES / "gold" / "ner_gold.json")
        assert main(["eval-ner", "--config", config_path, "--gold", gold_path]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["arm"] == "crf"
        assert "threat_actor" in result["per_type"]
        for scores in result["per_type"].values():
            assert set(scores) == {"precision", "recall", "f1", "support"}
