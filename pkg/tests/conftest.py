import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctigraph.cli import _source_specs
from ctigraph.ingest import FetchLedger, fetch_source
from ctigraph.pipeline import PipelineConfig, load_config

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"


def fixture_config(tmp_path: Path, workers: int | None = None) -> PipelineConfig:
    """The shipped fixture config, redirected at a per-test data directory."""
    config = load_config(FIXTURES / "config.toml")
    data_dir = tmp_path / "data"
    config.raw.setdefault("storage", {})["data_dir"] = str(data_dir)
    for descriptor in config.stages:
        if descriptor.stage_kind == "connector":
            descriptor.params["store_path"] = str(data_dir / "graph.ctikg")
    if workers is not None:
        config.default_workers = workers
    return config


def fixture_corpus(config: PipelineConfig):
    """All raw items of the fixture sources, with a throwaway ledger."""
    ledger = FetchLedger(None)
    for spec in _source_specs(config):
        yield from fetch_source(spec, ledger)


@pytest.fixture(scope="session")
def gold() -> dict:
    return {
        "counts": json.loads((FIXTURES / "gold" / "graph_counts.json").read_text()),
        "extraction": json.loads((FIXTURES / "gold" / "extraction.json").read_text()),
        "ner_baseline": json.loads((FIXTURES / "gold" / "ner_baseline.json").read_text()),
    }


@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory):
    """One shared sequential pipeline run over the fixture corpus."""
    from ctigraph.pipeline import run_pipeline
    from ctigraph.store import load

    tmp_path = tmp_path_factory.mktemp("fixture-run")
    config = fixture_config(tmp_path, workers=1)
    stats = run_pipeline(config, fixture_corpus(config))
    graph = load(config.store_path)
    return {"config": config, "stats": stats, "graph": graph}
