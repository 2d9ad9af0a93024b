"""Single entry point: ingest, train-ner, eval-ner, fuse, serve, export, stats.

Exit codes: 0 success, 1 validation/usage error (message on stderr), 2
runtime failure. Tracebacks only with --debug.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import codec
from .crf import CrfModel, FeatureExtractor, decode_mentions, train
from .errors import BuildError, CtigraphError
from .ingest import (
    OFFLINE_ENV_VAR,
    FetchLedger,
    FetchStats,
    SourceKind,
    SourceSpec,
    fetch_source,
)
from .kgraph import AliasTable
from .labeling import default_labeling_functions, load_gazetteers, synthesize_labels
from .model import EntityType
from .pipeline import (
    PipelineConfig,
    apply_overrides,
    check,
    default_registry,
    extract_iocs_regex,
    load_config,
    port,
)
from .service import QueryEngine, create_app, load_run_stats
from .store import GraphStore, load
from .textseg import protect_and_tokenize

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors: exit 1
        self.print_usage(sys.stderr)
        raise SystemExit_(1, message)


class SystemExit_(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message


def _build_parser() -> _Parser:
    parser = _Parser(prog="ctigraph", description=__doc__)
    parser.add_argument("--debug", action="store_true", help="show tracebacks and debug logs")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, help_text: str, config_required: bool = True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required, help="pipeline config file (TOML)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable (mirrors config file keys)")
        return p

    p = add("ingest", "fetch every configured source once and merge into the store")
    p.add_argument("--watch", type=float, default=0.0, metavar="SECONDS",
                   help="keep the periodic scheduler running for this long")

    p = add("train-ner", "train the entity tagger on weak-labeled texts")
    p.add_argument("--out", help="model output path (default: [ner].model_path)")

    p = add("eval-ner", "score a tagger arm against a gold file")
    p.add_argument("--gold", required=True, help="gold annotations JSON")
    p.add_argument("--model", help="model path (default: [ner].model_path)")
    p.add_argument("--arm", choices=["crf", "regex"], default="crf",
                   help="which extractor arm to score")

    p = add("fuse", "run the alias-fusion stage over the stored graph")
    p.add_argument("--aliases", help="alias table TOML (default: [fusion].aliases_path)")

    p = add("serve", "serve the query API (and the explorer UI if built)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8400)

    p = add("export", "write the whole graph as line-delimited JSON triples")
    p.add_argument("--out", required=True, help="output NDJSON path")

    add("stats", "print graph and last-run statistics as JSON")
    return parser


def _load_config(args) -> PipelineConfig:
    config = load_config(args.config)
    if args.override:
        apply_overrides(config, args.override)
    return config


def _source_specs(config: PipelineConfig) -> list[SourceSpec]:
    offline = os.environ.get(OFFLINE_ENV_VAR, "") not in ("", "0")
    specs = []
    seen = set()
    for plain in config.sources:
        spec = SourceSpec.from_plain(plain, base_dir=config.base_dir)
        if spec.source_id in seen:
            raise BuildError(f"duplicate source_id {spec.source_id!r}")
        seen.add(spec.source_id)
        spec.validate(offline=offline)
        specs.append(spec)
    if not specs:
        raise BuildError("config defines no sources")
    return specs


def cmd_ingest(args) -> int:
    config = _load_config(args)
    specs = _source_specs(config)
    data_dir = config.data_dir
    data_dir.mkdir(parents=True, exist_ok=True)
    ledger = FetchLedger(data_dir / "ledger.ndjson")
    fetch_stats = FetchStats()

    def corpus():
        for spec in specs:
            yield from fetch_source(spec, ledger, stats=fetch_stats)

    from .pipeline import run_pipeline

    stats = run_pipeline(config, corpus())

    if args.watch > 0:
        from .ingest import Scheduler

        def cycle(spec: SourceSpec) -> None:
            items = list(fetch_source(spec, ledger, stats=fetch_stats))
            if items:
                run_pipeline(config, iter(items))

        scheduler = Scheduler(specs, cycle)
        scheduler.start()
        try:
            time.sleep(args.watch)
        finally:
            scheduler.shutdown()

    plain = stats.to_plain()
    plain["fetch"] = {
        "discovered": fetch_stats.discovered,
        "yielded": fetch_stats.yielded,
        "skipped_unchanged": fetch_stats.skipped_unchanged,
        "failures": fetch_stats.failures,
        "retries": fetch_stats.retries,
    }
    (data_dir / "run_stats.json").write_text(json.dumps(plain, indent=2), encoding="utf-8")
    print(json.dumps(plain, indent=2))
    bad = [s for s in stats.stages if not s.conserved()]
    if bad:
        print(f"warning: counters not conserved for {[s.name for s in bad]}", file=sys.stderr)
    return 0


def _training_sentences(config: PipelineConfig) -> list[str]:
    """Weak-supervision training texts: the parsed fixture bodies plus the
    extra sentence files named by [ner].train_texts."""
    texts: list[str] = []
    ner = config.raw.get("ner", {})
    extra_dir = ner.get("train_texts")
    if extra_dir:
        for path in sorted(config.resolve(extra_dir).glob("*.txt")):
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    texts.append(line.strip())

    from .parsers import detect_source, load_templates, parse
    from .pipeline import StageDescriptor

    templates_dir = None
    for descriptor in config.stages:
        if descriptor.stage_kind == "parser":
            templates_dir = config.resolve(descriptor.params.get("templates_dir", "sources"))
    if templates_dir and Path(templates_dir).exists():
        templates = load_templates(templates_dir)
        from .ingest import fetch_source as fetch

        ledger = FetchLedger(None)  # in-memory: never skip
        for spec in _source_specs(config):
            if spec.kind is not SourceKind.LOCAL_DIR:
                continue
            docs = port(fetch(spec, ledger))
            for doc in check(docs):
                record = parse(doc, detect_source(doc, templates))
                texts.append(record.body_text)
    return texts


def cmd_train_ner(args) -> int:
    config = _load_config(args)
    ner = config.raw.get("ner", {})
    out_path = Path(args.out) if args.out else config.resolve(ner.get("model_path", "models/ner_crf.bin"))
    gazetteers = load_gazetteers(config.resolve(ner.get("gazetteers_dir", "gazetteers")))
    lfs = default_labeling_functions(gazetteers)
    fe = FeatureExtractor(gazetteers=gazetteers)

    corpus = []
    for text in _training_sentences(config):
        _, ts = protect_and_tokenize(text)
        labels = synthesize_labels(ts, lfs).labels
        for sent in ts.sentences():
            if not sent:
                continue
            idx = [i for i, tok in enumerate(ts.tokens) if tok.sent_index == sent[0].sent_index]
            corpus.append((sent, [labels[i] for i in idx]))

    batch = int(ner.get("batch_size", 0)) or None
    model = train(
        corpus,
        fe,
        l2=float(ner.get("l2", 1e-4)),
        epochs=int(ner.get("epochs", 150)),
        learning_rate=float(ner.get("learning_rate", 0.3)),
        batch_size=batch,
        seed=int(ner.get("seed", 0)),
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(codec.serialize(model))
    print(json.dumps({
        "model_path": str(out_path),
        "sentences": len(corpus),
        "features": len(model.vocab),
        "final_loss": model.meta["loss_history"][-1],
    }, indent=2))
    return 0


def _score_spans(gold: list[set], predicted: list[set]) -> dict:
    etypes = sorted({etype for spans in gold + predicted for (_, _, etype) in spans})
    out = {}
    total_tp = total_fp = total_fn = 0
    for etype in etypes:
        tp = fp = fn = 0
        for gold_spans, pred_spans in zip(gold, predicted):
            g = {s for s in gold_spans if s[2] == etype}
            p = {s for s in pred_spans if s[2] == etype}
            tp += len(g & p)
            fp += len(p - g)
            fn += len(g - p)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[etype] = {"precision": round(precision, 4), "recall": round(recall, 4),
                      "f1": round(f1, 4), "support": tp + fn}
        total_tp += tp
        total_fp += fp
        total_fn += fn
    precision = total_tp / (total_tp + total_fp) if total_tp + total_fp else 0.0
    recall = total_tp / (total_tp + total_fn) if total_tp + total_fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "per_type": out,
        "overall": {"precision": round(precision, 4), "recall": round(recall, 4),
                    "f1": round(f1, 4)},
    }


def evaluate_arm(gold_path: str | Path, arm: str, model_path: str | Path | None = None,
                 gazetteers_dir: str | Path | None = None) -> dict:
    gold_doc = json.loads(Path(gold_path).read_text(encoding="utf-8"))
    gold_spans: list[set] = []
    pred_spans: list[set] = []

    model = None
    fe = None
    if arm == "crf":
        model = codec.deserialize(Path(model_path).read_bytes(), CrfModel)
        gazetteers = load_gazetteers(gazetteers_dir)
        templates = tuple(model.meta.get("templates", ())) or FeatureExtractor().templates
        fe = FeatureExtractor(templates=templates, gazetteers=gazetteers)

    for example in gold_doc["examples"]:
        text = example["text"]
        gold_spans.append(
            {(e["start"], e["end"], e["etype"]) for e in example["entities"]}
        )
        _, ts = protect_and_tokenize(text)
        if arm == "crf":
            mentions = decode_mentions(model, fe, ts)
        else:
            mentions = extract_iocs_regex(ts)
        pred_spans.append({(m.span[0], m.span[1], m.etype.value) for m in mentions})

    result = _score_spans(gold_spans, pred_spans)
    result["arm"] = arm
    result["examples"] = len(gold_doc["examples"])
    return result


def cmd_eval_ner(args) -> int:
    config = _load_config(args)
    ner = config.raw.get("ner", {})
    model_path = Path(args.model) if args.model else config.resolve(
        ner.get("model_path", "models/ner_crf.bin")
    )
    result = evaluate_arm(
        args.gold, args.arm, model_path=model_path,
        gazetteers_dir=config.resolve(ner.get("gazetteers_dir", "gazetteers")),
    )
    print(json.dumps(result, indent=2))
    return 0


def cmd_fuse(args) -> int:
    config = _load_config(args)
    aliases_path = args.aliases or config.raw.get("fusion", {}).get("aliases_path")
    with GraphStore(config.store_path) as store:
        tables = [AliasTable.from_graph(store.graph)]
        if aliases_path:
            tables.append(AliasTable.from_file(config.resolve(aliases_path)))
        table = AliasTable.combined(*tables)
        report = store.apply_fusion(table)
    print(json.dumps({
        "groups_applied": report.groups_applied,
        "groups_noop": report.groups_noop,
        "nodes_removed": report.nodes_removed,
        "edges_migrated": report.edges_migrated,
        "duplicates_collapsed": report.duplicates_collapsed,
        "applied": report.applied,
    }, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    config = _load_config(args)
    graph = load(config.store_path)
    engine = QueryEngine(graph, run_stats=load_run_stats(config.data_dir))
    static_dir = config.base_dir.parent / "frontend" / "dist"
    app = create_app(engine, static_dir=static_dir if static_dir.is_dir() else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_export(args) -> int:
    config = _load_config(args)
    graph = load(config.store_path)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for node_id in sorted(graph.nodes):
            node = graph.nodes[node_id]
            fh.write(json.dumps({"type": "node", **{
                "id": node.node_id,
                "etype": node.etype.value,
                "description": node.description,
                "attributes": {k: [av.value for av in v] for k, v in sorted(node.attributes.items())},
                "source_report_ids": sorted(node.source_report_ids),
            }}, sort_keys=True) + "\n")
        for edge in graph.edges:
            fh.write(json.dumps({
                "type": "edge", "src": edge.src, "dst": edge.dst,
                "verb": edge.verb, "source_report_id": edge.source_report_id,
            }, sort_keys=True) + "\n")
    print(json.dumps({"nodes": graph.node_count(), "edges": graph.edge_count(),
                      "lines": graph.node_count() + graph.edge_count(),
                      "path": str(out_path)}))
    return 0


def cmd_stats(args) -> int:
    config = _load_config(args)
    graph = load(config.store_path)
    engine = QueryEngine(graph, run_stats=load_run_stats(config.data_dir))
    print(json.dumps(engine.stats(), indent=2))
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "train-ner": cmd_train_ner,
    "eval-ner": cmd_eval_ner,
    "fuse": cmd_fuse,
    "serve": cmd_serve,
    "export": cmd_export,
    "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit_ as err:
        print(f"error: {err.message}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not args.command:
        parser.print_help()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except SystemExit_ as err:
        print(f"error: {err.message}", file=sys.stderr)
        return 1
    except (BuildError, FileNotFoundError) as err:
        if args.debug:
            raise
        print(f"error: {err}", file=sys.stderr)
        return 1
    except CtigraphError as err:
        if args.debug:
            raise
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failure, no stack trace by default
        if args.debug:
            raise
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
