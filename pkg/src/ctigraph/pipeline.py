"""Pluggable, pipelined processing: porter -> checker -> parser -> extractors -> connector.

Stages are registered components chosen by a TOML config file; they run as
worker pools connected by bounded queues, so the whole procedure is both
parallel and pipelined. One failing report never aborts a run: it is counted
as errored at the stage that raised and the run continues. The final graph is
independent of worker interleaving because merging is commutative over
(etype, normalized description) identity.
"""

from __future__ import annotations

import logging
import queue
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

from . import codec
from .crf import CrfModel, FeatureExtractor, decode_mentions
from .errors import BuildError, DuplicateName, UnknownComponent, UnreadablePayload
from .htmldoc import parse_html, visible_text
from .ioc import find_iocs
from .kgraph import refactor_to_ontology
from .labeling import default_labeling_functions, load_gazetteers, split_tag
from .model import (
    CtiRecord,
    EntityMention,
    Provenance,
    RelationMention,
    ReportDoc,
    content_hash,
)
from .parsers import detect_source, load_templates, parse
from .pdftext import pdf_text
from .relations import VerbLexicon, extract_relations
from .store import GraphStore
from .textseg import TokenSeq, protect_and_tokenize

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGE_KINDS = ("porter", "checker", "parser", "extractor", "connector")
_KIND_RANK = {kind: i for i, kind in enumerate(STAGE_KINDS)}


# ---------------------------------------------------------------------------
# raw input items
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawItem:
    """One fetched page/file, before porting into a report."""

    source_id: str
    origin_locator: str
    content_type: str
    payload: bytes
    fetched_at: float
    title_hint: str = ""
    group_key: str | None = None

    @property
    def report_key(self) -> str:
        return self.group_key or self.origin_locator


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageDescriptor:
    stage_kind: str
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class PipelineConfig:
    stages: list[StageDescriptor]
    sources: list[dict] = field(default_factory=list)
    workers_per_stage: dict[str, int] = field(default_factory=dict)
    default_workers: int = 4
    queue_capacity: int = 256
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict)

    def workers_for(self, descriptor: StageDescriptor) -> int:
        # porter (grouping) and connector (single graph writer) stay at 1
        if descriptor.stage_kind in ("porter", "connector"):
            return 1
        n = self.workers_per_stage.get(descriptor.stage_kind, self.default_workers)
        return max(1, int(n))

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def data_dir(self) -> Path:
        return self.resolve(self.raw.get("storage", {}).get("data_dir", "data"))

    @property
    def store_path(self) -> Path:
        for descriptor in self.stages:
            if descriptor.stage_kind == "connector" and "store_path" in descriptor.params:
                return self.resolve(descriptor.params["store_path"])
        return self.data_dir / "graph.ctikg"

    def validate(self) -> None:
        if not self.stages:
            raise BuildError("config defines no stages")
        kinds = [s.stage_kind for s in self.stages]
        for kind in kinds:
            if kind not in STAGE_KINDS:
                raise BuildError(f"unknown stage kind {kind!r}")
        if kinds.count("porter") != 1:
            raise BuildError("config must name exactly one porter")
        if kinds.count("connector") < 1:
            raise BuildError("config must name at least one connector")
        ranks = [_KIND_RANK[k] for k in kinds]
        if ranks != sorted(ranks):
            raise BuildError(
                "stage order must follow porter -> checker -> parser -> extractor -> connector"
            )
        if self.queue_capacity <= 0:
            raise BuildError("queue_capacity must be positive")
        for key, value in self.workers_per_stage.items():
            if int(value) <= 0:
                raise BuildError(f"workers_per_stage[{key}] must be positive")


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    pipeline = raw.get("pipeline", {})
    stages = [
        StageDescriptor(
            stage_kind=s.get("kind", ""),
            name=s.get("name", ""),
            params=dict(s.get("params", {})),
        )
        for s in raw.get("stages", [])
    ]
    config = PipelineConfig(
        stages=stages,
        sources=list(raw.get("sources", [])),
        workers_per_stage={k: int(v) for k, v in pipeline.get("workers_per_stage", {}).items()},
        default_workers=int(pipeline.get("workers", 4)),
        queue_capacity=int(pipeline.get("queue_capacity", 256)),
        base_dir=path.parent.resolve(),
        raw=raw,
    )
    config.validate()
    return config


def apply_overrides(config: PipelineConfig, overrides: list[str]) -> PipelineConfig:
    """Apply repeatable ``key=value`` overrides; keys mirror the config file
    (``pipeline.workers=2``, ``stage.ner-crf.model_path=...``)."""
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise BuildError(f"override {item!r} is not key=value")
        parts = key.split(".")
        if parts[0] == "pipeline" and len(parts) == 2:
            if parts[1] == "workers":
                config.default_workers = int(value)
            elif parts[1] == "queue_capacity":
                config.queue_capacity = int(value)
            else:
                raise BuildError(f"unknown override {key!r}")
        elif parts[0] == "stage" and len(parts) == 3:
            for descriptor in config.stages:
                if descriptor.name == parts[1]:
                    descriptor.params[parts[2]] = value
                    break
            else:
                raise BuildError(f"override names unknown stage {parts[1]!r}")
        else:
            raise BuildError(f"unknown override {key!r}")
    config.validate()
    return config


# ---------------------------------------------------------------------------
# component registry
# ---------------------------------------------------------------------------

class ComponentRegistry:
    """Multiple components share each stage interface; configs pick by name."""

    def __init__(self) -> None:
        self._factories: dict[tuple[str, str], Callable] = {}

    def register(self, stage_kind: str, name: str, factory: Callable) -> None:
        if stage_kind not in STAGE_KINDS:
            raise BuildError(f"unknown stage kind {stage_kind!r}")
        key = (stage_kind, name)
        if key in self._factories:
            raise DuplicateName(f"{stage_kind} component {name!r} already registered")
        self._factories[key] = factory

    def build(self, descriptor: StageDescriptor, config: PipelineConfig):
        key = (descriptor.stage_kind, descriptor.name)
        if key not in self._factories:
            raise UnknownComponent(
                f"no {descriptor.stage_kind} component named {descriptor.name!r}"
            )
        return self._factories[key](descriptor.params, config)

    def names(self, stage_kind: str) -> list[str]:
        return sorted(name for kind, name in self._factories if kind == stage_kind)


# ---------------------------------------------------------------------------
# run statistics
# ---------------------------------------------------------------------------

@dataclass
class StageStats:
    name: str
    input: int = 0
    out: int = 0
    filtered: int = 0
    errored: int = 0
    busy_seconds: float = 0.0
    max_in_flight: int = 0

    def conserved(self) -> bool:
        return self.input == self.out + self.filtered + self.errored

    def to_plain(self) -> dict:
        return {
            "name": self.name,
            "in": self.input,
            "out": self.out,
            "filtered": self.filtered,
            "errored": self.errored,
            "busy_seconds": round(self.busy_seconds, 6),
            "max_in_flight": self.max_in_flight,
        }


@dataclass
class RunStats:
    stages: list[StageStats] = field(default_factory=list)
    raw_items: int = 0
    reports_merged: int = 0
    nodes_created: int = 0
    nodes_unified: int = 0
    edges_added: int = 0
    filter_reasons: dict[str, int] = field(default_factory=dict)
    errors: list[tuple[str, str, str]] = field(default_factory=list)
    started_at: float = 0.0
    elapsed_seconds: float = 0.0

    def stage(self, name: str) -> StageStats:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def reports_in(self) -> int:
        return self.stages[0].input if self.stages else 0

    def reports_per_minute(self, min_window_seconds: float = 10.0) -> float:
        """Rate over max(elapsed, min window); see docs/api.md."""
        window = max(self.elapsed_seconds, min_window_seconds)
        return self.reports_in / window * 60.0 if window > 0 else 0.0

    def to_plain(self) -> dict:
        return {
            "stages": [s.to_plain() for s in self.stages],
            "raw_items": self.raw_items,
            "reports_in": self.reports_in,
            "reports_merged": self.reports_merged,
            "nodes_created": self.nodes_created,
            "nodes_unified": self.nodes_unified,
            "edges_added": self.edges_added,
            "filter_reasons": dict(sorted(self.filter_reasons.items())),
            "errors": [list(e) for e in self.errors],
            "started_at": self.started_at,
            "elapsed_seconds": round(self.elapsed_seconds, 6),
            "reports_per_minute": round(self.reports_per_minute(), 3),
        }


# ---------------------------------------------------------------------------
# stage components
# ---------------------------------------------------------------------------

class Envelope:
    """A record in flight through the extractor chain, with the tokenization
    computed once and shared by every extractor."""

    __slots__ = ("record", "_protected", "_tokens")

    def __init__(self, record: CtiRecord):
        self.record = record
        self._protected = None
        self._tokens = None

    @property
    def tokens(self) -> TokenSeq:
        if self._tokens is None:
            self._protected, self._tokens = protect_and_tokenize(self.record.body_text)
        return self._tokens


def derive_report_id(source_id: str, locator: str, digest: str) -> str:
    import hashlib

    raw = f"{source_id}\x00{locator}\x00{digest}".encode("utf-8")
    return "r" + hashlib.sha1(raw).hexdigest()[:16]


class DefaultPorter:
    """Groups multi-page raw items into one report each; assigns deterministic
    ids from (source_id, origin_locator, content_hash)."""

    def __init__(self, params: dict, config: PipelineConfig):
        self.params = params

    def port_group(self, items: list[RawItem]) -> ReportDoc:
        items = sorted(items, key=lambda i: i.origin_locator)
        payloads = []
        for item in items:
            if not item.payload:
                raise UnreadablePayload(f"zero-byte payload at {item.origin_locator}")
            payloads.append((item.content_type, item.payload))
        digest = content_hash(payloads)
        first = items[0]
        return ReportDoc(
            report_id=derive_report_id(first.source_id, first.origin_locator, digest),
            source_id=first.source_id,
            title=first.title_hint or first.origin_locator,
            raw_payloads=tuple(payloads),
            fetched_at=max(i.fetched_at for i in items),
            origin_locator=first.origin_locator,
            content_hash=digest,
        )


def port(items: Iterable[RawItem], porter: DefaultPorter | None = None) -> list[ReportDoc]:
    """Batch porting helper: groups by report key, skips unreadable groups."""
    porter = porter or DefaultPorter({}, PipelineConfig(stages=[StageDescriptor("porter", "default")]))
    groups: dict[tuple[str, str], list[RawItem]] = {}
    order: list[tuple[str, str]] = []
    for item in items:
        key = (item.source_id, item.report_key)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(item)
    docs = []
    for key in order:
        try:
            docs.append(porter.port_group(groups[key]))
        except UnreadablePayload as err:
            log.warning("porter skipped group %s: %s", key, err)
    return docs


_AD_KEYWORDS = (
    "advertisement", "sponsored", "subscribe", "buy now", "discount", "sale",
    "casino", "free trial", "click here", "limited offer", "coupon",
)


class DefaultChecker:
    """Screens out irrelevant reports with named condition rules.

    Rules, in order: min-text-length, ad-keyword-density, duplicate-content.
    The checker never mutates a document; it only keeps or drops it.
    """

    def __init__(self, params: dict, config: PipelineConfig):
        self.min_text_length = int(params.get("min_text_length", 200))
        self.ad_density = float(params.get("ad_keyword_density", 0.05))
        self._seen_hashes: set[str] = set()
        self._lock = threading.Lock()

    def _extract_text(self, doc: ReportDoc) -> str:
        parts = []
        for content_type, blob in doc.raw_payloads:
            if content_type == "application/pdf":
                parts.append(pdf_text(blob))
            else:
                text = blob.decode("utf-8", errors="replace")
                parts.append(visible_text(parse_html(text)) if content_type == "text/html" else text)
        return "\n".join(parts)

    def check(self, doc: ReportDoc) -> str | None:
        """None to keep, or the name of the rule that filtered the report."""
        text = self._extract_text(doc)
        if len(text) < self.min_text_length:
            return "min-text-length"
        lowered = text.lower()
        words = max(1, len(lowered.split()))
        hits = sum(lowered.count(kw) for kw in _AD_KEYWORDS)
        if hits / words > self.ad_density:
            return "ad-keyword-density"
        with self._lock:
            if doc.content_hash in self._seen_hashes:
                return "duplicate-content"
            self._seen_hashes.add(doc.content_hash)
        return None


def check(docs: list[ReportDoc], checker: DefaultChecker | None = None) -> list[ReportDoc]:
    """Batch checking helper; output is a subsequence of input."""
    checker = checker or DefaultChecker({}, PipelineConfig(stages=[StageDescriptor("checker", "default")]))
    kept = []
    for doc in docs:
        reason = checker.check(doc)
        if reason is None:
            kept.append(doc)
        else:
            log.info("checker filtered %s: %s", doc.report_id, reason)
    return kept


class TemplateParser:
    def __init__(self, params: dict, config: PipelineConfig):
        templates_dir = config.resolve(params.get("templates_dir", "sources"))
        self.templates = load_templates(templates_dir) if Path(templates_dir).exists() else {}

    def parse(self, doc: ReportDoc) -> CtiRecord:
        return parse(doc, detect_source(doc, self.templates))


class StructuredIocExtractor:
    """Turns ioc_table values ("key: value") into structured entity mentions."""

    name = "structured-iocs"

    def __init__(self, params: dict, config: PipelineConfig):
        self.field = params.get("field", "ioc_table")

    def extract(self, envelope: Envelope) -> None:
        record = envelope.record
        for value in record.structured_fields.get(self.field, []):
            _, sep, candidate = value.partition(": ")
            candidate = candidate if sep else value
            hits = find_iocs(candidate)
            if not hits:
                record.log(self.name, f"unclassifiable value skipped: {value!r}")
                continue
            hit = hits[0]
            record.entities.append(
                EntityMention(
                    surface=hit.canonical,
                    etype=hit.ioc_type,
                    confidence=1.0,
                    provenance=Provenance.STRUCTURED,
                    field_ref=self.field,
                )
            )


class RegexIocExtractor:
    """One mention per restored IOC token; the naive rule-based arm."""

    name = "ioc-regex"

    def __init__(self, params: dict, config: PipelineConfig):
        pass

    def extract(self, envelope: Envelope) -> None:
        envelope.record.entities.extend(extract_iocs_regex(envelope.tokens))


def extract_iocs_regex(ts: TokenSeq) -> list[EntityMention]:
    mentions = []
    for tok in ts.tokens:
        if tok.is_ioc:
            mentions.append(
                EntityMention(
                    surface=tok.canonical or tok.surface,
                    etype=tok.ioc_type,
                    confidence=1.0,
                    provenance=Provenance.REGEX,
                    span=(tok.start, tok.end),
                )
            )
    return mentions


class CrfNerExtractor:
    """Sequence-tagger arm for non-IOC entities, using the shipped model."""

    name = "ner-crf"

    def __init__(self, params: dict, config: PipelineConfig):
        model_path = config.resolve(params.get("model_path", "models/ner_crf.bin"))
        self.model: CrfModel = codec.deserialize(Path(model_path).read_bytes(), CrfModel)
        gazetteers_dir = config.resolve(params.get("gazetteers_dir", "gazetteers"))
        gazetteers = load_gazetteers(gazetteers_dir)
        templates = tuple(self.model.meta.get("templates", ())) or FeatureExtractor().templates
        self.feature_extractor = FeatureExtractor(templates=templates, gazetteers=gazetteers)
        self.min_confidence = float(params.get("min_confidence", 0.0))

    def extract(self, envelope: Envelope) -> None:
        mentions = decode_mentions(
            self.model, self.feature_extractor, envelope.tokens, self.min_confidence
        )
        envelope.record.entities.extend(mentions)


class GazetteerNerExtractor:
    """Pure weak-supervision arm: labeling-function votes become mentions."""

    name = "ner-gazetteer"

    def __init__(self, params: dict, config: PipelineConfig):
        gazetteers_dir = config.resolve(params.get("gazetteers_dir", "gazetteers"))
        self.lfs = default_labeling_functions(load_gazetteers(gazetteers_dir))

    def extract(self, envelope: Envelope) -> None:
        from .labeling import synthesize_labels

        ts = envelope.tokens
        result = synthesize_labels(ts, self.lfs)
        labels = result.labels
        i = 0
        while i < len(labels):
            prefix, etype = split_tag(labels[i])
            if prefix != "B":
                i += 1
                continue
            j = i + 1
            while j < len(labels) and labels[j] == f"I-{etype.value}":
                j += 1
            start, end = ts.tokens[i].start, ts.tokens[j - 1].end
            envelope.record.entities.append(
                EntityMention(
                    surface=ts.text[start:end],
                    etype=etype,
                    confidence=min(result.confidences[i:j]),
                    provenance=Provenance.CRF,
                    span=(start, end),
                )
            )
            i = j


class RelationVerbExtractor:
    name = "relation-verbs"

    def __init__(self, params: dict, config: PipelineConfig):
        lexicon_path = params.get("lexicon_path")
        if lexicon_path:
            self.lexicon = VerbLexicon.from_file(config.resolve(lexicon_path))
        else:
            self.lexicon = VerbLexicon()

    def extract(self, envelope: Envelope) -> None:
        record = envelope.record
        spanned = sorted(
            (m for m in record.entities if m.span is not None), key=lambda m: m.span
        )
        index_of = {id(m): i for i, m in enumerate(record.entities)}
        for rel in extract_relations(envelope.tokens, spanned, self.lexicon):
            record.relations.append(
                RelationMention(
                    head=index_of[id(spanned[rel.head])],
                    tail=index_of[id(spanned[rel.tail])],
                    verb=rel.verb,
                    evidence_span=rel.evidence_span,
                    confidence=rel.confidence,
                )
            )


class EmbeddedConnector:
    """Single writer into the embedded graph store."""

    name = "embedded"

    def __init__(self, params: dict, config: PipelineConfig):
        store_path = (
            config.resolve(params["store_path"]) if "store_path" in params
            else config.store_path
        )
        self.store = GraphStore(store_path)
        self.deltas = []

    def connect(self, record: CtiRecord):
        nodes, edges = refactor_to_ontology(record)
        delta = self.store.apply_merge(nodes, edges, record.report_id)
        self.deltas.append(delta)
        return delta

    def close(self) -> None:
        self.store.close()


class NullConnector:
    """Discards records; useful for benchmarking the processing stages."""

    name = "null"

    def __init__(self, params: dict, config: PipelineConfig):
        self.count = 0

    def connect(self, record: CtiRecord):
        self.count += 1
        return None

    def close(self) -> None:
        pass


def default_registry() -> ComponentRegistry:
    registry = ComponentRegistry()
    registry.register("porter", "default", DefaultPorter)
    registry.register("checker", "default", DefaultChecker)
    registry.register("parser", "template", TemplateParser)
    registry.register("extractor", "structured-iocs", StructuredIocExtractor)
    registry.register("extractor", "ioc-regex", RegexIocExtractor)
    registry.register("extractor", "ner-crf", CrfNerExtractor)
    registry.register("extractor", "ner-gazetteer", GazetteerNerExtractor)
    registry.register("extractor", "relation-verbs", RelationVerbExtractor)
    registry.register("connector", "embedded", EmbeddedConnector)
    registry.register("connector", "null", NullConnector)
    return registry


# ---------------------------------------------------------------------------
# the runner
# ---------------------------------------------------------------------------

_SENTINEL = object()


class _Stage:
    def __init__(self, name: str, workers: int, out_queue, stats: StageStats,
                 run_stats: RunStats, lock: threading.Lock):
        self.name = name
        self.workers = workers
        self.out_queue = out_queue
        self.stats = stats
        self.run_stats = run_stats
        self.lock = lock
        self.in_flight = 0
        self.remaining_workers = workers
        self.threads: list[threading.Thread] = []

    def emit(self, item) -> None:
        if self.out_queue is not None:
            self.out_queue.put(item)

    def record(self, outcome: str, began: float, reason: str | None = None,
               report: str = "", cause: str = "") -> None:
        with self.lock:
            self.stats.input += 1
            self.stats.busy_seconds += time.monotonic() - began
            if outcome == "out":
                self.stats.out += 1
            elif outcome == "filtered":
                self.stats.filtered += 1
                if reason:
                    self.run_stats.filter_reasons[reason] = (
                        self.run_stats.filter_reasons.get(reason, 0) + 1
                    )
            else:
                self.stats.errored += 1
                self.run_stats.errors.append((self.name, report, cause))

    def enter(self) -> None:
        with self.lock:
            self.in_flight += 1
            self.stats.max_in_flight = max(self.stats.max_in_flight, self.in_flight)

    def leave(self) -> None:
        with self.lock:
            self.in_flight -= 1

    def worker_done(self, downstream_sentinels: int) -> None:
        with self.lock:
            self.remaining_workers -= 1
            last = self.remaining_workers == 0
        if last and self.out_queue is not None:
            for _ in range(downstream_sentinels):
                self.out_queue.put(_SENTINEL)


def run_pipeline(
    config: PipelineConfig,
    corpus: Iterable[RawItem] | Iterator[RawItem],
    registry: ComponentRegistry | None = None,
) -> RunStats:
    """Run every configured stage over the corpus and return conserved counters.

    Raises BuildError before any processing when the config or registry is
    bad; per-item failures are recorded and never abort the run.
    """
    registry = registry or default_registry()
    config.validate()

    descriptors = list(config.stages)
    components = []
    for descriptor in descriptors:
        try:
            components.append(registry.build(descriptor, config))
        except (UnknownComponent, DuplicateName):
            raise
        except Exception as err:
            raise BuildError(f"building {descriptor.stage_kind}:{descriptor.name}: {err}") from err

    stats = RunStats(started_at=time.time())
    lock = threading.Lock()
    stages: list[_Stage] = []
    queues = []
    for i, descriptor in enumerate(descriptors):
        stage_name = f"{descriptor.stage_kind}:{descriptor.name}"
        out_queue = queue.Queue(maxsize=config.queue_capacity) if i + 1 < len(descriptors) else None
        queues.append(out_queue)
        stage_stats = StageStats(name=stage_name)
        stats.stages.append(stage_stats)
        stages.append(_Stage(stage_name, config.workers_for(descriptor), out_queue,
                             stage_stats, stats, lock))

    began_run = time.monotonic()

    def porter_loop(stage: _Stage, component) -> None:
        open_key = None
        open_items: list[RawItem] = []

        def close_group() -> None:
            if not open_items:
                return
            began = time.monotonic()
            stage.enter()
            try:
                doc = component.port_group(open_items)
            except Exception as err:
                stage.record("errored", began, report=open_items[0].origin_locator,
                             cause=str(err))
            else:
                stage.emit(doc)
                stage.record("out", began)
            finally:
                stage.leave()
                open_items.clear()

        try:
            for item in corpus:
                with lock:
                    stats.raw_items += 1
                key = (item.source_id, item.report_key)
                if key != open_key:
                    close_group()
                    open_key = key
                open_items.append(item)
            close_group()
        except Exception as err:  # a broken corpus iterator ends the stream
            log.error("corpus iteration failed: %s", err)
            close_group()
        finally:
            downstream = stages[1].workers if len(stages) > 1 else 0
            stage.worker_done(downstream)

    def stage_loop(index: int, stage: _Stage, component, kind: str) -> None:
        in_queue = queues[index - 1]
        try:
            while True:
                item = in_queue.get()
                if item is _SENTINEL:
                    return
                began = time.monotonic()
                stage.enter()
                try:
                    if kind == "checker":
                        reason = component.check(item)
                        if reason is None:
                            stage.emit(item)
                            stage.record("out", began)
                        else:
                            stage.record("filtered", began, reason=reason,
                                         report=item.report_id)
                    elif kind == "parser":
                        record = component.parse(item)
                        stage.emit(Envelope(record))
                        stage.record("out", began)
                    elif kind == "extractor":
                        component.extract(item)
                        stage.emit(item)
                        stage.record("out", began)
                    else:  # connector
                        delta = component.connect(item.record)
                        stage.record("out", began)
                        if delta is not None:
                            with lock:
                                stats.reports_merged += 1
                                stats.nodes_created += delta.nodes_created
                                stats.nodes_unified += delta.nodes_unified
                                stats.edges_added += delta.edges_added
                except Exception as err:
                    report = getattr(item, "report_id", "")
                    if isinstance(item, Envelope):
                        report = item.record.report_id
                    stage.record("errored", began, report=report, cause=str(err))
                    log.warning("%s failed on %s: %s", stage.name, report, err)
                finally:
                    stage.leave()
        finally:
            downstream = stages[index + 1].workers if index + 1 < len(stages) else 0
            stage.worker_done(downstream)

    threads = []
    porter_thread = threading.Thread(
        target=porter_loop, args=(stages[0], components[0]), name="porter", daemon=True
    )
    threads.append(porter_thread)
    for i in range(1, len(stages)):
        for w in range(stages[i].workers):
            t = threading.Thread(
                target=stage_loop,
                args=(i, stages[i], components[i], descriptors[i].stage_kind),
                name=f"{stages[i].name}-{w}",
                daemon=True,
            )
            threads.append(t)
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    for component in components:
        close = getattr(component, "close", None)
        if callable(close):
            close()

    stats.elapsed_seconds = time.monotonic() - began_run
    return stats
