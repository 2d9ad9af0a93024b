"""Shared domain types: reports, extraction records, and the ontology graph.

Every pipeline stage exchanges the types defined here; all of them are
immutable-by-convention values that round-trip through the canonical
encoding in :mod:`ctigraph.codec`.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import EmptyDescription, ValidationError


class EntityType(str, Enum):
    """Closed vocabulary of node types in the knowledge graph."""

    REPORT_MALWARE = "report_malware"
    REPORT_VULNERABILITY = "report_vulnerability"
    REPORT_ATTACK = "report_attack"
    VENDOR = "vendor"
    THREAT_ACTOR = "threat_actor"
    TECHNIQUE = "technique"
    TOOL = "tool"
    SOFTWARE = "software"
    FILE_NAME = "file_name"
    FILE_PATH = "file_path"
    IP = "ip"
    URL = "url"
    EMAIL = "email"
    DOMAIN = "domain"
    REGISTRY = "registry"
    HASH_MD5 = "hash_md5"
    HASH_SHA1 = "hash_sha1"
    HASH_SHA256 = "hash_sha256"


#: Types whose description text is case-significant and must not be lowercased.
CASE_SENSITIVE_TYPES = frozenset({EntityType.FILE_PATH, EntityType.REGISTRY})

#: Entity types the sequence tagger learns (everything else comes from
#: regexes or structured fields).
LEARNABLE_TYPES = (
    EntityType.REPORT_MALWARE,
    EntityType.THREAT_ACTOR,
    EntityType.TECHNIQUE,
    EntityType.TOOL,
    EntityType.SOFTWARE,
)


class ReportKind(str, Enum):
    MALWARE = "malware"
    VULNERABILITY = "vulnerability"
    ATTACK = "attack"

    @property
    def entity_type(self) -> EntityType:
        return _KIND_TO_ETYPE[self]


_KIND_TO_ETYPE = {
    ReportKind.MALWARE: EntityType.REPORT_MALWARE,
    ReportKind.VULNERABILITY: EntityType.REPORT_VULNERABILITY,
    ReportKind.ATTACK: EntityType.REPORT_ATTACK,
}


class Provenance(str, Enum):
    STRUCTURED = "structured"
    REGEX = "regex"
    CRF = "crf"


_WS_RUN = re.compile(r"\s+")


def normalize_description(text: str, etype: EntityType) -> str:
    """Canonical text key used for exact-description node identity.

    Trims, collapses internal whitespace runs to one space, and lowercases
    except for case-sensitive artifact types (file paths, registry keys).
    Idempotent: ``f(f(s)) == f(s)``.
    """
    collapsed = _WS_RUN.sub(" ", text).strip()
    if not collapsed:
        raise EmptyDescription("description is empty after whitespace normalization")
    if etype in CASE_SENSITIVE_TYPES:
        return collapsed
    return collapsed.lower()


def content_hash(payloads: list[tuple[str, bytes]]) -> str:
    """Hex digest over the concatenated payload blobs, in order."""
    h = hashlib.sha256()
    for _, blob in payloads:
        h.update(blob)
    return h.hexdigest()


def node_id_for(etype: EntityType, description: str) -> str:
    """Deterministic node id derived from the identity key."""
    digest = hashlib.sha1(f"{etype.value}\x00{description}".encode("utf-8")).hexdigest()
    return "n" + digest[:16]


@dataclass(frozen=True)
class ReportDoc:
    """One collected report plus provenance metadata.

    ``raw_payloads`` holds one ``(content_type, blob)`` pair per page for
    multi-page reports; ``content_hash`` is a pure function of the payload
    bytes so re-fetching identical content produces an identical document.
    """

    report_id: str
    source_id: str
    title: str
    raw_payloads: tuple[tuple[str, bytes], ...]
    fetched_at: float
    origin_locator: str
    content_hash: str

    def validate(self) -> None:
        if not self.raw_payloads:
            raise ValidationError(f"report {self.report_id}: raw_payloads is empty")
        expected = content_hash(list(self.raw_payloads))
        if self.content_hash != expected:
            raise ValidationError(
                f"report {self.report_id}: content_hash does not match payload bytes"
            )

    def to_plain(self) -> dict:
        return {
            "report_id": self.report_id,
            "source_id": self.source_id,
            "title": self.title,
            "raw_payloads": [[ct, blob] for ct, blob in self.raw_payloads],
            "fetched_at": float(self.fetched_at),
            "origin_locator": self.origin_locator,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_plain(cls, plain: dict) -> "ReportDoc":
        return cls(
            report_id=plain["report_id"],
            source_id=plain["source_id"],
            title=plain["title"],
            raw_payloads=tuple((ct, bytes(blob)) for ct, blob in plain["raw_payloads"]),
            fetched_at=float(plain["fetched_at"]),
            origin_locator=plain["origin_locator"],
            content_hash=plain["content_hash"],
        )


@dataclass(frozen=True)
class EntityMention:
    """A typed entity occurrence, anchored in body text or a structured field.

    Exactly one of ``span`` (character offsets into the record's body_text)
    or ``field_ref`` (a structured_fields key) is set.
    """

    surface: str
    etype: EntityType
    confidence: float
    provenance: Provenance
    span: tuple[int, int] | None = None
    field_ref: str | None = None

    def validate(self, body_text_len: int, structured_keys: set[str]) -> None:
        if (self.span is None) == (self.field_ref is None):
            raise ValidationError("mention must carry exactly one of span or field_ref")
        if self.span is not None:
            start, end = self.span
            if not (0 <= start < end <= body_text_len):
                raise ValidationError(f"mention span {self.span} out of body_text bounds")
        elif self.field_ref not in structured_keys:
            raise ValidationError(f"mention field_ref {self.field_ref!r} is not a structured field")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"mention confidence {self.confidence} outside [0, 1]")

    def to_plain(self) -> dict:
        return {
            "surface": self.surface,
            "etype": self.etype.value,
            "confidence": float(self.confidence),
            "provenance": self.provenance.value,
            "span": list(self.span) if self.span is not None else None,
            "field_ref": self.field_ref,
        }

    @classmethod
    def from_plain(cls, plain: dict) -> "EntityMention":
        span = plain.get("span")
        return cls(
            surface=plain["surface"],
            etype=EntityType(plain["etype"]),
            confidence=float(plain["confidence"]),
            provenance=Provenance(plain["provenance"]),
            span=(int(span[0]), int(span[1])) if span is not None else None,
            field_ref=plain.get("field_ref"),
        )


@dataclass(frozen=True)
class RelationMention:
    """A verb-labeled relation between two entity mentions of one record."""

    head: int
    tail: int
    verb: str
    evidence_span: tuple[int, int]
    confidence: float

    def validate(self, n_entities: int) -> None:
        if self.head == self.tail:
            raise ValidationError("relation head and tail are the same mention")
        if not self.verb:
            raise ValidationError("relation verb is empty")
        for idx in (self.head, self.tail):
            if not 0 <= idx < n_entities:
                raise ValidationError(f"relation mention index {idx} out of range")

    def to_plain(self) -> dict:
        return {
            "head": self.head,
            "tail": self.tail,
            "verb": self.verb,
            "evidence_span": list(self.evidence_span),
            "confidence": float(self.confidence),
        }

    @classmethod
    def from_plain(cls, plain: dict) -> "RelationMention":
        return cls(
            head=int(plain["head"]),
            tail=int(plain["tail"]),
            verb=plain["verb"],
            evidence_span=(int(plain["evidence_span"][0]), int(plain["evidence_span"][1])),
            confidence=float(plain["confidence"]),
        )


#: Documented starter key set for structured_fields. The map is open-keyed;
#: parsers may add source-specific extensions beyond these.
STARTER_FIELD_KEYS = (
    "title",
    "aliases",
    "platform",
    "severity",
    "first_seen",
    "ioc_table",
    "references",
)


@dataclass
class CtiRecord:
    """Wide, source-independent record of everything extracted from a report.

    Parsers populate ``structured_fields`` and ``body_text``; extractors
    append ``entities``/``relations``; every stage logs what it did in
    ``extraction_log`` as ``(stage, note)`` pairs.
    """

    report_id: str
    report_kind: ReportKind
    vendor: str | None = None
    structured_fields: dict[str, list[str]] = field(default_factory=dict)
    body_text: str = ""
    entities: list[EntityMention] = field(default_factory=list)
    relations: list[RelationMention] = field(default_factory=list)
    extraction_log: list[tuple[str, str]] = field(default_factory=list)

    def log(self, stage: str, note: str) -> None:
        self.extraction_log.append((stage, note))

    def validate(self) -> None:
        keys = set(self.structured_fields)
        for mention in self.entities:
            mention.validate(len(self.body_text), keys)
        for rel in self.relations:
            rel.validate(len(self.entities))

    def to_plain(self) -> dict:
        return {
            "report_id": self.report_id,
            "report_kind": self.report_kind.value,
            "vendor": self.vendor,
            "structured_fields": {k: list(v) for k, v in self.structured_fields.items()},
            "body_text": self.body_text,
            "entities": [m.to_plain() for m in self.entities],
            "relations": [r.to_plain() for r in self.relations],
            "extraction_log": [[stage, note] for stage, note in self.extraction_log],
        }

    @classmethod
    def from_plain(cls, plain: dict) -> "CtiRecord":
        return cls(
            report_id=plain["report_id"],
            report_kind=ReportKind(plain["report_kind"]),
            vendor=plain.get("vendor"),
            structured_fields={k: list(v) for k, v in plain["structured_fields"].items()},
            body_text=plain["body_text"],
            entities=[EntityMention.from_plain(m) for m in plain["entities"]],
            relations=[RelationMention.from_plain(r) for r in plain["relations"]],
            extraction_log=[(s, n) for s, n in plain["extraction_log"]],
        )


@dataclass(frozen=True)
class AttrValue:
    """One attribute value with the reports that asserted it."""

    value: str
    sources: tuple[str, ...] = ()

    def to_plain(self) -> dict:
        return {"value": self.value, "sources": list(self.sources)}

    @classmethod
    def from_plain(cls, plain: dict) -> "AttrValue":
        return cls(value=plain["value"], sources=tuple(plain["sources"]))


@dataclass
class GraphNode:
    """A typed graph node keyed by (etype, normalized description)."""

    node_id: str
    etype: EntityType
    description: str
    attributes: dict[str, list[AttrValue]] = field(default_factory=dict)
    source_report_ids: set[str] = field(default_factory=set)

    def add_attribute(self, key: str, value: str, source: str) -> None:
        """Union semantics: same value gains a source tag, never overwritten."""
        values = self.attributes.setdefault(key, [])
        for i, existing in enumerate(values):
            if existing.value == value:
                if source not in existing.sources:
                    values[i] = AttrValue(value, existing.sources + (source,))
                return
        values.append(AttrValue(value, (source,)))

    def attribute_values(self, key: str) -> list[str]:
        return [av.value for av in self.attributes.get(key, [])]

    def to_plain(self) -> dict:
        return {
            "node_id": self.node_id,
            "etype": self.etype.value,
            "description": self.description,
            "attributes": {k: [av.to_plain() for av in v] for k, v in self.attributes.items()},
            "source_report_ids": sorted(self.source_report_ids),
        }

    @classmethod
    def from_plain(cls, plain: dict) -> "GraphNode":
        return cls(
            node_id=plain["node_id"],
            etype=EntityType(plain["etype"]),
            description=plain["description"],
            attributes={
                k: [AttrValue.from_plain(av) for av in v]
                for k, v in plain["attributes"].items()
            },
            source_report_ids=set(plain["source_report_ids"]),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphNode):
            return NotImplemented
        return (
            self.node_id == other.node_id
            and self.etype == other.etype
            and self.description == other.description
            and {k: sorted((av.value, tuple(sorted(av.sources))) for av in v)
                 for k, v in self.attributes.items()}
            == {k: sorted((av.value, tuple(sorted(av.sources))) for av in v)
                for k, v in other.attributes.items()}
            and self.source_report_ids == other.source_report_ids
        )


@dataclass(frozen=True)
class GraphEdge:
    """Directed edge; identity includes the asserting report so two reports
    stating the same fact stay countable as two pieces of evidence."""

    src: str
    dst: str
    verb: str
    source_report_id: str
    attributes: tuple[tuple[str, str], ...] = ()

    @property
    def identity(self) -> tuple[str, str, str, str]:
        return (self.src, self.dst, self.verb, self.source_report_id)

    def to_plain(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "verb": self.verb,
            "source_report_id": self.source_report_id,
            "attributes": [[k, v] for k, v in self.attributes],
        }

    @classmethod
    def from_plain(cls, plain: dict) -> "GraphEdge":
        return cls(
            src=plain["src"],
            dst=plain["dst"],
            verb=plain["verb"],
            source_report_id=plain["source_report_id"],
            attributes=tuple((k, v) for k, v in plain.get("attributes", [])),
        )


class OntologyGraph:
    """Typed property graph with exact-description node identity.

    ``name_index`` maps ``(etype, normalized description)`` to node_id and is
    a bijection onto ``nodes``; it is derived state and is rebuilt on load.
    """

    def __init__(self) -> None:
        self.nodes: dict[str, GraphNode] = {}
        self.edges: list[GraphEdge] = []
        self.name_index: dict[tuple[str, str], str] = {}
        self._edge_ids: set[tuple[str, str, str, str]] = set()

    def node_count(self) -> int:
        return len(self.nodes)

    def edge_count(self) -> int:
        return len(self.edges)

    def lookup(self, etype: EntityType, description: str) -> GraphNode | None:
        node_id = self.name_index.get((etype.value, description))
        return self.nodes.get(node_id) if node_id else None

    def upsert_node(self, node: GraphNode) -> None:
        if not node.description:
            raise ValidationError("graph node has empty description")
        self.nodes[node.node_id] = node
        self.name_index[(node.etype.value, node.description)] = node.node_id

    def remove_node(self, node_id: str) -> None:
        node = self.nodes.pop(node_id)
        self.name_index.pop((node.etype.value, node.description), None)

    def has_edge(self, edge: GraphEdge) -> bool:
        return edge.identity in self._edge_ids

    def add_edge(self, edge: GraphEdge) -> bool:
        """Insert unless an identical (src, dst, verb, report) edge exists."""
        if edge.src not in self.nodes or edge.dst not in self.nodes:
            raise ValidationError("edge references a missing node")
        if edge.identity in self._edge_ids:
            return False
        self.edges.append(edge)
        self._edge_ids.add(edge.identity)
        return True

    def replace_edges(self, edges: list[GraphEdge]) -> None:
        self.edges = []
        self._edge_ids = set()
        for edge in edges:
            if edge.identity not in self._edge_ids:
                self.edges.append(edge)
                self._edge_ids.add(edge.identity)

    def neighbors_of(self, node_id: str) -> list[tuple[str, str]]:
        """(neighbor_id, verb) pairs over both edge directions, sorted."""
        out: list[tuple[str, str]] = []
        for e in self.edges:
            if e.src == node_id:
                out.append((e.dst, e.verb))
            elif e.dst == node_id:
                out.append((e.src, e.verb))
        return sorted(out)

    def to_plain(self) -> dict:
        return {
            "nodes": {nid: n.to_plain() for nid, n in sorted(self.nodes.items())},
            "edges": [e.to_plain() for e in self.edges],
        }

    @classmethod
    def from_plain(cls, plain: dict) -> "OntologyGraph":
        graph = cls()
        for node_plain in plain["nodes"].values():
            graph.upsert_node(GraphNode.from_plain(node_plain))
        for edge_plain in plain["edges"]:
            graph.add_edge(GraphEdge.from_plain(edge_plain))
        return graph

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OntologyGraph):
            return NotImplemented
        if self.nodes != other.nodes:
            return False
        return sorted(e.identity for e in self.edges) == sorted(e.identity for e in other.edges)
