"""Ontology refactoring, exact-description merging, alias fusion, and search index.

A CTI record becomes one report node plus one node per distinct
(etype, normalized description) entity; merging unifies nodes only on exact
normalized-description identity. Nodes the same entity hides behind different
names are unified later by the separate fusion stage, driven by explicit
alias knowledge, so nothing is deleted early.
"""

from __future__ import annotations

import logging
import re
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConflictingGroup
from .model import (
    AttrValue,
    CtiRecord,
    EntityType,
    GraphEdge,
    GraphNode,
    OntologyGraph,
    normalize_description,
    node_id_for,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CONTAINS_VERB = "CONTAINS"
REPORTED_BY_VERB = "REPORTED_BY"

#: structured_fields keys copied onto the report node as attributes;
#: ``title`` is the node description and ``ioc_table`` becomes entities.
_NON_ATTRIBUTE_FIELDS = frozenset({"title", "ioc_table"})


def refactor_to_ontology(rec: CtiRecord) -> tuple[list[GraphNode], list[GraphEdge]]:
    """Turn one validated record into ontology-typed nodes and edges.

    One report node of ``rec.report_kind`` (describing the report subject),
    an optional vendor node with a REPORTED_BY edge, one node per distinct
    entity, CONTAINS edges from the report to each entity, and one edge per
    relation mention.
    """
    rec.validate()
    report_id = rec.report_id

    titles = rec.structured_fields.get("title", [])
    title = titles[0] if titles else report_id
    report_etype = rec.report_kind.entity_type
    report_desc = normalize_description(title, report_etype)
    report_node = GraphNode(
        node_id=node_id_for(report_etype, report_desc),
        etype=report_etype,
        description=report_desc,
        source_report_ids={report_id},
    )
    for key, values in sorted(rec.structured_fields.items()):
        if key in _NON_ATTRIBUTE_FIELDS:
            continue
        for value in values:
            report_node.add_attribute(key, value, report_id)

    nodes: dict[str, GraphNode] = {report_node.node_id: report_node}
    edges: list[GraphEdge] = []
    edge_seen: set[tuple[str, str, str]] = set()

    def add_edge(src: str, dst: str, verb: str) -> None:
        if src == dst:
            return
        key = (src, dst, verb)
        if key not in edge_seen:
            edge_seen.add(key)
            edges.append(GraphEdge(src, dst, verb, report_id))

    if rec.vendor:
        vendor_desc = normalize_description(rec.vendor, EntityType.VENDOR)
        vendor_node = GraphNode(
            node_id=node_id_for(EntityType.VENDOR, vendor_desc),
            etype=EntityType.VENDOR,
            description=vendor_desc,
            source_report_ids={report_id},
        )
        nodes.setdefault(vendor_node.node_id, vendor_node)
        add_edge(report_node.node_id, vendor_node.node_id, REPORTED_BY_VERB)

    mention_node_ids: list[str] = []
    for mention in rec.entities:
        desc = normalize_description(mention.surface, mention.etype)
        nid = node_id_for(mention.etype, desc)
        if nid not in nodes:
            nodes[nid] = GraphNode(
                node_id=nid,
                etype=mention.etype,
                description=desc,
                source_report_ids={report_id},
            )
        mention_node_ids.append(nid)
        add_edge(report_node.node_id, nid, CONTAINS_VERB)

    for rel in rec.relations:
        add_edge(mention_node_ids[rel.head], mention_node_ids[rel.tail], rel.verb)

    return list(nodes.values()), edges


@dataclass
class MergeDelta:
    nodes_created: int = 0
    nodes_unified: int = 0
    edges_added: int = 0
    touched_node_ids: list[str] = field(default_factory=list)

    def all_zero_creations(self) -> bool:
        return self.nodes_created == 0 and self.edges_added == 0


def merge_into_graph(
    graph: OntologyGraph,
    nodes: list[GraphNode],
    edges: list[GraphEdge],
    report_id: str,
) -> MergeDelta:
    """Merge refactored nodes/edges; a node unifies iff its identity key matches.

    Attributes union (conflicting values stay, each with its source tags);
    edges are deduplicated on (src, dst, verb, source_report_id). Idempotent:
    merging the same delta twice changes nothing the second time.
    """
    delta = MergeDelta()
    for incoming in nodes:
        existing = graph.nodes.get(incoming.node_id)
        if existing is None:
            graph.upsert_node(
                GraphNode(
                    node_id=incoming.node_id,
                    etype=incoming.etype,
                    description=incoming.description,
                    attributes={k: list(v) for k, v in incoming.attributes.items()},
                    source_report_ids=set(incoming.source_report_ids) | {report_id},
                )
            )
            delta.nodes_created += 1
        else:
            for key, values in incoming.attributes.items():
                for av in values:
                    for source in av.sources or (report_id,):
                        existing.add_attribute(key, av.value, source)
            existing.source_report_ids.update(incoming.source_report_ids)
            existing.source_report_ids.add(report_id)
            delta.nodes_unified += 1
        delta.touched_node_ids.append(incoming.node_id)
    for edge in edges:
        if graph.add_edge(edge):
            delta.edges_added += 1
    return delta


# --- alias fusion -------------------------------------------------------------

@dataclass(frozen=True)
class AliasGroup:
    canonical: str
    etype: EntityType
    members: tuple[str, ...]
    provenance: str  # "structured" or "curated"


class AliasTable:
    """Alias groups; a name may appear in at most one group per entity type."""

    def __init__(self, groups: list[AliasGroup]):
        self.groups = self._combine(groups)
        self._check_conflicts()

    @staticmethod
    def _combine(groups: list[AliasGroup]) -> list[AliasGroup]:
        by_key: dict[tuple[str, str], AliasGroup] = {}
        for group in groups:
            canonical = normalize_description(group.canonical, group.etype)
            members = {normalize_description(m, group.etype) for m in group.members}
            members.add(canonical)
            key = (group.etype.value, canonical)
            if key in by_key:
                old = by_key[key]
                members |= set(old.members)
                provenance = old.provenance if old.provenance == group.provenance else "mixed"
            else:
                provenance = group.provenance
            by_key[key] = AliasGroup(
                canonical=canonical,
                etype=group.etype,
                members=tuple(sorted(members)),
                provenance=provenance,
            )
        return [by_key[k] for k in sorted(by_key)]

    def _check_conflicts(self) -> None:
        seen: dict[tuple[str, str], str] = {}
        for group in self.groups:
            for member in group.members:
                key = (group.etype.value, member)
                if key in seen and seen[key] != group.canonical:
                    raise ConflictingGroup(
                        f"name {member!r} ({group.etype.value}) appears in groups "
                        f"{seen[key]!r} and {group.canonical!r}"
                    )
                seen[key] = group.canonical

    @classmethod
    def from_file(cls, path: str | Path) -> "AliasTable":
        with open(path, "rb") as fh:
            plain = tomllib.load(fh)
        groups = [
            AliasGroup(
                canonical=g["canonical"],
                etype=EntityType(g["etype"]),
                members=tuple(g.get("members", [])),
                provenance="curated",
            )
            for g in plain.get("groups", [])
        ]
        return cls(groups)

    @classmethod
    def from_graph(cls, graph: OntologyGraph) -> "AliasTable":
        """Groups derived from nodes' structured ``aliases`` attribute."""
        groups = []
        for nid in sorted(graph.nodes):
            node = graph.nodes[nid]
            aliases = node.attribute_values("aliases")
            if aliases:
                groups.append(
                    AliasGroup(
                        canonical=node.description,
                        etype=node.etype,
                        members=tuple(aliases),
                        provenance="structured",
                    )
                )
        return cls(groups)

    @classmethod
    def combined(cls, *tables: "AliasTable") -> "AliasTable":
        groups = [g for t in tables for g in t.groups]
        return cls(groups)


@dataclass
class FusionReport:
    groups_applied: int = 0
    groups_noop: int = 0
    nodes_removed: int = 0
    edges_migrated: int = 0
    duplicates_collapsed: int = 0
    applied: list[str] = field(default_factory=list)

    def is_noop(self) -> bool:
        return self.groups_applied == 0


def fuse_aliases(graph: OntologyGraph, table: AliasTable) -> FusionReport:
    """Unify alias nodes into canonical nodes, migrating every incident edge.

    Runs as a distinct stage after storage, never inline during merging.
    Attribute values are unioned, never dropped; former member descriptions
    are recorded under the canonical node's ``alias_of`` attribute. Groups
    matching fewer than two nodes are no-ops, which makes a second run with
    the same table a no-op as well.
    """
    report = FusionReport()
    for group in table.groups:
        member_nodes = []
        for member in group.members:
            node = graph.lookup(group.etype, member)
            if node is not None:
                member_nodes.append(node)
        if len(member_nodes) < 2:
            report.groups_noop += 1
            continue

        canonical = graph.lookup(group.etype, group.canonical)
        if canonical is None:
            canonical = GraphNode(
                node_id=node_id_for(group.etype, group.canonical),
                etype=group.etype,
                description=group.canonical,
            )
            graph.upsert_node(canonical)

        redirect: dict[str, str] = {}
        for node in member_nodes:
            if node.node_id == canonical.node_id:
                continue
            redirect[node.node_id] = canonical.node_id
            for key, values in node.attributes.items():
                for av in values:
                    for source in av.sources or ("fusion",):
                        canonical.add_attribute(key, av.value, source)
            canonical.add_attribute("alias_of", node.description, "fusion")
            canonical.source_report_ids.update(node.source_report_ids)

        rewritten: list[GraphEdge] = []
        seen: set[tuple[str, str, str, str]] = set()
        migrated = 0
        collapsed = 0
        for edge in graph.edges:
            src = redirect.get(edge.src, edge.src)
            dst = redirect.get(edge.dst, edge.dst)
            if (src, dst) != (edge.src, edge.dst):
                migrated += 1
                edge = GraphEdge(src, dst, edge.verb, edge.source_report_id, edge.attributes)
            if edge.identity in seen:
                collapsed += 1
                continue
            seen.add(edge.identity)
            rewritten.append(edge)
        graph.replace_edges(rewritten)

        for node_id in redirect:
            graph.remove_node(node_id)
            report.nodes_removed += 1

        report.groups_applied += 1
        report.edges_migrated += migrated
        report.duplicates_collapsed += collapsed
        report.applied.append(f"{group.etype.value}:{group.canonical}")
        log.info(
            "fused %d alias nodes into %s (%s); %d edges migrated, %d duplicates collapsed",
            len(redirect), group.canonical, group.etype.value, migrated, collapsed,
        )
    return report


# --- keyword index -------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9_]+")


def index_tokens(node: GraphNode) -> set[str]:
    tokens = set(_TOKEN.findall(node.description.lower()))
    for values in node.attributes.values():
        for av in values:
            tokens |= set(_TOKEN.findall(av.value.lower()))
    return tokens


class InvertedIndex:
    """token -> node ids over descriptions and attribute values."""

    def __init__(self) -> None:
        self._postings: dict[str, set[str]] = {}

    def add_node(self, node: GraphNode) -> None:
        for token in index_tokens(node):
            self._postings.setdefault(token, set()).add(node.node_id)

    def remove_node(self, node: GraphNode) -> None:
        for token in index_tokens(node):
            postings = self._postings.get(token)
            if postings is not None:
                postings.discard(node.node_id)
                if not postings:
                    del self._postings[token]

    def refresh_node(self, node: GraphNode) -> None:
        """Re-add after attribute growth; safe because postings only widen."""
        self.add_node(node)

    def rebuild(self, graph: OntologyGraph) -> None:
        self._postings = {}
        for node in graph.nodes.values():
            self.add_node(node)

    def lookup(self, term: str) -> set[str]:
        return set(self._postings.get(term.lower(), set()))

    def match_counts(self, query: str) -> Counter:
        """OR-match: per node, the number of distinct query tokens present."""
        counts: Counter = Counter()
        for term in set(_TOKEN.findall(query.lower())):
            for node_id in self._postings.get(term, ()):
                counts[node_id] += 1
        return counts

    def to_plain(self) -> dict:
        return {tok: sorted(ids) for tok, ids in sorted(self._postings.items())}
