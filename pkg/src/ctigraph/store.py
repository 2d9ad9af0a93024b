"""Embedded graph store: append-only record log with periodic snapshots.

File layout (see docs/store-format.md): a header record followed by op
records, each framed as ``[u32 length][u32 crc32][payload]`` with the payload
in the canonical binary value encoding. Replaying the log from the last
snapshot reconstructs the in-memory graph exactly; a torn tail (incomplete
frame) is tolerated and loses at most the last uncommitted record, while a
checksum mismatch on a complete frame raises CorruptLog.
"""

from __future__ import annotations

import logging
import struct
import zlib
from pathlib import Path

from .codec import decode_value, encode_value
from .errors import CorruptLog, VersionMismatch
from .kgraph import (
    AliasTable,
    FusionReport,
    InvertedIndex,
    MergeDelta,
    fuse_aliases,
    merge_into_graph,
)
from .model import GraphEdge, GraphNode, OntologyGraph

log = logging.getLogger(__name__)

FORMAT_NAME = "ctigraph-store"
FORMAT_VERSION = 1
_FRAME_HEADER = struct.Struct(">II")


def _frame(payload: bytes) -> bytes:
    return _FRAME_HEADER.pack(len(payload), zlib.crc32(payload)) + payload


def _iter_frames(data: bytes):
    """Yield (offset, payload); stop silently on a torn tail."""
    pos = 0
    total = len(data)
    while pos < total:
        if pos + _FRAME_HEADER.size > total:
            log.warning("store log: incomplete frame header at byte %d; ignoring tail", pos)
            return
        length, crc = _FRAME_HEADER.unpack_from(data, pos)
        start = pos + _FRAME_HEADER.size
        end = start + length
        if end > total:
            log.warning("store log: truncated record at byte %d; ignoring tail", pos)
            return
        payload = data[start:end]
        if zlib.crc32(payload) != crc:
            raise CorruptLog("record checksum mismatch", pos)
        yield pos, payload
        pos = end


def _replay(path: Path) -> tuple[OntologyGraph, int]:
    """Rebuild the graph from the last snapshot onward; returns (graph, ops)."""
    data = path.read_bytes()
    graph = OntologyGraph()
    saw_header = False
    n = 0
    for offset, payload in _iter_frames(data):
        record = decode_value(payload)
        op = record.get("op")
        if not saw_header:
            if op != "header" or record.get("format") != FORMAT_NAME:
                raise CorruptLog("first record is not a store header", offset)
            if record.get("version") != FORMAT_VERSION:
                raise VersionMismatch(
                    f"store version {record.get('version')} unsupported "
                    f"(expected {FORMAT_VERSION})"
                )
            saw_header = True
            continue
        n += 1
        if op == "snapshot":
            graph = OntologyGraph.from_plain(record["graph"])
        elif op == "upsert_node":
            graph.upsert_node(GraphNode.from_plain(record["node"]))
        elif op == "add_edge":
            graph.add_edge(GraphEdge.from_plain(record["edge"]))
        else:
            raise CorruptLog(f"unknown op {op!r}", offset)
    if not saw_header:
        raise CorruptLog("store file has no header record", 0)
    return graph, n


class GraphStore:
    """Single-writer store owning one log file and the in-memory graph."""

    def __init__(self, path: str | Path, snapshot_every: int = 10_000):
        self.path = Path(path)
        self.snapshot_every = snapshot_every
        self.graph = OntologyGraph()
        self.index = InvertedIndex()
        self._fh = None
        self._records_since_snapshot = 0
        if self.path.exists():
            self.graph, self._records_since_snapshot = _replay(self.path)
            self.index.rebuild(self.graph)
            log.info("loaded store %s: %d nodes, %d edges (%d log records)",
                     self.path, self.graph.node_count(), self.graph.edge_count(),
                     self._records_since_snapshot)
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._write_fresh(OntologyGraph())
        self._fh = open(self.path, "ab")

    # -- writing ----------------------------------------------------------

    def _append(self, record: dict) -> None:
        self._fh.write(_frame(encode_value(record)))

    def _write_fresh(self, graph: OntologyGraph) -> None:
        with open(self.path, "wb") as fh:
            fh.write(_frame(encode_value(
                {"op": "header", "format": FORMAT_NAME, "version": FORMAT_VERSION}
            )))
            fh.write(_frame(encode_value({"op": "snapshot", "graph": graph.to_plain()})))
            fh.flush()
        self._records_since_snapshot = 0

    def apply_merge(self, nodes: list[GraphNode], edges: list[GraphEdge],
                    report_id: str) -> MergeDelta:
        delta = merge_into_graph(self.graph, nodes, edges, report_id)
        for node_id in delta.touched_node_ids:
            self._append({"op": "upsert_node", "node": self.graph.nodes[node_id].to_plain()})
            self.index.refresh_node(self.graph.nodes[node_id])
        for edge in edges:
            self._append({"op": "add_edge", "edge": edge.to_plain()})
        self._records_since_snapshot += len(delta.touched_node_ids) + len(edges)
        if self._records_since_snapshot >= self.snapshot_every:
            self.snapshot()
        return delta

    def apply_fusion(self, table: AliasTable) -> FusionReport:
        report = fuse_aliases(self.graph, table)
        self.snapshot()
        self.index.rebuild(self.graph)
        return report

    def snapshot(self) -> None:
        """Compact: rewrite the file as header + one snapshot of current state."""
        if self._fh is not None:
            self._fh.close()
        self._write_fresh(self.graph)
        self._fh = open(self.path, "ab")

    def commit(self) -> None:
        if self._fh is not None:
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "GraphStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def persist(graph: OntologyGraph, path: str | Path) -> None:
    """Write a fresh store file holding exactly this graph."""
    store_path = Path(path)
    store_path.parent.mkdir(parents=True, exist_ok=True)
    with open(store_path, "wb") as fh:
        fh.write(_frame(encode_value(
            {"op": "header", "format": FORMAT_NAME, "version": FORMAT_VERSION}
        )))
        fh.write(_frame(encode_value({"op": "snapshot", "graph": graph.to_plain()})))


def load(path: str | Path) -> OntologyGraph:
    """Graph from a store file; a missing file is an empty graph."""
    store_path = Path(path)
    if not store_path.exists():
        return OntologyGraph()
    graph, _ = _replay(store_path)
    return graph
