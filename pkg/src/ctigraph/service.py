"""Read-only query surface over the knowledge graph.

``QueryEngine`` is the pure core (keyword search, pattern queries, neighbor
and random-subgraph views, stats); ``create_app`` wraps it in an HTTP+JSON
API with CORS enabled for the browser explorer. Handlers never mutate the
graph, so concurrent requests are safe; every listing is deterministically
ordered and capped by explicit limits. Endpoint schemas live in docs/api.md.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .errors import (
    CtigraphError,
    EmptyGraph,
    NodeNotFound,
    QuerySyntaxError,
    UnboundVariable,
)
from .kgraph import InvertedIndex
from .model import GraphNode, OntologyGraph
from .querylang import QueryAst, parse_query

log = logging.getLogger(__name__)

DEFAULT_NODE_LIMIT = 50
MAX_NODE_LIMIT = 500

_WS_RUN = re.compile(r"\s+")


@dataclass
class SubgraphView:
    nodes: list[dict]
    edges: list[dict]
    truncated: bool
    limits: dict = field(default_factory=dict)
    next_cursor: int | None = None

    def to_plain(self) -> dict:
        return {
            "nodes": self.nodes,
            "edges": self.edges,
            "truncated": self.truncated,
            "limits": self.limits,
            "next_cursor": self.next_cursor,
        }


def _node_view(node: GraphNode, degree: int) -> dict:
    return {
        "id": node.node_id,
        "etype": node.etype.value,
        "description": node.description,
        "degree": degree,
        "attributes": {
            key: [av.value for av in values] for key, values in sorted(node.attributes.items())
        },
        "source_report_ids": sorted(node.source_report_ids),
    }


class QueryEngine:
    """Stateless queries over one loaded graph snapshot."""

    def __init__(self, graph: OntologyGraph, index: InvertedIndex | None = None,
                 run_stats: dict | None = None):
        self.graph = graph
        self.index = index or self._build_index(graph)
        self.run_stats = run_stats or {}
        self._adjacency: dict[str, list[tuple[str, str, str]]] = {}
        for edge in graph.edges:
            self._adjacency.setdefault(edge.src, []).append((edge.dst, edge.verb, "out"))
            self._adjacency.setdefault(edge.dst, []).append((edge.src, edge.verb, "in"))
        for neighbors in self._adjacency.values():
            neighbors.sort()

    @staticmethod
    def _build_index(graph: OntologyGraph) -> InvertedIndex:
        index = InvertedIndex()
        index.rebuild(graph)
        return index

    def degree(self, node_id: str) -> int:
        return len(self._adjacency.get(node_id, ()))

    def _clamp(self, limit: int | None) -> int:
        if limit is None or limit <= 0:
            return DEFAULT_NODE_LIMIT
        return min(limit, MAX_NODE_LIMIT)

    def _view(self, node_ids: list[str], truncated: bool, limits: dict) -> SubgraphView:
        included = set(node_ids)
        nodes = [
            _node_view(self.graph.nodes[nid], self.degree(nid)) for nid in node_ids
        ]
        edges = [
            {"src": e.src, "dst": e.dst, "verb": e.verb}
            for e in self.graph.edges
            if e.src in included and e.dst in included
        ]
        unique_edges = sorted({(e["src"], e["dst"], e["verb"]) for e in edges})
        return SubgraphView(
            nodes=nodes,
            edges=[{"src": s, "dst": d, "verb": v} for s, d, v in unique_edges],
            truncated=truncated,
            limits=limits,
        )

    # -- operations --------------------------------------------------------

    def node(self, node_id: str) -> dict:
        node = self.graph.nodes.get(node_id)
        if node is None:
            raise NodeNotFound(f"no node {node_id!r}")
        return _node_view(node, self.degree(node_id))

    def _page(self, matches: list[str], limit: int, cursor: int, limits: dict) -> SubgraphView:
        cursor = max(0, cursor)
        chosen = matches[cursor : cursor + limit]
        truncated = cursor + limit < len(matches)
        view = self._view(chosen, truncated=truncated, limits=limits)
        view.next_cursor = cursor + limit if truncated else None
        return view

    def search(self, query: str, limit: int | None = None, cursor: int = 0) -> SubgraphView:
        """Tokenized OR-match ranked by (match count, degree) desc, id asc."""
        if not query or not query.strip():
            raise ValueError("empty query")
        limit = self._clamp(limit)
        counts = self.index.match_counts(query)
        ranked = sorted(
            counts.items(), key=lambda item: (-item[1], -self.degree(item[0]), item[0])
        )
        return self._page([node_id for node_id, _ in ranked], limit, cursor,
                          {"nodes": limit})

    def execute_query(self, ast: QueryAst, limit: int | None = None,
                      cursor: int = 0) -> SubgraphView:
        """``name`` matches the normalized description; other attributes match
        any of their values exactly (whitespace-collapsed, case-insensitive)."""
        limit = self._clamp(limit)
        matches = []
        for node_id in sorted(self.graph.nodes):
            node = self.graph.nodes[node_id]
            if ast.predicate is None:
                matches.append(node_id)
                continue
            wanted = _WS_RUN.sub(" ", ast.predicate.value).strip().lower()
            if ast.predicate.attribute == "name":
                if node.description.lower() == wanted:
                    matches.append(node_id)
            else:
                values = [av.value for av in node.attributes.get(ast.predicate.attribute, [])]
                if any(v.lower() == wanted for v in values):
                    matches.append(node_id)
        return self._page(matches, limit, cursor, {"nodes": limit})

    def neighbors(self, node_id: str, limit: int | None = None) -> SubgraphView:
        if node_id not in self.graph.nodes:
            raise NodeNotFound(f"no node {node_id!r}")
        limit = self._clamp(limit)
        seen = []
        for neighbor, _verb, _direction in self._adjacency.get(node_id, ()):
            if neighbor not in seen and neighbor != node_id:
                seen.append(neighbor)
        chosen = sorted(seen)[:limit]
        view = self._view([node_id] + chosen, truncated=len(seen) > limit,
                          limits={"neighbors": limit})
        return view

    def random_subgraph(self, size: int, seed: int | None = None) -> SubgraphView:
        """Seeded uniform start node, then breadth-first expansion."""
        if not self.graph.nodes:
            raise EmptyGraph("graph has no nodes")
        size = max(1, min(size, MAX_NODE_LIMIT))
        rng = random.Random(seed)
        ordered = sorted(self.graph.nodes)
        start = ordered[rng.randrange(len(ordered))]
        visited = [start]
        queue = deque([start])
        while queue and len(visited) < size:
            current = queue.popleft()
            for neighbor, _verb, _direction in self._adjacency.get(current, ()):
                if neighbor not in visited:
                    visited.append(neighbor)
                    queue.append(neighbor)
                    if len(visited) >= size:
                        break
        return self._view(visited, truncated=False, limits={"nodes": size})

    def stats(self) -> dict:
        nodes_by_type: dict[str, int] = {}
        for node in self.graph.nodes.values():
            nodes_by_type[node.etype.value] = nodes_by_type.get(node.etype.value, 0) + 1
        edges_by_verb: dict[str, int] = {}
        for edge in self.graph.edges:
            edges_by_verb[edge.verb] = edges_by_verb.get(edge.verb, 0) + 1
        return {
            "nodes_total": self.graph.node_count(),
            "edges_total": self.graph.edge_count(),
            "nodes_by_type": dict(sorted(nodes_by_type.items())),
            "edges_by_verb": dict(sorted(edges_by_verb.items())),
            "last_run": self.run_stats,
        }


def load_run_stats(data_dir: str | Path) -> dict:
    path = Path(data_dir) / "run_stats.json"
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {}


def create_app(engine: QueryEngine, static_dir: str | Path | None = None):
    """FastAPI wiring; JSON errors carry {code, message, position?}."""
    app = FastAPI(title="ctigraph query service", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def error(status: int, code: str, message: str, position: dict | None = None):
        body = {"code": code, "message": message}
        if position:
            body["position"] = position
        return JSONResponse(status_code=status, content=body)

    @app.exception_handler(CtigraphError)
    async def _domain_error(request: Request, err: CtigraphError):
        if isinstance(err, NodeNotFound):
            return error(404, "not_found", str(err))
        if isinstance(err, QuerySyntaxError):
            return error(400, "syntax_error", str(err),
                         {"line": err.line, "column": err.column,
                          "expected": list(err.expected)})
        if isinstance(err, UnboundVariable):
            return error(400, "unbound_variable", str(err))
        if isinstance(err, EmptyGraph):
            return error(409, "empty_graph", str(err))
        return error(500, "internal", str(err))

    @app.get("/search")
    async def search(q: str = "", limit: int = DEFAULT_NODE_LIMIT, cursor: int = 0):
        if not q.strip():
            return error(400, "bad_request", "query parameter q must be non-empty")
        return engine.search(q, limit, cursor).to_plain()

    @app.post("/query")
    async def query(request: Request, limit: int = DEFAULT_NODE_LIMIT, cursor: int = 0):
        body = await request.body()
        text = body.decode("utf-8", errors="replace")
        try:
            payload = json.loads(text)
            if isinstance(payload, dict) and "query" in payload:
                text = payload["query"]
        except json.JSONDecodeError:
            pass  # raw query text in the body is accepted as-is
        if not text.strip():
            return error(400, "bad_request", "query body must be non-empty")
        ast = parse_query(text)
        return engine.execute_query(ast, limit, cursor).to_plain()

    @app.get("/nodes/{node_id}")
    async def node(node_id: str):
        return engine.node(node_id)

    @app.get("/nodes/{node_id}/neighbors")
    async def neighbors(node_id: str, limit: int = DEFAULT_NODE_LIMIT):
        return engine.neighbors(node_id, limit).to_plain()

    @app.get("/random")
    async def random_subgraph(size: int = 10, seed: int | None = None):
        return engine.random_subgraph(size, seed).to_plain()

    @app.get("/stats")
    async def stats():
        return engine.stats()

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
