/** Explorer view state: which nodes are on the canvas and why.
 *
 * Anchors are the roots a view grew from (search/query/random results).
 * Every node added by expanding node X records X as its expansion parent;
 * collapsing X removes the nodes of X's expansion subtree unless they are
 * still reachable from another anchor without passing through X. Every
 * view-changing action (load, expand, collapse) pushes a snapshot, and the
 * back button restores the previous one, positions included.
 */

import type { ApiClient, ApiEdge, ApiNode, SubgraphResponse } from "./types.js";

export interface VisibleNode {
    id: string;
    etype: string;
    description: string;
    degree: number;
    attributes: Record<string, string[]>;
    x: number;
    y: number;
    vx: number;
    vy: number;
    locked: boolean;
    expanded: boolean;
}

export interface ViewLimits {
    maxNodes: number;
    maxNeighborsPerNode: number;
}

interface Snapshot {
    nodes: VisibleNode[];
    edges: ApiEdge[];
    anchors: string[];
    parents: [string, string][];
}

export class ViewState {
    nodes = new Map<string, VisibleNode>();
    edges: ApiEdge[] = [];
    anchors = new Set<string>();
    parents = new Map<string, string>(); // node id -> expanding node id
    history: Snapshot[] = [];
    queryText = "";
    truncated = false;
    lastError: string | null = null;

    constructor(public limits: ViewLimits = { maxNodes: 60, maxNeighborsPerNode: 12 }) {}

    nodeCount(): number {
        return this.nodes.size;
    }

    canGoBack(): boolean {
        return this.history.length >= 2;
    }

    private snapshot(): Snapshot {
        return {
            nodes: [...this.nodes.values()].map((n) => ({ ...n })),
            edges: this.edges.map((e) => ({ ...e })),
            anchors: [...this.anchors],
            parents: [...this.parents.entries()],
        };
    }

    private restore(snapshot: Snapshot): void {
        this.nodes = new Map(snapshot.nodes.map((n) => [n.id, { ...n }]));
        this.edges = snapshot.edges.map((e) => ({ ...e }));
        this.anchors = new Set(snapshot.anchors);
        this.parents = new Map(snapshot.parents);
        this.truncated = false;
    }

    private pushHistory(): void {
        this.history.push(this.snapshot());
    }

    private placeNear(node: ApiNode, anchor?: VisibleNode): VisibleNode {
        const angle = (this.nodes.size * 2.399963) % (2 * Math.PI); // golden angle
        const radius = 60 + (this.nodes.size % 7) * 18;
        const cx = anchor ? anchor.x : 0;
        const cy = anchor ? anchor.y : 0;
        return {
            id: node.id,
            etype: node.etype,
            description: node.description,
            degree: node.degree,
            attributes: node.attributes,
            x: cx + radius * Math.cos(angle),
            y: cy + radius * Math.sin(angle),
            vx: 0,
            vy: 0,
            locked: false,
            expanded: false,
        };
    }

    private addEdges(edges: ApiEdge[]): void {
        const have = new Set(this.edges.map((e) => `${e.src}|${e.dst}|${e.verb}`));
        for (const edge of edges) {
            if (!this.nodes.has(edge.src) || !this.nodes.has(edge.dst)) continue;
            const key = `${edge.src}|${edge.dst}|${edge.verb}`;
            if (!have.has(key)) {
                have.add(key);
                this.edges.push(edge);
            }
        }
    }

    /** Replace the view with a fresh result set (search/query/random). */
    loadResult(view: SubgraphResponse, queryText: string): void {
        this.pushHistory();
        this.nodes = new Map();
        this.edges = [];
        this.anchors = new Set();
        this.parents = new Map();
        this.queryText = queryText;
        this.truncated = view.truncated;
        for (const node of view.nodes.slice(0, this.limits.maxNodes)) {
            this.nodes.set(node.id, this.placeNear(node));
            this.anchors.add(node.id);
        }
        if (view.nodes.length > this.limits.maxNodes) this.truncated = true;
        this.addEdges(view.edges);
    }

    /** Double-click on a collapsed node: spawn its not-yet-visible neighbors. */
    async expandNode(api: ApiClient, nodeId: string): Promise<void> {
        const node = this.nodes.get(nodeId);
        if (!node) return;
        let view: SubgraphResponse;
        try {
            view = await api.neighbors(nodeId, this.limits.maxNeighborsPerNode);
        } catch (err) {
            this.lastError = err instanceof Error ? err.message : String(err);
            return; // state unchanged
        }
        this.pushHistory();
        for (const neighbor of view.nodes) {
            if (neighbor.id === nodeId || this.nodes.has(neighbor.id)) continue;
            if (this.nodes.size >= this.limits.maxNodes) {
                this.truncated = true;
                break;
            }
            this.nodes.set(neighbor.id, this.placeNear(neighbor, node));
            this.parents.set(neighbor.id, nodeId);
        }
        this.addEdges(view.edges);
        node.expanded = true;
    }

    /** Nodes whose expansion-parent chain passes through the given node. */
    private expansionSubtree(nodeId: string): Set<string> {
        const subtree = new Set<string>();
        let grew = true;
        while (grew) {
            grew = false;
            for (const [child, parent] of this.parents) {
                if (subtree.has(child) || child === nodeId) continue;
                if (parent === nodeId || subtree.has(parent)) {
                    subtree.add(child);
                    grew = true;
                }
            }
        }
        return subtree;
    }

    /** Visible nodes reachable from any other anchor without entering nodeId. */
    private reachableFromOtherAnchors(nodeId: string): Set<string> {
        const adjacency = new Map<string, string[]>();
        for (const edge of this.edges) {
            if (edge.src === nodeId || edge.dst === nodeId) continue;
            adjacency.set(edge.src, [...(adjacency.get(edge.src) ?? []), edge.dst]);
            adjacency.set(edge.dst, [...(adjacency.get(edge.dst) ?? []), edge.src]);
        }
        const reached = new Set<string>();
        const queue: string[] = [];
        for (const anchor of this.anchors) {
            if (anchor !== nodeId && this.nodes.has(anchor)) {
                reached.add(anchor);
                queue.push(anchor);
            }
        }
        while (queue.length) {
            const current = queue.shift() as string;
            for (const next of adjacency.get(current) ?? []) {
                if (!reached.has(next)) {
                    reached.add(next);
                    queue.push(next);
                }
            }
        }
        return reached;
    }

    /** Double-click on an expanded node: hide its downstream nodes. */
    collapseNode(nodeId: string): void {
        const node = this.nodes.get(nodeId);
        if (!node || !node.expanded) return; // collapsing a collapsed node: no-op
        this.pushHistory();
        const subtree = this.expansionSubtree(nodeId);
        const keep = this.reachableFromOtherAnchors(nodeId);
        for (const id of subtree) {
            if (!keep.has(id) && !this.anchors.has(id)) {
                this.nodes.delete(id);
                this.parents.delete(id);
            }
        }
        this.edges = this.edges.filter((e) => this.nodes.has(e.src) && this.nodes.has(e.dst));
        node.expanded = false;
    }

    /** Drag: the node locks in place but stays draggable if selected again. */
    dragNode(nodeId: string, x: number, y: number): void {
        const node = this.nodes.get(nodeId);
        if (!node) return;
        node.x = x;
        node.y = y;
        node.vx = 0;
        node.vy = 0;
        node.locked = true;
    }

    navigateBack(): void {
        // each history entry is the state before a view-changing action, so
        // the stack keeps its initial entry and back disables at depth 1
        if (!this.canGoBack()) return;
        const previous = this.history.pop() as Snapshot;
        this.restore(previous);
    }
}
