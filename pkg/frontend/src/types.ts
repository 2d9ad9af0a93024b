/** Shapes of the query-service JSON API (see docs/api.md). */

export interface ApiNode {
    id: string;
    etype: string;
    description: string;
    degree: number;
    attributes: Record<string, string[]>;
    source_report_ids: string[];
}

export interface ApiEdge {
    src: string;
    dst: string;
    verb: string;
}

export interface SubgraphResponse {
    nodes: ApiNode[];
    edges: ApiEdge[];
    truncated: boolean;
    limits: Record<string, number>;
    next_cursor: number | null;
}

export interface StatsResponse {
    nodes_total: number;
    edges_total: number;
    nodes_by_type: Record<string, number>;
    edges_by_verb: Record<string, number>;
    last_run: Record<string, unknown>;
}

/** The slice of the API the explorer consumes; mockable in tests. */
export interface ApiClient {
    search(q: string, limit: number): Promise<SubgraphResponse>;
    query(text: string, limit: number): Promise<SubgraphResponse>;
    node(id: string): Promise<ApiNode>;
    neighbors(id: string, limit: number): Promise<SubgraphResponse>;
    random(size: number, seed?: number): Promise<SubgraphResponse>;
    stats(): Promise<StatsResponse>;
}
