import type { ApiClient, ApiNode, StatsResponse, SubgraphResponse } from "./types.js";

export class ApiError extends Error {
    constructor(public code: string, message: string) {
        super(message);
    }
}

async function asJson<T>(response: Response): Promise<T> {
    const body = await response.json();
    if (!response.ok) {
        throw new ApiError(body.code ?? "http_error", body.message ?? response.statusText);
    }
    return body as T;
}

/** Thin fetch wrapper over the query service. */
export class HttpApiClient implements ApiClient {
    constructor(private baseUrl: string = "") {}

    search(q: string, limit: number): Promise<SubgraphResponse> {
        const params = new URLSearchParams({ q, limit: String(limit) });
        return fetch(`${this.baseUrl}/search?${params}`).then((r) => asJson(r));
    }

    query(text: string, limit: number): Promise<SubgraphResponse> {
        return fetch(`${this.baseUrl}/query?limit=${limit}`, {
            method: "POST",
            body: text,
        }).then((r) => asJson(r));
    }

    node(id: string): Promise<ApiNode> {
        return fetch(`${this.baseUrl}/nodes/${id}`).then((r) => asJson(r));
    }

    neighbors(id: string, limit: number): Promise<SubgraphResponse> {
        return fetch(`${this.baseUrl}/nodes/${id}/neighbors?limit=${limit}`).then((r) =>
            asJson(r),
        );
    }

    random(size: number, seed?: number): Promise<SubgraphResponse> {
        const params = new URLSearchParams({ size: String(size) });
        if (seed !== undefined) params.set("seed", String(seed));
        return fetch(`${this.baseUrl}/random?${params}`).then((r) => asJson(r));
    }

    stats(): Promise<StatsResponse> {
        return fetch(`${this.baseUrl}/stats`).then((r) => asJson(r));
    }
}
