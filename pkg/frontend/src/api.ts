/** Typed client for the retrieval service. */

import type {
  ApiErrorBody,
  CollectionSummary,
  FacetsResponse,
  PointResponse,
  QueryResponse,
  SearchResponse,
  Strategy,
} from "./types.js";

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;
  readonly position?: number;

  constructor(status: number, body: ApiErrorBody["error"]) {
    super(body.message);
    this.code = body.code;
    this.status = status;
    this.position = body.position;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface QueryRequest {
  pointId?: number;
  vector?: number[];
  condition: string;
  k: number;
  strategy?: Strategy;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const body = await response.json();
    if (!response.ok) {
      const err = (body as ApiErrorBody).error ?? {
        code: "unknown",
        message: `HTTP ${response.status}`,
      };
      throw new ApiError(response.status, err);
    }
    return body as T;
  }

  async collections(): Promise<CollectionSummary[]> {
    const body = await this.request<{ collections: CollectionSummary[] }>("/collections");
    return body.collections;
  }

  facets(collection: string): Promise<FacetsResponse> {
    return this.request(`/collections/${encodeURIComponent(collection)}/facets`);
  }

  query(collection: string, req: QueryRequest): Promise<QueryResponse> {
    const payload: Record<string, unknown> = {
      condition: req.condition,
      k: req.k,
    };
    if (req.pointId !== undefined) payload.point_id = req.pointId;
    if (req.vector !== undefined) payload.vector = req.vector;
    if (req.strategy !== undefined) payload.strategy = req.strategy;
    return this.request(`/collections/${encodeURIComponent(collection)}/query`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  point(collection: string, pointId: number): Promise<PointResponse> {
    return this.request(
      `/collections/${encodeURIComponent(collection)}/points/${pointId}`,
    );
  }

  search(collection: string, q: string, limit = 20): Promise<SearchResponse> {
    const params = new URLSearchParams({ q, limit: String(limit) });
    return this.request(
      `/collections/${encodeURIComponent(collection)}/search?${params}`,
    );
  }
}
