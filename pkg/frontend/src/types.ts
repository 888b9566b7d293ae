/** Wire types for the retrieval service. */

export interface CollectionSummary {
  id: string;
  n: number;
  d: number;
  metric: string;
  attributes: string[];
}

export interface FacetValue {
  value: string;
  count: number;
}

export interface FacetGroup {
  name: string;
  values: FacetValue[];
}

export interface FacetsResponse {
  collection: string;
  attributes: FacetGroup[];
}

export interface Match {
  id: number;
  distance: number;
  attributes: Record<string, string>;
  image_url?: string;
}

export interface QueryResponse {
  collection: string;
  condition: string;
  strategy: string;
  k: number;
  matches: Match[];
  nodes_visited: number;
  points_scored: number;
}

export interface PointResponse {
  id: number;
  attributes: Record<string, string>;
  image_url?: string;
}

export interface SearchHit extends PointResponse {
  matched_attributes: number;
}

export interface SearchResponse {
  collection: string;
  q: string;
  results: SearchHit[];
}

export interface ApiErrorBody {
  error: { code: string; message: string; position?: number };
}

export type Strategy = "cond" | "qtf" | "reconf" | "brute" | "dedicated";

/** Selected facet values per attribute name. */
export type FacetSelection = Map<string, Set<string>>;
