/**
 * Explorer state and its transitions.
 *
 * The breadcrumb chain records prior query points with the facet selection
 * and strategy that were active when the user chained onward; going back
 * restores that snapshot exactly.  In-flight responses carry the request
 * sequence number they answer; anything but the latest is discarded.
 */

import type { FacetSelection, Match, Strategy } from "./types.js";

export interface Snapshot {
  queryPointId: number | null;
  selection: [string, string[]][];
  strategy: Strategy;
}

export interface ExplorerState {
  collection: string | null;
  queryPointId: number | null;
  selection: FacetSelection;
  strategy: Strategy;
  k: number;
  matches: Match[];
  breadcrumb: Snapshot[];
  issuedSeq: number;
  appliedSeq: number;
  error: string | null;
}

export function initialState(): ExplorerState {
  return {
    collection: null,
    queryPointId: null,
    selection: new Map(),
    strategy: "cond",
    k: 12,
    matches: [],
    breadcrumb: [],
    issuedSeq: 0,
    appliedSeq: 0,
    error: null,
  };
}

export function snapshot(state: ExplorerState): Snapshot {
  return {
    queryPointId: state.queryPointId,
    selection: [...state.selection.entries()]
      .map(([attr, values]) => [attr, [...values].sort()] as [string, string[]])
      .sort((a, b) => a[0].localeCompare(b[0])),
    strategy: state.strategy,
  };
}

function restore(state: ExplorerState, snap: Snapshot): void {
  state.queryPointId = snap.queryPointId;
  state.selection = new Map(snap.selection.map(([attr, values]) => [attr, new Set(values)]));
  state.strategy = snap.strategy;
}

export function selectCollection(state: ExplorerState, collection: string): void {
  state.collection = collection;
  state.queryPointId = null;
  state.selection = new Map();
  state.matches = [];
  state.breadcrumb = [];
  state.error = null;
}

/** Choosing a search result sets the query point and clears the chain. */
export function setQueryFromSearch(state: ExplorerState, pointId: number): void {
  state.queryPointId = pointId;
  state.breadcrumb = [];
  state.error = null;
}

export function toggleFacet(state: ExplorerState, attribute: string, value: string): void {
  const values = state.selection.get(attribute) ?? new Set<string>();
  if (values.has(value)) {
    values.delete(value);
  } else {
    values.add(value);
  }
  if (values.size === 0) {
    state.selection.delete(attribute);
  } else {
    state.selection.set(attribute, values);
  }
}

export function setStrategy(state: ExplorerState, strategy: Strategy): void {
  state.strategy = strategy;
}

/** "Use match as query": push the current view onto the chain, re-query. */
export function chainTo(state: ExplorerState, pointId: number): void {
  state.breadcrumb.push(snapshot(state));
  state.queryPointId = pointId;
}

/** Step back over the chain; restores facets + query point exactly. */
export function back(state: ExplorerState): boolean {
  const snap = state.breadcrumb.pop();
  if (snap === undefined) return false;
  restore(state, snap);
  return true;
}

export function nextRequest(state: ExplorerState): number {
  state.issuedSeq += 1;
  return state.issuedSeq;
}

/** Apply a response only if it answers the newest request. */
export function applyMatches(state: ExplorerState, seq: number, matches: Match[]): boolean {
  if (seq !== state.issuedSeq || seq <= state.appliedSeq) return false;
  state.appliedSeq = seq;
  state.matches = matches;
  state.error = null;
  return true;
}

export function applyError(state: ExplorerState, seq: number, message: string): boolean {
  if (seq !== state.issuedSeq || seq <= state.appliedSeq) return false;
  state.appliedSeq = seq;
  state.error = message;
  return true;
}
