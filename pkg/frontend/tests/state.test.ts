import { describe, expect, it } from "vitest";

import {
  applyError,
  applyMatches,
  back,
  chainTo,
  initialState,
  nextRequest,
  selectCollection,
  setQueryFromSearch,
  snapshot,
  toggleFacet,
} from "../src/state";

function seeded() {
  const state = initialState();
  selectCollection(state, "art");
  setQueryFromSearch(state, 7);
  toggleFacet(state, "culture", "Dutch");
  toggleFacet(state, "culture", "Chinese");
  toggleFacet(state, "medium", "Ceramic");
  return state;
}

describe("chain and back", () => {
  it("chain then back restores the snapshot bit-exactly", () => {
    const state = seeded();
    const before = JSON.stringify(snapshot(state));
    chainTo(state, 42);
    expect(state.queryPointId).toBe(42);
    expect(state.breadcrumb.length).toBe(1);
    // mutate facets while exploring the chained item
    toggleFacet(state, "culture", "Dutch");
    toggleFacet(state, "century", "12th");
    expect(back(state)).toBe(true);
    expect(JSON.stringify(snapshot(state))).toBe(before);
    expect(state.breadcrumb.length).toBe(0);
  });

  it("multi-step chains unwind in order", () => {
    const state = seeded();
    const snaps = [JSON.stringify(snapshot(state))];
    chainTo(state, 10);
    snaps.push(JSON.stringify(snapshot(state)));
    chainTo(state, 20);
    snaps.push(JSON.stringify(snapshot(state)));
    chainTo(state, 30);
    expect(state.breadcrumb.length).toBe(3);
    expect(back(state)).toBe(true);
    expect(JSON.stringify(snapshot(state))).toBe(snaps[2]);
    expect(back(state)).toBe(true);
    expect(JSON.stringify(snapshot(state))).toBe(snaps[1]);
    expect(back(state)).toBe(true);
    expect(JSON.stringify(snapshot(state))).toBe(snaps[0]);
    expect(back(state)).toBe(false);
  });

  it("breadcrumb grows only through chaining", () => {
    const state = seeded();
    toggleFacet(state, "culture", "Dutch");
    setQueryFromSearch(state, 3);
    expect(state.breadcrumb.length).toBe(0);
    chainTo(state, 4);
    expect(state.breadcrumb.length).toBe(1);
    setQueryFromSearch(state, 5); // picking from search clears the chain
    expect(state.breadcrumb.length).toBe(0);
  });
});

describe("facet toggling", () => {
  it("adds and removes values, dropping empty attributes", () => {
    const state = initialState();
    toggleFacet(state, "culture", "Dutch");
    expect(state.selection.get("culture")?.has("Dutch")).toBe(true);
    toggleFacet(state, "culture", "Dutch");
    expect(state.selection.has("culture")).toBe(false);
  });
});

describe("stale responses", () => {
  it("discards responses superseded by a newer request", () => {
    const state = seeded();
    const first = nextRequest(state);
    const second = nextRequest(state);
    // the old response lands after the new request was issued
    expect(applyMatches(state, first, [{ id: 1, distance: 0, attributes: {} }])).toBe(false);
    expect(state.matches).toEqual([]);
    expect(applyMatches(state, second, [{ id: 2, distance: 0, attributes: {} }])).toBe(true);
    expect(state.matches.map((m) => m.id)).toEqual([2]);
    // duplicate/older delivery after apply is also ignored
    expect(applyMatches(state, second, [{ id: 3, distance: 0, attributes: {} }])).toBe(false);
  });

  it("stale errors are also ignored", () => {
    const state = seeded();
    const first = nextRequest(state);
    const second = nextRequest(state);
    expect(applyError(state, first, "boom")).toBe(false);
    expect(state.error).toBe(null);
    expect(applyError(state, second, "boom")).toBe(true);
    expect(state.error).toBe("boom");
  });
});
