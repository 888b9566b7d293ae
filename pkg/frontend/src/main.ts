/** Browser entry point: wires the store, client and renderers together. */

import { ApiClient, ApiError } from "./api.js";
import { facetsToCondition } from "./condition.js";
import {
  applyError,
  applyMatches,
  back,
  chainTo,
  initialState,
  nextRequest,
  selectCollection,
  setQueryFromSearch,
  setStrategy,
  toggleFacet,
} from "./state.js";
import {
  renderBreadcrumb,
  renderFacets,
  renderMatches,
  renderQuerySummary,
  renderSearchResults,
} from "./render.js";
import type { FacetGroup, PointResponse, Strategy } from "./types.js";

const state = initialState();
const client = new ApiClient(
  (window as { CONDRA_API_BASE?: string }).CONDRA_API_BASE ?? "",
);
let facetGroups: FacetGroup[] = [];
let queryPoint: PointResponse | null = null;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node;
}

function redraw(): void {
  el("facets").innerHTML = renderFacets(facetGroups, state);
  el("matches").innerHTML = renderMatches(state);
  el("breadcrumb").innerHTML = renderBreadcrumb(state);
  el("summary").innerHTML = renderQuerySummary(queryPoint, facetsToCondition(state.selection));
}

async function runQuery(): Promise<void> {
  if (state.collection === null || state.queryPointId === null) {
    redraw();
    return;
  }
  const seq = nextRequest(state);
  const condition = facetsToCondition(state.selection);
  try {
    const [response, point] = await Promise.all([
      client.query(state.collection, {
        pointId: state.queryPointId,
        condition,
        k: state.k,
        strategy: state.strategy,
      }),
      client.point(state.collection, state.queryPointId),
    ]);
    if (applyMatches(state, seq, response.matches)) {
      queryPoint = point;
      redraw();
    }
  } catch (err) {
    const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    if (applyError(state, seq, message)) redraw();
  }
}

async function runSearch(q: string): Promise<void> {
  if (state.collection === null || q.trim() === "") return;
  try {
    const response = await client.search(state.collection, q.trim());
    el("search-results").innerHTML = renderSearchResults(response.results);
  } catch (err) {
    el("search-results").innerHTML =
      `<div class="error" role="alert">${err instanceof Error ? err.message : err}</div>`;
  }
}

async function boot(): Promise<void> {
  const collections = await client.collections();
  const picker = el("collection") as HTMLSelectElement;
  picker.innerHTML = collections
    .map((c) => `<option value="${c.id}">${c.id} (${c.n})</option>`)
    .join("");
  picker.addEventListener("change", async () => {
    selectCollection(state, picker.value);
    facetGroups = (await client.facets(picker.value)).attributes;
    queryPoint = null;
    redraw();
  });
  if (collections.length > 0) {
    selectCollection(state, collections[0]!.id);
    facetGroups = (await client.facets(collections[0]!.id)).attributes;
  }

  el("facets").addEventListener("change", (event) => {
    const target = event.target as HTMLInputElement;
    const facet = target.dataset.facet;
    const value = target.dataset.value;
    if (facet !== undefined && value !== undefined) {
      toggleFacet(state, facet, value);
      void runQuery();
    }
  });

  el("matches").addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest("[data-chain-id]");
    if (target !== null) {
      chainTo(state, Number((target as HTMLElement).dataset.chainId));
      void runQuery();
    }
    if ((event.target as HTMLElement).dataset.retry !== undefined) void runQuery();
  });

  el("breadcrumb").addEventListener("click", (event) => {
    if ((event.target as HTMLElement).dataset.back !== undefined && back(state)) {
      void runQuery();
    }
  });

  const searchBox = el("search-box") as HTMLInputElement;
  el("search-form").addEventListener("submit", (event) => {
    event.preventDefault();
    void runSearch(searchBox.value);
  });
  el("search-results").addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest("[data-pick-id]");
    if (target !== null) {
      setQueryFromSearch(state, Number((target as HTMLElement).dataset.pickId));
      el("search-results").innerHTML = "";
      void runQuery();
    }
  });

  const strategyPicker = el("strategy") as HTMLSelectElement;
  strategyPicker.addEventListener("change", () => {
    setStrategy(state, strategyPicker.value as Strategy);
    void runQuery();
  });

  redraw();
}

void boot();
