/**
 * Pure HTML builders.  Logic stays testable without a DOM; main.ts applies
 * the strings and wires events by data attributes.
 */

import type { ExplorerState } from "./state.js";
import type { FacetGroup, Match, PointResponse, SearchHit } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderFacets(groups: FacetGroup[], state: ExplorerState): string {
  if (groups.length === 0) {
    return '<p class="empty">This collection declares no attributes.</p>';
  }
  const parts = groups.map((group) => {
    const selected = state.selection.get(group.name) ?? new Set<string>();
    const rows = group.values
      .map((v) => {
        const checked = selected.has(v.value) ? " checked" : "";
        return (
          `<label class="facet-value"><input type="checkbox" data-facet="${escapeHtml(group.name)}" ` +
          `data-value="${escapeHtml(v.value)}"${checked}> ` +
          `<span>${escapeHtml(v.value)}</span> <em>${v.count}</em></label>`
        );
      })
      .join("");
    return (
      `<fieldset class="facet-group"><legend>${escapeHtml(group.name)}</legend>${rows}</fieldset>`
    );
  });
  return parts.join("");
}

function attributeRows(attributes: Record<string, string>): string {
  return Object.entries(attributes)
    .map(
      ([key, value]) =>
        `<div class="attr"><span class="attr-name">${escapeHtml(key)}</span>` +
        `<span class="attr-value">${escapeHtml(value)}</span></div>`,
    )
    .join("");
}

export function renderMatchCard(match: Match): string {
  const media = match.image_url
    ? `<img src="${escapeHtml(match.image_url)}" alt="item ${match.id}" loading="lazy">`
    : `<div class="no-image" aria-hidden="true">#${match.id}</div>`;
  return (
    `<article class="card" data-match-id="${match.id}">` +
    media +
    `<div class="card-body">` +
    `<div class="card-head">id ${match.id} &middot; d=${match.distance.toFixed(4)}</div>` +
    attributeRows(match.attributes) +
    `<button type="button" class="chain" data-chain-id="${match.id}">Use match as query</button>` +
    `</div></article>`
  );
}

export function renderMatches(state: ExplorerState): string {
  if (state.error !== null) {
    return (
      `<div class="error" role="alert">${escapeHtml(state.error)} ` +
      `<button type="button" data-retry="1">Retry</button></div>`
    );
  }
  if (state.queryPointId === null) {
    return '<p class="empty">Pick a query item (search, or choose an id) to see matches.</p>';
  }
  if (state.matches.length === 0) {
    return '<p class="empty">No items satisfy the current condition.</p>';
  }
  return `<div class="grid">${state.matches.map(renderMatchCard).join("")}</div>`;
}

export function renderBreadcrumb(state: ExplorerState): string {
  const steps = state.breadcrumb
    .map((snap, i) => `<li data-crumb="${i}">#${snap.queryPointId ?? "?"}</li>`)
    .join("");
  const current = state.queryPointId === null ? "" : `<li class="current">#${state.queryPointId}</li>`;
  const backButton =
    state.breadcrumb.length > 0
      ? '<button type="button" data-back="1">&larr; Back</button>'
      : "";
  return `<nav class="breadcrumb">${backButton}<ol>${steps}${current}</ol></nav>`;
}

export function renderSearchResults(hits: SearchHit[]): string {
  if (hits.length === 0) {
    return '<p class="empty">Nothing matched that text.</p>';
  }
  return hits
    .map(
      (hit) =>
        `<button type="button" class="search-hit" data-pick-id="${hit.id}">` +
        `#${hit.id} ${attributeRows(hit.attributes)}</button>`,
    )
    .join("");
}

export function renderQuerySummary(point: PointResponse | null, condition: string): string {
  const about = point === null ? "no query selected" : `query #${point.id}`;
  return (
    `<div class="summary"><strong>${escapeHtml(about)}</strong>` +
    `<code>${escapeHtml(condition)}</code></div>`
  );
}
