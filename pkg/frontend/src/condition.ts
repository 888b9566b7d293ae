/**
 * Serialize facet selections to the service's condition language.
 *
 * Values selected within one attribute are alternatives (OR); attributes
 * combine conjunctively (AND).  No selection at all means the universal
 * condition "ALL".  Output always parses under the service grammar:
 *
 *   expr := or; or := and (OR and)*; and := unary (AND unary)*;
 *   unary := [NOT] (term | "(" expr ")"); term := ident "=" quoted-string | ALL
 */

import type { FacetSelection } from "./types.js";

export function quoteValue(value: string): string {
  return '"' + value.replace(/\\/g, "\\\\").replace(/"/g, '\\"') + '"';
}

function attributeClause(attribute: string, values: string[]): string {
  const terms = values
    .slice()
    .sort()
    .map((v) => `${attribute}=${quoteValue(v)}`);
  return terms.join(" OR ");
}

export function facetsToCondition(selection: FacetSelection): string {
  const clauses: string[] = [];
  const attributes = [...selection.keys()].sort();
  for (const attribute of attributes) {
    const values = [...(selection.get(attribute) ?? [])];
    if (values.length === 0) continue;
    clauses.push(attributeClause(attribute, values));
  }
  if (clauses.length === 0) return "ALL";
  if (clauses.length === 1) return clauses[0]!;
  return clauses.map((c) => `(${c})`).join(" AND ");
}

/** Client-side re-check: does a match's metadata satisfy the selection? */
export function matchSatisfiesSelection(
  attributes: Record<string, string>,
  selection: FacetSelection,
): boolean {
  for (const [attribute, values] of selection) {
    if (values.size === 0) continue;
    const got = attributes[attribute];
    if (got === undefined || !values.has(got)) return false;
  }
  return true;
}
