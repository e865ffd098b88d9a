/**
 * Pure HTML renderers. Components return markup strings so the exact
 * rendered output is snapshot-testable without a browser; main.ts
 * mounts them with innerHTML and wires events by data attributes.
 */

import type { QueryInfo, SearchResponse, UiState } from "./state.js";
import { MAX_PALETTE_COLORS } from "./state.js";

function escapeHtml(text: string): string {
	return text
		.replace(/&/g, "&amp;")
		.replace(/</g, "&lt;")
		.replace(/>/g, "&gt;")
		.replace(/"/g, "&quot;");
}

export function renderQueryOptions(queries: QueryInfo[], selected: number | null): string {
	const placeholder = `<option value="" ${selected === null ? "selected" : ""}>pick a description…</option>`;
	const options = queries.map((q) => {
		const sel = q.query_id === selected ? "selected" : "";
		return `<option value="${q.query_id}" ${sel}>${escapeHtml(q.description_text)}</option>`;
	});
	return [placeholder, ...options].join("\n");
}

export function renderSwatches(palette: string[]): string {
	const swatches = palette.map((color, i) => `
	<span class="swatch" data-index="${i}">
		<input type="color" value="${color}" data-action="edit" data-index="${i}" title="edit color ${i + 1}">
		<code>${color}</code>
		<button type="button" data-action="remove" data-index="${i}" title="remove">×</button>
	</span>`);
	const canAdd = palette.length < MAX_PALETTE_COLORS;
	const adder = canAdd
		? `<button type="button" id="add-color" title="add a color">+ color</button>`
		: `<span class="cap-note">palette is full (${MAX_PALETTE_COLORS} max)</span>`;
	const empty = palette.length === 0
		? `<span class="empty-note">no colors — searching by description only</span>`
		: "";
	return `${swatches.join("")}\n${adder}\n${empty}`;
}

export function renderResults(state: UiState, targetImageId?: string): string {
	if (state.error !== null) {
		return `<p class="error">search failed: ${escapeHtml(state.error)} — previous results kept</p>`;
	}
	if (state.lastResponse === null) {
		return `<p class="hint">select a description to search</p>`;
	}
	const { results, timing_ms } = state.lastResponse;
	const cards = results.map((r) => {
		const isTarget = targetImageId !== undefined && r.image_id === targetImageId;
		const badge = isTarget ? `<span class="target-badge">target · rank ${r.rank}</span>` : "";
		return `
	<figure class="card ${isTarget ? "is-target" : ""}" data-image-id="${escapeHtml(r.image_id)}">
		<img src="/api/image/${encodeURIComponent(r.image_id)}" alt="${escapeHtml(r.image_id)}" loading="lazy">
		<figcaption>#${r.rank} · score ${r.score.toFixed(4)} ${badge}</figcaption>
	</figure>`;
	});
	return `<div class="meta">${results.length} results in ${timing_ms.toFixed(1)} ms (scores from the service)</div>\n${cards.join("")}`;
}
