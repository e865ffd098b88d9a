/**
 * Application wiring: fetch the stored queries, keep one UiState, and
 * re-render on every transition. Palette edits re-trigger the search
 * behind a 250 ms debounce; only the newest in-flight search lands.
 */

import { SearchClient, debounce } from "./api.js";
import { renderQueryOptions, renderResults, renderSwatches } from "./render.js";
import {
	QueryInfo,
	UiState,
	addColor,
	buildSearchRequest,
	initialState,
	removeColor,
	selectQuery,
	updateColor,
} from "./state.js";

const client = new SearchClient();
let state: UiState = initialState();
let queries: QueryInfo[] = [];

const $ = (id: string) => document.getElementById(id)!;

function targetFor(queryId: number | null): string | undefined {
	const query = queries.find((q) => q.query_id === queryId);
	return query?.target_image_id;
}

function render(): void {
	($("query-select") as HTMLSelectElement).innerHTML = renderQueryOptions(
		queries, state.selectedQueryId,
	);
	$("swatches").innerHTML = renderSwatches(state.palette);
	$("results").innerHTML = renderResults(state, targetFor(state.selectedQueryId));
	$("status").textContent = state.loading ? "searching…" : "";
}

async function runSearch(): Promise<void> {
	const body = buildSearchRequest(state);
	if (body === null) {
		return;
	}
	state = { ...state, loading: true };
	render();
	try {
		const response = await client.search(body);
		if (response !== null) {
			state = { ...state, lastResponse: response, error: null, loading: false };
		} else {
			state = { ...state, loading: false }; // superseded by a newer search
		}
	} catch (err) {
		// keep the previous results on screen; just surface the message
		state = { ...state, error: String(err), loading: false };
	}
	render();
}

const debouncedSearch = debounce(() => void runSearch(), 250);

function setState(next: UiState, immediate = false): void {
	const paletteChanged = next.palette.join() !== state.palette.join();
	const queryChanged = next.selectedQueryId !== state.selectedQueryId;
	state = next;
	render();
	if (immediate || queryChanged) {
		void runSearch();
	} else if (paletteChanged) {
		debouncedSearch();
	}
}

function wireEvents(): void {
	($("query-select") as HTMLSelectElement).addEventListener("change", (event) => {
		const value = (event.target as HTMLSelectElement).value;
		const query = queries.find((q) => q.query_id === Number(value));
		if (query !== undefined) {
			setState(selectQuery(state, query), true);
		}
	});

	$("swatches").addEventListener("click", (event) => {
		const element = event.target as HTMLElement;
		if (element.id === "add-color") {
			setState(addColor(state, "#808080"));
		} else if (element.dataset.action === "remove") {
			setState(removeColor(state, Number(element.dataset.index)));
		}
	});

	$("swatches").addEventListener("input", (event) => {
		const element = event.target as HTMLInputElement;
		if (element.dataset.action === "edit") {
			setState(updateColor(state, Number(element.dataset.index), element.value));
		}
	});
}

async function boot(): Promise<void> {
	try {
		queries = await client.fetchQueries();
	} catch (err) {
		$("results").innerHTML = `<p class="error">cannot reach the service: ${String(err)}</p>`;
		return;
	}
	wireEvents();
	render();
}

void boot();
