/**
 * UI state and its pure transitions.
 *
 * Everything here is side-effect free so the state -> request mapping
 * can be snapshot-tested byte for byte. The service is the single
 * source of truth for scores; this module never computes them.
 */

export const MAX_PALETTE_COLORS = 5;

export interface QueryInfo {
	query_id: number;
	description_text: string;
	stored_palette: string[];
	target_image_id?: string;
}

export interface ResultItem {
	image_id: string;
	score: number;
	rank: number;
}

export interface SearchResponse {
	results: ResultItem[];
	timing_ms: number;
}

export interface SearchRequestBody {
	query_id: number;
	palette: string[];
	k: number;
}

export interface UiState {
	selectedQueryId: number | null;
	palette: string[];
	k: number;
	lastResponse: SearchResponse | null;
	loading: boolean;
	error: string | null;
}

export function initialState(): UiState {
	return {
		selectedQueryId: null,
		palette: [],
		k: 8,
		lastResponse: null,
		loading: false,
		error: null,
	};
}

const HEX_PATTERN = /^#[0-9a-f]{6}$/;

export function isValidHex(color: string): boolean {
	return HEX_PATTERN.test(color);
}

export function normalizeHex(color: string): string | null {
	const lower = color.trim().toLowerCase();
	return isValidHex(lower) ? lower : null;
}

/** Append a swatch; rejected (state unchanged) past the cap or on bad hex. */
export function addColor(state: UiState, color: string): UiState {
	const hex = normalizeHex(color);
	if (hex === null || state.palette.length >= MAX_PALETTE_COLORS) {
		return state;
	}
	return { ...state, palette: [...state.palette, hex] };
}

export function removeColor(state: UiState, index: number): UiState {
	if (index < 0 || index >= state.palette.length) {
		return state;
	}
	return { ...state, palette: state.palette.filter((_, i) => i !== index) };
}

/** Edit a swatch in place; invalid hex leaves the state untouched. */
export function updateColor(state: UiState, index: number, color: string): UiState {
	const hex = normalizeHex(color);
	if (hex === null || index < 0 || index >= state.palette.length) {
		return state;
	}
	const palette = [...state.palette];
	palette[index] = hex;
	return { ...state, palette };
}

/** Reorder swatches (drag-style move). */
export function moveColor(state: UiState, from: number, to: number): UiState {
	const n = state.palette.length;
	if (from < 0 || from >= n || to < 0 || to >= n || from === to) {
		return state;
	}
	const palette = [...state.palette];
	const moved = palette.splice(from, 1)[0]!;
	palette.splice(to, 0, moved);
	return { ...state, palette };
}

export function selectQuery(state: UiState, query: QueryInfo): UiState {
	// Picking a description loads its stored palette as the editing base.
	return {
		...state,
		selectedQueryId: query.query_id,
		palette: query.stored_palette.slice(0, MAX_PALETTE_COLORS),
		lastResponse: null,
		error: null,
	};
}

/**
 * The one place a request body is built. Pure: identical states produce
 * identical bodies, and a palette edit changes only the palette field.
 */
export function buildSearchRequest(state: UiState): SearchRequestBody | null {
	if (state.selectedQueryId === null) {
		return null;
	}
	return {
		query_id: state.selectedQueryId,
		palette: [...state.palette],
		k: state.k,
	};
}
