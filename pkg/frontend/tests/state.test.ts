import { describe, expect, it } from "vitest";

import {
	MAX_PALETTE_COLORS,
	addColor,
	buildSearchRequest,
	initialState,
	isValidHex,
	moveColor,
	removeColor,
	selectQuery,
	updateColor,
} from "../src/state.js";

const QUERY = {
	query_id: 3,
	description_text: "soft sage base with a brushed copper accent",
	stored_palette: ["#9fc2a0", "#b96a3c"],
	target_image_id: "img-3",
};

describe("palette composition", () => {
	it("allows the empty palette", () => {
		const state = selectQuery(initialState(), { ...QUERY, stored_palette: [] });
		expect(state.palette).toEqual([]);
		expect(buildSearchRequest(state)?.palette).toEqual([]);
	});

	it("caps the palette at five colors", () => {
		let state = initialState();
		for (const color of ["#111111", "#222222", "#333333", "#444444", "#555555"]) {
			state = addColor(state, color);
		}
		expect(state.palette).toHaveLength(MAX_PALETTE_COLORS);
		const blocked = addColor(state, "#666666");
		expect(blocked).toBe(state); // sixth color rejected, state unchanged
	});

	it("rejects invalid hex inline", () => {
		expect(isValidHex("#9fc2a0")).toBe(true);
		expect(isValidHex("#9FC2A0")).toBe(false); // normalized before validation
		expect(isValidHex("#12345")).toBe(false);
		expect(isValidHex("red")).toBe(false);
		const state = addColor(initialState(), "not-a-color");
		expect(state.palette).toEqual([]);
		const seeded = addColor(initialState(), "#ABCDEF");
		expect(seeded.palette).toEqual(["#abcdef"]); // case-normalized
		expect(updateColor(seeded, 0, "#zzz")).toBe(seeded);
	});

	it("edits, removes, and reorders swatches", () => {
		let state = selectQuery(initialState(), QUERY);
		state = updateColor(state, 1, "#ff0000");
		expect(state.palette).toEqual(["#9fc2a0", "#ff0000"]);
		state = addColor(state, "#00ff00");
		state = moveColor(state, 2, 0);
		expect(state.palette).toEqual(["#00ff00", "#9fc2a0", "#ff0000"]);
		state = removeColor(state, 1);
		expect(state.palette).toEqual(["#00ff00", "#ff0000"]);
	});
});

describe("state -> request mapping", () => {
	it("produces no request until a query is selected", () => {
		expect(buildSearchRequest(initialState())).toBeNull();
	});

	it("snapshots the full request body", () => {
		const state = selectQuery({ ...initialState(), k: 8 }, QUERY);
		expect(buildSearchRequest(state)).toMatchInlineSnapshot(`
			{
			  "k": 8,
			  "palette": [
			    "#9fc2a0",
			    "#b96a3c",
			  ],
			  "query_id": 3,
			}
		`);
	});

	it("hex colors round-trip into the body byte-exactly", () => {
		const state = selectQuery(initialState(), QUERY);
		const body = buildSearchRequest(state)!;
		expect(JSON.stringify(body.palette)).toBe('["#9fc2a0","#b96a3c"]');
	});

	it("identical states re-submit identical bodies", () => {
		const state = selectQuery(initialState(), QUERY);
		const a = JSON.stringify(buildSearchRequest(state));
		const b = JSON.stringify(buildSearchRequest(state));
		expect(a).toBe(b);
	});

	it("changing one swatch changes only the palette field", () => {
		const before = selectQuery(initialState(), QUERY);
		const after = updateColor(before, 0, "#d6b24a");
		const bodyBefore = buildSearchRequest(before)!;
		const bodyAfter = buildSearchRequest(after)!;
		expect(bodyAfter.query_id).toBe(bodyBefore.query_id);
		expect(bodyAfter.k).toBe(bodyBefore.k);
		expect(bodyAfter.palette).not.toEqual(bodyBefore.palette);
		expect(bodyAfter.palette).toEqual(["#d6b24a", "#b96a3c"]);
	});

	it("empty-palette path builds a searchable body", () => {
		let state = selectQuery(initialState(), QUERY);
		state = removeColor(state, 1);
		state = removeColor(state, 0);
		expect(buildSearchRequest(state)).toEqual({
			query_id: 3,
			palette: [],
			k: 8,
		});
	});
});
