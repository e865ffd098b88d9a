import { describe, expect, it } from "vitest";

import { renderQueryOptions, renderResults, renderSwatches } from "../src/render.js";
import { initialState } from "../src/state.js";

describe("swatch list", () => {
	it("offers an add button below the cap and a notice at it", () => {
		const some = renderSwatches(["#112233", "#445566"]);
		expect(some).toContain('id="add-color"');
		expect(some).toContain("#112233");
		const full = renderSwatches(["#1", "#2", "#3", "#4", "#5"].map((s) => s + "11111".slice(s.length - 1)));
		expect(full).not.toContain('id="add-color"');
		expect(full).toContain("palette is full");
	});

	it("explains the empty palette", () => {
		expect(renderSwatches([])).toContain("searching by description only");
	});
});

describe("results panel", () => {
	const response = {
		results: [
			{ image_id: "img-a", score: 0.912345, rank: 1 },
			{ image_id: "img-b", score: 0.55, rank: 2 },
		],
		timing_ms: 4.2,
	};

	it("renders ranked cards with service scores only", () => {
		const html = renderResults({ ...initialState(), lastResponse: response });
		expect(html).toContain("#1 · score 0.9123");
		expect(html).toContain("#2 · score 0.5500");
		expect(html).toContain('src="/api/image/img-a"');
		expect(html).toContain("scores from the service");
	});

	it("highlights the known target with its rank", () => {
		const html = renderResults(
			{ ...initialState(), lastResponse: response }, "img-b",
		);
		expect(html).toContain("is-target");
		expect(html).toContain("target · rank 2");
	});

	it("surfaces errors without discarding anything", () => {
		const html = renderResults({ ...initialState(), error: "HTTP 503" });
		expect(html).toContain("search failed");
		expect(html).toContain("previous results kept");
	});

	it("escapes untrusted text", () => {
		const html = renderQueryOptions(
			[{ query_id: 0, description_text: "<b>bold</b> & more", stored_palette: [] }],
			0,
		);
		expect(html).toContain("&lt;b&gt;bold&lt;/b&gt; &amp; more");
		expect(html).not.toContain("<b>bold</b>");
	});
});
