/**
 * Typed client for the retrieval service. At most one search is in
 * flight: issuing a new one aborts the previous request (latest wins).
 */

import type { QueryInfo, SearchRequestBody, SearchResponse } from "./state.js";

export class SearchClient {
	private baseUrl: string;
	private inflight: AbortController | null = null;

	constructor(baseUrl = "") {
		this.baseUrl = baseUrl.replace(/\/$/, "");
	}

	async fetchQueries(): Promise<QueryInfo[]> {
		const response = await fetch(`${this.baseUrl}/api/queries`);
		if (!response.ok) {
			throw new Error(`queries failed: HTTP ${response.status}`);
		}
		return (await response.json()) as QueryInfo[];
	}

	/**
	 * POST a search. Resolves to null when superseded by a newer search,
	 * so stale results never overwrite fresh ones.
	 */
	async search(body: SearchRequestBody): Promise<SearchResponse | null> {
		this.inflight?.abort();
		const controller = new AbortController();
		this.inflight = controller;
		try {
			const response = await fetch(`${this.baseUrl}/api/search`, {
				method: "POST",
				headers: { "Content-Type": "application/json" },
				body: JSON.stringify(body),
				signal: controller.signal,
			});
			if (!response.ok) {
				const detail = await response.text();
				throw new Error(`search failed: HTTP ${response.status} ${detail}`);
			}
			return (await response.json()) as SearchResponse;
		} catch (err) {
			if (controller.signal.aborted) {
				return null;
			}
			throw err;
		} finally {
			if (this.inflight === controller) {
				this.inflight = null;
			}
		}
	}
}

export function debounce<A extends unknown[]>(
	fn: (...args: A) => void,
	waitMs: number,
): (...args: A) => void {
	let timer: ReturnType<typeof setTimeout> | null = null;
	return (...args: A) => {
		if (timer !== null) {
			clearTimeout(timer);
		}
		timer = setTimeout(() => fn(...args), waitMs);
	};
}
