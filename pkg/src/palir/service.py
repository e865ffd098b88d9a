"""Interactive retrieval service over a trained checkpoint and a bundle.

The image side of the model never changes at query time, so all corpus
images are fused once into an in-memory index at startup. A search then
costs one text-side forward pass plus a dot product against the index,
which keeps latency far below the sub-second budget even for thousands
of images. Changing only the palette re-runs only the query head.

Queries are the stored test-split records (the engine has no online
text encoder; descriptions are chosen from the corpus while the palette
is freely editable). Scores come from the same kernel as offline
evaluation, so service results and eval results agree bit for bit.

HTTP surface (JSON, UTF-8):
    GET  /api/queries        selectable queries with stored palettes
    POST /api/search         {"query_id", "palette"?, "k"} -> ranking
    GET  /api/image/{id}     image bytes, or a palette swatch PNG when
                             no image directory is configured
    GET  /healthz            liveness probe
    /                        static UI assets, when built

Note: no ``from __future__ import annotations`` here; FastAPI must
resolve the request-body model from live annotations.
"""

import io
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from palir.data import DatasetBundle
from palir.model import FusionParameters, ModelError
from palir.palette import PaletteQuery
from palir.training import fuse_corpus, query_vector, rank, score_corpus


class ServiceError(ValueError):
    """Raised for invalid search requests."""


@dataclass(frozen=True)
class SearchRequest:
    query_id: int                        # position within the test split
    palette: PaletteQuery | None = None  # None: use the stored palette
    k: int = 10
    raw_triple: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ServiceError("k must be >= 1")
        if self.palette is not None and len(self.palette) > 5:
            raise ServiceError("palette holds at most 5 colors")


@dataclass(frozen=True)
class SearchResult:
    image_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class SearchResponse:
    results: list[SearchResult]
    timing_ms: float


def warm_index(
    bundle: DatasetBundle,
    params: FusionParameters,
    corpus_indices: list[int],
) -> np.ndarray:
    """Fuse every corpus image once; rows are unit image vectors."""
    try:
        return fuse_corpus(bundle, params, corpus_indices)
    except ModelError as e:
        raise ServiceError(f"checkpoint incompatible with bundle: {e}") from e


class SearchService:
    """Holds the warmed index and answers ranked queries."""

    def __init__(
        self,
        bundle: DatasetBundle,
        params: FusionParameters,
        corpus: str = "test",
        images_dir: str | Path | None = None,
    ):
        self.bundle = bundle
        self.params = params
        self.images_dir = Path(images_dir) if images_dir else None
        self.query_indices = bundle.split_indices("test")
        if not self.query_indices:
            raise ServiceError("bundle has no test records to query")
        if corpus == "all":
            self.corpus_indices = list(range(len(bundle)))
        else:
            self.corpus_indices = sorted({
                bundle.manifest[i].target_image_index for i in self.query_indices
            })
        self.index = warm_index(bundle, params, self.corpus_indices)

    def list_queries(self) -> list[dict]:
        out = []
        for pos, rec_idx in enumerate(self.query_indices):
            rec = self.bundle.manifest[rec_idx]
            out.append({
                "query_id": pos,
                "description_text": rec.description_text,
                "stored_palette": rec.palette.to_hex(),
                "target_image_id": self.bundle.manifest[rec.target_image_index].id,
            })
        return out

    def query_scores(self, request: SearchRequest) -> np.ndarray:
        """Similarity of the request against every indexed image."""
        if request.raw_triple is not None:
            from palir.model import fuse_text

            txt, mdd, nnp = request.raw_triple
            palette = request.palette if request.palette is not None else PaletteQuery(())
            l_plus, _ = fuse_text(txt, mdd, nnp, palette, self.params)
        else:
            if not (0 <= request.query_id < len(self.query_indices)):
                raise ServiceError(f"unknown query_id {request.query_id}")
            rec_idx = self.query_indices[request.query_id]
            l_plus, _ = query_vector(
                self.bundle, self.params, rec_idx, palette=request.palette
            )
        return score_corpus(l_plus, self.index)

    def search(self, request: SearchRequest) -> SearchResponse:
        start = time.perf_counter()
        scores = self.query_scores(request)
        order = rank(scores)
        top = order[: min(request.k, len(self.corpus_indices))]
        results = [
            SearchResult(
                image_id=self.bundle.manifest[self.corpus_indices[j]].id,
                score=float(scores[j]),
                rank=pos + 1,
            )
            for pos, j in enumerate(top)
        ]
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        return SearchResponse(results=results, timing_ms=elapsed_ms)

    def image_bytes(self, image_id: str) -> tuple[bytes, str]:
        """Image file contents by record id, or a generated swatch PNG."""
        record = next((r for r in self.bundle.manifest if r.id == image_id), None)
        if record is None:
            raise ServiceError(f"unknown image id {image_id!r}")
        if self.images_dir is not None:
            for suffix in ("", ".png", ".jpg", ".jpeg"):
                candidate = self.images_dir / f"{image_id}{suffix}"
                if candidate.is_file():
                    media = "image/jpeg" if candidate.suffix in (".jpg", ".jpeg") else "image/png"
                    return candidate.read_bytes(), media
        return _swatch_png(record.palette), "image/png"


def _swatch_png(palette: PaletteQuery, width: int = 240, height: int = 80) -> bytes:
    """Vertical color bands standing in for a photo (synthetic bundles)."""
    from PIL import Image

    colors = [(c.r, c.g, c.b) for c in palette.colors] or [(180, 180, 180)]
    img = Image.new("RGB", (width, height))
    band = width // len(colors)
    px = img.load()
    for x in range(width):
        color = colors[min(x // band, len(colors) - 1)]
        for y in range(height):
            px[x, y] = color
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def create_app(service: SearchService, ui_dir: str | Path | None = None):
    """FastAPI application over a warmed service."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import HTMLResponse, JSONResponse, Response
    from pydantic import BaseModel, Field

    class SearchBody(BaseModel):
        query_id: int
        palette: list[str] | None = Field(default=None)
        k: int = 10

    app = FastAPI(title="palette retrieval service")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "indexed": len(service.corpus_indices)}

    @app.get("/api/queries")
    def queries():
        return service.list_queries()

    @app.post("/api/search")
    def search(body: SearchBody):
        try:
            palette = (
                PaletteQuery.from_hex(body.palette)
                if body.palette is not None else None
            )
            request = SearchRequest(query_id=body.query_id, palette=palette, k=body.k)
            response = service.search(request)
        except (ServiceError, ValueError) as e:
            status = 404 if "unknown query_id" in str(e) else 400
            raise HTTPException(status_code=status, detail=str(e))
        return JSONResponse({
            "results": [
                {"image_id": r.image_id, "score": r.score, "rank": r.rank}
                for r in response.results
            ],
            "timing_ms": response.timing_ms,
        })

    @app.get("/api/image/{image_id}")
    def image(image_id: str):
        try:
            payload, media = service.image_bytes(image_id)
        except ServiceError as e:
            raise HTTPException(status_code=404, detail=str(e))
        return Response(content=payload, media_type=media)

    ui_path = Path(ui_dir) if ui_dir else None
    if ui_path and ui_path.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_path, html=True), name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return (
                "<html><body><h1>Palette retrieval service</h1>"
                "<p>No UI assets configured. The JSON API lives under /api; "
                "see /api/queries to start.</p></body></html>"
            )

    return app
