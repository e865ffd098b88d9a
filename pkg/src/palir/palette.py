"""Automatic palette-query extraction from an image region.

The pipeline mirrors how a person would name the key colors of a masked
region: oversegment the region into small perceptually coherent patches
(SLIC superpixels in combined CIELAB + spatial space), group the patch
colors by perceptual similarity (agglomerative clustering with average
linkage under CIEDE2000), pick one real patch color to represent each
group (the pixel-count-weighted medoid), and keep the dominant groups by
area ratio.

Scale note: clustering is quadratic in the superpixel count, so the
default superpixel target grows with the mask area but is capped to
keep the distance matrix tractable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from palir.color import (
    LabColor,
    SrgbColor,
    ciede2000_pairwise,
    lab_to_srgb,
    srgb_array_to_lab,
    srgb_to_lab,
)

MAX_PALETTE_COLORS = 5
_DEFAULT_TARGET_CAP = 4000  # keeps the n^2 CIEDE2000 matrix tractable


class PaletteError(ValueError):
    """Raised for invalid palette-pipeline inputs (e.g. an empty mask)."""


@dataclass
class MaskedImage:
    """8-bit RGB pixels plus a boolean region-of-interest mask."""

    pixels: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray    # (H, W) bool

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise PaletteError(f"pixels must be (H, W, 3), got {self.pixels.shape}")
        if self.mask.shape != self.pixels.shape[:2]:
            raise PaletteError(
                f"mask shape {self.mask.shape} != image shape {self.pixels.shape[:2]}"
            )


@dataclass(frozen=True)
class SuperpixelSummary:
    id: int
    mean_color: SrgbColor
    mean_lab: LabColor
    pixel_count: int


@dataclass
class ColorCluster:
    members: list[int]            # superpixel ids
    area_ratio: float
    representative: LabColor | None = None


@dataclass(frozen=True)
class PaletteQuery:
    """Ordered palette of at most five colors (largest area first)."""

    colors: tuple[SrgbColor, ...] = ()

    def __post_init__(self) -> None:
        if len(self.colors) > MAX_PALETTE_COLORS:
            raise PaletteError(
                f"palette has {len(self.colors)} colors, max is {MAX_PALETTE_COLORS}"
            )

    def __len__(self) -> int:
        return len(self.colors)

    def to_hex(self) -> list[str]:
        return [c.to_hex() for c in self.colors]

    @classmethod
    def from_hex(cls, hex_colors: list[str]) -> "PaletteQuery":
        return cls(tuple(SrgbColor.from_hex(h) for h in hex_colors))


@dataclass(frozen=True)
class PaletteConfig:
    theta_cluster: float = 20.0   # CIEDE2000 merge threshold
    theta_min: float = 0.05       # minimum area ratio per kept cluster
    theta_cum: float = 0.90       # cumulative area budget
    max_colors: int = 5
    compactness: float = 10.0     # SLIC spatial weight
    iterations: int = 10
    n_target: int | None = None   # None: one superpixel per ~100 mask pixels
    seed: int = 0                 # reserved; the pipeline is deterministic


def default_superpixel_target(mask_area: int) -> int:
    """One superpixel per ~100 pixels, floor 1, capped for tractability."""
    return max(1, min(_DEFAULT_TARGET_CAP, mask_area // 100))


def slic_superpixels(
    img: MaskedImage,
    n_target: int,
    compactness: float = 10.0,
    iterations: int = 10,
) -> tuple[list[SuperpixelSummary], np.ndarray]:
    """Segment the masked region into superpixels.

    Returns the per-superpixel summaries and the (H, W) label image
    (-1 outside the mask). Every masked pixel is assigned to exactly one
    superpixel; the produced count may deviate from ``n_target``.
    """
    if n_target < 1:
        raise PaletteError("n_target must be >= 1")
    mask = img.mask
    area = int(mask.sum())
    if area == 0:
        raise PaletteError("empty region")

    lab_img = srgb_array_to_lab(img.pixels)
    ys, xs = np.nonzero(mask)
    step = max(1.0, np.sqrt(area / n_target))

    centers = _seed_centers(mask, ys, xs, step)
    centers_lab = lab_img[centers[:, 0], centers[:, 1]]
    cy = centers[:, 0].astype(np.float64)
    cx = centers[:, 1].astype(np.float64)
    clab = centers_lab.copy()

    h, w = mask.shape
    m2_over_s2 = (compactness / step) ** 2
    labels = np.full((h, w), -1, dtype=np.int64)
    reach = int(np.ceil(2.0 * step))
    win = 2 * reach + 1

    # pad once so every search window is the same size; padding is
    # masked out and never assigned
    pad_lab = np.full((h + 2 * reach, w + 2 * reach, 3), np.inf)
    pad_lab[reach:reach + h, reach:reach + w] = lab_img
    pad_mask = np.zeros((h + 2 * reach, w + 2 * reach), dtype=bool)
    pad_mask[reach:reach + h, reach:reach + w] = mask
    offsets = np.arange(win)

    chunk = max(1, int(2_000_000 // (win * win)))  # bound gather memory

    for _ in range(iterations):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        # window anchor per center, in image coordinates
        ty = np.clip(np.round(cy).astype(np.int64), 0, h - 1)
        tx = np.clip(np.round(cx).astype(np.int64), 0, w - 1)
        for c0 in range(0, len(cy), chunk):
            c1 = min(c0 + chunk, len(cy))
            rows = ty[c0:c1, None] + offsets     # padded row ids, (C, win)
            cols = tx[c0:c1, None] + offsets
            win_lab = pad_lab[rows[:, :, None], cols[:, None, :]]
            win_ok = pad_mask[rows[:, :, None], cols[:, None, :]]
            d2 = np.where(
                win_ok,
                ((win_lab - clab[c0:c1, None, None, :]) ** 2).sum(-1),
                np.inf,
            )
            yy = rows[:, :, None] - reach - cy[c0:c1, None, None]
            xx = cols[:, None, :] - reach - cx[c0:c1, None, None]
            d2 += np.where(win_ok, (yy ** 2 + xx ** 2) * m2_over_s2, 0.0)

            for k in range(c0, c1):
                y0, x0 = ty[k] - reach, tx[k] - reach
                sy0, sx0 = max(0, -y0), max(0, -x0)
                sy1 = win - max(0, y0 + win - h)
                sx1 = win - max(0, x0 + win - w)
                sub = d2[k - c0, sy0:sy1, sx0:sx1]
                view_best = best[y0 + sy0:y0 + sy1, x0 + sx0:x0 + sx1]
                better = sub < view_best
                view_best[better] = sub[better]
                labels[y0 + sy0:y0 + sy1, x0 + sx0:x0 + sx1][better] = k

        _assign_strays(labels, best, mask, lab_img, cy, cx, clab, m2_over_s2)

        # recompute centers; drop centers that lost every pixel
        flat = labels[ys, xs]
        counts = np.bincount(flat, minlength=len(cy))
        keep = counts > 0
        sums_y = np.bincount(flat, weights=ys, minlength=len(cy))
        sums_x = np.bincount(flat, weights=xs, minlength=len(cy))
        lab_at = lab_img[ys, xs]
        new_lab = np.stack(
            [np.bincount(flat, weights=lab_at[:, i], minlength=len(cy)) for i in range(3)],
            axis=-1,
        )
        prev_cy, prev_cx, prev_clab = cy, cx, clab
        cy = (sums_y[keep] / counts[keep])
        cx = (sums_x[keep] / counts[keep])
        clab = new_lab[keep] / counts[keep][:, None]
        if not keep.all():
            remap = np.cumsum(keep) - 1
            labels[mask] = remap[labels[mask]]
        elif (
            np.array_equal(cy, prev_cy)
            and np.array_equal(cx, prev_cx)
            and np.array_equal(clab, prev_clab)
        ):
            # exact fixpoint: every further iteration reproduces these
            # labels, so stopping changes nothing
            break

    labels = _enforce_connectivity(labels, mask)
    labels = _relabel_by_scan_order(labels, mask)
    summaries = _summarize(img.pixels, mask, labels)
    return summaries, labels


def _seed_centers(
    mask: np.ndarray, ys: np.ndarray, xs: np.ndarray, step: float
) -> np.ndarray:
    """Grid seeds over the mask bounding box, snapped into the mask."""
    y_min, y_max = ys.min(), ys.max()
    x_min, x_max = xs.min(), xs.max()
    gy = np.arange(y_min + step / 2.0, y_max + 1.0, step)
    gx = np.arange(x_min + step / 2.0, x_max + 1.0, step)
    if len(gy) == 0:
        gy = np.array([(y_min + y_max) / 2.0])
    if len(gx) == 0:
        gx = np.array([(x_min + x_max) / 2.0])
    grid = np.stack(np.meshgrid(gy, gx, indexing="ij"), axis=-1).reshape(-1, 2)

    tree = cKDTree(np.column_stack([ys, xs]))
    _, nearest = tree.query(grid)
    seeds = np.column_stack([ys[nearest], xs[nearest]])
    # collapse duplicates while keeping first-seen order
    _, first = np.unique(seeds[:, 0].astype(np.int64) * mask.shape[1] + seeds[:, 1],
                         return_index=True)
    return seeds[np.sort(first)]


def _assign_strays(
    labels: np.ndarray,
    best: np.ndarray,
    mask: np.ndarray,
    lab_img: np.ndarray,
    cy: np.ndarray,
    cx: np.ndarray,
    clab: np.ndarray,
    m2_over_s2: float,
) -> None:
    """Assign mask pixels missed by every window to their global argmin center."""
    stray = mask & (labels < 0)
    if not stray.any():
        return
    sy, sx = np.nonzero(stray)
    d_lab = ((lab_img[sy, sx][:, None, :] - clab[None, :, :]) ** 2).sum(axis=-1)
    d_sp = (sy[:, None] - cy[None, :]) ** 2 + (sx[:, None] - cx[None, :]) ** 2
    d2 = d_lab + d_sp * m2_over_s2
    pick = np.argmin(d2, axis=1)
    labels[sy, sx] = pick
    best[sy, sx] = d2[np.arange(len(pick)), pick]


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def _enforce_connectivity(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Merge disconnected fragments of each superpixel into a neighbor.

    The largest connected component keeps the label; every other
    fragment adopts the adjacent label it shares the longest boundary
    with. A fragment with no in-mask neighbor (an isolated mask island)
    becomes its own new superpixel.
    """
    labels = labels.copy()
    next_label = int(labels.max()) + 1
    padded = np.full((labels.shape[0] + 2, labels.shape[1] + 2), -1, dtype=labels.dtype)

    for k in np.unique(labels[mask]):
        region = labels == k
        comps, n_comp = ndimage.label(region, structure=_FOUR_CONN)
        if n_comp <= 1:
            continue
        sizes = np.bincount(comps.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1  # ties: lowest component id
        for c in range(1, n_comp + 1):
            if c == keep:
                continue
            frag = comps == c
            padded[1:-1, 1:-1] = np.where(mask & ~frag, labels, -1)
            fy, fx = np.nonzero(frag)
            neighbors = np.concatenate([
                padded[fy, fx + 1], padded[fy + 2, fx + 1],
                padded[fy + 1, fx], padded[fy + 1, fx + 2],
            ])
            neighbors = neighbors[(neighbors >= 0) & (neighbors != k)]
            if len(neighbors) == 0:
                labels[frag] = next_label
                next_label += 1
            else:
                counts = np.bincount(neighbors)
                labels[frag] = int(np.argmax(counts))  # ties: lowest label
    return labels


def _relabel_by_scan_order(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    flat = labels[mask]
    _, first = np.unique(flat, return_index=True)
    order = flat[np.sort(first)]
    remap = np.empty(int(labels.max()) + 1, dtype=np.int64)
    remap[order] = np.arange(len(order))
    out = labels.copy()
    out[mask] = remap[flat]
    return out


def _summarize(
    pixels: np.ndarray, mask: np.ndarray, labels: np.ndarray
) -> list[SuperpixelSummary]:
    flat = labels[mask]
    rgb = pixels[mask].astype(np.float64)
    n = int(flat.max()) + 1
    counts = np.bincount(flat, minlength=n)
    means = np.stack(
        [np.bincount(flat, weights=rgb[:, i], minlength=n) for i in range(3)],
        axis=-1,
    ) / counts[:, None]
    rounded = np.clip(np.round(means), 0, 255).astype(int)
    summaries = []
    for k in range(n):
        color = SrgbColor(*(int(v) for v in rounded[k]))
        summaries.append(
            SuperpixelSummary(
                id=k,
                mean_color=color,
                mean_lab=srgb_to_lab(color),
                pixel_count=int(counts[k]),
            )
        )
    return summaries


def average_linkage_cluster(
    summaries: list[SuperpixelSummary], theta_cluster: float
) -> list[ColorCluster]:
    """Agglomerate superpixels by mean CIEDE2000 distance.

    Repeatedly merges the closest pair of clusters (average linkage:
    the mean of all cross-pair distances) while that distance is at
    most ``theta_cluster``. Area ratios come from member pixel counts.
    Representatives are left unset; see :func:`cluster_representative`.
    """
    if not summaries:
        raise PaletteError("no superpixels to cluster")
    n = len(summaries)
    labs = np.array([[s.mean_lab.L, s.mean_lab.a, s.mean_lab.b] for s in summaries])
    total_pixels = sum(s.pixel_count for s in summaries)

    dist = ciede2000_pairwise(labs)
    np.fill_diagonal(dist, np.inf)
    sizes = np.ones(n)                      # superpixels per cluster
    members: list[list[int] | None] = [[s.id] for s in summaries]
    active = np.ones(n, dtype=bool)

    # Nearest-neighbor cache per row; ties resolve to the lowest index,
    # matching a row-major scan of the full matrix.
    row_min_idx = np.argmin(dist, axis=1)
    row_min_val = dist[np.arange(n), row_min_idx]

    n_active = n
    while n_active > 1:
        i = int(np.argmin(row_min_val))
        d_min = row_min_val[i]
        if d_min > theta_cluster:
            break
        j = int(row_min_idx[i])
        if i > j:
            i, j = j, i
        # average-linkage (UPGMA) update against every other cluster
        others = active.copy()
        others[i] = others[j] = False
        new_row = (sizes[i] * dist[i] + sizes[j] * dist[j]) / (sizes[i] + sizes[j])
        dist[i, others] = new_row[others]
        dist[others, i] = new_row[others]
        sizes[i] += sizes[j]
        members[i] = members[i] + members[j]  # type: ignore[operator]
        members[j] = None
        active[j] = False
        n_active -= 1
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        dist[i, i] = np.inf
        row_min_val[j] = np.inf

        row_min_idx[i] = np.argmin(dist[i])
        row_min_val[i] = dist[i, row_min_idx[i]]
        stale = others & ((row_min_idx == i) | (row_min_idx == j))
        for k in np.nonzero(stale)[0]:
            row_min_idx[k] = np.argmin(dist[k])
            row_min_val[k] = dist[k, row_min_idx[k]]
        fresher = others & ~stale & (dist[:, i] < row_min_val)
        row_min_idx[fresher] = i
        row_min_val[fresher] = dist[fresher, i]

    by_id = {s.id: s for s in summaries}
    clusters = []
    for mem in members:
        if mem is None:
            continue
        mem = sorted(mem)
        pixel_sum = sum(by_id[s].pixel_count for s in mem)
        clusters.append(ColorCluster(members=mem, area_ratio=pixel_sum / total_pixels))
    return clusters


def cluster_representative(
    cluster: ColorCluster, summaries: list[SuperpixelSummary]
) -> LabColor:
    """Pick the member color minimizing the count-weighted distance sum.

    The cost of candidate s is the sum over the other members k of
    pixel_count(k) * CIEDE2000(color_s, color_k); ties break toward the
    lowest superpixel id.
    """
    if not cluster.members:
        raise PaletteError("empty cluster")
    by_id = {s.id: s for s in summaries}
    ids = sorted(cluster.members)
    labs = np.array(
        [[by_id[i].mean_lab.L, by_id[i].mean_lab.a, by_id[i].mean_lab.b] for i in ids]
    )
    counts = np.array([by_id[i].pixel_count for i in ids], dtype=np.float64)
    d = ciede2000_pairwise(labs)
    costs = d @ counts  # self-distance is zero, so including it changes nothing
    best = int(np.argmin(costs))  # argmin takes the first (lowest id) on ties
    return by_id[ids[best]].mean_lab


def select_palette(
    clusters: list[ColorCluster],
    theta_min: float,
    theta_cum: float,
    max_colors: int = 5,
) -> PaletteQuery:
    """Keep dominant clusters by area ratio, largest first.

    A cluster is kept iff its ratio is at least ``theta_min``, adding it
    keeps the cumulative kept ratio at most ``theta_cum``, and fewer
    than ``max_colors`` colors are kept so far. Clusters failing a test
    are skipped, not a stopping point. Hitting ``theta_cum`` exactly
    counts as within budget (up to float accumulation error).
    """
    if max_colors < 1:
        raise PaletteError("max_colors must be >= 1")
    order = sorted(clusters, key=lambda c: -c.area_ratio)
    kept: list[SrgbColor] = []
    cum = 0.0
    for cluster in order:
        if len(kept) >= max_colors:
            break
        if cluster.area_ratio < theta_min:
            continue
        if cum + cluster.area_ratio > theta_cum + 1e-9:
            continue
        if cluster.representative is None:
            raise PaletteError("cluster has no representative color")
        kept.append(lab_to_srgb(cluster.representative))
        cum += cluster.area_ratio
    return PaletteQuery(tuple(kept))


def extract_palette(img: MaskedImage, config: PaletteConfig = PaletteConfig()) -> PaletteQuery:
    """Full pipeline: superpixels -> clusters -> representatives -> selection."""
    area = int(img.mask.sum())
    if area == 0:
        raise PaletteError("empty region")
    n_target = config.n_target or default_superpixel_target(area)
    summaries, _ = slic_superpixels(
        img, n_target, compactness=config.compactness, iterations=config.iterations
    )
    clusters = average_linkage_cluster(summaries, config.theta_cluster)
    for cluster in clusters:
        cluster.representative = cluster_representative(cluster, summaries)
    return select_palette(
        clusters, config.theta_min, config.theta_cum, config.max_colors
    )
