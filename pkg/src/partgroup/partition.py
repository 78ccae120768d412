"""Detection-free instance partition.

Rows and columns of the part segmentation are scanned into line segments
that stop at background and at edge points; lines sharing a pixel are joined
into regions, and small or single-part regions are merged into neighbouring
person regions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .edges import DEFAULT_EDGE_THRESHOLD, binarize_edges, nms_thin
from .errors import ValidationError
from .raster import as_edge_grid, as_instance_grid, as_label_grid, as_prob_grid, check_same_shape

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass(frozen=True)
class PartitionConfig:
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD
    min_area: int = 30
    min_part_labels: int = 2
    # orphans are rejected regions with no accepted region reachable
    drop_orphans: bool = False

    def __post_init__(self):
        if not 0.0 <= self.edge_threshold <= 1.0:
            raise ValidationError("edge_threshold must lie in [0, 1]")
        if self.min_area < 0:
            raise ValidationError("min_area must be >= 0")
        if self.min_part_labels < 1:
            raise ValidationError("min_part_labels must be >= 1")

    def to_dict(self) -> dict:
        return {"edge_threshold": self.edge_threshold, "min_area": self.min_area,
                "min_part_labels": self.min_part_labels, "drop_orphans": self.drop_orphans}


@dataclass(frozen=True)
class LineSegment:
    id: int
    orientation: str
    index: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def _segments(idmap, orientation):
    # idmap is oriented so that lines run along axis 1
    ys, xs = np.nonzero(idmap)
    ids = idmap[ys, xs]
    order = np.argsort(ids, kind="stable")
    ids, ys, xs = ids[order], ys[order], xs[order]
    uniq, first, counts = np.unique(ids, return_index=True, return_counts=True)
    last = first + counts - 1
    return [LineSegment(int(i), orientation, int(ys[f]), int(xs[f]), int(xs[l]))
            for i, f, l in zip(uniq, first, last)]


@dataclass(frozen=True)
class LineSet:
    """Horizontal and vertical line ids per pixel (0 on background)."""

    hmap: np.ndarray
    vmap: np.ndarray
    n_horizontal: int
    n_vertical: int

    @property
    def n_lines(self) -> int:
        return self.n_horizontal + self.n_vertical

    @cached_property
    def horizontal(self) -> list[LineSegment]:
        return _segments(self.hmap, HORIZONTAL)

    @cached_property
    def vertical(self) -> list[LineSegment]:
        return _segments(self.vmap.T, VERTICAL)


@dataclass
class Region:
    id: int
    area: int
    part_hist: dict[int, int]
    contacts: dict[int, int] = field(default_factory=dict)
    # contacts whose neighbour pixel lies left of or above this region's pixel
    back_contacts: dict[int, int] = field(default_factory=dict)
    accepted: bool = False

    @property
    def n_labels(self) -> int:
        return sum(1 for v in self.part_hist.values() if v > 0)


@dataclass(frozen=True)
class ParsingResult:
    instances: np.ndarray
    parts: np.ndarray
    regions: list[Region]

    @property
    def n_instances(self) -> int:
        return len(self.regions)


def decode_lines(parts, edges) -> LineSet:
    """Scan rows left-to-right and columns top-to-bottom into line segments.

    Background pixels belong to no line. A line starts at a foreground pixel
    that follows background, an edge point or the border; an edge point is
    the last pixel of its line.
    """
    parts = as_label_grid(parts)
    edges = as_edge_grid(edges)
    check_same_shape(parts, edges, what="parts and edges")
    hmap, vmap, n_h, n_v = kernels.scan_lines(parts > 0, edges)
    return LineSet(hmap, vmap, int(n_h), int(n_v))


def group_lines(lines: LineSet) -> np.ndarray:
    """Connected components of the line graph, numbered in row-major first-pixel order."""
    return kernels.group_lines(lines.hmap, lines.vmap, lines.n_lines)


def region_stats(raw, parts):
    """Array form of the region statistics.

    Returns ``(area, hist, pairs, counts, back_counts)``: ``area[i]`` and
    ``hist[i, k]`` are indexed by region id (row 0 unused); ``pairs`` holds
    each ordered pair ``(a, b)`` of 4-adjacent regions, ``counts`` the number
    of adjacent pixel pairs between them and ``back_counts`` how many of those
    have the ``b`` pixel left of or above the ``a`` pixel.
    """
    n = int(raw.max()) if raw.size else 0
    k = int(parts.max()) + 1 if parts.size else 1
    area = np.bincount(raw.ravel(), minlength=n + 1).astype(np.int64)
    hist = np.bincount(raw.ravel().astype(np.int64) * k + parts.ravel(),
                       minlength=(n + 1) * k).reshape(n + 1, k)
    hist[:, 0] = 0
    hist[0] = 0
    a = np.concatenate([raw[:, :-1].ravel(), raw[:-1, :].ravel()]).astype(np.int64)
    b = np.concatenate([raw[:, 1:].ravel(), raw[1:, :].ravel()]).astype(np.int64)
    keep = (a > 0) & (b > 0) & (a != b)
    a, b = a[keep], b[keep]  # a is left of / above b
    m = n + 1
    keys, counts = np.unique(np.concatenate([a * m + b, b * m + a]), return_counts=True)
    back = np.bincount(np.searchsorted(keys, b * m + a), minlength=keys.size)
    pairs = np.stack([keys // m, keys % m], axis=1)
    return area, hist, pairs, counts, back


def build_regions(raw, parts) -> list[Region]:
    """One :class:`Region` per raw id with area, part histogram and contacts."""
    raw = as_instance_grid(raw)
    parts = as_label_grid(parts)
    check_same_shape(raw, parts, what="raw instances and parts")
    area, hist, pairs, counts, back = region_stats(raw, parts)
    regions = []
    for rid in range(1, area.size):
        row = hist[rid]
        nz = np.nonzero(row)[0]
        regions.append(Region(rid, int(area[rid]), {int(c): int(row[c]) for c in nz}))
    for (a, b), c, bc in zip(pairs.tolist(), counts.tolist(), back.tolist()):
        regions[a - 1].contacts[b] = c
        if bc:
            regions[a - 1].back_contacts[b] = bc
    return regions


def is_person_region(region: Region, cfg: PartitionConfig) -> bool:
    return region.n_labels >= cfg.min_part_labels and region.area > cfg.min_area


def _renumber(grid):
    """Relabel positive ids 1..M in row-major order of first pixel."""
    flat = grid.ravel()
    fg = flat > 0
    ids = flat[fg]
    out = np.zeros_like(flat)
    if ids.size:
        uniq, first = np.unique(ids, return_index=True)
        rank = np.empty(uniq.size, dtype=flat.dtype)
        rank[np.argsort(first, kind="stable")] = np.arange(1, uniq.size + 1, dtype=flat.dtype)
        out[fg] = rank[np.searchsorted(uniq, ids)]
    return out.reshape(grid.shape)


def merge_regions(regions: list[Region], raw, parts, cfg: PartitionConfig = PartitionConfig()):
    """Accept person regions and fold every other region into an accepted neighbour.

    Acceptance needs at least ``cfg.min_part_labels`` distinct part labels and
    an area strictly above ``cfg.min_area``. In each round every unresolved
    region that touches a resolved group joins the group with the largest
    shared boundary. Ties go to the group reached through more left/up
    neighbours, because an edge point ends the line it belongs to, then to
    the larger group and finally the smaller group id. Rounds
    repeat until nothing changes, so merges propagate through chains of small
    regions. Regions that never reach an accepted one stay as instances
    unless ``cfg.drop_orphans`` is set. Marks ``Region.accepted`` in place.
    """
    raw = as_instance_grid(raw)
    parts = as_label_grid(parts)
    check_same_shape(raw, parts, what="raw instances and parts")
    n = len(regions)
    if n == 0:
        return np.zeros(raw.shape, dtype=np.int32)

    owner = np.zeros(n + 1, dtype=np.int64)  # 0 = unresolved
    group_area = {}
    for r in regions:
        r.accepted = is_person_region(r, cfg)
        if r.accepted:
            owner[r.id] = r.id
            group_area[r.id] = r.area

    pending = [r for r in regions if not r.accepted]
    while pending:
        decisions = []
        for r in pending:
            contact = {}
            back = {}
            for nb, c in r.contacts.items():
                g = owner[nb]
                if g:
                    contact[g] = contact.get(g, 0) + c
                    back[g] = back.get(g, 0) + r.back_contacts.get(nb, 0)
            if contact:
                best = max(contact, key=lambda g: (contact[g], back[g], group_area[g], -g))
                decisions.append((r, best))
        if not decisions:
            break
        # apply after scanning so a round sees a consistent snapshot
        for r, g in decisions:
            owner[r.id] = g
            group_area[g] += r.area
        done = {r.id for r, _ in decisions}
        pending = [r for r in pending if r.id not in done]

    for r in pending:
        owner[r.id] = 0 if cfg.drop_orphans else r.id
    return _renumber(owner[raw].astype(np.int32))


def summarize(instances, parts) -> list[Region]:
    return build_regions(instances, parts)


def partition_edges(parts, edges, cfg: PartitionConfig = PartitionConfig()):
    """Partition from a binary edge grid; returns ``(raw, final)`` instance grids."""
    parts = as_label_grid(parts)
    lines = decode_lines(parts, edges)
    raw = group_lines(lines)
    regions = build_regions(raw, parts)
    final = merge_regions(regions, raw, parts, cfg)
    return raw, final


def partition(parts, edge_prob, cfg: PartitionConfig = PartitionConfig()) -> ParsingResult:
    """Full pipeline: thin, threshold, decode lines, group, merge."""
    parts = as_label_grid(parts)
    edge_prob = as_prob_grid(edge_prob)
    check_same_shape(parts, edge_prob, what="parts and edge map")
    edges = binarize_edges(nms_thin(edge_prob), cfg.edge_threshold)
    _, final = partition_edges(parts, edges, cfg)
    return ParsingResult(final, parts, summarize(final, parts))
