"""Edge-map post-processing and inference-time score fusion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .errors import ValidationError
from .raster import Taxonomy, as_prob_grid, as_score_stack

DEFAULT_EDGE_THRESHOLD = 0.2
NMS_SIGMA = 2.0

# Scales used at inference time for the two prediction kinds.
SEGMENTATION_SCALES = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75)
EDGE_SCALES = (1.0, 1.25, 1.5, 1.75)


def edge_normals(edges, sigma: float = NMS_SIGMA, where=None):
    """Unit edge-normal field ``(nx, ny)`` of an edge map.

    The map is Gaussian-smoothed and its Hessian taken by central
    differences. Along a ridge the curvature is small in the tangent
    direction and large across it, so the tangent is the low-curvature
    eigenvector and the normal is that direction turned by 90 degrees.
    Normals are evaluated where ``where`` is true (default: nonzero pixels)
    and left at zero elsewhere.
    """
    edges = np.asarray(edges)
    smooth = gaussian_filter(edges.astype(np.float64), sigma, mode="nearest")
    if where is None:
        where = edges > 0
    ys, xs = np.nonzero(where)
    nx = np.zeros(edges.shape)
    ny = np.zeros(edges.shape)
    if ys.size == 0:
        return nx, ny
    pad = np.pad(smooth, 2, mode="edge")
    y, x = ys + 2, xs + 2
    c = pad[y, x]
    hxx = (pad[y, x + 2] - 2.0 * c + pad[y, x - 2]) / 4.0
    hyy = (pad[y + 2, x] - 2.0 * c + pad[y - 2, x]) / 4.0
    hxy = (pad[y + 1, x + 1] - pad[y + 1, x - 1] - pad[y - 1, x + 1] + pad[y - 1, x - 1]) / 4.0
    upper = 0.5 * np.arctan2(2.0 * hxy, hxx - hyy)  # eigvec of the larger eigenvalue
    half_tr = 0.5 * (hxx + hyy)
    disc = np.hypot(0.5 * (hxx - hyy), hxy)
    tangent = np.where(np.abs(half_tr + disc) > np.abs(half_tr - disc), upper + 0.5 * np.pi, upper)
    normal = tangent + 0.5 * np.pi
    nx[ys, xs] = np.cos(normal)
    ny[ys, xs] = np.sin(normal)
    return nx, ny


def nms_thin(edges) -> np.ndarray:
    """Thin a soft edge map to one-pixel ridges by non-maximal suppression.

    A pixel keeps its value when it is at least as large as both bilinear
    samples one pixel away along its normal; otherwise it becomes 0.
    """
    edges = as_prob_grid(edges)
    nx, ny = edge_normals(edges)
    return kernels.nms_suppress(edges, nx, ny)


def binarize_edges(thinned, threshold: float = DEFAULT_EDGE_THRESHOLD) -> np.ndarray:
    """Edge points are pixels whose activation is strictly larger than ``threshold``."""
    threshold = float(threshold)
    if not 0.0 <= threshold <= 1.0 or np.isnan(threshold):
        raise ValidationError(f"edge threshold must lie in [0, 1], got {threshold}")
    thinned = as_prob_grid(thinned)
    # compare at the grid's own precision so 0.2 stored as float32 is not "larger" than 0.2
    return thinned > np.float32(threshold)


@dataclass(frozen=True)
class FlipLabelPolicy:
    """Label pairs that trade places under a horizontal mirror."""

    pairs: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        pairs = tuple(tuple(int(v) for v in p) for p in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        seen = set()
        for a, b in pairs:
            if a == b or a < 0 or b < 0:
                raise ValidationError(f"bad swap pair ({a}, {b})")
            if a in seen or b in seen:
                raise ValidationError("swap pairs must be disjoint")
            seen.update((a, b))

    @classmethod
    def from_taxonomy(cls, taxonomy: Taxonomy) -> "FlipLabelPolicy":
        return cls(taxonomy.flip_pairs)

    def permutation(self, k: int) -> np.ndarray:
        perm = np.arange(k)
        for a, b in self.pairs:
            if a >= k or b >= k:
                raise ValidationError(f"swap pair ({a}, {b}) out of range for K={k}")
            perm[a], perm[b] = b, a
        return perm


@dataclass(frozen=True)
class FusionInput:
    grid: np.ndarray
    scale: float = 1.0
    flipped: bool = False


def _resize_axis(arr, size, axis):
    n = arr.shape[axis]
    if n == size:
        return arr
    # align-corners-false: pixel centres sit at half-integers
    coords = (np.arange(size) + 0.5) * (n / size) - 0.5
    coords = np.clip(coords, 0.0, n - 1)
    i0 = np.floor(coords).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = coords - i0
    shape = [1] * arr.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    return (1.0 - frac) * np.take(arr, i0, axis=axis) + frac * np.take(arr, i1, axis=axis)


def resize_bilinear(arr, height: int, width: int) -> np.ndarray:
    """Bilinear resampling of the last two axes (float64 result)."""
    out = np.asarray(arr, dtype=np.float64)
    out = _resize_axis(out, height, out.ndim - 2)
    return _resize_axis(out, width, out.ndim - 1)


def fuse_score_maps(inputs, base_dims, policy: FlipLabelPolicy | None = None) -> np.ndarray:
    """Average multi-scale / mirrored predictions at the base resolution.

    Flipped inputs are mirrored back first (stacks also swap left/right
    channels per ``policy``), every input is resampled to ``base_dims`` and
    the results are averaged pixel-wise.
    """
    inputs = list(inputs)
    if not inputs:
        raise ValidationError("fuse_score_maps needs at least one input")
    base_h, base_w = (int(d) for d in base_dims)
    ndims = {np.asarray(inp.grid).ndim for inp in inputs}
    if len(ndims) != 1:
        raise ValidationError("cannot fuse prob grids with score stacks")
    is_stack = ndims.pop() == 3

    planes = []
    k = None
    for inp in inputs:
        if inp.scale <= 0:
            raise ValidationError(f"scale must be positive, got {inp.scale}")
        grid = as_score_stack(inp.grid) if is_stack else as_prob_grid(inp.grid)
        if is_stack:
            if k is None:
                k = grid.shape[0]
            elif grid.shape[0] != k:
                raise ValidationError("score stacks must share their channel count")
        h, w = grid.shape[-2:]
        if abs(h - round(inp.scale * base_h)) > 1 or abs(w - round(inp.scale * base_w)) > 1:
            raise ValidationError(
                f"input of size {h}x{w} does not match scale {inp.scale} of {base_h}x{base_w}")
        arr = grid.astype(np.float64)
        if inp.flipped:
            arr = arr[..., ::-1]
            if is_stack and policy is not None:
                arr = arr[policy.permutation(k)]
        planes.append(resize_bilinear(arr, base_h, base_w))

    # sort before summing so the result does not depend on input order
    stacked = np.sort(np.stack(planes), axis=0)
    fused = (stacked.sum(axis=0) / len(planes)).astype(np.float32)
    if not is_stack:
        fused = np.clip(fused, 0.0, 1.0)
    return fused


def average_predictions(a, b) -> np.ndarray:
    """Element-wise mean of two score stacks of identical shape."""
    a = as_score_stack(a)
    b = as_score_stack(b)
    if a.shape != b.shape:
        raise ValidationError(f"stack shapes differ: {a.shape} vs {b.shape}")
    return ((a.astype(np.float64) + b.astype(np.float64)) / 2.0).astype(np.float32)
