"""Numba implementations of the hot loops. Signatures mirror ``_np``."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def scan_lines(fg, edge):
    h, w = fg.shape
    hmap = np.zeros((h, w), dtype=np.int32)
    vmap = np.zeros((h, w), dtype=np.int32)
    nid = 0
    for y in range(h):
        open_ = False
        for x in range(w):
            if not fg[y, x]:
                open_ = False
                continue
            if not open_:
                nid += 1
                open_ = True
            hmap[y, x] = nid
            if edge[y, x]:
                open_ = False
    n_h = nid
    for x in range(w):
        open_ = False
        for y in range(h):
            if not fg[y, x]:
                open_ = False
                continue
            if not open_:
                nid += 1
                open_ = True
            vmap[y, x] = nid
            if edge[y, x]:
                open_ = False
    return hmap, vmap, n_h, nid - n_h


@njit(cache=True, inline="always")
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True, nogil=True)
def group_lines(hmap, vmap, n_lines):
    h, w = hmap.shape
    parent = np.arange(n_lines + 1, dtype=np.int32)
    for y in range(h):
        for x in range(w):
            a = hmap[y, x]
            if a == 0:
                continue
            ra = _find(parent, a)
            rb = _find(parent, vmap[y, x])
            if ra != rb:
                if ra < rb:
                    parent[rb] = ra
                else:
                    parent[ra] = rb
    comp = np.zeros(n_lines + 1, dtype=np.int32)
    out = np.zeros((h, w), dtype=np.int32)
    nxt = 0
    for y in range(h):
        for x in range(w):
            a = hmap[y, x]
            if a == 0:
                continue
            r = _find(parent, a)
            if comp[r] == 0:
                nxt += 1
                comp[r] = nxt
            out[y, x] = comp[r]
    return out


@njit(cache=True, inline="always")
def _bilinear(img, y, x):
    h, w = img.shape
    if y < 0.0:
        y = 0.0
    elif y > h - 1:
        y = float(h - 1)
    if x < 0.0:
        x = 0.0
    elif x > w - 1:
        x = float(w - 1)
    y0 = int(np.floor(y))
    x0 = int(np.floor(x))
    y1 = min(y0 + 1, h - 1)
    x1 = min(x0 + 1, w - 1)
    fy = y - y0
    fx = x - x0
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bot


@njit(cache=True, nogil=True)
def nms_suppress(edges, nx, ny):
    h, w = edges.shape
    src = edges.astype(np.float64)
    out = np.zeros((h, w), dtype=edges.dtype)
    for y in range(h):
        for x in range(w):
            v = src[y, x]
            if v <= 0.0:
                continue
            a = _bilinear(src, y + ny[y, x], x + nx[y, x])
            b = _bilinear(src, y - ny[y, x], x - nx[y, x])
            if v >= a and v >= b:
                out[y, x] = edges[y, x]
    return out


@njit(cache=True, nogil=True)
def greedy_match(pred, gt, off_y, off_x, off_d2):
    """Greedy one-to-one matching by increasing squared distance.

    Offsets arrive sorted by (d2, dy, dx); candidates are then ordered by
    (d2, pred raster index, gt raster index) through one stable sort on d2.
    """
    h, w = pred.shape
    n_off = off_y.shape[0]
    count = 0
    for y in range(h):
        for x in range(w):
            if not pred[y, x]:
                continue
            for k in range(n_off):
                yy = y + off_y[k]
                xx = x + off_x[k]
                if 0 <= yy < h and 0 <= xx < w and gt[yy, xx]:
                    count += 1
    cp = np.empty(count, dtype=np.int64)
    cg = np.empty(count, dtype=np.int64)
    cd = np.empty(count, dtype=np.int64)
    i = 0
    for y in range(h):
        for x in range(w):
            if not pred[y, x]:
                continue
            for k in range(n_off):
                yy = y + off_y[k]
                xx = x + off_x[k]
                if 0 <= yy < h and 0 <= xx < w and gt[yy, xx]:
                    cp[i] = y * w + x
                    cg[i] = yy * w + xx
                    cd[i] = off_d2[k]
                    i += 1
    order = np.argsort(cd, kind="mergesort")
    used_p = np.zeros(h * w, dtype=np.bool_)
    used_g = np.zeros(h * w, dtype=np.bool_)
    matched = 0
    for j in range(count):
        c = order[j]
        p = cp[c]
        g = cg[c]
        if used_p[p] or used_g[g]:
            continue
        used_p[p] = True
        used_g[g] = True
        matched += 1
    return matched
