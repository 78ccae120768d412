"""Pure numpy/scipy implementations of the hot loops."""
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


def _line_starts(fg, edge):
    # a run continues from the left neighbour iff that neighbour is foreground
    # and not an edge point
    cont = np.zeros_like(fg)
    cont[:, 1:] = fg[:, :-1] & ~edge[:, :-1]
    return fg & ~cont


def scan_lines(fg, edge):
    fg = np.ascontiguousarray(fg, dtype=bool)
    edge = np.ascontiguousarray(edge, dtype=bool)
    hs = _line_starts(fg, edge)
    hmap = np.cumsum(hs.ravel(), dtype=np.int32).reshape(fg.shape)
    hmap[~fg] = 0
    n_h = int(hs.sum())

    vs = _line_starts(fg.T, edge.T)
    vmap_t = np.cumsum(vs.ravel(), dtype=np.int32).reshape(vs.shape)
    vmap_t[~fg.T] = 0
    vmap = np.ascontiguousarray(vmap_t.T)
    vmap[fg] += n_h
    return hmap, vmap, n_h, int(vs.sum())


def group_lines(hmap, vmap, n_lines):
    fg = hmap > 0
    a = hmap[fg]
    b = vmap[fg]
    graph = coo_matrix((np.ones(a.size, dtype=np.int8), (a, b)),
                       shape=(n_lines + 1, n_lines + 1))
    _, comp = connected_components(graph, directed=False)
    lab = comp[a]
    # renumber components by first pixel in row-major order
    uniq, first = np.unique(lab, return_index=True)
    rank = np.empty(uniq.size, dtype=np.int32)
    rank[np.argsort(first, kind="stable")] = np.arange(1, uniq.size + 1, dtype=np.int32)
    out = np.zeros(hmap.shape, dtype=np.int32)
    out[fg] = rank[np.searchsorted(uniq, lab)]
    return out


def _bilinear(img, y, x):
    h, w = img.shape
    y = np.clip(y, 0.0, h - 1)
    x = np.clip(x, 0.0, w - 1)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = y - y0
    fx = x - x0
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bot


def nms_suppress(edges, nx, ny):
    src = edges.astype(np.float64)
    out = np.zeros_like(edges)
    ys, xs = np.nonzero(src > 0.0)
    if ys.size == 0:
        return out
    dy = ny[ys, xs]
    dx = nx[ys, xs]
    v = src[ys, xs]
    a = _bilinear(src, ys + dy, xs + dx)
    b = _bilinear(src, ys - dy, xs - dx)
    keep = (v >= a) & (v >= b)
    out[ys[keep], xs[keep]] = edges[ys[keep], xs[keep]]
    return out


def greedy_match(pred, gt, off_y, off_x, off_d2):
    h, w = pred.shape
    py, px = np.nonzero(pred)
    cps, cgs, cds = [], [], []
    for dy, dx, d2 in zip(off_y, off_x, off_d2):
        yy = py + dy
        xx = px + dx
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        ok[ok] = gt[yy[ok], xx[ok]]
        cps.append(py[ok] * w + px[ok])
        cgs.append(yy[ok] * w + xx[ok])
        cds.append(np.full(int(ok.sum()), d2, dtype=np.int64))
    if not cps:
        return 0
    cp = np.concatenate(cps).astype(np.int64)
    cg = np.concatenate(cgs).astype(np.int64)
    cd = np.concatenate(cds)
    order = np.lexsort((cg, cp, cd))
    used_p = set()
    used_g = set()
    matched = 0
    for p, g in zip(cp[order].tolist(), cg[order].tolist()):
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        matched += 1
    return matched
