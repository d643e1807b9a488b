"""Independent oracles used across the test suite.

Each one recomputes an answer through a different route than the code
under test: dense solves, brute-force scans, flood fills, and finite
differences. They stay deliberately slow and simple.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve


def brute_force_nearest(points, queries):
    """Exact nearest neighbor by full scan; ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    out = np.empty(queries.shape[0], dtype=np.int64)
    for i, q in enumerate(queries):
        d2 = np.einsum("nk,nk->n", points - q, points - q)
        out[i] = int(np.argmin(d2))  # argmin returns the first minimum
    return out


def central_difference_gradient(fn, x, step=1e-5):
    """Gradient of a scalar function by central differences, any shape."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = fn(x)
        flat[i] = orig - step
        f_minus = fn(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def gradient_relative_error(analytic, numeric):
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)


def laplace_direct_solve(resolution, seeded, seed_values):
    """Dense Laplace solution on a node grid: free nodes equal the average
    of their in-grid 6-neighbors, seeded nodes are Dirichlet constants.

    seeded: (nx, ny, nz) bool; seed_values: (nx, ny, nz, C) with values
    defined at seeded nodes. Returns (nx, ny, nz, C).
    """
    nx, ny, nz = resolution
    n = nx * ny * nz
    seeded = np.asarray(seeded, dtype=bool)
    vals = np.asarray(seed_values, dtype=np.float64)
    channels = vals.shape[-1]
    free = ~seeded.reshape(-1)
    free_ids = np.nonzero(free)[0]
    pos_of = -np.ones(n, dtype=np.int64)
    pos_of[free_ids] = np.arange(free_ids.size)

    def neighbors(flat):
        x, y, z = np.unravel_index(flat, (nx, ny, nz))
        for dx, dy, dz in ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0),
                           (0, 0, -1), (0, 0, 1)):
            qx, qy, qz = x + dx, y + dy, z + dz
            if 0 <= qx < nx and 0 <= qy < ny and 0 <= qz < nz:
                yield np.ravel_multi_index((qx, qy, qz), (nx, ny, nz))

    rows, cols, data = [], [], []
    rhs = np.zeros((free_ids.size, channels))
    flat_vals = vals.reshape(n, channels)
    for r, fid in enumerate(free_ids):
        nbrs = list(neighbors(fid))
        rows.append(r)
        cols.append(r)
        data.append(float(len(nbrs)))
        for nb in nbrs:
            if free[nb]:
                rows.append(r)
                cols.append(pos_of[nb])
                data.append(-1.0)
            else:
                rhs[r] += flat_vals[nb]
    mat = sparse.csr_matrix(
        (data, (rows, cols)), shape=(free_ids.size, free_ids.size)
    )
    out = flat_vals.copy()
    for c in range(channels):
        out[free_ids, c] = spsolve(mat, rhs[:, c])
    return out.reshape(nx, ny, nz, channels)


def flood_fill_enclosed(labels, inner, outer):
    """Enclosure oracle: flood 4-connected inner components; a component is
    enclosed iff it avoids the border and its full 8-neighborhood ring is
    outer-labeled. Returns a list of sorted (row, col) tuples per region."""
    labels = np.asarray(labels)
    h, w = labels.shape
    visited = np.zeros((h, w), dtype=bool)
    regions = []
    for sr in range(h):
        for sc in range(w):
            if labels[sr, sc] != inner or visited[sr, sc]:
                continue
            stack = [(sr, sc)]
            comp = []
            visited[sr, sc] = True
            while stack:
                r, c = stack.pop()
                comp.append((r, c))
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and not visited[rr, cc] \
                            and labels[rr, cc] == inner:
                        visited[rr, cc] = True
                        stack.append((rr, cc))
            comp_set = set(comp)
            touches_border = any(
                r == 0 or c == 0 or r == h - 1 or c == w - 1 for r, c in comp
            )
            if touches_border:
                continue
            ring_ok = True
            for r, c in comp:
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        rr, cc = r + dr, c + dc
                        if (rr, cc) in comp_set:
                            continue
                        if labels[rr, cc] != outer:
                            ring_ok = False
            if ring_ok:
                regions.append(tuple(sorted(comp)))
    return regions


def plane_normal_svd(points):
    """Best-fit plane normal of a point set via SVD (sign-ambiguous)."""
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered)
    return vt[-1]


def confusion_metrics(pred, gt, background=0):
    """Per-class IoU / recall / F1 averaged over classes present in gt."""
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    classes = sorted(c for c in set(gt.tolist()) if c != background)
    ious, recalls, f1s = [], [], []
    for c in classes:
        tp = fp = fn = 0
        for p, g in zip(pred, gt):
            if p == c and g == c:
                tp += 1
            elif p == c:
                fp += 1
            elif g == c:
                fn += 1
        ious.append(tp / (tp + fp + fn) if tp + fp + fn else 0.0)
        recalls.append(tp / (tp + fn) if tp + fn else 0.0)
        f1s.append(2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0)
    if not classes:
        return 0.0, 0.0, 0.0
    return float(np.mean(ious)), float(np.mean(recalls)), float(np.mean(f1s))
