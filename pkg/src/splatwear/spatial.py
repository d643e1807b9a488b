"""Uniform spatial hash grid for exact nearest-neighbor queries.

The grid is a performance structure only: a query ranks the occupied
cells by Chebyshev distance from its own cell and scans them band by
band, stopping once no unscanned band can hold a closer point, so the
returned neighbor is exact for any cell size. Ties break toward the
lower point index.
"""

from __future__ import annotations

import numpy as np


def median_neighbor_spacing(points):
    """Median nearest-neighbor distance, brute-forced on a deterministic
    subsample for large clouds."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        return 1.0
    sample = points if n <= 512 else points[:: max(1, n // 512)][:512]
    dists = np.empty(sample.shape[0])
    for i, p in enumerate(sample):
        d2 = np.einsum("nk,nk->n", points - p, points - p)
        d2[d2 == 0.0] = np.inf
        dists[i] = np.sqrt(d2.min())
    med = float(np.median(dists))
    return med if med > 0 and np.isfinite(med) else 1.0


class SpatialHashGrid:
    def __init__(self, points, cell_size=None):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] == 0:
            raise ValueError("empty point set")
        if cell_size is None:
            cell_size = 2.0 * median_neighbor_spacing(self.points)
        self.cell_size = float(cell_size)
        self.origin = self.points.min(axis=0)
        cells = np.floor((self.points - self.origin) / self.cell_size).astype(np.int64)
        buckets = {}
        for idx, key in enumerate(map(tuple, cells)):
            buckets.setdefault(key, []).append(idx)
        self._bucket_points = [np.array(v, dtype=np.int64) for v in buckets.values()]
        self._occupied = np.array(list(buckets.keys()), dtype=np.int64)

    def nearest(self, query):
        """Index of the exact nearest stored point to a single query."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        qcell = np.floor((q - self.origin) / self.cell_size).astype(np.int64)
        cheb = np.max(np.abs(self._occupied - qcell), axis=1)
        order = np.argsort(cheb, kind="stable")
        best_d2 = np.inf
        best_idx = -1
        for o in order:
            band = cheb[o]
            # Cells at Chebyshev distance k hold points no closer than
            # (k - 1) * cell_size; strict comparison so exact-distance ties
            # in this band still get scanned for the index tie-break.
            if best_idx >= 0 and best_d2 < (max(band - 1, 0) * self.cell_size) ** 2:
                break
            bucket = self._bucket_points[o]
            pts = self.points[bucket]
            d2 = np.einsum("nk,nk->n", pts - q, pts - q)
            j = int(np.argmin(d2))
            if d2[j] < best_d2 or (d2[j] == best_d2 and bucket[j] < best_idx):
                best_d2 = float(d2[j])
                best_idx = int(bucket[j])
        return best_idx

    def nearest_many(self, queries):
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        return np.array([self.nearest(q) for q in queries], dtype=np.int64)
