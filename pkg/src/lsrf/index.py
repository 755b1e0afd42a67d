"""Uniform cell grid over rescaled site locations for kernel-support queries."""
from __future__ import annotations

import itertools

import numpy as np


class CellIndex:
    """Buckets points of ``[0,1]^d`` into cubes of edge ``>= radius``.

    ``query(u)`` returns every point within sup-distance ``radius`` of ``u``
    (plus some farther ones), ordered by cell in row-major order and by
    point index within a cell.

    Parameters
    ----------
    points : (n, d) array
        Locations in the unit cube.
    radius : float
        Sup-norm search radius (``C1 * h`` for kernel sums).
    """

    def __init__(self, points: np.ndarray, radius: float):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.d = pts.shape[1]
        # slight inflation keeps boundary ties inside the 3^d neighbourhood
        self.edge = min(1.0, radius * (1.0 + 1e-9))
        self.n_cells = int(np.floor(1.0 / self.edge)) + 1
        cells = self._cell(pts)
        self.keys = np.ravel_multi_index(tuple(cells.T), (self.n_cells,) * self.d) if len(pts) else np.zeros(0, int)
        self.order = np.argsort(self.keys, kind="stable")
        sorted_keys = self.keys[self.order]
        n_total = self.n_cells ** self.d
        self.starts = np.searchsorted(sorted_keys, np.arange(n_total), side="left")
        self.stops = np.searchsorted(sorted_keys, np.arange(n_total), side="right")
        self._offsets = np.array(list(itertools.product((-1, 0, 1), repeat=self.d)))

    def _cell(self, pts):
        return np.clip(np.floor(pts / self.edge).astype(int), 0, self.n_cells - 1)

    def query(self, u) -> np.ndarray:
        c = self._cell(np.asarray(u, dtype=float).reshape(1, -1))[0]
        nb = c + self._offsets
        ok = np.all((nb >= 0) & (nb < self.n_cells), axis=1)
        keys = np.sort(np.ravel_multi_index(tuple(nb[ok].T), (self.n_cells,) * self.d))
        parts = [self.order[self.starts[k]:self.stops[k]] for k in keys]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)
