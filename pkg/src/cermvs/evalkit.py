"""Point-cloud distance metrics: accuracy/completeness and precision/recall.

Accuracy is the mean distance from reconstruction points to their nearest
ground-truth point (capped), completeness the reverse; precision and recall
are the percentages under a threshold tau, combined into an F-score.
Nearest neighbors come from a uniform hash grid with cell size tau; the
query expands cell rings until the exact nearest point within the cap is
guaranteed, so results match brute force.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class CloudMetrics:
    accuracy: float  # mm, recon -> gt
    completeness: float  # mm, gt -> recon
    precision: float  # %, recon within tau of gt
    recall: float  # %, gt within tau of recon

    @property
    def overall(self) -> float:
        return 0.5 * (self.accuracy + self.completeness)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0 else 0.0

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "overall": self.overall,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }

    def lines(self) -> str:
        return "".join(f"{k} {v:.6f}\n" for k, v in self.as_dict().items())


class HashGrid:
    """Uniform spatial hash over 3-D points with exact capped NN queries."""

    def __init__(self, points, cell: float):
        if cell <= 0:
            raise InvalidInputError("cell size must be positive")
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] == 0:
            raise InvalidInputError("cannot index an empty cloud")
        self.cell = float(cell)
        keys = np.floor(self.points / self.cell).astype(np.int64)
        order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
        sorted_keys = keys[order]
        boundaries = np.nonzero((np.diff(sorted_keys, axis=0) != 0).any(axis=1))[0] + 1
        starts = np.concatenate([[0], boundaries, [order.size]])
        self.cells = {}
        for a, b in zip(starts[:-1], starts[1:]):
            idx = order[a:b]
            self.cells[tuple(keys[idx[0]])] = idx

    def nearest_distances(self, queries, max_dist: float) -> np.ndarray:
        """Exact distance to the nearest indexed point, capped at max_dist."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        out = np.full(queries.shape[0], max_dist, dtype=np.float64)
        qkeys = np.floor(queries / self.cell).astype(np.int64)
        # Group queries that share a cell so each group expands rings once.
        order = np.lexsort((qkeys[:, 2], qkeys[:, 1], qkeys[:, 0]))
        sk = qkeys[order]
        boundaries = np.nonzero((np.diff(sk, axis=0) != 0).any(axis=1))[0] + 1
        starts = np.concatenate([[0], boundaries, [order.size]])
        max_ring = int(np.ceil(max_dist / self.cell)) + 1
        for a, b in zip(starts[:-1], starts[1:]):
            idx = order[a:b]
            self._query_group(tuple(qkeys[idx[0]]), queries[idx], idx, out, max_dist, max_ring)
        return out

    def _ring_cells(self, center, r: int):
        cx, cy, cz = center
        if r == 0:
            yield (cx, cy, cz)
            return
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) == r:
                        yield (cx + dx, cy + dy, cz + dz)

    def _query_group(self, key, qpts, idx, out, max_dist, max_ring):
        best = np.full(qpts.shape[0], np.inf)
        for r in range(max_ring + 1):
            # After ring r is merged, every point within r*cell of any query
            # has been seen, so distances <= r*cell are final.
            bound = (r - 1) * self.cell
            if r > 0 and (best <= bound).all():
                break
            if bound > max_dist:
                break
            cand = [self.cells[c] for c in self._ring_cells(key, r) if c in self.cells]
            if not cand:
                continue
            cand_pts = self.points[np.concatenate(cand)]
            # Chunk both sides so degenerate inputs (everything in one cell)
            # cannot blow up the pairwise distance matrix.
            for qa in range(0, qpts.shape[0], 512):
                qc = qpts[qa : qa + 512]
                for ca in range(0, cand_pts.shape[0], 4096):
                    cc = cand_pts[ca : ca + 4096]
                    d2 = ((qc[:, None, :] - cc[None, :, :]) ** 2).sum(axis=2).min(axis=1)
                    best[qa : qa + 512] = np.minimum(best[qa : qa + 512], np.sqrt(d2))
        out[idx] = np.minimum(best, max_dist)


def cloud_distance_metrics(recon, gt, tau: float, max_dist: float = 20.0) -> CloudMetrics:
    """Symmetric distance metrics between a reconstruction and ground truth.

    Args:
        recon: (N, 3) reconstructed points (mm).
        gt: (M, 3) ground-truth points (mm).
        tau: Distance threshold for precision/recall and the hash-grid cell
            size.
        max_dist: Cap applied to every nearest-neighbor distance before
            averaging into accuracy/completeness.

    Returns:
        CloudMetrics with accuracy/completeness in mm and precision/recall
        as percentages.
    """
    recon = np.asarray(recon, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if recon.shape[0] == 0 or gt.shape[0] == 0:
        raise InvalidInputError("both clouds must be non-empty")
    if tau <= 0:
        raise InvalidInputError("tau must be positive")
    if max_dist < tau:
        raise InvalidInputError("max_dist must be at least tau")

    d_recon = HashGrid(gt, tau).nearest_distances(recon, max_dist)
    d_gt = HashGrid(recon, tau).nearest_distances(gt, max_dist)
    return CloudMetrics(
        accuracy=float(d_recon.mean()),
        completeness=float(d_gt.mean()),
        precision=100.0 * float((d_recon < tau).mean()),
        recall=100.0 * float((d_gt < tau).mean()),
    )
