"""Directed acyclic sweeps over an image lattice.

An H x W grid of vertices (id = row*W + col) is swept in one of four
diagonal directions. Each sweep induces a DAG: a vertex's predecessors
are its already-visited axis neighbours, plus the already-visited
diagonal neighbour when 8-connected. The four sweeps together cover the
undirected lattice neighbourhood; axis edges appear in two sweeps per
orientation, diagonal edges in one mirror pair each.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Direction(Enum):
    SE = "SE"
    SW = "SW"
    NW = "NW"
    NE = "NE"


# sweep motion (drow, dcol): +1 moves down/right
_SWEEP = {
    Direction.SE: (1, 1),
    Direction.SW: (1, -1),
    Direction.NW: (-1, -1),
    Direction.NE: (-1, 1),
}

HORIZONTAL_MIRROR = {
    Direction.SE: Direction.SW,
    Direction.SW: Direction.SE,
    Direction.NW: Direction.NE,
    Direction.NE: Direction.NW,
}

VERTICAL_MIRROR = {
    Direction.SE: Direction.NE,
    Direction.NE: Direction.SE,
    Direction.SW: Direction.NW,
    Direction.NW: Direction.SW,
}


@dataclass
class LatticeDag:
    height: int
    width: int
    direction: Direction
    connectivity: int
    topo: np.ndarray  # (H*W,) vertex ids in topological order
    pred_ptr: np.ndarray  # (H*W+1,) CSR offsets
    pred_idx: np.ndarray
    succ_ptr: np.ndarray
    succ_idx: np.ndarray

    @property
    def num_vertices(self):
        return self.height * self.width

    def predecessors(self, v):
        return self.pred_idx[self.pred_ptr[v] : self.pred_ptr[v + 1]]

    def successors(self, v):
        return self.succ_idx[self.succ_ptr[v] : self.succ_ptr[v + 1]]

    def edges(self):
        """All directed edges as (pred, vertex) pairs."""
        out = []
        for v in range(self.num_vertices):
            for u in self.predecessors(v):
                out.append((int(u), v))
        return out


def pred_offsets(direction, connectivity):
    """(drow, dcol) offsets from a vertex to its predecessors."""
    di, dj = _SWEEP[direction]
    offs = [(-di, 0), (0, -dj)]
    if connectivity == 8:
        offs.append((-di, -dj))
    return offs


def build_lattice_dag(height, width, direction, connectivity=8):
    if height < 1 or width < 1:
        raise ValueError(f"lattice dimensions must be positive, got {height}x{width}")
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    n = height * width
    offs = pred_offsets(direction, connectivity)

    preds = []
    for v in range(n):
        i, j = divmod(v, width)
        ps = sorted(
            (i + di) * width + (j + dj)
            for di, dj in offs
            if 0 <= i + di < height and 0 <= j + dj < width
        )
        preds.append(ps)

    pred_ptr = np.zeros(n + 1, np.int32)
    for v in range(n):
        pred_ptr[v + 1] = pred_ptr[v] + len(preds[v])
    pred_idx = np.fromiter(
        (u for ps in preds for u in ps), np.int32, count=int(pred_ptr[-1])
    )

    succs = [[] for _ in range(n)]
    for v in range(n):
        for u in preds[v]:
            succs[u].append(v)
    succ_ptr = np.zeros(n + 1, np.int32)
    for v in range(n):
        succs[v].sort()
        succ_ptr[v + 1] = succ_ptr[v] + len(succs[v])
    succ_idx = np.fromiter(
        (u for ss in succs for u in ss), np.int32, count=int(succ_ptr[-1])
    )

    di, dj = _SWEEP[direction]
    rows = range(height) if di > 0 else range(height - 1, -1, -1)
    cols = list(range(width)) if dj > 0 else list(range(width - 1, -1, -1))
    topo = np.fromiter((i * width + j for i in rows for j in cols), np.int32, count=n)

    return LatticeDag(
        height, width, direction, connectivity, topo, pred_ptr, pred_idx, succ_ptr, succ_idx
    )


def build_all_directions(height, width, connectivity=8):
    """The four sweeps in the fixed order SE, SW, NW, NE."""
    return tuple(
        build_lattice_dag(height, width, d, connectivity)
        for d in (Direction.SE, Direction.SW, Direction.NW, Direction.NE)
    )


def check_lattice_dag(dag):
    """Verify topological validity, pred/succ consistency, and acyclicity.

    Raises AssertionError on violation; intended for tests and debugging.
    """
    n = dag.num_vertices
    position = np.empty(n, np.int64)
    position[dag.topo] = np.arange(n)
    seen = np.zeros(n, bool)
    seen[dag.topo] = True
    assert seen.all(), "topo order is not a permutation of the vertices"
    for v in range(n):
        for u in dag.predecessors(v):
            assert position[u] < position[v], f"predecessor {u} does not precede {v}"
            assert v in dag.successors(u), f"succ list of {u} is missing {v}"
        for k in dag.successors(v):
            assert v in dag.predecessors(k), f"pred list of {k} is missing {v}"
    # predecessors strictly earlier in a total order => acyclic
    return True
