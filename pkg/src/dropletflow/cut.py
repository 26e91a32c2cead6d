"""Fixed-point min-cut solver for binary energies with pairwise cut terms.

Energies have the form  sum_{c in E} a_c + sum_p w_p [u_I(p) != u_J(p)]
with integer coefficients.  The solver is the Boykov-Kolmogorov max-flow of
PyMaxflow on float64 capacities holding exact integers; every energy that
matters is recomputed in int64 from the labels.
"""
from __future__ import annotations

import math

import maxflow
import numpy as np

from .errors import CapacityScaleError

__all__ = ["choose_scale", "quantize", "CutSolver", "cut_energy", "parametric_switch_levels", "MAX_CAPACITY"]

SCALE_BITS = 40
MAX_CAPACITY = float(2**50)


def choose_scale(bound: float) -> float:
    """Power of two close to 2^40 / bound, so that quantization is exact
    rounding of the real coefficient."""
    if not bound > 0 or not math.isfinite(bound):
        raise CapacityScaleError(f"invalid coefficient bound {bound!r}")
    return 2.0 ** (SCALE_BITS - math.ceil(math.log2(bound)))


def quantize(values, scale: float) -> np.ndarray:
    q = np.rint(np.asarray(values, float) * scale)
    if q.size and np.abs(q).max() > MAX_CAPACITY:
        raise CapacityScaleError(
            f"coefficient {np.abs(q).max() / scale:g} exceeds the capacity range for scale {scale:g}"
        )
    return q.astype(np.int64)


def cut_energy(cells: np.ndarray, unary_q: np.ndarray, I: np.ndarray, J: np.ndarray, w_q: np.ndarray) -> int:
    u = np.asarray(cells, bool).ravel()
    return int(unary_q[u].sum() + w_q[u[I] != u[J]].sum())


class CutSolver:
    """Min-cut over a fixed pair structure, reused across unary updates.

    ``select="maximal"`` (and ``"any"``) places E on the source side, where
    free nodes land, which returns the largest minimizer; ``"minimal"``
    places E on the sink side of the mirrored network, returning the
    smallest one.
    """

    def __init__(self, n_nodes: int, I, J, w_q, select: str = "maximal"):
        if select not in ("minimal", "maximal", "any"):
            raise ValueError(f"unknown select policy {select!r}")
        self.n = int(n_nodes)
        self.I = np.asarray(I, np.int64)
        self.J = np.asarray(J, np.int64)
        self.w_q = np.asarray(w_q, np.int64)
        if self.w_q.size and (self.w_q.min() < 0 or self.w_q.max() > MAX_CAPACITY):
            raise CapacityScaleError("pair capacities out of range")
        self.flip = select == "minimal"
        self._graph = None
        self._prev = None

    def _build(self):
        g = maxflow.Graph[float](self.n, len(self.I))
        ids = g.add_nodes(self.n)
        if len(self.I):
            c = self.w_q.astype(float)
            g.add_edges(ids[self.I], ids[self.J], c, c)
        self._graph, self._ids = g, ids
        self._prev = np.zeros(self.n, np.int64)

    def solve(self, unary_q: np.ndarray, reuse: bool = True) -> np.ndarray:
        a = np.asarray(unary_q, np.int64).ravel()
        if a.size != self.n:
            raise ValueError("unary size does not match the node count")
        if np.abs(a).max(initial=0) > MAX_CAPACITY:
            raise CapacityScaleError("unary coefficient out of range")
        fresh = self._graph is None or not reuse
        if fresh:
            self._build()
        d = a - self._prev
        if self.flip:
            d = -d
        g = self._graph
        g.add_grid_tedges(self._ids, np.maximum(-d, 0).astype(float), np.maximum(d, 0).astype(float))
        if not fresh:
            g.mark_grid_nodes(self._ids)
        g.maxflow(reuse_trees=not fresh)
        self._prev = a
        sink = g.get_grid_segments(self._ids)
        return sink if self.flip else ~sink

    def energy(self, cells, unary_q) -> int:
        return cut_energy(cells, np.asarray(unary_q, np.int64).ravel(), self.I, self.J, self.w_q)


def parametric_switch_levels(
    unary_q: np.ndarray,
    I: np.ndarray,
    J: np.ndarray,
    w_q: np.ndarray,
    shifts_q: np.ndarray,
    select: str = "maximal",
) -> np.ndarray:
    """For the family a - shifts_q[j] (shifts increasing), return per node
    the first level index j at which it belongs to the selected minimizer
    (len(shifts_q) if never).

    The extreme minimizers are nested in j, so each node's switching index
    is found by bisection; all nodes sharing a bracket are solved together
    in one graph per round, with pairs across brackets folded into unaries.
    """
    a = np.asarray(unary_q, np.int64)
    shifts_q = np.asarray(shifts_q, np.int64)
    L = len(shifts_q)
    n = a.size
    lo = np.zeros(n, np.int64)
    hi = np.full(n, L, np.int64)
    I = np.asarray(I, np.int64)
    J = np.asarray(J, np.int64)
    w = np.asarray(w_q, np.int64)
    while True:
        act = lo < hi
        if not act.any():
            break
        mid = (lo + hi) // 2
        un = a - np.where(act, shifts_q[np.minimum(mid, L - 1)], 0)
        same = act[I] & act[J] & (lo[I] == lo[J]) & (hi[I] == hi[J])
        cross = ~same
        for P, Q in ((I, J), (J, I)):
            m = cross & act[P]
            q_in = hi[Q[m]] < lo[P[m]]
            np.add.at(un, P[m], np.where(q_in, -w[m], w[m]))
        nodes = np.nonzero(act)[0]
        loc = -np.ones(n, np.int64)
        loc[nodes] = np.arange(len(nodes))
        solver = CutSolver(len(nodes), loc[I[same]], loc[J[same]], w[same], select)
        inE = solver.solve(un[nodes], reuse=False)
        m_act = mid[nodes]
        hi[nodes] = np.where(inE, m_act, hi[nodes])
        lo[nodes] = np.where(inE, lo[nodes], m_act + 1)
    return lo
