"""Sub-cell interface tracking for planar flat flows.

A step minimizer only tells which cells are occupied, so a slow interface
(displacement per step well below h) never moves.  The reconstruction here
recovers a sub-cell position from the parametric family of step problems:
shifting the distance term by a level l and re-minimizing yields nested
sets {w < l}; the zero level set of the (lightly smoothed) switching
function w is the new interface, and its exact distance feeds the next step.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from .gridset import GridDomain, euclidean_face_distance

__all__ = [
    "savgol_kernel",
    "smooth_switch_field",
    "contour_segments",
    "segment_distance",
    "distance_from_segments",
    "polyline_segments",
]

_FAR = 1e9


def savgol_kernel(half_width: int = 2, degree: int = 2) -> np.ndarray:
    """Weights returning the constant term of a least-squares 2-D polynomial
    fit over a (2p+1)^2 window."""
    o = np.arange(-half_width, half_width + 1)
    DX, DY = np.meshgrid(o, o, indexing="ij")
    cols = [DX**i * DY**j for i in range(degree + 1) for j in range(degree + 1 - i)]
    A = np.stack([c.ravel() for c in cols], 1).astype(float)
    return np.linalg.pinv(A)[0].reshape(DX.shape)


def smooth_switch_field(W: np.ndarray, limit: float, half_width: int = 2, degree: int = 2) -> np.ndarray:
    """Savitzky-Golay smoothing of W where |W| < limit; the floor acts as a
    mirror."""
    if half_width <= 0:
        return W
    K = savgol_kernel(half_width, degree)
    p = half_width
    Wp = np.concatenate([W[:, p - 1 :: -1], W], axis=1)
    Wf = correlate(Wp, K, mode="nearest")[:, p:]
    return np.where(np.abs(W) < limit, Wf, W)


def contour_segments(W: np.ndarray, grid: GridDomain) -> np.ndarray:
    """Zero level set of a cell-centered field as segments (m, 2, 2).

    Below the floor a ghost row repeats the bottom row, so the contour meets
    the floor transversally; outside the lateral and top faces the field is
    treated as far outside.  Segments are clipped to the half-plane.
    """
    nx, ny = W.shape
    A = np.full((nx + 2, ny + 2), _FAR)
    A[1:-1, 1:-1] = W
    A[1:-1, 0] = W[:, 0]
    h = grid.h
    x0 = grid.lower[0]
    segs = []
    for c in find_contours(A, 0.0):
        P = np.stack([x0 + (c[:, 0] - 0.5) * h, (c[:, 1] - 0.5) * h], 1)
        segs.append(np.stack([P[:-1], P[1:]], 1))
    if not segs:
        return np.zeros((0, 2, 2))
    S = np.concatenate(segs)
    S = S[(S[:, 0, 1] >= 0) | (S[:, 1, 1] >= 0)]
    for a, b in ((0, 1), (1, 0)):
        m = S[:, a, 1] < 0
        t = S[m, a, 1] / (S[m, a, 1] - S[m, b, 1])
        S[m, a] = S[m, a] + t[:, None] * (S[m, b] - S[m, a])
        S[m, a, 1] = 0.0
    return S


def polyline_segments(points: np.ndarray) -> np.ndarray:
    P = np.asarray(points, float)
    return np.stack([P[:-1], P[1:]], 1)


def segment_distance(P: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Distance from points P (m, 2) to candidate segments S (m, k, 2, 2)."""
    A = S[..., 0, :]
    d = S[..., 1, :] - A
    L2 = (d**2).sum(-1)
    t = np.clip(((P[:, None, :] - A) * d).sum(-1) / np.where(L2 > 0, L2, 1), 0, 1)
    Q = A + t[..., None] * d
    return np.sqrt(((P[:, None, :] - Q) ** 2).sum(-1)).min(1)


def distance_from_segments(S: np.ndarray, inside: np.ndarray, grid: GridDomain, near_cells: float = 8.0) -> np.ndarray:
    """Signed distance (negative on ``inside``) to the polyline S.

    Exact point-to-segment distance within ``near_cells`` cells of the
    binary free boundary of ``inside``; further out the exact binary face
    distance is used, which differs from the polyline distance by O(h).
    """
    inside = np.asarray(inside, bool)
    h = grid.h
    d = euclidean_face_distance(inside, h).ravel().copy()
    if len(S) == 0:
        return np.where(inside, -d.reshape(inside.shape), d.reshape(inside.shape))
    near = np.nonzero(d < near_cells * h)[0]
    X = grid.cell_centers().reshape(-1, 2)[near]
    L = np.linalg.norm(S[:, 1] - S[:, 0], axis=1)
    mid = 0.5 * (S[:, 0] + S[:, 1])
    tree = cKDTree(mid)
    k = min(16, len(S))
    dd, ii = tree.query(X, k=k)
    if k == 1:
        dd, ii = dd[:, None], ii[:, None]
    ex = segment_distance(X, S[ii])
    half = L.max() / 2
    # the k nearest midpoints are only conclusive if the k-th lies beyond ex + half
    unsure = np.nonzero(dd[:, -1] <= ex + half)[0] if k < len(S) else np.zeros(0, int)
    for q in unsure:
        js = tree.query_ball_point(X[q], ex[q] + half + 1e-12)
        ex[q] = segment_distance(X[q][None], S[js][None])[0]
    d[near] = ex
    d = d.reshape(inside.shape)
    return np.where(inside, -d, d)
