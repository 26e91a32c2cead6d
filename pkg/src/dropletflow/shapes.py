"""Wulff and Winterbottom shapes, their isoperimetric constants, and rasterization."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from .anisotropy import Anisotropy, sphere_points
from .errors import AdmissibilityError
from .gridset import BinarySet, GridDomain

__all__ = [
    "WulffShape",
    "WinterbottomShape",
    "wulff_gauge",
    "wulff_polygon",
    "isoperimetric_constant",
    "winterbottom_constant",
    "rasterize",
    "initial_signed_distance",
    "smallest_containing_radius",
    "largest_inscribed_radius",
]


def _normals(n: int, resolution: int) -> np.ndarray:
    return sphere_points(n, resolution)


def wulff_gauge(phi: Anisotropy, y, resolution: int | None = None) -> np.ndarray:
    """Phi°(y), the gauge of the Wulff shape.

    Closed-form duals are used directly; otherwise the Wulff shape is the
    intersection of the half-spaces {x . nu <= Phi(nu)}, so
    Phi°(y) = max_nu y . nu / Phi(nu) over a dense normal sample.
    """
    y = np.asarray(y, float)
    lead = y.shape[:-1]
    pts = y.reshape(-1, phi.dim)
    d = phi.dual()
    if d.has_closed_form:
        return d.value(pts).reshape(lead)
    res = resolution or (4096 if phi.dim == 2 else 6000)
    N = _normals(phi.dim, res)
    G = N / phi.value(N)[:, None]
    out = np.empty(len(pts))
    for s in range(0, len(pts), 4096):
        out[s : s + 4096] = (pts[s : s + 4096] @ G.T).max(1)
    return np.maximum(out, 0.0).reshape(lead)


def wulff_polygon(phi: Anisotropy, resolution: int = 4096) -> np.ndarray:
    """Boundary points of the unit Wulff shape, counter-clockwise in 2-D.

    The point with outer normal nu is grad Phi(nu)."""
    if phi.dim == 2:
        th = 2 * np.pi * np.arange(resolution) / resolution
        N = np.stack([np.cos(th), np.sin(th)], 1)
    else:
        N = _normals(3, resolution)
    return phi.gradient(N)


def _poly_area(P: np.ndarray) -> float:
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _edge_phi(phi: Anisotropy, P: np.ndarray) -> np.ndarray:
    """Phi(outer normal) * length per edge of a counter-clockwise polygon."""
    e = np.roll(P, -1, axis=0) - P
    return phi.value(np.stack([e[:, 1], -e[:, 0]], 1))


def _clip_floor(P: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a closed polygon to {y >= 0}."""
    out = []
    m = len(P)
    for i in range(m):
        a, b = P[i], P[(i + 1) % m]
        ina, inb = a[1] >= 0, b[1] >= 0
        if ina:
            out.append(a)
        if ina != inb:
            t = a[1] / (a[1] - b[1])
            q = a + t * (b - a)
            q[1] = 0.0
            out.append(q)
    return np.array(out) if out else np.zeros((0, 2))


def _hull_measures(phi: Anisotropy, pts: np.ndarray, floor: bool = False) -> tuple[float, float, float]:
    """(Phi-perimeter of non-floor facets, floor contact area, volume) of a 3-D hull."""
    hull = ConvexHull(pts)
    tri = pts[hull.simplices]
    cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    nrm = hull.equations[:, :3]
    on_floor = np.zeros(len(area), bool)
    if floor:
        on_floor = (nrm[:, 2] < -1 + 1e-9) & (np.abs(tri[:, :, 2]).max(1) < 1e-12)
    per = float((phi.value(nrm[~on_floor]) * area[~on_floor]).sum())
    return per, float(area[on_floor].sum()), float(hull.volume)


def isoperimetric_constant(phi: Anisotropy, resolution: int = 4096) -> float:
    """P_Phi(W) / |W|^((n-1)/n) from a polygonal (2-D) or triangulated (3-D) Wulff shape."""
    n = phi.dim
    P = wulff_polygon(phi, resolution)
    if n == 2:
        return float(_edge_phi(phi, P).sum() / math.sqrt(_poly_area(P)))
    per, _, vol = _hull_measures(phi, P)
    return per / vol ** (2 / 3)


def _check_beta0(phi: Anisotropy, beta0: float):
    if not abs(beta0) < phi.phi_en:
        raise AdmissibilityError(f"|beta0| = {abs(beta0):g} must be below Phi(e_n) = {phi.phi_en:g}")


def _winterbottom_boundary(phi: Anisotropy, beta0: float, R: float, center_lateral, resolution: int, tilted: bool):
    c = np.zeros(phi.dim)
    c[:-1] = center_lateral
    if tilted:
        e = np.zeros(phi.dim)
        e[-1] = 1.0
        c = c + beta0 * R * phi.gradient(e) / phi.phi_en
    else:
        c[-1] = beta0 * R
    return c + R * wulff_polygon(phi, resolution)


def winterbottom_constant(phi: Anisotropy, beta0: float, resolution: int = 4096, R: float = 1.0) -> float:
    """C_beta0(W_{beta0,R}) / |W_{beta0,R}|^((n-1)/n)."""
    _check_beta0(phi, beta0)
    n = phi.dim
    B = _winterbottom_boundary(phi, beta0, R, np.zeros(n - 1), resolution, False)
    if n == 2:
        C = _clip_floor(B)
        ephi = _edge_phi(phi, C)
        e = np.roll(C, -1, axis=0) - C
        on_floor = (np.abs(C[:, 1]) < 1e-14) & (np.abs(np.roll(C, -1, axis=0)[:, 1]) < 1e-14)
        contact = float(np.abs(e[on_floor, 0]).sum())
        energy = float(ephi[~on_floor].sum()) + beta0 * contact
        return energy / math.sqrt(_poly_area(C))
    pts = _clip_hull_floor(B)
    per, contact, vol = _hull_measures(phi, pts, floor=True)
    return (per + beta0 * contact) / vol ** (2 / 3)


def _clip_hull_floor(pts: np.ndarray) -> np.ndarray:
    """Vertices of hull(pts) intersected with {z >= 0}."""
    hull = ConvexHull(pts)
    edges = set()
    for s in hull.simplices:
        for i in range(3):
            a, b = sorted((s[i], s[(i + 1) % 3]))
            edges.add((a, b))
    E = np.array(sorted(edges))
    A, B = pts[E[:, 0]], pts[E[:, 1]]
    cross = (A[:, 2] >= 0) != (B[:, 2] >= 0)
    t = A[cross, 2] / (A[cross, 2] - B[cross, 2])
    Q = A[cross] + t[:, None] * (B[cross] - A[cross])
    Q[:, 2] = 0.0
    return np.concatenate([pts[pts[:, 2] >= 0], Q])


@dataclass(frozen=True)
class WulffShape:
    """x + R {Phi° <= 1}."""

    phi: Anisotropy = field(repr=False)
    center: tuple
    radius: float

    def gauge(self, y) -> np.ndarray:
        return wulff_gauge(self.phi, np.asarray(y, float) - np.asarray(self.center, float))

    def contains(self, y) -> np.ndarray:
        return self.gauge(y) <= self.radius

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        P = np.asarray(self.center) + self.radius * wulff_polygon(self.phi, 512 if self.phi.dim == 2 else 2000)
        pad = 1e-3 * self.radius
        return P.min(0) - pad, P.max(0) + pad

    def boundary(self, resolution: int = 2048) -> np.ndarray:
        return np.asarray(self.center) + self.radius * wulff_polygon(self.phi, resolution)


@dataclass(frozen=True)
class WinterbottomShape:
    """Omega intersected with the Wulff shape of radius R centered at height beta0 R.

    With ``tilted`` the center is (beta0 R / Phi(e_n)) grad Phi(e_n) plus the
    horizontal offset, a horizontal translate of the upright shape.
    """

    phi: Anisotropy = field(repr=False)
    beta0: float
    radius: float
    horizontal_center: tuple = ()
    tilted: bool = False

    def __post_init__(self):
        _check_beta0(self.phi, self.beta0)
        if not self.horizontal_center:
            object.__setattr__(self, "horizontal_center", (0.0,) * (self.phi.dim - 1))

    @property
    def center(self) -> np.ndarray:
        c = np.zeros(self.phi.dim)
        c[:-1] = self.horizontal_center
        if self.tilted:
            e = np.zeros(self.phi.dim)
            e[-1] = 1.0
            return c + self.beta0 * self.radius * self.phi.gradient(e) / self.phi.phi_en
        c[-1] = self.beta0 * self.radius
        return c

    def wulff(self) -> WulffShape:
        return WulffShape(self.phi, tuple(self.center), self.radius)

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, float)
        return (y[..., -1] >= 0) & self.wulff().contains(y)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.wulff().bounding_box()
        lo[-1] = max(lo[-1], 0.0)
        return lo, hi

    def boundary(self, resolution: int = 2048) -> np.ndarray:
        """Free boundary as an open polyline from the right contact point to
        the left one (2-D only)."""
        if self.phi.dim != 2:
            raise ValueError("polyline boundaries are available in 2-D only")
        C = _clip_floor(self.wulff().boundary(resolution))
        on = np.abs(C[:, 1]) < 1e-14
        if not on.any():
            return np.vstack([C, C[:1]])
        # rotate so the polyline starts at the floor vertex followed by free edges
        m = len(C)
        start = next(i for i in range(m) if on[i] and not on[(i + 1) % m])
        C = np.roll(C, -start, axis=0)
        on = np.roll(on, -start)
        stop = next(i for i in range(1, m) if on[i])
        return C[: stop + 1]

    @property
    def contact_length(self) -> float:
        if self.phi.dim != 2:
            raise ValueError("contact length is a 2-D quantity")
        B = self.boundary()
        return float(abs(B[0, 0] - B[-1, 0]))


def rasterize(shape: WulffShape | WinterbottomShape, grid: GridDomain) -> BinarySet:
    """Cells whose centers lie in ``shape``.

    An empty intersection returns the empty set and emits a RuntimeWarning;
    the returned set carries ``empty_warning`` in its cache.
    """
    lo, hi = shape.bounding_box()
    cells = np.zeros(grid.counts, bool)
    idx_lo = np.maximum(np.floor((lo - grid.origin) / grid.h).astype(int), 0)
    idx_hi = np.minimum(np.ceil((hi - grid.origin) / grid.h).astype(int) + 1, grid.counts)
    if np.all(idx_hi > idx_lo):
        sl = tuple(slice(a, b) for a, b in zip(idx_lo, idx_hi))
        X = grid.cell_centers()[sl]
        cells[sl] = shape.contains(X)
    E = BinarySet(grid, cells)
    E._cache["empty_warning"] = not cells.any()
    if not cells.any():
        warnings.warn("shape does not meet any cell center of the grid", RuntimeWarning, stacklevel=2)
    return E


def initial_signed_distance(shape: WinterbottomShape, grid: GridDomain, E: BinarySet | None = None) -> np.ndarray:
    """Euclidean signed distance to the free boundary of a 2-D droplet shape,
    consistent in sign with its rasterization."""
    from .subcell import distance_from_segments, polyline_segments

    E = E if E is not None else rasterize(shape, grid)
    S = polyline_segments(shape.boundary(4096))
    sd = distance_from_segments(S, E.cells, grid, near_cells=1e9)
    sd[(sd < 0) != E.cells] = 0.0
    return sd


def _bisect_radius(test, lo: np.ndarray, hi: np.ndarray, iters: int = 60) -> np.ndarray:
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = test(mid)
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return hi


def _member_at(phi, beta0, pts, r, horizontal_center, tilted):
    c = WinterbottomShape(phi, beta0, 1.0, tuple(horizontal_center), tilted).center
    c[:-1] = 0.0
    y = pts.copy()
    y[:, :-1] -= np.asarray(horizontal_center, float)
    return wulff_gauge(phi, y / r[:, None] - c) <= 1.0


def smallest_containing_radius(E: BinarySet, phi: Anisotropy, beta0: float, horizontal_center=None,
                               tilted: bool = False) -> float:
    """Smallest R with every cell center of E inside W_{beta0,R}."""
    if E.is_empty:
        return 0.0
    hc = np.zeros(phi.dim - 1) if horizontal_center is None else np.asarray(horizontal_center, float)
    pts = E.grid.cell_centers()[E.cells]
    if len(pts) > 20000:
        # only cells on the discrete boundary can be extremal
        from scipy.ndimage import binary_erosion

        inner = binary_erosion(E.cells, border_value=0)
        inner[..., 0] = False
        pts = E.grid.cell_centers()[E.cells & ~inner]
    hi = np.full(len(pts), 1.0)
    test = lambda r: _member_at(phi, beta0, pts, r, hc, tilted)
    while not test(hi).all():
        hi = np.where(test(hi), hi, 2 * hi)
    r = _bisect_radius(test, np.zeros(len(pts)), hi)
    return float(r.max())


def largest_inscribed_radius(E: BinarySet, phi: Anisotropy, beta0: float, horizontal_center=None,
                             tilted: bool = False) -> float:
    """Largest R whose rasterized W_{beta0,R} lies in E."""
    hc = np.zeros(phi.dim - 1) if horizontal_center is None else np.asarray(horizontal_center, float)
    out = ~E.cells
    pts = E.grid.cell_centers()[out]
    if len(pts) == 0:
        return math.inf
    hi = np.full(len(pts), 1.0)
    test = lambda r: _member_at(phi, beta0, pts, r, hc, tilted)
    # smallest radius at which each outside cell becomes a member
    while not test(hi).all():
        hi = np.where(test(hi), hi, 2 * hi)
        if hi.max() > 1e6:
            break
    r = _bisect_radius(test, np.zeros(len(pts)), hi)
    return float(r.min())
