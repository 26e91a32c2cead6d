"""Grid representation of droplets and the discrete geometric measurements.

Arrays are indexed so that axis i corresponds to coordinate i and the last
axis is vertical, with index 0 the cell row resting on the floor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import product

import numpy as np
from scipy import sparse
from scipy.ndimage import distance_transform_edt
from scipy.optimize import nnls
from scipy.sparse.csgraph import dijkstra

from .anisotropy import Anisotropy, sphere_points
from .errors import CalibrationError, DegenerateSetError, DimensionError, GridMismatchError

__all__ = [
    "GridDomain",
    "BinarySet",
    "PerimeterStencil",
    "PairModel",
    "calibrate_stencil",
    "pair_model",
    "perimeter_phi",
    "adhesion_energy",
    "capillary_energy",
    "distance_transform",
    "symmetric_difference_measure",
    "neighborhood_offsets",
]


@dataclass(frozen=True)
class GridDomain:
    """Uniform grid on a box whose bottom face lies on the floor.

    ``lower`` holds the lateral lower corner (n - 1 entries); the vertical
    lower coordinate is always 0.
    """

    counts: tuple[int, ...]
    h: float
    lower: tuple[float, ...] = ()

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) not in (2, 3):
            raise DimensionError("grid must be 2-D or 3-D")
        if min(counts) < 1 or self.h <= 0:
            raise ValueError("grid needs positive counts and cell size")
        lower = tuple(float(v) for v in self.lower) or (0.0,) * (len(counts) - 1)
        if len(lower) != len(counts) - 1:
            raise DimensionError("lower corner must have n - 1 lateral entries")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def from_box(cls, lower_lateral, upper, h: float) -> "GridDomain":
        """Grid covering lower_lateral x [0, top] up to ``upper``."""
        lo = np.append(np.asarray(lower_lateral, float), 0.0)
        up = np.asarray(upper, float)
        ext = (up - lo) / h
        counts = np.rint(ext).astype(int)
        if np.any(np.abs(ext - counts) > 1e-6) or np.any(counts < 1):
            raise ValueError(f"box extents {up - lo} are not multiples of h={h}")
        return cls(tuple(counts), h, tuple(lo[:-1]))

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def origin(self) -> np.ndarray:
        return np.append(np.asarray(self.lower), 0.0)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.h * np.asarray(self.counts)

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.counts[axis]) + 0.5) * self.h

    def cell_centers(self) -> np.ndarray:
        """Array of shape counts + (n,)."""
        axes = [self.axis_centers(a) for a in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_volume(self) -> float:
        return self.h**self.n

    def face_area(self) -> float:
        return self.h ** (self.n - 1)


class BinarySet:
    """Immutable droplet on a grid."""

    __slots__ = ("grid", "cells", "_cache")

    def __init__(self, grid: GridDomain, cells):
        cells = np.asarray(cells, dtype=bool)
        if cells.shape != grid.counts:
            raise GridMismatchError(f"cell array shape {cells.shape} does not match grid {grid.counts}")
        cells = cells.copy()
        cells.setflags(write=False)
        self.grid = grid
        self.cells = cells
        self._cache = {}

    @classmethod
    def empty(cls, grid: GridDomain) -> "BinarySet":
        return cls(grid, np.zeros(grid.counts, bool))

    @property
    def popcount(self) -> int:
        if "pop" not in self._cache:
            self._cache["pop"] = int(np.count_nonzero(self.cells))
        return self._cache["pop"]

    @property
    def volume(self) -> float:
        return self.grid.cell_volume() * self.popcount

    @property
    def is_empty(self) -> bool:
        return self.popcount == 0

    @property
    def contact_count(self) -> int:
        return int(np.count_nonzero(self.cells[..., 0]))

    def __eq__(self, other):
        return isinstance(other, BinarySet) and self.grid == other.grid and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash((self.grid, np.packbits(self.cells).tobytes()))

    def __le__(self, other: "BinarySet") -> bool:
        _same_grid(self, other)
        return not np.any(self.cells & ~other.cells)

    def __repr__(self):
        return f"BinarySet(counts={self.grid.counts}, popcount={self.popcount})"


def _same_grid(E: BinarySet, F: BinarySet):
    if E.grid != F.grid:
        raise GridMismatchError("sets live on different grids")


def symmetric_difference_measure(E: BinarySet, F: BinarySet) -> float:
    _same_grid(E, F)
    return E.grid.cell_volume() * int(np.count_nonzero(E.cells ^ F.cells))


# ---------------------------------------------------------------------------
# perimeter stencils


# primitive offsets of max-norm <= m, counted with sign, for m = 1, 2, ...
_PLANAR_SIZES = (8, 16, 32, 48, 80, 96)


def neighborhood_offsets(neighborhood: int | str, n: int) -> np.ndarray:
    """One representative per +/- pair of lattice offsets."""
    nb = int(neighborhood)
    if n == 2 and nb in _PLANAR_SIZES:
        m = _PLANAR_SIZES.index(nb) + 1
        base = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)][: nb // 2]
        for r in range(3, m + 1):
            shell = [(r, b) for b in range(1, r) if math.gcd(r, b) == 1]
            base += [v for a, b in shell for v in ((a, b), (b, a), (a, -b), (b, -a))]
        return np.array(base, dtype=np.int64)
    if n == 3 and nb == 26:
        out = []
        for v in product((-1, 0, 1), repeat=3):
            nz = [c for c in v if c != 0]
            if nz and nz[0] > 0:
                out.append(v)
        return np.array(out, dtype=np.int64)
    raise ValueError(f"unsupported neighborhood {neighborhood} for n={n} (use one of {_PLANAR_SIZES} in 2-D, 26 in 3-D)")


@dataclass(frozen=True)
class PerimeterStencil:
    """Cauchy-Crofton pair weights: Phi_disc(nu) = sum_k weights[k] |offsets[k] . nu|.

    A pair of cells at lattice offset v_k costs weights[k] * h^(n-1) when cut.
    """

    phi: Anisotropy = field(repr=False)
    neighborhood: int
    offsets: np.ndarray = field(repr=False)
    weights: np.ndarray
    bias: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.offsets.shape[1]

    def phi_disc(self, nu) -> np.ndarray:
        nu = np.atleast_2d(np.asarray(nu, float))
        return np.abs(nu @ self.offsets.T.astype(float)) @ self.weights

    @property
    def phi_disc_en(self) -> float:
        e = np.zeros(self.n)
        e[-1] = 1
        return float(self.phi_disc(e)[0])

    @cached_property
    def exact_weights(self) -> list[Fraction]:
        return [Fraction(float(w)) for w in self.weights]

    def check_phi(self, phi: Anisotropy):
        if phi is self.phi:
            return
        probe = sphere_points(self.n, 37)
        if phi.dim != self.n or not np.allclose(phi.value(probe), self.phi.value(probe), rtol=1e-12, atol=0):
            raise CalibrationError("perimeter stencil was calibrated for a different anisotropy")


def _orbits(offsets: np.ndarray, group: list[np.ndarray]) -> np.ndarray:
    """Label offsets by their orbit under the symmetry group (modulo sign)."""
    def canon(v):
        v = tuple(int(c) for c in v)
        w = tuple(-c for c in v)
        return max(v, w)

    keys = [canon(v) for v in offsets]
    index = {k: i for i, k in enumerate(keys)}
    label = -np.ones(len(offsets), int)
    nxt = 0
    for i, v in enumerate(offsets):
        if label[i] >= 0:
            continue
        for g in group:
            j = index.get(canon(g @ v))
            if j is not None:
                label[j] = nxt
        label[i] = nxt
        nxt += 1
    return label


def calibrate_stencil(phi: Anisotropy, neighborhood: int | None = None, samples: int | None = None) -> PerimeterStencil:
    """Fit nonnegative pair weights so that Phi_disc approximates Phi.

    Least squares in relative error over dense normals, weights tied along
    orbits of the lattice symmetries of Phi, with a heavily weighted row
    pinning Phi_disc(e_n) = Phi(e_n).  The weights are finally nudged up so
    that Phi_disc(e_n) >= Phi(e_n) holds in exact arithmetic.
    """
    n = phi.dim
    if neighborhood is None:
        neighborhood = 16 if n == 2 else 26
    offs = neighborhood_offsets(neighborhood, n)
    if samples is None:
        samples = 4096 if n == 2 else 6000
    nu = sphere_points(n, samples, half=(n == 2))
    target = phi.value(nu)
    label = _orbits(offs, phi.signed_permutation_symmetries())
    n_par = label.max() + 1
    cols = np.abs(nu @ offs.T.astype(float))
    A = np.stack([cols[:, label == p].sum(1) for p in range(n_par)], 1) / target[:, None]
    en = np.zeros(n)
    en[-1] = 1
    phi_en = phi.phi_en
    row = np.array([np.abs(offs[label == p] @ en).sum() for p in range(n_par)], float) / phi_en
    big = 1e4
    par, _ = nnls(np.vstack([A, big * row]), np.append(np.ones(len(nu)), big))
    weights = par[label]
    target_en = Fraction(phi_en)
    for _ in range(64):
        total = sum(Fraction(float(w)) * abs(int(v[-1])) for w, v in zip(weights, offs))
        if total >= target_en:
            break
        if total > 0:
            weights = weights * float(target_en / total)
        weights = np.where(weights > 0, np.nextafter(weights, np.inf), weights)
    else:
        raise CalibrationError("could not enforce the floor-normal bound")
    rel = (np.abs(nu @ offs.T.astype(float)) @ weights) / target - 1
    bias = {"min": float(rel.min()), "max": float(rel.max()), "mean": float(rel.mean())}
    return PerimeterStencil(phi, int(neighborhood), offs, weights, bias)


# ---------------------------------------------------------------------------
# pair model shared by measurements and the min-cut stepper


@dataclass(frozen=True)
class PairModel:
    """Cut structure of the discrete free-boundary perimeter.

    Pair p joins flat cells I[p], J[p] along stencil direction D[p] and
    weighs M[p] half-weights (M = 2 for ordinary pairs, 1 for pairs that
    reflect across the floor).  ``vacuum[c, k]`` counts half-weights of
    direction k paid when cell c is occupied because a partner lies in the
    vacuum outside the lateral or top faces of the box.
    """

    grid: GridDomain
    stencil: PerimeterStencil
    I: np.ndarray
    J: np.ndarray
    D: np.ndarray
    M: np.ndarray
    vacuum: np.ndarray

    @cached_property
    def pair_weight(self) -> np.ndarray:
        return self.M * self.stencil.weights[self.D] * (0.5 * self.grid.face_area())

    @cached_property
    def vacuum_unary(self) -> np.ndarray:
        return (self.vacuum @ self.stencil.weights) * (0.5 * self.grid.face_area())

    def direction_counts(self, cells: np.ndarray) -> np.ndarray:
        """Exact integer half-weight counts of cut pairs per direction."""
        u = np.asarray(cells, bool).ravel()
        K = len(self.stencil.weights)
        cut = u[self.I] != u[self.J]
        cnt = np.bincount(self.D[cut], weights=self.M[cut], minlength=K).astype(np.int64)
        cnt += self.vacuum[u].sum(axis=0).astype(np.int64)
        return cnt

    def interior_perimeter(self, cells: np.ndarray) -> float:
        u = np.asarray(cells, bool).ravel()
        cut = u[self.I] != u[self.J]
        return float(self.pair_weight[cut].sum() + self.vacuum_unary[u].sum())

    def interior_perimeter_exact(self, cells: np.ndarray) -> Fraction:
        """Interior perimeter divided by h^(n-1), as an exact rational."""
        cnt = self.direction_counts(cells)
        return sum((Fraction(int(c)) * w for c, w in zip(cnt, self.stencil.exact_weights)), Fraction(0)) / 2


_PAIR_CACHE: dict = {}


def pair_model(grid: GridDomain, stencil: PerimeterStencil) -> PairModel:
    key = (grid, id(stencil))
    hit = _PAIR_CACHE.get(key)
    if hit is not None and hit.stencil is stencil:
        return hit
    pm = _build_pairs(grid, stencil)
    if len(_PAIR_CACHE) > 16:
        _PAIR_CACHE.clear()
    _PAIR_CACHE[key] = pm
    return pm


def _build_pairs(grid: GridDomain, stencil: PerimeterStencil) -> PairModel:
    if stencil.n != grid.n:
        raise DimensionError("stencil and grid dimensions differ")
    counts = np.asarray(grid.counts)
    N = grid.size
    coords = np.indices(grid.counts).reshape(grid.n, -1).T
    flat = np.arange(N)
    K = len(stencil.offsets)
    vacuum = np.zeros((N, K), np.int8)
    Is, Js, Ds, Ms = [], [], [], []

    def inside(t):
        return np.all((t >= 0) & (t < counts), axis=1)

    def ravel(t):
        return np.ravel_multi_index(tuple(t.T), grid.counts)

    for k, v in enumerate(stencil.offsets):
        tgt = coords + v
        ok = inside(tgt)
        Is.append(flat[ok])
        Js.append(ravel(tgt[ok]))
        Ds.append(np.full(ok.sum(), k))
        Ms.append(np.full(ok.sum(), 2))
        for sv in (v, -v):
            tgt = coords + sv
            out = ~inside(tgt)
            below = out & (tgt[:, -1] < 0)
            vacuum[out & ~below, k] += 2
            mirror = tgt.copy()
            mirror[:, -1] = -tgt[:, -1] - 1
            same = below & np.all(mirror == coords, axis=1)
            lateral_out = below & ~same & ~np.all((mirror[:, :-1] >= 0) & (mirror[:, :-1] < counts[:-1]), axis=1)
            vacuum[lateral_out, k] += 1
            refl = below & ~same & ~lateral_out
            Is.append(flat[refl])
            Js.append(ravel(mirror[refl]))
            Ds.append(np.full(refl.sum(), k))
            Ms.append(np.full(refl.sum(), 1))
    # reflected partners of vacuum cells beside the box
    pad = int(np.abs(stencil.offsets[:, :-1]).max()) if grid.n > 1 else 0
    ext_shape = tuple(int(c) + 2 * pad for c in counts[:-1]) + (int(min(counts[-1], np.abs(stencil.offsets[:, -1]).max())),)
    ext = np.indices(ext_shape).reshape(grid.n, -1).T
    ext[:, :-1] -= pad
    ext = ext[~inside(ext)]
    for k, v in enumerate(stencil.offsets):
        for sv in (v, -v):
            tgt = ext + sv
            below = tgt[:, -1] < 0
            mirror = tgt[below].copy()
            mirror[:, -1] = -mirror[:, -1] - 1
            mirror = mirror[inside(mirror)]
            np.add.at(vacuum[:, k], ravel(mirror), 1)
    I = np.concatenate(Is)
    J = np.concatenate(Js)
    D = np.concatenate(Ds)
    M = np.concatenate(Ms).astype(np.int64)
    for a in (I, J, D, M, vacuum):
        a.setflags(write=False)
    return PairModel(grid, stencil, I, J, D, M, vacuum)


# ---------------------------------------------------------------------------
# energies


def perimeter_phi(E: BinarySet, phi: Anisotropy, stencil: PerimeterStencil, region: str = "interior") -> float:
    """Discrete anisotropic perimeter.

    ``region="interior"`` counts the free boundary inside the half-space
    only; ``region="all"`` adds Phi(e_n) times the wetted floor area.
    """
    stencil.check_phi(phi)
    key = ("per", id(stencil), region)
    if key in E._cache:
        return E._cache[key]
    pm = pair_model(E.grid, stencil)
    val = pm.interior_perimeter(E.cells)
    if region in ("all", "full"):
        val += phi.phi_en * E.grid.face_area() * E.contact_count
    elif region not in ("interior", "interior-only"):
        raise ValueError(f"unknown region {region!r}")
    E._cache[key] = val
    return val


def adhesion_energy(E: BinarySet, beta) -> float:
    """Sum of beta over occupied floor cells times h^(n-1)."""
    vals = _floor_beta(E.grid, beta)
    return float(vals[E.cells[..., 0]].sum() * E.grid.face_area())


def _floor_beta(grid: GridDomain, beta) -> np.ndarray:
    if hasattr(beta, "floor_values"):
        return beta.floor_values(grid)
    vals = np.asarray(beta, float)
    if vals.ndim == 0:
        return np.full(grid.counts[:-1], float(vals))
    if vals.shape != grid.counts[:-1]:
        raise GridMismatchError("beta values do not match the floor cells")
    return vals


def capillary_energy(E: BinarySet, phi: Anisotropy, beta, stencil: PerimeterStencil) -> float:
    return perimeter_phi(E, phi, stencil, "interior") + adhesion_energy(E, beta)


# ---------------------------------------------------------------------------
# distances


def _free_faces_lattice(cells: np.ndarray) -> np.ndarray:
    """Mark free faces (closed) on the doubled lattice.

    The array is padded with vacuum on every side except below the floor,
    where a ghost layer copies the bottom row so that floor faces are never
    boundary.  Cell (i_1..i_n) of the padded array sits at 2 i + 1.
    """
    n = cells.ndim
    P = np.zeros(tuple(s + 2 for s in cells.shape), bool)
    P[(slice(1, -1),) * n] = cells
    P[(slice(1, -1),) * (n - 1) + (0,)] = cells[..., 0]
    D = np.zeros(tuple(2 * s + 1 for s in P.shape), bool)
    for a in range(n):
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        disc = np.nonzero(P[tuple(lo)] != P[tuple(hi)])
        base = [2 * disc[b] + 1 for b in range(n)]
        base[a] = 2 * disc[a] + 2
        for off in product((-1, 0, 1), repeat=n - 1):
            idx = list(base)
            j = 0
            for b in range(n):
                if b == a:
                    continue
                idx[b] = base[b] + off[j]
                j += 1
            D[tuple(idx)] = True
    return D


def euclidean_face_distance(cells: np.ndarray, h: float) -> np.ndarray:
    """Exact distance from every cell center to the closed free-face set."""
    cells = np.asarray(cells, bool)
    D = _free_faces_lattice(cells)
    if not D.any():
        return np.full(cells.shape, np.inf)
    dist = distance_transform_edt(~D) * (h / 2)
    sl = tuple(slice(3, 2 * s + 3, 2) for s in cells.shape)
    return dist[sl]


def distance_transform(E: BinarySet, signed: bool = True, metric: str | Anisotropy = "euclidean") -> np.ndarray:
    """Distance from cell centers to the free boundary of E.

    ``metric`` is "euclidean" or an anisotropy Phi, in which case the
    distance is inf Phi(x - y) over boundary points y.  Signed distances are
    negative inside E.
    """
    cells = E.cells
    if signed and (E.is_empty or E.popcount == E.grid.size):
        raise DegenerateSetError("signed distance of an empty or full set is undefined")
    if isinstance(metric, str):
        if metric.lower() != "euclidean":
            raise ValueError(f"unknown metric {metric!r}")
        d = euclidean_face_distance(cells, E.grid.h)
    else:
        d = _anisotropic_face_distance(cells, E.grid.h, metric)
    return np.where(cells, -d, d) if signed else d


def _face_list(cells: np.ndarray):
    """Free faces as (owner flat index, axis, side) with owner inside the box."""
    n = cells.ndim
    counts = cells.shape
    owners, axes, sides = [], [], []
    coords = np.indices(counts).reshape(n, -1).T
    u = cells.ravel()
    for a in range(n):
        for s in (-1, 1):
            nb = coords.copy()
            nb[:, a] += s
            out = (nb[:, a] < 0) | (nb[:, a] >= counts[a])
            other = np.zeros(len(u), bool)
            inb = ~out
            other[inb] = u[np.ravel_multi_index(tuple(nb[inb].T), counts)]
            if a == n - 1 and s == -1:
                other[out] = u[out]  # floor: never a free face
            free = other != u
            owners.append(np.nonzero(free)[0])
            axes.append(np.full(free.sum(), a))
            sides.append(np.full(free.sum(), s))
    return np.concatenate(owners), np.concatenate(axes), np.concatenate(sides)


def _point_face_phi(phi: Anisotropy, x: np.ndarray, center: np.ndarray, axis: np.ndarray, h: float) -> np.ndarray:
    """min over the face of Phi(x - y); face is the square of side h centered
    at ``center`` and normal to ``axis``."""
    n = x.shape[1]
    if n == 2:
        other = 1 - axis
        e = np.zeros((len(x), 2))
        e[np.arange(len(x)), other] = 1.0
        lo = np.full(len(x), -h / 2)
        hi = np.full(len(x), h / 2)
        gr = (np.sqrt(5) - 1) / 2
        f = lambda t: phi.value(x - center - t[:, None] * e)
        a, b = lo, hi
        for _ in range(40):
            c = b - gr * (b - a)
            d = a + gr * (b - a)
            left = f(c) < f(d)
            b = np.where(left, d, b)
            a = np.where(left, a, c)
        t = 0.5 * (a + b)
        return np.minimum(np.minimum(f(t), f(lo)), f(hi))
    g = np.linspace(-h / 2, h / 2, 9)
    best = np.full(len(x), np.inf)
    for s in g:
        for t in g:
            off = np.zeros((len(x), 3))
            others = [[b for b in range(3) if b != a] for a in axis]
            oa = np.array(others)
            off[np.arange(len(x)), oa[:, 0]] = s
            off[np.arange(len(x)), oa[:, 1]] = t
            best = np.minimum(best, phi.value(x - center - off))
    return best


def _anisotropic_face_distance(cells: np.ndarray, h: float, phi: Anisotropy) -> np.ndarray:
    """Dijkstra over the lattice followed by exact refinement against the
    free faces owned by the path roots of each cell and its neighbours."""
    n = cells.ndim
    counts = cells.shape
    N = cells.size
    owner, axis, side = _face_list(cells)
    if len(owner) == 0:
        return np.full(counts, np.inf)
    coords = np.indices(counts).reshape(n, -1).T
    offs = neighborhood_offsets(16 if n == 2 else 26, n)
    rows, cols, vals = [], [], []
    for v in offs:
        tgt = coords + v
        ok = np.all((tgt >= 0) & (tgt < np.asarray(counts)), axis=1)
        a = np.nonzero(ok)[0]
        b = np.ravel_multi_index(tuple(tgt[ok].T), counts)
        w = phi.value(v.astype(float) * h)
        rows += [a, b]
        cols += [b, a]
        vals += [np.full(len(a), w)] * 2
    roots_src = np.unique(owner)
    # super source: node N connected to face-owning cells
    src_w = np.full(len(roots_src), 1e-30)
    A = sparse.csr_matrix(
        (np.concatenate(vals + [src_w]), (np.concatenate(rows + [np.full(len(roots_src), N)]), np.concatenate(cols + [roots_src]))),
        shape=(N + 1, N + 1),
    )
    _, pred = dijkstra(A, directed=True, indices=N, return_predecessors=True)
    parent = pred[:N].copy()
    top = parent == N
    parent[top] = np.nonzero(top)[0]
    root = parent
    for _ in range(64):
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    # candidate roots: own root and roots of lattice neighbours
    cand = [root]
    for v in product((-1, 0, 1), repeat=n):
        if not any(v):
            continue
        tgt = coords + np.asarray(v)
        ok = np.all((tgt >= 0) & (tgt < np.asarray(counts)), axis=1)
        r = root.copy()
        r[ok] = root[np.ravel_multi_index(tuple(tgt[ok].T), counts)]
        cand.append(r)
    cand = np.stack(cand, 1)
    order = np.argsort(owner, kind="stable")
    owner_s = owner[order]
    start = np.searchsorted(owner_s, np.arange(N))
    stop = np.searchsorted(owner_s, np.arange(N), side="right")
    centers = (coords + 0.5) * h
    best = np.full(N, np.inf)
    cells_idx = np.arange(N)
    for j in range(cand.shape[1]):
        r = cand[:, j]
        nf = stop[r] - start[r]
        for q in range(int(nf.max()) if len(nf) else 0):
            has = nf > q
            ci = cells_idx[has]
            f = order[start[r[has]] + q]
            fc = centers[owner[f]].copy()
            fc[np.arange(len(f)), axis[f]] += side[f] * h / 2
            d = _point_face_phi(phi, centers[ci], fc, axis[f], h)
            best[ci] = np.minimum(best[ci], d)
    return best.reshape(counts)
