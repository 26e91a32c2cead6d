"""Anisotropic norms, their duals, and ellipticity certificates.

Every anisotropy is an even, positively one-homogeneous convex function on
R^n (n = 2 or 3).  Evaluators accept arrays of shape ``(..., n)`` and are
vectorized over the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline, RectSphereBivariateSpline

from .errors import DimensionError, ResolutionError, SingularPointError

__all__ = [
    "Anisotropy",
    "DualAnisotropy",
    "EllipticityReport",
    "euclidean",
    "linear_map",
    "smoothed_l1",
    "tabulated",
    "tabulated_from_file",
    "make_anisotropy",
    "evaluate",
    "gradient",
    "hessian",
    "dual",
    "certify_ellipticity",
    "norm_bounds",
    "sphere_points",
]

_DUAL_SEED_2D = 1024
_DUAL_SEED_3D = 4096
_DUAL_FALLBACK_2D = 8192
_DUAL_FALLBACK_3D = 160_000
_ASCENT_MAX_ITER = 200
_ASCENT_MIN_GAIN = 1e-10


def sphere_points(n: int, count: int, half: bool = False) -> np.ndarray:
    """Deterministic quasi-uniform unit vectors.

    n = 2 uses equally spaced angles (half circle if ``half``), n = 3 a
    Fibonacci lattice.
    """
    if n == 2:
        span = np.pi if half else 2 * np.pi
        th = np.arange(count) * (span / count)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if n == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        rho = np.sqrt(np.maximum(0.0, 1 - z * z))
        ang = np.pi * (3 - np.sqrt(5.0)) * i
        return np.stack([rho * np.cos(ang), rho * np.sin(ang), z], axis=1)
    raise DimensionError(f"dimension must be 2 or 3, got {n}")


def _tangent_basis(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangent vectors to unit vectors x of shape (m, 3)."""
    a = np.where(np.abs(x[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    u = a - (a * x).sum(1, keepdims=True) * x
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(x, u)
    return u, v


class Anisotropy:
    """Base class.  Subclasses implement ``_value``, ``_gradient``, ``_hessian``
    on arrays of nonzero points of shape (m, n)."""

    kind: str = "abstract"
    dim: int = 2

    def _check(self, x) -> tuple[np.ndarray, tuple]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise DimensionError(f"expected vectors of length {self.dim}, got shape {x.shape}")
        lead = x.shape[:-1]
        return x.reshape(-1, self.dim), lead

    def value(self, x) -> np.ndarray | float:
        pts, lead = self._check(x)
        r = np.linalg.norm(pts, axis=1)
        out = np.zeros(len(pts))
        nz = r > 0
        if nz.any():
            out[nz] = self._value(pts[nz])
        out = out.reshape(lead)
        return float(out) if out.ndim == 0 else out

    __call__ = value

    def gradient(self, x) -> np.ndarray:
        pts, lead = self._check(x)
        if np.any(np.linalg.norm(pts, axis=1) == 0):
            raise SingularPointError("gradient of an anisotropy is undefined at 0")
        return self._gradient(pts).reshape(lead + (self.dim,))

    def hessian(self, x) -> np.ndarray:
        pts, lead = self._check(x)
        if np.any(np.linalg.norm(pts, axis=1) == 0):
            raise SingularPointError("hessian of an anisotropy is undefined at 0")
        return self._hessian(pts).reshape(lead + (self.dim, self.dim))

    def _value(self, x):
        raise NotImplementedError

    def _gradient(self, x):
        return _fd_gradient(self._value, x)

    def _hessian(self, x):
        return _fd_hessian(self._gradient, x)

    @property
    def is_smooth(self) -> bool:
        return True

    @property
    def phi_en(self) -> float:
        """Value on the upward unit normal of the floor."""
        e = np.zeros(self.dim)
        e[-1] = 1.0
        return float(self.value(e))

    @cached_property
    def bounds(self) -> tuple[float, float]:
        return norm_bounds(self)

    @property
    def c_lower(self) -> float:
        return self.bounds[0]

    @property
    def c_upper(self) -> float:
        return self.bounds[1]

    @cached_property
    def ellipticity_gamma(self) -> float | None:
        rep = certify_ellipticity(self, 512 if self.dim == 2 else 2048)
        return rep.gamma if rep.elliptic else None

    def dual(self) -> "DualAnisotropy":
        return DualAnisotropy(self)

    def signed_permutation_symmetries(self, tol: float = 1e-9) -> list[np.ndarray]:
        """Signed permutation matrices g with Phi(g x) = Phi(x) on a sample."""
        from itertools import permutations, product

        probe = sphere_points(self.dim, 97 if self.dim == 2 else 301)
        ref = self.value(probe)
        out = []
        for perm in permutations(range(self.dim)):
            for signs in product((1.0, -1.0), repeat=self.dim):
                g = np.zeros((self.dim, self.dim))
                g[np.arange(self.dim), perm] = signs
                if np.all(np.abs(self.value(probe @ g.T) - ref) <= tol * np.maximum(1.0, ref)):
                    out.append(g)
        return out


def _fd_gradient(fun, x, step=1e-6):
    n = x.shape[1]
    g = np.empty_like(x)
    scale = np.linalg.norm(x, axis=1)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        d = (step * scale)[:, None] * e
        g[:, i] = (fun(x + d) - fun(x - d)) / (2 * step * scale)
    return g


def _fd_hessian(grad, x, step=1e-5):
    n = x.shape[1]
    H = np.empty(x.shape + (n,))
    scale = np.linalg.norm(x, axis=1)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        d = (step * scale)[:, None] * e
        H[:, :, i] = (grad(x + d) - grad(x - d)) / (2 * step * scale)[:, None]
    return 0.5 * (H + np.swapaxes(H, 1, 2))


class SumOfNorms(Anisotropy):
    """Phi(x) = sum_t |B_t x| with B_t of shape (m, n).

    Covers the Euclidean norm, linear maps |Ax| and the smoothed l1 norm.
    """

    def __init__(self, kind: str, blocks: np.ndarray, params: dict | None = None):
        self.kind = kind
        self.blocks = np.asarray(blocks, dtype=float)
        self.blocks.setflags(write=False)
        self.dim = self.blocks.shape[2]
        self.params = dict(params or {})
        self._M = np.einsum("tmi,tmj->tij", self.blocks, self.blocks)

    def _norms(self, x):
        Bx = np.einsum("tmn,kn->ktm", self.blocks, x)
        return np.linalg.norm(Bx, axis=2)

    def _value(self, x):
        return self._norms(x).sum(axis=1)

    def _gradient(self, x):
        r = self._norms(x)
        Mx = np.einsum("tij,kj->kti", self._M, x)
        safe = np.where(r > 0, r, 1.0)
        w = np.where(r > 0, 1.0 / safe, 0.0)
        return (Mx * w[:, :, None]).sum(axis=1)

    def _hessian(self, x):
        r = self._norms(x)
        Mx = np.einsum("tij,kj->kti", self._M, x)
        safe = np.where(r > 0, r, 1.0)
        w = np.where(r > 0, 1.0 / safe, 0.0)
        outer = np.einsum("kti,ktj->ktij", Mx, Mx) * (w**2)[:, :, None, None]
        H = (self._M[None] - outer) * w[:, :, None, None]
        return H.sum(axis=1)

    @property
    def is_smooth(self) -> bool:
        return not (self.kind == "SmoothedL1" and self.params.get("eps", 1.0) == 0.0)

    def __repr__(self):
        return f"SumOfNorms(kind={self.kind!r}, dim={self.dim}, params={self.params})"


def euclidean(n: int = 2) -> SumOfNorms:
    if n not in (2, 3):
        raise DimensionError(f"dimension must be 2 or 3, got {n}")
    return SumOfNorms("Euclidean", np.eye(n)[None])


def linear_map(A) -> SumOfNorms:
    """Phi(x) = |Ax| for a symmetric positive definite matrix A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] not in (2, 3):
        raise DimensionError(f"A must be 2x2 or 3x3, got shape {A.shape}")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("A must be symmetric")
    if np.linalg.eigvalsh(A).min() <= 0:
        raise ValueError("A must be positive definite")
    return SumOfNorms("LinearMap", A[None], {"A": A.copy()})


def smoothed_l1(eps: float, n: int = 2) -> SumOfNorms:
    """Phi(x) = sum_i sqrt(x_i^2 + eps^2 |x|^2).  eps = 0 gives the l1 norm,
    accepted only so that it can be rejected by the ellipticity check."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if n not in (2, 3):
        raise DimensionError(f"dimension must be 2 or 3, got {n}")
    I = np.eye(n)
    blocks = np.stack([np.vstack([I[i][None], eps * I]) for i in range(n)])
    return SumOfNorms("SmoothedL1", blocks, {"eps": float(eps)})


class Tabulated2D(Anisotropy):
    """Periodic cubic spline of log Phi in the polar angle (period pi after
    folding opposite directions together)."""

    kind = "Tabulated"
    dim = 2

    def __init__(self, angles, values):
        th = np.mod(np.asarray(angles, dtype=float), np.pi)
        lv = np.log(np.asarray(values, dtype=float))
        if np.any(~np.isfinite(lv)):
            raise ValueError("tabulated values must be positive")
        order = np.argsort(th, kind="stable")
        th, lv = th[order], lv[order]
        # merge samples that fold onto the same angle (symmetrization)
        key = np.round(th / 1e-12).astype(np.int64)
        uniq, inv = np.unique(key, return_inverse=True)
        th_u = np.bincount(inv, th) / np.bincount(inv)
        lv_u = np.bincount(inv, lv) / np.bincount(inv)
        if th_u[-1] >= np.pi - 1e-12:
            lv_u[0] = 0.5 * (lv_u[0] + lv_u[-1])
            th_u, lv_u = th_u[:-1], lv_u[:-1]
        if len(th_u) < 4:
            raise ResolutionError("need at least 4 distinct directions")
        self.angles = th_u
        self.log_values = lv_u
        self._spline = CubicSpline(
            np.append(th_u, th_u[0] + np.pi), np.append(lv_u, lv_u[0]), bc_type="periodic"
        )

    def _polar(self, x):
        r = np.linalg.norm(x, axis=1)
        th = np.mod(np.arctan2(x[:, 1], x[:, 0]), np.pi)
        return r, th

    def _value(self, x):
        r, th = self._polar(x)
        return r * np.exp(self._spline(th))

    def _gradient(self, x):
        r, th = self._polar(x)
        G = np.exp(self._spline(th))
        g1 = self._spline(th, 1)
        ang = np.arctan2(x[:, 1], x[:, 0])
        er = np.stack([np.cos(ang), np.sin(ang)], 1)
        et = np.stack([-np.sin(ang), np.cos(ang)], 1)
        return G[:, None] * (er + g1[:, None] * et)

    def _hessian(self, x):
        r, th = self._polar(x)
        G = np.exp(self._spline(th))
        g1, g2 = self._spline(th, 1), self._spline(th, 2)
        ang = np.arctan2(x[:, 1], x[:, 0])
        et = np.stack([-np.sin(ang), np.cos(ang)], 1)
        coef = G * (1 + g2 + g1 * g1) / r
        return coef[:, None, None] * np.einsum("ki,kj->kij", et, et)


class Tabulated3D(Anisotropy):
    """Bivariate spherical spline of log Phi on a (polar, azimuth) grid.
    Evenness is imposed by averaging the interpolant at x and -x."""

    kind = "Tabulated"
    dim = 3

    def __init__(self, azimuth, polar, values):
        az = np.mod(np.asarray(azimuth, float) + np.pi, 2 * np.pi) - np.pi
        po = np.asarray(polar, float)
        val = np.asarray(values, float)
        u = np.unique(po)
        v = np.unique(az)
        if len(u) * len(v) != len(val):
            raise ValueError("3-D tabulated samples must form a full (polar, azimuth) grid")
        if u[0] <= 0 or u[-1] >= np.pi:
            raise ValueError("polar angles must lie strictly inside (0, pi)")
        grid = np.full((len(u), len(v)), np.nan)
        grid[np.searchsorted(u, po), np.searchsorted(v, az)] = np.log(val)
        self._spline = RectSphereBivariateSpline(u, v, grid)

    def _raw(self, x):
        r = np.linalg.norm(x, axis=1)
        pol = np.arccos(np.clip(x[:, 2] / r, -1, 1))
        az = np.arctan2(x[:, 1], x[:, 0])
        az = np.mod(az + np.pi, 2 * np.pi) - np.pi
        return r * np.exp(self._spline.ev(pol, az))

    def _value(self, x):
        return 0.5 * (self._raw(x) + self._raw(-x))


def tabulated(*columns) -> Anisotropy:
    """``tabulated(angles, values)`` for n = 2, ``tabulated(azimuth, polar, values)`` for n = 3."""
    if len(columns) == 2:
        return Tabulated2D(*columns)
    if len(columns) == 3:
        return Tabulated3D(*columns)
    raise DimensionError("tabulated anisotropy needs 2 (n=2) or 3 (n=3) columns")


def tabulated_from_file(path: str | Path, dim: int) -> Anisotropy:
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != dim:
        raise DimensionError(f"{path}: expected {dim} columns for n={dim}, found {data.shape[1]}")
    return tabulated(*data.T)


def make_anisotropy(kind: str, dim: int = 2, **params) -> Anisotropy:
    k = kind.lower()
    if k == "euclidean":
        return euclidean(dim)
    if k in ("linearmap", "linear_map"):
        A = np.asarray(params["A"], float)
        if A.shape[0] != dim:
            raise DimensionError("matrix size does not match dimension")
        return linear_map(A)
    if k in ("smoothedl1", "smoothed_l1"):
        return smoothed_l1(float(params["eps"]), dim)
    if k == "tabulated":
        return tabulated_from_file(params["path"], dim)
    raise ValueError(f"unknown anisotropy kind {kind!r}")


class DualAnisotropy(Anisotropy):
    """Phi°(x) = max over Phi(y) = 1 of x.y.

    Linear maps (and the Euclidean norm) use the closed form |A^{-1} x|;
    everything else uses sampled directions refined by pattern search.
    """

    kind = "Dual"

    def __init__(self, base: Anisotropy):
        self.base = base
        self.dim = base.dim
        self.fallback_resolution: int | None = None
        self._closed = None
        if isinstance(base, SumOfNorms) and base.kind in ("Euclidean", "LinearMap"):
            A = base.blocks[0]
            self._closed = SumOfNorms("LinearMap", np.linalg.inv(A)[None])

    @property
    def has_closed_form(self) -> bool:
        return self._closed is not None

    def _value(self, x):
        if self._closed is not None:
            return self._closed._value(x)
        return self.maximize(x)[0]

    def _gradient(self, x):
        if self._closed is not None:
            return self._closed._gradient(x)
        return self.maximize(x)[1]

    def _hessian(self, x):
        if self._closed is not None:
            return self._closed._hessian(x)
        return _fd_hessian(self._gradient, x, step=1e-4)

    def maximize(self, x, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
        """Return (max_y x.y, argmax y) over the unit sphere of the base norm."""
        x = np.atleast_2d(np.asarray(x, float))
        vals = np.empty(len(x))
        args = np.empty_like(x)
        for s in range(0, len(x), chunk):
            v, a = self._maximize_chunk(x[s : s + chunk])
            vals[s : s + chunk] = v
            args[s : s + chunk] = a
        return vals, args

    def _unit(self, y):
        return y / self.base.value(y)[:, None]

    def _maximize_chunk(self, x):
        n = self.dim
        seeds = sphere_points(n, _DUAL_SEED_2D if n == 2 else _DUAL_SEED_3D)
        q = self._unit(seeds)
        j = np.argmax(x @ q.T, axis=1)
        y = seeds[j].copy()
        step = np.full(len(x), (2 * np.pi / _DUAL_SEED_2D) if n == 2 else 0.05)
        fy = (x * self._unit(y)).sum(1)
        done = np.zeros(len(x), bool)
        for _ in range(_ASCENT_MAX_ITER):
            act = ~done
            if not act.any():
                break
            ya, sa, xa = y[act], step[act], x[act]
            cands = self._candidates(ya, sa)
            fc = np.stack([(xa * self._unit(c)).sum(1) for c in cands], 1)
            best = np.argmax(fc, axis=1)
            gain = fc[np.arange(len(ya)), best] - fy[act]
            move = gain > 0
            idx = np.nonzero(act)[0]
            chosen = np.stack(cands, 1)[np.arange(len(ya)), best]
            y[idx[move]] = chosen[move]
            fy[idx[move]] = fc[np.arange(len(ya)), best][move]
            step[idx[~move]] *= 0.5
            small = (gain < _ASCENT_MIN_GAIN * np.maximum(1.0, np.abs(fy[act]))) & (sa < 1e-6)
            done[idx[small | (step[idx] < 1e-12)]] = True
        if not done.all():
            bad = ~done
            res = _DUAL_FALLBACK_2D if n == 2 else _DUAL_FALLBACK_3D
            self.fallback_resolution = res
            dense = self._unit(sphere_points(n, res))
            for i in np.nonzero(bad)[0]:
                k = np.argmax(dense @ x[i])
                if dense[k] @ x[i] > fy[i]:
                    y[i] = dense[k]
                    fy[i] = dense[k] @ x[i]
        return fy, self._unit(y)

    def _candidates(self, y, s):
        if self.dim == 2:
            ang = np.arctan2(y[:, 1], y[:, 0])
            return [np.stack([np.cos(ang + d * s), np.sin(ang + d * s)], 1) for d in (1, -1)]
        u, v = _tangent_basis(y / np.linalg.norm(y, axis=1, keepdims=True))
        out = []
        for t in (u, -u, v, -v):
            c = y / np.linalg.norm(y, axis=1, keepdims=True) + s[:, None] * t
            out.append(c / np.linalg.norm(c, axis=1, keepdims=True))
        return out


def evaluate(phi: Anisotropy, x):
    return phi.value(x)


def gradient(phi: Anisotropy, x):
    return phi.gradient(x)


def hessian(phi: Anisotropy, x):
    return phi.hessian(x)


def dual(phi: Anisotropy) -> DualAnisotropy:
    return DualAnisotropy(phi)


@dataclass(frozen=True)
class EllipticityReport:
    elliptic: bool
    gamma: float
    ball_radius: float
    ball_agrees: bool | None
    note: str = ""


def certify_ellipticity(phi: Anisotropy, sphere_resolution: int = 1024, tol: float = 1e-8) -> EllipticityReport:
    """Minimum of the tangential Hessian over sampled unit directions.

    Also derives the inner/outer ball radius of the Wulff shape from the
    radii of curvature and, in 2-D, cross-checks it against the discrete
    curvature of the polygonal Wulff boundary.
    """
    if sphere_resolution < 16:
        raise ResolutionError(f"sphere resolution must be >= 16, got {sphere_resolution}")
    if not phi.is_smooth:
        return EllipticityReport(False, 0.0, 0.0, None, "not C2: flat facets")
    n = phi.dim
    x = sphere_points(n, sphere_resolution)
    H = phi.hessian(x)
    if n == 2:
        y = np.stack([-x[:, 1], x[:, 0]], 1)
        rho = np.einsum("ki,kij,kj->k", y, H, y)
        gamma = float(rho.min())
        rmin, rmax = gamma, float(rho.max())
    else:
        u, v = _tangent_basis(x)
        T = np.stack([u, v], 2)
        Ht = np.einsum("kia,kij,kjb->kab", T, H, T)
        ev = np.linalg.eigvalsh(Ht)
        gamma = float(ev[:, 0].min())
        rmin, rmax = gamma, float(ev[:, 1].max())
    elliptic = gamma > tol
    radius = float(min(rmin, 1.0 / rmax)) if elliptic else 0.0
    agrees = None
    if n == 2 and elliptic:
        P = phi.gradient(x)
        a = P - np.roll(P, 1, 0)
        b = np.roll(P, -1, 0) - P
        c = np.roll(P, -1, 0) - np.roll(P, 1, 0)
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        kappa = 2 * cross / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) * np.linalg.norm(c, axis=1))
        poly_rmin = float(1.0 / kappa.max())
        agrees = bool(abs(poly_rmin - rmin) <= 0.02 * rmin)
    return EllipticityReport(bool(elliptic), gamma, radius, agrees)


def norm_bounds(phi: Anisotropy, resolution: int | None = None) -> tuple[float, float]:
    """(c_lower, c_upper) with c_lower |x| <= Phi(x) <= c_upper |x|."""
    if isinstance(phi, SumOfNorms) and phi.kind in ("Euclidean", "LinearMap"):
        s = np.linalg.eigvalsh(phi.blocks[0])
        return float(s.min()), float(s.max())
    if resolution is None:
        resolution = 65536 if phi.dim == 2 else 100_000
    v = phi.value(sphere_points(phi.dim, resolution))
    return float(v.min()), float(v.max())
