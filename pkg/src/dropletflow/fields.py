"""Contact-angle data on the floor and forcing fields in the bulk."""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable

import numpy as np

from .anisotropy import Anisotropy
from .errors import AdmissibilityError, GridMismatchError

__all__ = ["ContactAngleField", "ForcingField", "GAUSS3"]

# 3-point Gauss-Legendre rule on [0, 1]
GAUSS3 = (
    np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10]),
    np.array([5 / 18, 8 / 18, 5 / 18]),
)


class ContactAngleField:
    """beta on the floor, admissible for ``phi``: sup|beta| <= (1 - 2 eta) Phi(e_n).

    ``values`` is a constant, a callable of lateral coordinates given as an
    array of shape (m, n - 1), or an
    array with one entry per floor cell of ``grid``.  When ``eta`` is not
    given the largest admissible eta is used, which requires
    sup|beta| < Phi(e_n).
    """

    def __init__(self, phi: Anisotropy, values=0.0, eta: float | None = None, grid=None, bound: float | None = None):
        self.phi_en = phi.phi_en
        self.dim = phi.dim
        self._grid = grid
        self._func: Callable | None = None
        self._const: float | None = None
        self._table: np.ndarray | None = None
        if callable(values):
            self._func = values
            if bound is None:
                xs = np.linspace(-10, 10, 4097)
                pts = xs[:, None] if self.dim == 2 else np.stack(np.meshgrid(xs[::16], xs[::16]), -1).reshape(-1, 2)
                samples = np.asarray(values(pts), float)
                self.sup, self.inf = float(samples.max()), float(samples.min())
            else:
                self.sup, self.inf = float(bound), -float(bound)
        else:
            arr = np.asarray(values, float)
            if arr.ndim == 0:
                self._const = float(arr)
                self.sup = self.inf = self._const
            else:
                if grid is None or arr.shape != tuple(grid.counts[:-1]):
                    raise GridMismatchError("tabulated beta needs one value per floor cell of its grid")
                self._table = arr.copy()
                self.sup, self.inf = float(arr.max()), float(arr.min())
        self.sup_abs = max(abs(self.sup), abs(self.inf))
        if eta is None:
            eta = 0.5 * (1 - self.sup_abs / self.phi_en)
            if eta <= 0:
                raise AdmissibilityError(
                    f"sup|beta| = {self.sup_abs:g} must be below Phi(e_n) = {self.phi_en:g}"
                )
        if not (0 < eta < 0.5 or (eta == 0.5 and self.sup_abs == 0)):
            raise AdmissibilityError(f"eta = {eta} must lie in (0, 1/2)")
        if self.sup_abs > (1 - 2 * eta) * self.phi_en * (1 + 1e-15):
            raise AdmissibilityError(
                f"sup|beta| = {self.sup_abs:g} exceeds (1 - 2 eta) Phi(e_n) = {(1 - 2 * eta) * self.phi_en:g}"
            )
        self.eta = float(min(eta, 0.5))

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    def __call__(self, x) -> np.ndarray:
        """beta at lateral positions ``x`` (shape (..., n-1) or scalars in 2-D)."""
        x = np.asarray(x, float)
        if self._const is not None:
            return np.full(x.shape if self.dim == 2 else x.shape[:-1], self._const)
        if self._func is not None:
            pts = x[..., None] if self.dim == 2 else x
            return np.asarray(self._func(pts), float).reshape(pts.shape[:-1])
        g = self._grid
        coords = [x] if self.dim == 2 else [x[..., a] for a in range(self.dim - 1)]
        idx = tuple(
            np.clip(np.floor((c - g.lower[a]) / g.h), 0, g.counts[a] - 1).astype(int) for a, c in enumerate(coords)
        )
        return self._table[idx]

    def floor_values(self, grid) -> np.ndarray:
        if self._const is not None:
            return np.full(grid.counts[:-1], self._const)
        if self._table is not None:
            if grid != self._grid:
                raise GridMismatchError("beta table belongs to a different grid")
            return self._table
        axes = [grid.axis_centers(a) for a in range(grid.n - 1)]
        if grid.n == 2:
            return np.asarray(self._func(axes[0][:, None]), float).reshape(grid.counts[:-1])
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
        return np.asarray(self._func(pts), float).reshape(grid.counts[:-1])


class ForcingField:
    """Forcing f(t, x); positive values push the free boundary inward."""

    def __init__(self, kind: str, *, value: float = 0.0, time_factor=None, space_factor=None,
                 times=None, table=None, grid=None, sup_abs: float | None = None):
        self.kind = kind
        self._value = float(value)
        self._a = time_factor
        self._h = space_factor
        self._times = None if times is None else np.asarray(times, float)
        self._table = None if table is None else np.asarray(table, float)
        self._grid = grid
        self._sup = sup_abs
        self._cache: OrderedDict = OrderedDict()
        if kind not in ("constant", "separable", "tabulated"):
            raise ValueError(f"unknown forcing kind {kind!r}")
        if kind == "tabulated" and (self._times is None or self._table is None or grid is None):
            raise ValueError("tabulated forcing needs times, table and grid")

    @classmethod
    def constant(cls, c: float = 0.0) -> "ForcingField":
        return cls("constant", value=c)

    @classmethod
    def zero(cls) -> "ForcingField":
        return cls("constant", value=0.0)

    @classmethod
    def separable(cls, a: Callable, h: Callable, sup_abs: float | None = None) -> "ForcingField":
        """f(t, x) = a(t) h(x)."""
        return cls("separable", time_factor=a, space_factor=h, sup_abs=sup_abs)

    @classmethod
    def tabulated(cls, times, table, grid) -> "ForcingField":
        """Cell values per time sample, piecewise linear in time."""
        return cls("tabulated", times=times, table=table, grid=grid)

    @property
    def is_zero(self) -> bool:
        return self.kind == "constant" and self._value == 0.0

    def value(self, t: float, x) -> np.ndarray:
        """f at time t and points x of shape (..., n)."""
        x = np.asarray(x, float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self._value)
        if self.kind == "separable":
            return float(self._a(t)) * np.asarray(self._h(x), float)
        g = self._grid
        idx = tuple(np.clip(np.floor((x[..., a] - g.origin[a]) / g.h), 0, g.counts[a] - 1).astype(int) for a in range(g.n))
        return self._time_slice(t)[idx]

    def _time_slice(self, t: float) -> np.ndarray:
        ts = self._times
        if t <= ts[0]:
            return self._table[0]
        if t >= ts[-1]:
            return self._table[-1]
        j = int(np.searchsorted(ts, t) - 1)
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1 - w) * self._table[j] + w * self._table[j + 1]

    def cell_values(self, t: float, grid) -> np.ndarray:
        if self.kind == "constant":
            return np.full(grid.counts, self._value)
        if self.kind == "tabulated":
            if grid != self._grid:
                raise GridMismatchError("forcing table belongs to a different grid")
            return self._time_slice(t)
        return self.value(t, grid.cell_centers())

    def step_average(self, k: int, tau: float, grid) -> np.ndarray:
        """(1/tau) * integral of f over [k tau, (k+1) tau] at cell centers, 3-point Gauss-Legendre."""
        key = (k, tau, grid)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.kind == "constant":
            out = np.full(grid.counts, self._value)
        else:
            nodes, weights = GAUSS3
            out = sum(w * self.cell_values((k + s) * tau, grid) for s, w in zip(nodes, weights))
        out.setflags(write=False)
        self._cache[key] = out
        if len(self._cache) > 8:
            self._cache.popitem(last=False)
        return out

    def sup_abs(self, T: float, grid=None, samples: int = 33) -> float:
        """sup |f| over [0, T] (and the grid cells when f depends on space)."""
        if self.kind == "constant":
            return abs(self._value)
        if self._sup is not None:
            return float(self._sup)
        if self.kind == "tabulated":
            return float(np.abs(self._table).max())
        if grid is None:
            raise ValueError("sampling a separable forcing needs a grid")
        hx = np.abs(np.asarray(self._h(grid.cell_centers()), float)).max()
        at = max(abs(float(self._a(t))) for t in np.linspace(0, T, samples))
        return float(at * hx)
