"""Front tracking for planar droplets moving by V = -kappa^Phi - f.

The free boundary is an open polyline p_0 .. p_M, counter-clockwise around
the droplet, from the right contact point p_0 to the left one p_M, with
both ends on the floor.  With unit tangent t the outer normal is
nu = (t_y, -t_x).  The anisotropic curvature of a planar curve reduces to
mu(nu) * kappa with mu = t . Hess Phi(nu) t, so the motion law is the
parametric equation p_t = mu p_ss - f nu with the contact condition
grad Phi(nu) . e_2 = -beta imposed at both ends.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded
from scipy.optimize import brentq
from skimage.measure import points_in_poly

from .anisotropy import Anisotropy
from .errors import AdmissibilityError, SetupError, TopologyError
from .fields import ForcingField

__all__ = [
    "SmoothCurve",
    "half_circle",
    "curve_from_points",
    "phi_curvature",
    "phi_curvatures",
    "contact_residuals",
    "step_front",
    "run_oracle",
    "OracleRun",
    "strong_comparison_check",
    "ComparisonResult",
    "curve_gap",
    "STABILITY_CONSTANT",
]

# dt <= STABILITY_CONSTANT * (min node spacing) keeps the explicit forcing and
# coefficient updates well inside their stable range in all shipped runs
STABILITY_CONSTANT = 0.25


@dataclass
class SmoothCurve:
    points: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 3:
            raise ValueError("a curve needs at least three planar nodes")

    @property
    def nodes(self) -> int:
        return len(self.points)

    def tangents(self) -> np.ndarray:
        """Unit tangents of the edges."""
        e = np.diff(self.points, axis=0)
        return e / np.linalg.norm(e, axis=1)[:, None]

    def edge_normals(self) -> np.ndarray:
        t = self.tangents()
        return np.stack([t[:, 1], -t[:, 0]], 1)

    def spacing(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def length(self) -> float:
        return float(self.spacing().sum())

    def area(self) -> float:
        """Area enclosed with the floor segment (shoelace)."""
        P = self.points
        x, y = P[:, 0], P[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def contact_interval(self) -> tuple[float, float]:
        return float(self.points[-1, 0]), float(self.points[0, 0])

    def polygon(self) -> np.ndarray:
        return self.points

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        return points_in_poly(X.reshape(-1, 2), self.points).reshape(X.shape[:-1])

    def perimeter_phi(self, phi: Anisotropy) -> float:
        e = np.diff(self.points, axis=0)
        return float(phi.value(np.stack([e[:, 1], -e[:, 0]], 1)).sum())

    def capillary(self, phi: Anisotropy, beta) -> float:
        a, b = self.contact_interval()
        if callable(beta):
            xs = np.linspace(a, b, 513)
            adh = float(trapezoid(np.asarray(beta(xs), float), xs))
        else:
            adh = float(beta) * (b - a)
        return self.perimeter_phi(phi) + adh

    def segments(self) -> np.ndarray:
        return np.stack([self.points[:-1], self.points[1:]], 1)

    def is_simple(self) -> bool:
        return not _self_intersects(self.points)

    def resample(self, nodes: int | None = None) -> "SmoothCurve":
        return SmoothCurve(_resample(self.points, nodes or self.nodes), self.t)


def half_circle(R: float = 1.0, nodes: int = 512, center_x: float = 0.0) -> SmoothCurve:
    th = np.linspace(0.0, np.pi, nodes)
    P = np.stack([center_x + R * np.cos(th), R * np.sin(th)], 1)
    P[[0, -1], 1] = 0.0
    return SmoothCurve(P)


def curve_from_points(points, nodes: int = 512) -> SmoothCurve:
    """Resample an open polyline with both ends on the floor."""
    P = np.asarray(points, float)
    if abs(P[0, 1]) > 1e-12 or abs(P[-1, 1]) > 1e-12:
        raise ValueError("curve endpoints must lie on the floor")
    return SmoothCurve(_resample(P, nodes))


def _resample(P: np.ndarray, nodes: int) -> np.ndarray:
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    keep = np.concatenate([[True], np.diff(s) > 1e-14])
    s, P = s[keep], P[keep]
    cs = CubicSpline(s, P, axis=0)
    out = cs(np.linspace(0.0, s[-1], nodes))
    out[0], out[-1] = P[0], P[-1]
    return out


def _self_intersects(P: np.ndarray) -> bool:
    """Whether two non-adjacent edges of the polyline cross (or an interior
    node touches the floor)."""
    if np.any(P[1:-1, 1] <= 0):
        return True
    A, B = P[:-1], P[1:]
    m = len(A)
    lo = np.minimum(A, B)
    hi = np.maximum(A, B)
    for s in range(0, m, 256):
        a, b = A[s : s + 256, None], B[s : s + 256, None]
        c, d = A[None], B[None]
        box = (lo[s : s + 256, None] <= hi[None]).all(-1) & (lo[None] <= hi[s : s + 256, None]).all(-1)
        i = np.arange(s, min(s + 256, m))[:, None]
        j = np.arange(m)[None]
        box &= j > i + 1
        if not box.any():
            continue

        def orient(p, q, r):
            return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

        o1 = orient(a, b, c)
        o2 = orient(a, b, d)
        o3 = orient(c, d, a)
        o4 = orient(c, d, b)
        if np.any(box & (o1 * o2 < 0) & (o3 * o4 < 0)):
            return True
    return False


def _node_geometry(P: np.ndarray):
    """Unit tangents, outer normals and Menger curvatures at interior nodes."""
    a, b, c = P[:-2], P[1:-1], P[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ac = np.linalg.norm(c - a, axis=1)
    u, v = b - a, c - b
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    kappa = 2 * cross / (ab * bc * ac)
    t = (c - a) / ac[:, None]
    nu = np.stack([t[:, 1], -t[:, 0]], 1)
    return t, nu, kappa


def _mu(phi: Anisotropy, t: np.ndarray, nu: np.ndarray) -> np.ndarray:
    H = phi.hessian(nu)
    return np.einsum("mi,mij,mj->m", t, H, t)


def phi_curvatures(curve: SmoothCurve, phi: Anisotropy) -> np.ndarray:
    """kappa^Phi at all interior nodes; positive on convex droplets."""
    t, nu, kappa = _node_geometry(curve.points)
    return _mu(phi, t, nu) * kappa


def phi_curvature(curve: SmoothCurve, phi: Anisotropy, node: int) -> float:
    if node <= 0 or node >= curve.nodes - 1:
        raise ValueError("curvature is evaluated at interior nodes only")
    P = curve.points[node - 1 : node + 2]
    return float(phi_curvatures(SmoothCurve(P), phi)[0])


def _beta_at(beta, x: float) -> float:
    return float(beta(np.array([x]))[0]) if callable(beta) else float(beta)


@lru_cache(maxsize=4096)
def _contact_normal(phi: Anisotropy, b: float, right: bool) -> np.ndarray:
    """Outer normal N at a contact point with grad Phi(N) . e_2 = -b."""

    def g(th):
        N = np.array([math.cos(th), math.sin(th)])
        return float(phi.gradient(N)[1]) + b

    lo, hi = (-math.pi / 2, math.pi / 2) if right else (math.pi / 2, 3 * math.pi / 2)
    eps = 1e-12
    ga, gb = g(lo + eps), g(hi - eps)
    if ga * gb > 0:
        raise AdmissibilityError(f"no contact angle satisfies Young's law for beta = {b:g}")
    th = brentq(g, lo + eps, hi - eps, xtol=1e-15, maxiter=200)
    return np.array([math.cos(th), math.sin(th)])


def _place_ends(P: np.ndarray, phi: Anisotropy, beta) -> np.ndarray:
    """Move both endpoints along the floor so the end edges meet Young's law."""
    P = P.copy()
    for right in (True, False):
        inner = P[1] if right else P[-2]
        x = P[0, 0] if right else P[-1, 0]
        for _ in range(3):
            N = _contact_normal(phi, _beta_at(beta, x), right)
            t = np.array([-N[1], N[0]])
            s = inner[1] / t[1]
            end = inner - s * t
            if abs(end[0] - x) < 1e-14:
                break
            x = end[0]
        end[1] = 0.0
        if right:
            P[0] = end
        else:
            P[-1] = end
    return P


def contact_residuals(curve: SmoothCurve, phi: Anisotropy, beta) -> tuple[float, float]:
    """grad Phi(nu) . e_2 + beta at the right and left end edges."""
    N = curve.edge_normals()[[0, -1]]
    g = phi.gradient(N)[:, 1]
    return (float(g[0] + _beta_at(beta, curve.points[0, 0])), float(g[1] + _beta_at(beta, curve.points[-1, 0])))


def _forcing_at(f, t: float, X: np.ndarray) -> np.ndarray:
    if f is None:
        return np.zeros(len(X))
    if isinstance(f, ForcingField):
        return f.value(t, X)
    if callable(f):
        return np.asarray(f(t, X), float)
    return np.full(len(X), float(f))


def step_front(curve: SmoothCurve, phi: Anisotropy, beta, f, dt: float, nodes: int | None = None,
               check_topology: bool = True) -> SmoothCurve:
    """Advance by dt: implicit in p_ss with frozen mu, explicit in forcing,
    then endpoint projection and arclength resampling."""
    P = curve.points
    M = len(P)
    ds = curve.spacing()
    if dt > STABILITY_CONSTANT * ds.min():
        raise ValueError(f"dt = {dt:g} exceeds the stable bound {STABILITY_CONSTANT * ds.min():g}")
    t, nu, _ = _node_geometry(P)
    mu = _mu(phi, t, nu)
    fv = _forcing_at(f, curve.t, P[1:-1])
    hl, hr = ds[:-1], ds[1:]
    cl = 2 * mu / (hl * (hl + hr))
    cr = 2 * mu / (hr * (hl + hr))
    m = M - 2
    ab = np.zeros((3, m))
    ab[1] = 1 + dt * (cl + cr)
    ab[0, 1:] = -dt * cr[:-1]
    ab[2, :-1] = -dt * cl[1:]
    rhs = P[1:-1] - dt * fv[:, None] * nu
    new = P.copy()
    # heights: the ends stay on the floor
    new[1:-1, 1] = solve_banded((1, 1), ab, rhs[:, 1])
    # abscissae: each end sits where the Young's-law line through its
    # neighbour meets the floor, x_end = x_nb - (t_x / t_y) y_nb
    slopes = []
    for right, x in ((True, P[0, 0]), (False, P[-1, 0])):
        N = _contact_normal(phi, _beta_at(beta, x), right)
        slopes.append(-N[1] / N[0])
    abx = ab.copy()
    abx[1, 0] -= dt * cl[0]
    abx[1, -1] -= dt * cr[-1]
    rx = rhs[:, 0].copy()
    rx[0] -= dt * cl[0] * slopes[0] * new[1, 1]
    rx[-1] -= dt * cr[-1] * slopes[1] * new[-2, 1]
    new[1:-1, 0] = solve_banded((1, 1), abx, rx)
    new[0] = (new[1, 0] - slopes[0] * new[1, 1], 0.0)
    new[-1] = (new[-2, 0] - slopes[1] * new[-2, 1], 0.0)
    if np.any(new[1:-1, 1] <= 0):
        raise TopologyError("an interior node reached the floor")
    new = _place_ends(new, phi, beta)
    new = _resample(new, nodes or M)
    new = _place_ends(new, phi, beta)
    if check_topology and _self_intersects(new):
        raise TopologyError("the free boundary is no longer simple")
    return SmoothCurve(new, curve.t + dt)


@dataclass
class OracleRun:
    times: np.ndarray
    areas: np.ndarray
    energies: np.ndarray
    curves: list
    stop_reason: str | None = None
    stop_time: float | None = None
    final: SmoothCurve | None = field(default=None, repr=False)

    def curve_at(self, t: float) -> SmoothCurve | None:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9:
            return None
        return self.curves[j]


def run_oracle(curve: SmoothCurve, phi: Anisotropy, beta, f, T: float, dt: float, nodes: int | None = None,
               sample_times=None, topology_every: int = 25, min_area: float | None = None) -> OracleRun:
    """Evolve to T, recording the curve at ``sample_times`` (default: 0 and T).

    The run stops early, recording the reason, if the curve stops being
    simple, touches the floor in its interior, or shrinks below
    ``min_area`` (default 1e-4 of the initial area).
    """
    nodes = nodes or curve.nodes
    c = curve.resample(nodes) if curve.nodes != nodes else curve
    c = SmoothCurve(_place_ends(c.points, phi, beta), c.t)
    samples = sorted(set([0.0, T] if sample_times is None else [float(s) for s in sample_times]))
    a0 = c.area()
    min_area = a0 * 1e-4 if min_area is None else min_area
    times, areas, energies, curves = [], [], [], []
    reason = None
    steps = int(round(T / dt))
    dt = T / steps
    j = 0

    def record(cur):
        times.append(cur.t)
        areas.append(cur.area())
        energies.append(cur.capillary(phi, beta))
        curves.append(cur)

    while j < len(samples) and samples[j] <= c.t + 1e-12:
        record(c)
        j += 1
    for k in range(1, steps + 1):
        if dt > STABILITY_CONSTANT * c.spacing().min():
            reason = "resolution loss"
            break
        try:
            c = step_front(c, phi, beta, f, dt, nodes, check_topology=(k % topology_every == 0))
        except TopologyError as exc:
            reason = str(exc)
            break
        if c.area() < min_area:
            reason = "extinction"
            break
        while j < len(samples) and samples[j] <= c.t + 1e-9:
            if _self_intersects(c.points):
                reason = "the free boundary is no longer simple"
                break
            record(c)
            j += 1
        if reason:
            break
    return OracleRun(np.array(times), np.array(areas), np.array(energies), curves, reason,
                     c.t if reason else None, c)


def curve_gap(A: SmoothCurve, B: SmoothCurve) -> float:
    """Distance between two free boundaries."""
    from .subcell import segment_distance

    SA, SB = A.segments(), B.segments()
    dA = min(float(segment_distance(A.points[s : s + 512], np.broadcast_to(SB, (len(A.points[s : s + 512]),) + SB.shape)).min())
             for s in range(0, len(A.points), 512))
    dB = min(float(segment_distance(B.points[s : s + 512], np.broadcast_to(SA, (len(B.points[s : s + 512]),) + SA.shape)).min())
             for s in range(0, len(B.points), 512))
    return min(dA, dB)


def _nested(A: SmoothCurve, B: SmoothCurve) -> bool:
    """Whether the droplet of A lies in the closed droplet of B."""
    inside = B.contains(A.points[1:-1])
    gap = curve_gap(A, B)
    lo_a, hi_a = A.contact_interval()
    lo_b, hi_b = B.contact_interval()
    return bool(np.all(inside | (gap < 1e-12))) and lo_b <= lo_a + 1e-12 and hi_a <= hi_b + 1e-12


@dataclass
class ComparisonResult:
    ordered: bool
    times: np.ndarray
    gaps: np.ndarray
    stopped_at: float | None
    note: str = ""

    def __bool__(self):
        return self.ordered


def _data_strictly_ordered(betaA, betaB, fA, fB, xs) -> bool:
    bA = np.asarray(betaA(xs), float) if callable(betaA) else np.full(len(xs), float(betaA))
    bB = np.asarray(betaB(xs), float) if callable(betaB) else np.full(len(xs), float(betaB))
    const = lambda f: f is None or not (callable(f) or isinstance(f, ForcingField))
    if const(fA) and const(fB):
        return float(fA or 0.0) > float(fB or 0.0) or bool(np.all(bA > bB))
    return bool(np.all(bA > bB))


def strong_comparison_check(curveA: SmoothCurve, curveB: SmoothCurve, phi: Anisotropy, betaA, betaB, fA, fB,
                            T: float, dt: float, nodes: int | None = None, samples: int = 21) -> ComparisonResult:
    """Evolve A (larger beta and f) and B and test that the free boundary of
    A stays strictly inside that of B at every sampled time t > 0.

    Initial droplets must be nested; a zero initial gap is accepted only when
    the data are strictly ordered, since then the order becomes strict
    immediately.
    """
    xs = np.linspace(min(curveA.points[:, 0].min(), curveB.points[:, 0].min()),
                     max(curveA.points[:, 0].max(), curveB.points[:, 0].max()), 257)
    if not _nested(curveA, curveB):
        raise SetupError("initial droplets are not nested")
    gap0 = curve_gap(curveA, curveB)
    if gap0 <= 0 and not _data_strictly_ordered(betaA, betaB, fA, fB, xs):
        raise SetupError("initial free boundaries touch and the data are not strictly ordered")
    ts = np.linspace(0.0, T, samples)
    ra = run_oracle(curveA, phi, betaA, fA, T, dt, nodes, ts)
    rb = run_oracle(curveB, phi, betaB, fB, T, dt, nodes, ts)
    m = min(len(ra.curves), len(rb.curves))
    gaps = []
    ordered = True
    for j in range(1, m):
        A, B = ra.curves[j], rb.curves[j]
        g = curve_gap(A, B)
        gaps.append(g)
        if not (g > 0 and _nested(A, B)):
            ordered = False
    stopped = None
    note = ""
    if ra.stop_reason or rb.stop_reason:
        stopped = float(ts[m - 1])
        note = f"compared up to t = {stopped:g} ({ra.stop_reason or rb.stop_reason})"
    return ComparisonResult(ordered, ts[1:m], np.array(gaps), stopped, note)
