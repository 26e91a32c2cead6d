"""Executable checks of the qualitative properties of flat flows and smooth flows.

Every check returns a CheckReport; constants that are only known to exist
(density ratio theta, growth rates, Hoelder constants) are measured and
compared against frozen calibration values or across refinements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.optimize import nnls
from scipy.spatial import cKDTree

from .anisotropy import Anisotropy, euclidean
from .errors import SetupError
from .fields import ContactAngleField, ForcingField
from .gridset import (
    BinarySet,
    GridDomain,
    PerimeterStencil,
    capillary_energy,
    euclidean_face_distance,
    pair_model,
)
from .shapes import WinterbottomShape, WulffShape, rasterize, smallest_containing_radius
from .stepper import FlatFlowState, StepModel, _as_beta, default_stencil, run_flat_flow
from .subcell import contour_segments, distance_from_segments

__all__ = [
    "CheckReport",
    "check_density_estimates",
    "check_linf_displacement",
    "check_comparison_suite",
    "check_gmm_ordering",
    "check_wulff_avoidance",
    "check_winterbottom_containment",
    "check_euler_lagrange",
    "check_consistency",
    "check_holder",
    "check_coercivity",
    "check_volume_distance",
    "hausdorff_distance",
    "decreasing",
    "state_contour",
    "segments_to_polylines",
]


@dataclass
class CheckReport:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    offenders: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __bool__(self):
        return self.passed

    def summary(self) -> str:
        m = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({m})"

    def rows(self):
        """(check, status, metric, value, threshold) rows for CSV output."""
        status = "pass" if self.passed else "fail"
        for k, v in self.metrics.items():
            yield self.name, status, k, v, self.thresholds.get(k, "")


def _fmt(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def decreasing(values, strict: bool = True) -> bool:
    v = np.asarray(values, float)
    d = np.diff(v)
    return bool(np.all(d < 0) if strict else np.all(d <= 0))


# ---------------------------------------------------------------------------
# density and displacement


def _free_boundary_points(E: BinarySet) -> np.ndarray:
    """Midpoints of faces between occupied and empty cells inside the box (2-D and 3-D)."""
    g = E.grid
    c = E.cells
    pts = []
    X = g.cell_centers()
    for a in range(g.n):
        lo = [slice(None)] * g.n
        hi = [slice(None)] * g.n
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        m = c[tuple(lo)] != c[tuple(hi)]
        mid = 0.5 * (X[tuple(lo)] + X[tuple(hi)])
        pts.append(mid[m])
    return np.concatenate(pts) if pts else np.zeros((0, g.n))


def _ball_measures(E: BinarySet, x: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Volume fraction of E in B_r(x) (the half-space below the floor counts
    as outside) and free-boundary face area in B_r(x) over r^(n-1)."""
    g = E.grid
    h = g.h
    k = int(math.ceil(r / h)) + 1
    offs = np.stack(np.meshgrid(*[np.arange(-k, k + 1)] * g.n, indexing="ij"), -1).reshape(-1, g.n)
    frac = np.empty(len(x))
    per = np.empty(len(x))
    cells = E.cells
    ball_vol = math.pi ** (g.n / 2) / math.gamma(g.n / 2 + 1) * r**g.n
    for i, p in enumerate(x):
        base = np.floor((p - g.origin) / h).astype(int)
        idx = base + offs
        ctr = g.origin + (idx + 0.5) * h
        inb = ((ctr - p) ** 2).sum(1) <= r * r
        idx = idx[inb]
        ok = np.all((idx >= 0) & (idx < np.array(g.counts)), axis=1)
        occ = np.zeros(len(idx), bool)
        occ[ok] = cells[tuple(idx[ok].T)]
        frac[i] = occ.sum() * g.cell_volume() / ball_vol
        # free faces: discordant axis neighbours, both cells in the box, midpoint in the ball
        faces = 0
        for a in range(g.n):
            step = np.zeros(g.n, int)
            step[a] = 1
            j = idx + step
            ok2 = ok & np.all((j >= 0) & (j < np.array(g.counts)), axis=1)
            mid = g.origin + (idx + 0.5 + 0.5 * step) * h
            inm = ((mid - p) ** 2).sum(1) <= r * r
            sel = ok2 & inm
            faces += int((cells[tuple(idx[sel].T)] != cells[tuple(j[sel].T)]).sum())
        per[i] = faces * g.face_area() / r ** (g.n - 1)
    return frac, per


def check_density_estimates(state: FlatFlowState, radii, theta_ref: float | None = None, points_per_step: int = 32,
                            step_stride: int = 1, seed: int = 0) -> CheckReport:
    """Volume and perimeter densities at free-boundary points of every step."""
    rng = np.random.default_rng(seed)
    h = state.grid.h
    notes = []
    use = [r for r in radii if r > 2 * h]
    if len(use) < len(radii):
        notes.append(f"skipped radii below 2h = {2 * h:g}")
    fr_min, fr_max, per_min = 1.0, 0.0, math.inf
    per_step = []
    for k in range(1, state.k + 1, step_stride):
        E = state.set_at(k)
        if E.is_empty:
            continue
        pts = _free_boundary_points(E)
        pts = pts[pts[:, -1] > 0]
        if len(pts) == 0:
            continue
        pts = pts[rng.choice(len(pts), min(points_per_step, len(pts)), replace=False)]
        th = 1.0
        for r in use:
            fr, pr = _ball_measures(E, pts, r)
            fr_min, fr_max, per_min = min(fr_min, fr.min()), max(fr_max, fr.max()), min(per_min, pr.min())
            th = min(th, fr.min(), 1 - fr.max(), pr.min())
        per_step.append((k, th))
    if not per_step:
        return CheckReport("density", True, {"theta": math.inf}, notes=notes + ["vacuous: no free boundary"])
    theta = min(t for _, t in per_step)
    thr = 0.5 * theta_ref if theta_ref is not None else 0.0
    off = [k for k, t in per_step if t < thr]
    return CheckReport("density", theta > thr,
                       {"theta": theta, "fraction_min": fr_min, "fraction_max": fr_max, "perimeter_ratio_min": per_min},
                       {"theta": thr}, off, notes)


def check_linf_displacement(state: FlatFlowState, theta: float | None = None) -> CheckReport:
    """max_k (largest distance from the previous boundary of a flipped cell) / sqrt(tau)."""
    d = np.array([r.max_flip_distance for r in state.records]) if state.records else np.zeros(1)
    ratio = float(d.max() / math.sqrt(state.tau))
    if theta is None:
        return CheckReport("linf", True, {"max_flip_over_sqrt_tau": ratio, "max_flip": float(d.max())})
    bound = math.sqrt(state.tau) / theta
    off = [r.k for r in state.records if r.max_flip_distance > bound]
    return CheckReport("linf", not off, {"max_flip_over_sqrt_tau": ratio, "max_flip": float(d.max())},
                       {"max_flip": bound}, off)


# ---------------------------------------------------------------------------
# comparison


def _random_blob(grid: GridDomain, rng, lobes: int = 3) -> np.ndarray:
    X = grid.cell_centers()
    ext = np.asarray(grid.upper) - np.asarray(grid.origin)
    cells = np.zeros(grid.counts, bool)
    for _ in range(lobes):
        c = np.asarray(grid.origin) + ext * rng.uniform(0.3, 0.7, grid.n)
        c[-1] = rng.uniform(0, 0.35) * ext[-1]
        r = rng.uniform(0.12, 0.28) * ext.min()
        cells |= (((X - c) / r) ** 2).sum(-1) <= 1
    return cells


def check_comparison_suite(seed: int = 0, instances: int = 20, counts=(40, 20), steps: int = 6,
                           phi: Anisotropy | None = None) -> CheckReport:
    """Randomized nested data: E0(1) in E0(2), beta1 >= beta2, f1 >= f2.

    Flow 1 uses minimal minimizers, flow 2 any (the maximal) minimizer, on a
    common fixed-point scale; every step must stay nested cellwise.
    """
    rng = np.random.default_rng(seed)
    phi = phi or euclidean(len(counts))
    st = default_stencil(phi)
    h = 1.0 / counts[-1]
    g = GridDomain(tuple(counts), h, (-(counts[0] * h) / 2,) + (0.0,) * (len(counts) - 2))
    violations = []
    checked = 0
    for i in range(instances):
        E2 = _random_blob(g, rng)
        # every fifth instance starts from equal sets, the others from a strict subset
        E1 = E2 & _random_blob(g, rng, lobes=4) if i % 5 else E2.copy()
        if not E1.any():
            E1 = E2.copy()
        bmax = 0.6 * phi.phi_en
        b2 = rng.uniform(-bmax, bmax - 0.2, g.counts[:-1])
        b1 = np.minimum(b2 + rng.uniform(0, 0.2, b2.shape), bmax)
        f2 = rng.uniform(-1, 1, g.counts)
        f1 = f2 + rng.uniform(0, 0.5, g.counts)
        F1 = ForcingField.tabulated([0.0], [f1], g)
        F2 = ForcingField.tabulated([0.0], [f2], g)
        B1 = ContactAngleField(phi, b1, grid=g)
        B2 = ContactAngleField(phi, b2, grid=g)
        tau = float(rng.choice([0.5, 1.0, 2.0])) * h * h * 8
        scale = StepModel(g, phi, B1, tau, st, forcing_bound=2.0).scale
        s1 = run_flat_flow(BinarySet(g, E1), tau, (steps + 0.5) * tau, phi, B1, F1, "minimal", st, "binary",
                           scale=scale, truncation_margin=0)
        s2 = run_flat_flow(BinarySet(g, E2), tau, (steps + 0.5) * tau, phi, B2, F2, "maximal", st, "binary",
                           scale=scale, truncation_margin=0)
        for k in range(min(s1.k, s2.k) + 1):
            checked += 1
            if not (s1.set_at(k) <= s2.set_at(k)):
                violations.append((i, k))
    return CheckReport("comparison", not violations, {"instances": instances, "steps_checked": checked,
                                                      "violations": len(violations)}, {"violations": 0}, violations)


def check_gmm_ordering(states1, states2) -> CheckReport:
    """Inclusion of the finest-tau trajectories of two ordered data sets."""
    a, b = states1[-1], states2[-1]
    off = [k for k in range(min(a.k, b.k) + 1) if not (a.set_at(k) <= b.set_at(k))]
    return CheckReport("gmm_ordering", not off, {"steps": min(a.k, b.k) + 1, "violations": len(off)}, {"violations": 0}, off)


# ---------------------------------------------------------------------------
# Wulff and Winterbottom barriers


def check_wulff_avoidance(state: FlatFlowState, p, R0: float, inside: bool = False, window_factor: float = 1.0) -> CheckReport:
    """A shrunk Wulff ball around p stays disjoint from (or inside) the flow.

    The radius is beta0 R0 / (16 Phi(e_n)) with beta0 = (sup|beta| + Phi(e_n)) / 2,
    checked for k tau <= window_factor R0^2 / (R0 + 1).
    """
    phi, g = state.phi, state.grid
    if R0 < 4 * g.h:
        return CheckReport("wulff_avoidance", True, {"R0": R0}, notes=["skipped: R0 below 4h"])
    E0 = state.set_at(0)
    W0 = rasterize(WulffShape(phi, tuple(p), R0), g).cells
    if inside:
        if not np.all(E0.cells[W0]):
            raise SetupError("the Wulff ball is not inside the initial set")
    elif np.any(E0.cells & W0):
        raise SetupError("the Wulff ball meets the initial set")
    beta0 = 0.5 * (state.beta.sup_abs + phi.phi_en)
    r = beta0 * R0 / (16 * phi.phi_en)
    Wr = rasterize(WulffShape(phi, tuple(p), r), g).cells
    if not Wr.any():
        return CheckReport("wulff_avoidance", True, {"radius": r}, notes=["skipped: shrunk ball has no cells"])
    window = window_factor * R0**2 / (R0 + 1)
    off = []
    last = 0
    for k in range(state.k + 1):
        if k * state.tau > window:
            break
        last = k
        E = state.set_at(k).cells
        bad = (not np.all(E[Wr])) if inside else bool(np.any(E & Wr))
        if bad:
            off.append(k)
    return CheckReport("wulff_avoidance", not off, {"radius": r, "beta0": beta0, "window": window, "steps": last + 1},
                       {}, off)


def check_winterbottom_containment(state: FlatFlowState, beta0: float, r0: float | None = None,
                                   slack_cells: float = 4.0) -> CheckReport:
    """Track the smallest Winterbottom shape W_{beta0,r} containing each step."""
    phi, g = state.phi, state.grid
    en = phi.phi_en
    eta = state.beta.eta
    if not (-en < beta0 < -(1 - 2 * eta) * en):
        raise SetupError(f"beta0 = {beta0:g} must lie in (-Phi(e_n), -(1 - 2 eta) Phi(e_n))")
    E0 = state.set_at(0)
    r_init = smallest_containing_radius(E0, phi, beta0)
    if r0 is None:
        r0 = r_init
    elif r_init > r0 * (1 + 1e-12):
        raise SetupError("the initial set is not inside W_{beta0,r0}")
    radii = np.array([r_init] + [smallest_containing_radius(state.set_at(k), phi, beta0) for k in range(1, state.k + 1)])
    tau = state.tau
    env = np.maximum.accumulate(np.maximum(radii, r0))
    inc = np.diff(env) / tau
    prev = env[:-1]
    grow = inc > 0
    C6 = C7 = 0.0
    if grow.any():
        A = np.stack([prev[grow], np.ones(grow.sum())], 1)
        C6, C7 = nnls(A, inc[grow])[0]
        C7 = float(max(C7, (inc - C6 * prev).max()))
    metrics = {"r0": r0, "r_max": float(radii.max()), "C6": float(C6), "C7": float(C7)}
    if state.forcing.is_zero:
        lim = r0 + slack_cells * g.h
        off = [int(k) for k in np.nonzero(radii > lim)[0]]
        return CheckReport("winterbottom_containment", not off, metrics, {"r_max": lim}, off)
    ok = math.isfinite(C6) and math.isfinite(C7)
    return CheckReport("winterbottom_containment", ok, metrics, notes=["growth fitted to r_k <= (1 + C6 tau) r_(k-1) + C7 tau"])


# ---------------------------------------------------------------------------
# Euler-Lagrange residual and consistency


def segments_to_polylines(S: np.ndarray, tol: float = 1e-12) -> list[np.ndarray]:
    """Chain consecutive segments sharing endpoints into polylines."""
    out = []
    if len(S) == 0:
        return out
    cur = [S[0, 0], S[0, 1]]
    for a, b in zip(S[:-1], S[1:]):
        if np.abs(a[1] - b[0]).max() <= tol:
            cur.append(b[1])
        else:
            out.append(np.array(cur))
            cur = [b[0], b[1]]
    out.append(np.array(cur))
    return out


def _length(P: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())


def _resample_polyline(P: np.ndarray, spacing: float) -> np.ndarray:
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    m = max(int(math.ceil(s[-1] / spacing)), 1)
    q = np.linspace(0, s[-1], m + 1)
    return np.stack([np.interp(q, s, P[:, 0]), np.interp(q, s, P[:, 1])], 1)


def state_contour(state: FlatFlowState, k: int) -> np.ndarray:
    """Free-boundary segments of step k: the sub-cell interface if recorded,
    otherwise the marching-squares contour of the bitmap."""
    segs = state.segments[k] if k < len(state.segments) else None
    if segs is not None:
        return segs
    E = state.set_at(k)
    W = np.where(E.cells, -0.5, 0.5)
    return contour_segments(W, state.grid)


def _field_at(F: np.ndarray, grid: GridDomain, P: np.ndarray) -> np.ndarray:
    coords = [(P[:, a] - grid.origin[a]) / grid.h - 0.5 for a in range(grid.n)]
    return map_coordinates(F, coords, order=1, mode="nearest")


def check_euler_lagrange(stepE: BinarySet, E0: BinarySet, tau: float, k: int, phi: Anisotropy, f=None,
                         sd0: np.ndarray | None = None, contour: np.ndarray | None = None,
                         floor_margin_cells: float = 4.0, turning: float = math.pi / 8,
                         arc_length: float | None = None, tolerance: float = 0.2) -> CheckReport:
    """Residual sd_{E0}/tau + kappa^Phi + fbar on the free boundary of a step.

    The discrete perimeter is crystalline at the grid scale, so minimizers
    carry facets whose length does not shrink with h, and the equation holds
    only on average over whole facets.  Around every contour point the arc is
    grown until it turns by ``2 * turning`` (enough to cover a facet of the
    16-direction stencil) or reaches half-length ``arc_length`` (default: a
    quarter of the contour, which is what flat pieces get).  On that arc the
    Phi-weighted turning, i.e. the integral of kappa^Phi, is compared with
    the integrals of the distance and forcing terms.  Arcs centred within
    ``floor_margin_cells`` of the floor are skipped.  The check passes when
    the median residual is below ``tolerance`` times the median dominant term.
    """
    g = stepE.grid
    if g.n != 2:
        raise ValueError("the Euler-Lagrange check is planar")
    h = g.h
    if contour is None:
        contour = contour_segments(np.where(stepE.cells, -0.5, 0.5), g)
    if sd0 is None:
        sd0 = np.where(E0.cells, -1.0, 1.0) * euclidean_face_distance(E0.cells, h)
    f = f if isinstance(f, ForcingField) else ForcingField.constant(float(f or 0.0))
    fbar = f.step_average(k, tau, g)
    res, dom = [], []
    for P in segments_to_polylines(contour):
        Q = _resample_polyline(P, h / 4)
        max_half = arc_length if arc_length is not None else _length(P) / 4
        wmax = int(round(4 * max_half / h))
        if len(Q) < 2 * 8 * 4 + 3 or wmax < 8 * 4:
            continue
        seg = np.diff(Q, axis=0)
        ds = np.linalg.norm(seg, axis=1)
        ang = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
        # turning at interior vertices weighted by the Phi-stiffness of the mean normal
        dth = np.diff(ang)
        tm = seg[:-1] / ds[:-1, None] + seg[1:] / ds[1:, None]
        tm /= np.linalg.norm(tm, axis=1)[:, None]
        nm = np.stack([tm[:, 1], -tm[:, 0]], 1)
        mu = np.einsum("mi,mij,mj->m", tm, phi.hessian(nm), tm)
        mids = 0.5 * (Q[:-1] + Q[1:])
        sv = _field_at(sd0, g, mids) / tau
        fv = _field_at(np.asarray(fbar, float), g, mids)
        # prefix sums over vertices (turning) and edges (length, weighted fields)
        c_turn = np.concatenate([[0.0], np.cumsum(dth)])
        c_kds = np.concatenate([[0.0], np.cumsum(mu * dth)])
        c_len = np.concatenate([[0.0], np.cumsum(ds)])
        c_s = np.concatenate([[0.0], np.cumsum(sv * ds)])
        c_f = np.concatenate([[0.0], np.cumsum(fv * ds)])
        m = len(ds)
        for i in range(4, m - 4, 4):
            if Q[i, 1] <= floor_margin_cells * h:
                continue
            w = 4
            # vertex j sits between edges j and j + 1, so edges [i-w, i+w) hold vertices i-w .. i+w-2
            while w < wmax and i - w >= 0 and i + w <= m and abs(c_turn[i + w - 1] - c_turn[i - w]) < 2 * turning:
                w += 4
            if i - w < 0 or i + w > m:
                continue
            L = c_len[i + w] - c_len[i - w]
            kap = (c_kds[i + w - 1] - c_kds[i - w]) / L
            s_avg = (c_s[i + w] - c_s[i - w]) / L
            f_avg = (c_f[i + w] - c_f[i - w]) / L
            res.append(s_avg + kap + f_avg)
            dom.append(max(abs(s_avg), abs(kap), abs(f_avg)))
    if len(res) < 4:
        return CheckReport("euler_lagrange", True, {}, notes=["skipped: contour too short"])
    r = np.asarray(res)
    d = np.asarray(dom)
    med = float(np.median(np.abs(r)))
    dm = float(np.median(d))
    return CheckReport("euler_lagrange", med <= tolerance * max(dm, 1e-300),
                       {"median_residual": med, "median_dominant": dm, "relative_to_h_over_tau": med * tau / h,
                        "points": int(len(r))},
                       {"median_residual": tolerance * dm})


def hausdorff_distance(A: np.ndarray, B: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point samplings."""
    if len(A) == 0 or len(B) == 0:
        return math.inf
    da = cKDTree(B).query(A)[0].max()
    db = cKDTree(A).query(B)[0].max()
    return float(max(da, db))


def _sample_segments(S: np.ndarray, spacing: float) -> np.ndarray:
    pts = [_resample_polyline(P, spacing) for P in segments_to_polylines(S)]
    return np.concatenate(pts) if pts else np.zeros((0, 2))


def check_consistency(state: FlatFlowState, oracle_run, times, budget: float | None = None) -> CheckReport:
    """Hausdorff distance between stepper interfaces and oracle curves at ``times``."""
    h = state.grid.h
    dists = {}
    notes = []
    for t in times:
        c = oracle_run.curve_at(t)
        if c is None:
            notes.append(f"oracle stopped before t = {t:g}")
            continue
        k = state.index_at(t)
        A = _sample_segments(state_contour(state, k), h / 2)
        B = _resample_polyline(c.points, h / 2)
        dists[float(t)] = hausdorff_distance(A, B)
    worst = max(dists.values()) if dists else math.inf
    ok = bool(dists) and (budget is None or worst < budget)
    return CheckReport("consistency", ok, {"hausdorff_max": worst, **{f"t={t:g}": d for t, d in dists.items()}},
                       {"hausdorff_max": budget} if budget is not None else {}, notes=notes)


# ---------------------------------------------------------------------------
# time regularity, coercivity, volume-distance


_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], np.int64)


def check_holder(state: FlatFlowState, min_gap: float | None = None, max_gap: float = 0.1, max_pairs: int = 4000,
                 seed: int = 0) -> CheckReport:
    """max |E(t) delta E(s)| / |t - s|^(1/2) over step pairs with min_gap <= |t - s| <= max_gap."""
    tau = state.tau
    min_gap = 4 * tau if min_gap is None else min_gap
    lo = int(math.ceil(min_gap / tau - 1e-9))
    hi = int(math.floor(max_gap / tau + 1e-9))
    pairs = [(i, j) for i in range(state.k + 1) for j in range(i + lo, min(i + hi, state.k) + 1)]
    if not pairs:
        return CheckReport("holder", True, {"C0": 0.0}, notes=["no admissible pairs"])
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        pairs = [pairs[i] for i in sorted(rng.choice(len(pairs), max_pairs, replace=False))]
    hn = state.grid.cell_volume()
    best, arg = 0.0, None
    for i, j in pairs:
        d = int(_POPCOUNT[np.bitwise_xor(state.packed[i], state.packed[j])].sum()) * hn
        c = d / math.sqrt((j - i) * tau)
        if c > best:
            best, arg = c, (i, j)
    return CheckReport("holder", True, {"C0": best, "pairs": len(pairs), "argmax": str(arg)})


def check_coercivity(sets, phi: Anisotropy, beta, stencil: PerimeterStencil | None = None,
                     eta: float | None = None) -> CheckReport:
    """Exact rational check of

        eta P <= C_beta <= P  and  ((Phi(e_n) + inf beta) / (2 Phi(e_n))) P <= C_beta <= max(sup beta / Phi(e_n), 1) P

    with P the full perimeter (interior part plus Phi(e_n) times the wetted area).
    """
    stencil = stencil or default_stencil(phi)
    B = _as_beta(beta, phi)
    eta = Fraction(B.eta if eta is None else eta)
    en = Fraction(phi.phi_en)
    off = []
    slack = {"lower": math.inf, "upper": math.inf, "lower_sharp": math.inf, "upper_sharp": math.inf}
    count = 0
    for i, E in enumerate(sets):
        pm = pair_model(E.grid, stencil)
        bvals = B.floor_values(E.grid)[E.cells[..., 0]]
        inf_b = Fraction(float(B.inf))
        sup_b = Fraction(float(B.sup))
        P_int = pm.interior_perimeter_exact(E.cells)
        contact = Fraction(int(E.cells[..., 0].sum()))
        adh = sum((Fraction(float(b)) for b in bvals), Fraction(0))
        P = P_int + en * contact
        C = P_int + adh
        checks = {
            "lower": C - eta * P,
            "upper": P - C,
            "lower_sharp": C - (en + inf_b) / (2 * en) * P,
            "upper_sharp": max(sup_b / en, Fraction(1)) * P - C,
        }
        count += 1
        for k, v in checks.items():
            slack[k] = min(slack[k], float(v) * E.grid.face_area())
            if v < 0:
                off.append((i, k))
    return CheckReport("coercivity", not off, {"sets": count, **{f"min_slack_{k}": v for k, v in slack.items()}},
                       {f"min_slack_{k}": 0.0 for k in slack}, off)


def check_volume_distance(state: FlatFlowState, theta: float, p: float | None = None) -> CheckReport:
    """|E_k delta E_(k-1)| <= (C4/p) C_beta(E_(k-1)) tau + (p/tau) int d, with
    C4 = 5^n omega_n / (c_Phi theta eta) and p^2 theta^2 > tau."""
    n = state.grid.n
    tau = state.tau
    omega = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
    C4 = 5**n * omega / (state.phi.c_lower * theta * state.beta.eta)
    p = p if p is not None else 2 * math.sqrt(tau) / theta
    if not tau < (theta * p) ** 2:
        raise SetupError("p must satisfy tau < theta^2 p^2")
    hn = state.grid.cell_volume()
    cap_prev = capillary_energy(state.set_at(0), state.phi, state.beta, state.stencil)
    off = []
    worst = -math.inf
    for r in state.records:
        lhs = r.flipped * hn
        rhs = C4 / p * cap_prev * tau + p / tau * r.dissipation
        worst = max(worst, lhs - rhs)
        if lhs > rhs:
            off.append(r.k)
        cap_prev = r.capillary
    return CheckReport("volume_distance", not off, {"C4": C4, "p": p, "max_excess": worst}, {"max_excess": 0.0}, off)
