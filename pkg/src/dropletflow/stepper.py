"""Flat flows of the forced capillary functional.

Each step minimizes

    C_beta(E) + (1/tau) sum_{E} sd_{E0} h^n + sum_{E} fbar_k h^n

over all cell sets E, where fbar_k is the mean of f over [k tau, (k+1) tau].
The perimeter is a pairwise cut energy, so the step is a submodular binary
problem solved exactly by min-cut.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .anisotropy import Anisotropy
from .cut import CutSolver, choose_scale, parametric_switch_levels, quantize
from .errors import DegenerateSetError, GridMismatchError
from .fields import ContactAngleField, ForcingField
from .gridset import (
    BinarySet,
    GridDomain,
    PerimeterStencil,
    calibrate_stencil,
    euclidean_face_distance,
    pair_model,
    symmetric_difference_measure,
)
from .subcell import contour_segments, distance_from_segments, smooth_switch_field

__all__ = [
    "ContactAngleField",
    "ForcingField",
    "StepModel",
    "StepRecord",
    "FlatFlowState",
    "atw_energy",
    "atw_components",
    "minimize_step",
    "run_flat_flow",
    "validate_forcing",
    "ForcingReport",
    "gmm_extract",
    "GMMReport",
    "default_stencil",
]

_STENCILS: dict = {}


def default_stencil(phi: Anisotropy) -> PerimeterStencil:
    """Calibrated stencil for ``phi`` (16 directions in 2-D, 26 in 3-D), cached per instance."""
    hit = _STENCILS.get(id(phi))
    if hit is not None and hit.phi is phi:
        return hit
    st = calibrate_stencil(phi)
    _STENCILS[id(phi)] = st
    return st


def _as_beta(beta, phi: Anisotropy) -> ContactAngleField:
    return beta if isinstance(beta, ContactAngleField) else ContactAngleField(phi, beta)


def _as_forcing(f) -> ForcingField:
    if f is None:
        return ForcingField.zero()
    return f if isinstance(f, ForcingField) else ForcingField.constant(float(f))


class StepModel:
    """Quantized step energy on a fixed grid.

    All coefficients are integers at a common power-of-two ``scale``:
    half-weights per stencil direction, vacuum unaries, adhesion on floor
    cells, and per-step distance and forcing unaries.
    """

    def __init__(self, grid: GridDomain, phi: Anisotropy, beta, tau: float, stencil: PerimeterStencil | None = None,
                 scale: float | None = None, forcing_bound: float = 0.0):
        self.grid = grid
        self.phi = phi
        self.stencil = stencil or default_stencil(phi)
        self.stencil.check_phi(phi)
        self.beta = _as_beta(beta, phi)
        self.tau = float(tau)
        self.pm = pair_model(grid, self.stencil)
        hn = grid.cell_volume()
        half = 0.5 * self.stencil.weights * grid.face_area()
        if scale is None:
            diag = grid.h * float(np.linalg.norm(grid.counts))
            bound = (diag * hn / tau + forcing_bound * hn + self.beta.sup_abs * grid.face_area()
                     + float(self.pm.vacuum.sum(1).max(initial=0)) * half.max() + 2 * half.max())
            scale = choose_scale(bound)
        self.scale = float(scale)
        self.half_q = quantize(half, self.scale)
        self.w_q = self.pm.M * self.half_q[self.pm.D]
        self.vac_q = self.pm.vacuum.astype(np.int64) @ self.half_q
        beta_cells = np.zeros(grid.counts)
        beta_cells[..., 0] = self.beta.floor_values(grid)
        self.beta_q = quantize(beta_cells.ravel() * grid.face_area(), self.scale)
        self.static_q = self.vac_q + self.beta_q

    def distance_q(self, sd: np.ndarray) -> np.ndarray:
        return quantize(np.asarray(sd).ravel() * (self.grid.cell_volume() / self.tau), self.scale)

    def forcing_q(self, fbar: np.ndarray) -> np.ndarray:
        return quantize(np.asarray(fbar).ravel() * self.grid.cell_volume(), self.scale)

    def capillary_q(self, cells) -> int:
        u = np.asarray(cells, bool).ravel()
        return int(self.static_q[u].sum() + self.w_q[u[self.pm.I] != u[self.pm.J]].sum())

    def solver(self, select: str) -> CutSolver:
        return CutSolver(self.grid.size, self.pm.I, self.pm.J, self.w_q, select)


@dataclass
class StepRecord:
    k: int
    t: float
    volume: float
    perimeter_phi: float
    adhesion: float
    capillary: float
    dissipation: float
    forcing: float
    total: float
    mincut_value: float
    ms: float
    max_flip_distance: float
    flipped: int
    energy_q: int = 0
    previous_q: int = 0

    @property
    def minimality_holds(self) -> bool:
        """Step energy of E_k does not exceed that of E_{k-1}, exactly in the fixed-point model."""
        return self.energy_q <= self.previous_q


@dataclass
class FlatFlowState:
    tau: float
    grid: GridDomain
    phi: Anisotropy
    stencil: PerimeterStencil
    beta: ContactAngleField
    forcing: ForcingField
    select: str
    interface: str
    scale: float
    packed: list = field(default_factory=list)
    records: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    truncated: bool = False
    extinct_at: int | None = None

    @property
    def k(self) -> int:
        return len(self.packed) - 1

    def set_at(self, k: int) -> BinarySet:
        bits = np.unpackbits(self.packed[k], count=self.grid.size).astype(bool)
        return BinarySet(self.grid, bits.reshape(self.grid.counts))

    def index_at(self, t: float) -> int:
        return min(int(math.floor(t / self.tau + 1e-9)), self.k)

    def at_time(self, t: float) -> BinarySet:
        return self.set_at(self.index_at(t))

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.k + 1)

    def volumes(self) -> np.ndarray:
        pc = np.array([int(np.unpackbits(p, count=self.grid.size).sum()) for p in self.packed])
        return pc * self.grid.cell_volume()

    def append(self, E: BinarySet, record: StepRecord | None = None, segments=None):
        self.packed.append(np.packbits(E.cells.ravel()))
        if record is not None:
            self.records.append(record)
        self.segments.append(segments)


def atw_components(E: BinarySet, E0: BinarySet, tau: float, k: int, phi: Anisotropy, beta=0.0, f=None,
                   stencil: PerimeterStencil | None = None, sd0: np.ndarray | None = None) -> dict:
    """Terms of the step energy of E against E0 (k >= 1)."""
    if E.grid != E0.grid:
        raise GridMismatchError("sets live on different grids")
    if E0.is_empty:
        raise DegenerateSetError("the step energy against an empty set is undefined")
    stencil = stencil or default_stencil(phi)
    beta = _as_beta(beta, phi)
    f = _as_forcing(f)
    g = E.grid
    from .gridset import adhesion_energy, perimeter_phi

    per = perimeter_phi(E, phi, stencil, "interior")
    adh = adhesion_energy(E, beta)
    d0 = np.abs(sd0) if sd0 is not None else euclidean_face_distance(E0.cells, g.h)
    flips = E.cells ^ E0.cells
    diss = float(d0[flips].sum() * g.cell_volume())
    forc = float(f.step_average(k, tau, g)[E.cells].sum() * g.cell_volume())
    return {"perimeter": per, "adhesion": adh, "capillary": per + adh, "dissipation": diss,
            "forcing": forc, "total": per + adh + diss / tau + forc}


def atw_energy(E: BinarySet, E0: BinarySet, tau: float, k: int, phi: Anisotropy, beta=0.0, f=None,
               stencil: PerimeterStencil | None = None, sd0: np.ndarray | None = None) -> float:
    """Step energy C_beta(E) + (1/tau) int_{E delta E0} d_{E0} + forcing(E).

    For k = 0 the value is |E delta E0|, reported but never minimized.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if k == 0:
        return symmetric_difference_measure(E, E0)
    if k < 0:
        raise ValueError("step index must be nonnegative")
    return atw_components(E, E0, tau, k, phi, beta, f, stencil, sd0)["total"]


def minimize_step(E0: BinarySet, tau: float, k: int, phi: Anisotropy, beta=0.0, f=None, select: str = "any",
                  stencil: PerimeterStencil | None = None, sd0: np.ndarray | None = None,
                  scale: float | None = None) -> BinarySet:
    """Global minimizer of the step energy; ``select`` picks the minimal or
    maximal minimizer (``any`` returns the solver's canonical one, which is
    the maximal)."""
    if E0.is_empty:
        return BinarySet.empty(E0.grid)
    f = _as_forcing(f)
    g = E0.grid
    fbar = f.step_average(k, tau, g)
    model = StepModel(g, phi, beta, tau, stencil, scale, float(np.abs(fbar).max()))
    sd = sd0 if sd0 is not None else np.where(E0.cells, -1, 1) * euclidean_face_distance(E0.cells, g.h)
    unary = model.static_q + model.distance_q(sd) + model.forcing_q(fbar)
    cells = model.solver(select).solve(unary).reshape(g.counts)
    return BinarySet(g, cells)


def _near_faces(cells: np.ndarray, margin: int) -> bool:
    """Whether the set comes within ``margin`` cells of the lateral or top faces."""
    n = cells.ndim
    for a in range(n):
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        lo[a] = slice(0, margin)
        hi[a] = slice(cells.shape[a] - margin, None)
        if a < n - 1 and cells[tuple(lo)].any():
            return True
        if cells[tuple(hi)].any():
            return True
    return False


@dataclass
class SubcellOptions:
    half_width_cells: float = 5.0
    level_step_cells: float = 0.25
    band_margin_cells: float = 4.0
    smoothing: int = 2


def run_flat_flow(E0: BinarySet, tau: float, T: float, phi: Anisotropy, beta=0.0, f=None, select: str = "any",
                  stencil: PerimeterStencil | None = None, interface: str = "auto", sd0: np.ndarray | None = None,
                  scale: float | None = None, truncation_margin: int = 4, subcell: SubcellOptions | None = None,
                  on_step=None) -> FlatFlowState:
    """Iterate step minimizations for k = 1 .. floor(T / tau).

    ``interface="binary"`` measures the distance term from the occupied
    cells of the previous step; ``"subcell"`` (2-D only) from a sub-cell
    reconstruction of the previous interface.  ``"auto"`` picks subcell in
    2-D.  The run stops early, with ``truncated`` set, once the droplet
    comes within ``truncation_margin`` cells of the lateral or top faces.
    """
    if not 0 < tau < T:
        raise ValueError("need 0 < tau < T")
    g = E0.grid
    if interface == "auto":
        interface = "subcell" if g.n == 2 else "binary"
    if interface not in ("binary", "subcell"):
        raise ValueError(f"unknown interface mode {interface!r}")
    if interface == "subcell" and g.n != 2:
        raise ValueError("sub-cell interfaces are available in 2-D only")
    f = _as_forcing(f)
    beta = _as_beta(beta, phi)
    steps = int(math.floor(T / tau + 1e-9))
    model = StepModel(g, phi, beta, tau, stencil, scale, f.sup_abs(T + tau, g))
    solver = model.solver(select)
    state = FlatFlowState(tau, g, phi, model.stencil, beta, f, select, interface, model.scale)
    state.append(E0)
    if _near_faces(E0.cells, truncation_margin):
        state.truncated = True
        return state
    opts = subcell or SubcellOptions()
    E = E0
    sd = None
    if not E.is_empty:
        sd = sd0 if sd0 is not None else np.where(E.cells, -1.0, 1.0) * euclidean_face_distance(E.cells, g.h)
    hn = g.cell_volume()
    for k in range(1, steps + 1):
        t0 = time.perf_counter()
        if E.is_empty:
            state.append(E, StepRecord(k, k * tau, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0))
            continue
        fbar = f.step_average(k, tau, g)
        dq = model.distance_q(sd)
        fq = model.forcing_q(fbar)
        unary = model.static_q + dq + fq
        new = solver.solve(unary).reshape(g.counts)
        segs = None
        if interface == "subcell" and new.any():
            sd_next, segs = _subcell_distance(model, unary, sd, new, select, opts)
        elif new.any():
            sd_next = np.where(new, -1.0, 1.0) * euclidean_face_distance(new, g.h)
        else:
            sd_next = None
        # diagnostics, in the fixed-point model and in floats
        u_new = new.ravel()
        u_old = E.cells.ravel()
        cap_new = model.capillary_q(u_new)
        cap_old = model.capillary_q(u_old)
        diss_q = int(dq[u_new].sum() - dq[u_old].sum())
        energy_q = cap_new + diss_q + int(fq[u_new].sum())
        prev_q = cap_old + int(fq[u_old].sum())
        flips = new ^ E.cells
        dist_old = np.abs(sd).ravel()
        face = euclidean_face_distance(E.cells, g.h)
        adh = float(model.beta.floor_values(g)[new[..., 0]].sum() * g.face_area())
        per = model.pm.interior_perimeter(new)
        diss = float(dist_old[flips.ravel()].sum() * hn)
        forc = float(fbar[new].sum() * hn)
        rec = StepRecord(
            k=k, t=k * tau, volume=float(new.sum() * hn), perimeter_phi=per, adhesion=adh, capillary=per + adh,
            dissipation=diss, forcing=forc, total=per + adh + diss / tau + forc,
            mincut_value=float(int(unary[u_new].sum()) + int(model.w_q[u_new[model.pm.I] != u_new[model.pm.J]].sum())) / model.scale,
            ms=0.0, max_flip_distance=float(face[flips].max(initial=0.0)), flipped=int(flips.sum()),
            energy_q=energy_q, previous_q=prev_q,
        )
        E = BinarySet(g, new)
        sd = sd_next
        rec.ms = 1000 * (time.perf_counter() - t0)
        state.append(E, rec, segs)
        if E.is_empty and state.extinct_at is None:
            state.extinct_at = k
        if on_step is not None:
            on_step(k, E, rec)
        if _near_faces(new, truncation_margin):
            state.truncated = True
            break
    return state


def _subcell_distance(model: StepModel, unary: np.ndarray, sd: np.ndarray, new: np.ndarray, select: str,
                      opts: SubcellOptions):
    """Distance field of the sub-cell interface after a step."""
    g = model.grid
    h = g.h
    S = opts.half_width_cells * h
    delta = opts.level_step_cells * h
    m = int(round(S / delta))
    levels = np.arange(-m, m + 1) * delta
    shifts = quantize(levels * (g.cell_volume() / model.tau), model.scale)
    sdf = sd.ravel()
    band = np.abs(sdf) <= S + opts.band_margin_cells * h
    fixed_in = (sdf < 0) & ~band
    bi = np.nonzero(band)[0]
    loc = -np.ones(g.size, np.int64)
    loc[bi] = np.arange(len(bi))
    I, J, w = model.pm.I, model.pm.J, model.w_q
    both = band[I] & band[J]
    un = unary[bi].copy()
    for P, Q in ((I, J), (J, I)):
        mm = band[P] & ~band[Q]
        np.add.at(un, loc[P[mm]], np.where(fixed_in[Q[mm]], -w[mm], w[mm]))
    jstar = parametric_switch_levels(un, loc[I[both]], loc[J[both]], w[both], shifts, select)
    L = len(levels)
    wv = np.where(jstar == 0, -S - delta / 2, levels[np.clip(jstar - 1, 0, L - 1)] + delta / 2)
    wv[jstar == L] = S + delta / 2
    W = np.where(sdf < 0, np.minimum(sdf, -S - delta), np.maximum(sdf, S + delta))
    W[bi] = wv
    W = smooth_switch_field(W.reshape(g.counts), S, opts.smoothing)
    segs = contour_segments(W, g)
    inside = W < 0
    if len(segs) == 0 or not inside.any():
        return np.where(new, -1.0, 1.0) * euclidean_face_distance(new, h), None
    sd_new = distance_from_segments(segs, inside, g)
    sd_new[(sd_new < 0) != new] = 0.0
    return sd_new, segs


# ---------------------------------------------------------------------------


@dataclass
class ForcingReport:
    gamma_T: float
    c_T: float
    lipschitz_L1: float
    h3_samples: dict
    a_T: float
    b_T: float
    R_T: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def gamma_unconstrained(self) -> bool:
        return math.isinf(self.gamma_T)


def validate_forcing(f, T: float, phi: Anisotropy, eta: float, grid: GridDomain | None = None,
                     time_samples: int = 65, R_T: float = 1.0) -> ForcingReport:
    """Report on the forcing hypotheses over [0, T] and the grid box.

    For bounded f the density-estimate radius is gamma_T = c_Phi eta n / (4 sup|f|),
    which follows from int_A |f| <= sup|f| |A|^(1/n) |A|^((n-1)/n).
    """
    f = _as_forcing(f)
    n = phi.dim
    if grid is None:
        grid = GridDomain((64,) * n, 2.0 / 64, (-1.0,) * (n - 1))
    ts = np.linspace(0.0, T, time_samples)
    vals = [f.cell_values(t, grid) for t in ts]
    violations = []
    if not all(np.all(np.isfinite(v)) for v in vals):
        violations.append("H1: forcing is not finite on the sampled box")
    c_T = float(max(np.abs(v).max() for v in vals))
    gamma = math.inf if c_T == 0 else phi.c_lower * eta * n / (4 * c_T)
    hn = grid.cell_volume()
    dt = ts[1] - ts[0]
    lip = float(max(np.abs(a - b).sum() * hn / dt for a, b in zip(vals[:-1], vals[1:]))) if len(vals) > 1 else 0.0
    h3 = {}
    for tau in (1e-1, 1e-2, 1e-3, 1e-4):
        if tau > T:
            continue
        nodes = tau * np.linspace(0, 1, 9)
        h3[tau] = float(np.mean([np.abs(f.cell_values(s, grid)).sum() * hn for s in nodes]))
    if h3 and not all(math.isfinite(v) for v in h3.values()):
        violations.append("H3: the short-time average of the L1 norm is not finite")
    if not math.isfinite(c_T):
        violations.append("H4': forcing is not bounded")
    X = grid.cell_centers()
    r = np.linalg.norm(X, axis=-1)
    neg = np.max([np.maximum(-v, 0) for v in vals], axis=0)
    a_T = float(neg[r < R_T].max(initial=0.0))
    far = r >= R_T
    b_T = float(np.maximum(neg[far] - a_T, 0).max(initial=0.0) / max(R_T, 1e-12)) if far.any() else 0.0
    return ForcingReport(gamma, c_T, lip, h3, a_T, b_T, R_T, violations)


# ---------------------------------------------------------------------------


@dataclass
class GMMReport:
    taus: list
    times: list
    differences: np.ndarray
    cauchy: bool
    finest: FlatFlowState
    states: list


def gmm_extract(E0: BinarySet, taus, T: float, phi: Anisotropy, beta=0.0, f=None, times=None, **run_kwargs) -> GMMReport:
    """Run flat flows for decreasing tau and compare them at sample times."""
    taus = sorted((float(t) for t in taus), reverse=True)
    if len(taus) < 3:
        raise ValueError("need at least three time steps")
    if times is None:
        times = [T]
    if "scale" not in run_kwargs:
        f_ = _as_forcing(f)
        beta_ = _as_beta(beta, phi)
        run_kwargs["scale"] = StepModel(E0.grid, phi, beta_, taus[-1], run_kwargs.get("stencil"),
                                        forcing_bound=f_.sup_abs(T + taus[0], E0.grid)).scale
    states = [run_flat_flow(E0, tau, T, phi, beta, f, **run_kwargs) for tau in taus]
    diffs = np.array([[symmetric_difference_measure(a.at_time(t), b.at_time(t)) for t in times]
                      for a, b in zip(states[:-1], states[1:])])
    cauchy = bool(np.all(np.diff(diffs, axis=0) <= 1e-15))
    return GMMReport(taus, list(times), diffs, cauchy, states[-1], states)
