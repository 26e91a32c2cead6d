import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropletflow.anisotropy import euclidean
from dropletflow.cut import CutSolver, choose_scale, quantize
from dropletflow.errors import AdmissibilityError, CapacityScaleError, DegenerateSetError
from dropletflow.fields import ContactAngleField, ForcingField
from dropletflow.gridset import BinarySet, GridDomain, adhesion_energy, perimeter_phi
from dropletflow.shapes import WinterbottomShape, rasterize
from dropletflow.stepper import (
    atw_components,
    atw_energy,
    default_stencil,
    gmm_extract,
    minimize_step,
    run_flat_flow,
    validate_forcing,
)

from conftest import all_subsets, brute_force_energies, disk_set, step_unary

PHI = euclidean(2)


def _sets(g):
    return [BinarySet(g, row.reshape(g.counts)) for row in all_subsets(g.size)]


def test_two_by_two_energies_by_hand():
    g = GridDomain((2, 2), 1.0, (-1.0,))
    E0 = BinarySet(g, np.array([[True, True], [False, False]]))
    st_ = default_stencil(PHI)
    for E in _sets(g):
        flips = int((E.cells ^ E0.cells).sum())
        # every cell center sits half a cell from the boundary of E0
        expected = perimeter_phi(E, PHI, st_) + adhesion_energy(E, 0.0) + flips * 0.5
        assert atw_energy(E, E0, 1.0, 1, PHI) == pytest.approx(expected, abs=1e-12)
    assert atw_energy(E0, E0, 1.0, 1, PHI) == perimeter_phi(E0, PHI, st_)


def test_energy_examples():
    E0 = disk_set(1 / 32, 0.5)
    comps = atw_components(E0, E0, 0.01, 1, PHI, 0.3)
    assert comps["dissipation"] == 0
    assert comps["total"] == pytest.approx(comps["capillary"])
    empty = BinarySet.empty(E0.grid)
    c = atw_components(empty, E0, 0.01, 1, PHI)
    assert c["capillary"] == 0
    assert c["dissipation"] > 0
    from dropletflow.gridset import euclidean_face_distance

    mass = euclidean_face_distance(E0.cells, E0.grid.h)[E0.cells].sum() * E0.grid.cell_volume()
    assert c["dissipation"] == pytest.approx(mass)
    assert atw_energy(empty, E0, 0.01, 0, PHI) == pytest.approx(E0.volume)
    with pytest.raises(DegenerateSetError):
        atw_energy(E0, empty, 0.01, 1, PHI)
    with pytest.raises(ValueError):
        atw_energy(E0, E0, 0.0, 1, PHI)


@pytest.mark.parametrize("h", [1.0, 0.5, 0.25])
def test_cross_is_its_own_minimizer(h):
    # flip cost 10 h^2 per cell beats the O(h) perimeter gain only for h of order one
    g = GridDomain((3, 3), h, (-1.5 * h,))
    cross = np.zeros((3, 3), bool)
    cross[1, :] = True
    cross[:, 1] = True
    E0 = BinarySet(g, cross)
    tau = 0.05 * h
    energies = [atw_energy(E, E0, tau, 1, PHI) for E in _sets(g)]
    best = _sets(g)[int(np.argmin(energies))]
    assert best == E0
    for sel in ("minimal", "maximal", "any"):
        assert minimize_step(E0, tau, 1, PHI, select=sel) == E0


def test_random_pairwise_minimal_and_maximal():
    rng = np.random.default_rng(3)
    side = 4
    idx = np.arange(side * side).reshape(side, side)
    I = np.concatenate([idx[:-1].ravel(), idx[:, :-1].ravel(), idx[:-1, :-1].ravel()])
    J = np.concatenate([idx[1:].ravel(), idx[:, 1:].ravel(), idx[1:, 1:].ravel()])
    for _ in range(20):
        w = rng.integers(0, 4, len(I))
        a = rng.integers(-6, 7, side * side)
        B, e = brute_force_energies(a, I, J, w)
        opt = B[e == e.min()]
        lo = CutSolver(side * side, I, J, w, "minimal").solve(a)
        hi = CutSolver(side * side, I, J, w, "maximal").solve(a)
        assert CutSolver(side * side, I, J, w).energy(lo, a) == e.min()
        assert CutSolver(side * side, I, J, w).energy(hi, a) == e.min()
        assert np.all(lo <= hi)
        assert np.array_equal(lo, opt.all(0))
        assert np.array_equal(hi, opt.any(0))


def _random_instance(rng):
    nx = int(rng.integers(2, 5))
    ny = int(rng.integers(2, 17 // nx + 1))
    ny = min(ny, 16 // nx)
    h = float(rng.choice([0.05, 0.1, 0.25]))
    g = GridDomain((nx, ny), h, (-nx * h / 2,))
    cells = rng.random(g.counts) < 0.5
    if not cells.any():
        cells[0, 0] = True
    beta = float(rng.uniform(-0.5, 0.5))
    f = float(rng.uniform(-3, 3))
    tau = float(rng.choice([0.1, 1.0]) * h)
    return BinarySet(g, cells), tau, beta, f


def test_step_is_global_minimum_on_small_grids():
    rng = np.random.default_rng(0)
    for _ in range(40):
        E0, tau, beta, f = _random_instance(rng)
        model, unary = step_unary(E0, tau, 1, PHI, beta, f)
        B, e = brute_force_energies(unary, model.pm.I, model.pm.J, model.w_q)
        for sel in ("minimal", "maximal"):
            E = minimize_step(E0, tau, 1, PHI, beta, f, select=sel, scale=model.scale)
            assert model.solver(sel).energy(E.cells, unary) == e.min()
        # float energies agree on the minimizer up to quantization
        Emin = minimize_step(E0, tau, 1, PHI, beta, f, scale=model.scale)
        best = B[int(np.argmin(e))].reshape(E0.grid.counts)
        a = atw_energy(Emin, E0, tau, 1, PHI, beta, f)
        b = atw_energy(BinarySet(E0.grid, best), E0, tau, 1, PHI, beta, f)
        assert a == pytest.approx(b, abs=1e-6)


def test_empty_start_and_capacity_errors():
    g = GridDomain((4, 4), 0.25, (-0.5,))
    assert minimize_step(BinarySet.empty(g), 0.1, 1, PHI, 0.0, 1.0).is_empty
    with pytest.raises(CapacityScaleError):
        choose_scale(0.0)
    with pytest.raises(CapacityScaleError):
        quantize([1e20], 1.0)
    with pytest.raises(AdmissibilityError):
        ContactAngleField(PHI, 1.0)


@pytest.fixture(scope="module")
def small_runs():
    E0 = disk_set(1 / 32, 0.5)
    base = run_flat_flow(E0, 4e-3, 0.08, PHI, 0.0, 0.0)
    forced = run_flat_flow(E0, 4e-3, 0.08, PHI, 0.0, 3.0)
    return E0, base, forced


def test_minimality_inequality_every_step(small_runs):
    _, base, forced = small_runs
    for s in (base, forced):
        assert s.records
        assert all(r.minimality_holds for r in s.records)


def test_forced_droplet_shrinks_faster(small_runs):
    _, base, forced = small_runs
    vb, vf = base.volumes(), forced.volumes()
    assert np.all(vf[1:] < vb[1:])
    assert len(base.records) == math.floor(0.08 / 4e-3 + 1e-9)


def test_hydrophobic_droplet_wets_less():
    g = GridDomain.from_box((-1.25,), (1.25, 1.0), 1 / 32)
    E0 = rasterize(WinterbottomShape(PHI, 0.0, 0.6), g)
    runs = [run_flat_flow(E0, 2e-3, 0.04, PHI, ContactAngleField(PHI, s * 0.9), interface="binary")
            for s in (1, -1)]
    phobic, philic = (r.set_at(r.k).contact_count for r in runs)
    assert phobic < philic


def test_empty_flow_stays_empty():
    g = GridDomain((8, 8), 0.125, (-0.5,))
    s = run_flat_flow(BinarySet.empty(g), 0.01, 0.05, PHI)
    assert all(s.set_at(k).is_empty for k in range(s.k + 1))
    rep = gmm_extract(BinarySet.empty(g), [0.02, 0.01, 0.005], 0.05, PHI, times=[0.02, 0.05])
    assert np.all(rep.differences == 0)


def test_truncation_flag():
    g = GridDomain.from_box((-0.5,), (0.5, 0.5), 1 / 32)
    E0 = disk_set(1 / 32, 0.45, box=0.5)
    s = run_flat_flow(E0, 1e-3, 0.01, PHI)
    assert s.truncated


def test_validate_forcing_examples():
    from dropletflow.anisotropy import Anisotropy

    r0 = validate_forcing(0.0, 1.0, PHI, 0.25)
    assert r0.ok and r0.gamma_unconstrained
    r2 = validate_forcing(2.0, 1.0, PHI, 0.25)
    assert PHI.c_lower == pytest.approx(1.0)
    assert r2.gamma_T == pytest.approx(0.0625)
    assert r2.c_T == 2.0
    sep = ForcingField.separable(lambda t: np.cos(3 * t), lambda x: np.exp(-(x**2).sum(-1)), sup_abs=1.0)
    rs = validate_forcing(sep, 1.0, PHI, 0.25)
    assert rs.ok
    assert 0 < rs.c_T <= 1.0
    assert rs.lipschitz_L1 < 10


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 20), tau=st.floats(1e-3, 0.1), c=st.floats(-2, 2))
def test_step_average_of_linear_forcing(k, tau, c):
    # the 3-point rule is exact on polynomials in time
    f = ForcingField.separable(lambda t: 1 + c * t, lambda x: np.ones(x.shape[:-1]), sup_abs=10.0)
    g = GridDomain((2, 2), 0.5, (-0.5,))
    mean = 1 + c * (k + 0.5) * tau
    assert np.allclose(f.step_average(k, tau, g), mean)


def test_stationary_winterbottom_shape():
    g = GridDomain.from_box((-1.25,), (1.25, 1.25), 1 / 32)
    b0 = 0.4
    shape = WinterbottomShape(PHI, b0, 0.9)
    E0 = rasterize(shape, g)
    rep = gmm_extract(E0, [8e-3, 4e-3, 2e-3], 0.1, PHI, -b0, times=[0.05, 0.1], interface="binary")
    for s in rep.states:
        drift = max(abs(s.set_at(k).volume - E0.volume) for k in range(s.k + 1))
        sym = max((s.set_at(k).cells ^ E0.cells).sum() for k in range(s.k + 1)) * g.cell_volume()
        assert sym < 0.05 * E0.volume
        assert drift < 0.05 * E0.volume
