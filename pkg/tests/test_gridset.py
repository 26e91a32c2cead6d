import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dropletflow.anisotropy import euclidean, linear_map, smoothed_l1
from dropletflow.errors import CalibrationError, DegenerateSetError, GridMismatchError
from dropletflow.fields import ContactAngleField
from dropletflow.gridset import (
    BinarySet,
    GridDomain,
    adhesion_energy,
    calibrate_stencil,
    capillary_energy,
    neighborhood_offsets,
    distance_transform,
    pair_model,
    perimeter_phi,
    symmetric_difference_measure,
)
from dropletflow.stepper import default_stencil

from conftest import disk_set

SMALL = GridDomain((6, 5), 0.2, (-0.6,))
cells_small = arrays(bool, SMALL.counts)


def test_grid_invariants():
    g = GridDomain.from_box((-1.0,), (1.0, 0.5), 0.125)
    assert g.counts == (16, 4)
    assert np.allclose(g.upper - g.origin, np.array(g.counts) * g.h)
    assert g.origin[-1] == 0.0
    with pytest.raises(ValueError):
        GridDomain.from_box((0.0,), (1.0, 0.33), 0.125)


def test_volume_is_popcount():
    E = disk_set(1 / 32, 0.7)
    assert E.volume == E.cells.sum() * (1 / 32) ** 2


@settings(max_examples=50, deadline=None)
@given(a=cells_small, b=cells_small, c=cells_small)
def test_symmetric_difference_is_metric(a, b, c):
    A, B, C = (BinarySet(SMALL, x) for x in (a, b, c))
    d = symmetric_difference_measure
    assert d(A, A) == 0
    assert d(A, B) == d(B, A)
    assert d(A, C) <= d(A, B) + d(B, C) + 1e-15
    hn = SMALL.cell_volume()
    assert d(A, B) == pytest.approx(hn * (a & ~b).sum() + hn * (b & ~a).sum())


def test_symmetric_difference_examples():
    g = GridDomain((4, 4), 0.5)
    a = np.zeros(g.counts, bool)
    b = a.copy()
    a[0, 0] = True
    b[3, 3] = True
    assert symmetric_difference_measure(BinarySet(g, a), BinarySet(g, b)) == 2 * 0.25
    with pytest.raises(GridMismatchError):
        symmetric_difference_measure(BinarySet(g, a), BinarySet(SMALL, np.zeros(SMALL.counts, bool)))


@pytest.mark.parametrize("name", ["euclidean", "diag21", "sl1"])
@settings(max_examples=40, deadline=None)
@given(a=cells_small, b=cells_small)
def test_perimeter_submodular_exact(phis, name, a, b):
    phi = phis[name]
    pm = pair_model(SMALL, default_stencil(phi))
    P = pm.interior_perimeter_exact
    assert P(a & b) + P(a | b) <= P(a) + P(b)


def test_stencil_calibration(phis):
    en = np.array([0.0, 1.0])
    for phi in phis.values():
        st = calibrate_stencil(phi, 16)
        assert np.all(st.weights >= 0)
        assert st.phi_disc(en)[0] >= phi(en)
        assert st.phi_disc(en)[0] == pytest.approx(phi(en), rel=1e-6)
        nu = np.stack([np.cos(t := np.linspace(0, np.pi, 181)), np.sin(t)], 1)
        rel = st.phi_disc(nu) / phi(nu) - 1
        assert rel.min() >= st.bias["min"] - 1e-3 and rel.max() <= st.bias["max"] + 1e-3
        assert max(-st.bias["min"], st.bias["max"]) < 0.06


@pytest.mark.parametrize("size", [8, 16, 32, 48, 80])
def test_planar_neighborhoods(size):
    offs = neighborhood_offsets(size, 2)
    assert 2 * len(offs) == size
    assert all(math.gcd(int(a), int(b)) == 1 for a, b in offs)
    # one representative per +/- pair
    keys = {tuple(v) for v in offs} | {tuple(-v) for v in offs}
    assert len(keys) == size
    with pytest.raises(ValueError):
        neighborhood_offsets(size + 2, 2)


def test_wider_stencils_reduce_bias(phis):
    for phi in phis.values():
        spread = [calibrate_stencil(phi, nb).bias for nb in (8, 16, 32)]
        widths = [b["max"] - b["min"] for b in spread]
        assert widths[0] > widths[1] > widths[2]


def test_stencil_mismatch():
    st = default_stencil(euclidean(2))
    E = disk_set(1 / 16, 0.5)
    with pytest.raises(CalibrationError):
        perimeter_phi(E, linear_map(np.diag([2.0, 1.0])), st)


def test_perimeter_examples():
    phi = euclidean(2)
    st = default_stencil(phi)
    errs = []
    for h in (1 / 64, 1 / 128, 1 / 256):
        g = GridDomain.from_box((-1.0,), (2.0, 2.0), h)
        X = g.cell_centers()
        sq = BinarySet(g, (X[..., 0] >= 0) & (X[..., 0] < 1) & (X[..., 1] < 1))
        P = perimeter_phi(sq, phi, st)
        # only the two top corners miss, at O(h)
        assert abs(P - 3) <= 2 * h
        assert perimeter_phi(sq, phi, st, "all") == pytest.approx(P + 1, rel=1e-12)
        assert adhesion_energy(sq, 0.5) == pytest.approx(0.5)
        errs.append(abs(P - 3))
    assert errs[0] > errs[1] > errs[2]
    assert perimeter_phi(BinarySet.empty(g), phi, st) == 0.0


def test_disk_perimeter_converges():
    phi = euclidean(2)
    st = default_stencil(phi)
    g = GridDomain.from_box((-0.5,), (0.5, 1.0), 1 / 512)
    X = g.cell_centers()
    E = BinarySet(g, (X[..., 0] ** 2 + (X[..., 1] - 0.5) ** 2) < 0.09)
    assert perimeter_phi(E, phi, st) == pytest.approx(2 * math.pi * 0.3, rel=0.01)


def test_adhesion_examples():
    E = disk_set(1 / 256, 0.5)
    assert adhesion_energy(E, -0.3) == pytest.approx(-0.3 * 1.0, abs=0.3 / 256 * 2)
    g = E.grid
    X = g.cell_centers()
    floating = BinarySet(g, ((X - [0, 0.6]) ** 2).sum(-1) < 0.04)
    assert adhesion_energy(floating, 0.7) == 0.0


def test_capillary_half_disk():
    E = disk_set(1 / 256, 1.0)
    assert capillary_energy(E, euclidean(2), 0.0, default_stencil(euclidean(2))) == pytest.approx(math.pi, rel=0.02)


def _random_blob(g, rng):
    X = g.cell_centers()
    cells = np.zeros(g.counts, bool)
    for _ in range(rng.integers(1, 5)):
        c = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.2, 0.6)])
        r = rng.uniform(0.05, 0.3)
        cells |= ((X - c) ** 2).sum(-1) <= r * r
    return BinarySet(g, cells)


def test_coercivity_exact_on_random_blobs(phis):
    from fractions import Fraction

    g = GridDomain.from_box((-1.0,), (1.0, 1.0), 1 / 32)
    rng = np.random.default_rng(11)
    eta = 0.25
    for phi in phis.values():
        st = default_stencil(phi)
        pm = pair_model(g, st)
        for sign in (1, -1):
            b = sign * (1 - 2 * eta) * phi.phi_en
            en = Fraction(phi.phi_en)
            fb = Fraction(b)
            for _ in range(25):
                E = _random_blob(g, rng)
                P_int = pm.interior_perimeter_exact(E.cells)
                m = Fraction(E.contact_count)
                P = P_int + en * m
                C = P_int + fb * m
                assert Fraction(eta) * P <= C <= P
                assert (en + fb) / (2 * en) * P <= C


def test_distance_examples():
    g = GridDomain((21, 11), 0.1, (-1.05,))
    c = np.zeros(g.counts, bool)
    c[10, 5] = True
    d = distance_transform(BinarySet(g, c), signed=False)
    for k in range(1, 8):
        assert abs(d[10 + k, 5] - k * 0.1) <= 0.05 + 1e-12
    g = GridDomain.from_box((-0.5,), (0.5, 1.0), 1 / 64)
    X = g.cell_centers()
    E = BinarySet(g, X[..., 1] <= 0.5)
    sd = distance_transform(E)
    # cells in the box side walls' reach see the walls as part of the complement
    inner = 0.5 - np.abs(X[..., 0]) > np.abs(X[..., 1] - 0.5) + 1 / 32
    assert np.abs(sd - (X[..., 1] - 0.5))[inner].max() <= 1 / 64
    with pytest.raises(DegenerateSetError):
        distance_transform(BinarySet.empty(g))


def test_anisotropic_distance_point_source():
    phi = linear_map(np.diag([2.0, 1.0]))
    g = GridDomain.from_box((0.0,), (1.0, 1.0), 1 / 64)
    c = np.zeros(g.counts, bool)
    c[32, 32] = True
    d = distance_transform(BinarySet(g, c), signed=False, metric=phi)
    X = g.cell_centers()
    ctr = X[32, 32]
    s = np.linspace(-0.5, 0.5, 101) / 64
    faces = [np.stack([np.full_like(s, a), s], 1) for a in (-1 / 128, 1 / 128)]
    faces += [np.stack([s, np.full_like(s, a)], 1) for a in (-1 / 128, 1 / 128)]
    B = np.concatenate(faces) + ctr
    P = X.reshape(-1, 2)
    brute = np.min(phi(P[:, None, :] - B[None]), axis=1).reshape(g.counts)
    far = np.linalg.norm(X - ctr, axis=-1) >= 10 / 64
    assert np.abs(d[far] / brute[far] - 1).max() <= 0.02


@settings(max_examples=30, deadline=None)
@given(a=cells_small, b=cells_small)
def test_inclusion_orders_signed_distance(a, b):
    inner = a & b
    outer = a | b
    if not inner.any() or outer.all():
        return
    sdi = distance_transform(BinarySet(SMALL, inner))
    sdo = distance_transform(BinarySet(SMALL, outer))
    assert np.all(sdi >= sdo - 1e-12)


@settings(max_examples=30, deadline=None)
@given(a=cells_small)
def test_distance_is_lipschitz(a):
    if not a.any() or a.all():
        return
    d = distance_transform(BinarySet(SMALL, a))
    h = SMALL.h
    assert np.all(np.abs(np.diff(d, axis=0)) <= h + 1e-12)
    assert np.all(np.abs(np.diff(d, axis=1)) <= h + 1e-12)


def test_three_dimensional_grid():
    phi = euclidean(3)
    g = GridDomain.from_box((-0.5, -0.5), (0.5, 0.5, 0.5), 1 / 16)
    X = g.cell_centers()
    E = BinarySet(g, (X**2).sum(-1) <= 0.16)
    st = default_stencil(phi)
    P = perimeter_phi(E, phi, st)
    assert P == pytest.approx(2 * math.pi * 0.16, rel=0.1)
    beta = ContactAngleField(phi, 0.2)
    assert adhesion_energy(E, beta) == pytest.approx(0.2 * math.pi * 0.16, rel=0.1)
