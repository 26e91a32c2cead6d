import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from dropletflow.anisotropy import euclidean, linear_map
from dropletflow.errors import SetupError
from dropletflow.oracle2d import (
    STABILITY_CONSTANT,
    SmoothCurve,
    contact_residuals,
    half_circle,
    phi_curvature,
    phi_curvatures,
    run_oracle,
    step_front,
    strong_comparison_check,
)
from dropletflow.subcell import segment_distance

PHI = euclidean(2)
DIAG = linear_map(np.diag([2.0, 1.0]))


def test_circle_curvature():
    for R in (0.5, 1.0, 2.0):
        c = half_circle(R, 256)
        k = phi_curvatures(c, PHI)
        assert np.allclose(k, 1 / R, rtol=5e-3)
        assert phi_curvature(c, PHI, 100) == pytest.approx(1 / R, rel=5e-3)


def test_segment_curvature_and_boundary_nodes():
    P = np.stack([np.linspace(1, -1, 20), np.full(20, 0.3)], 1)
    P = np.vstack([[1.0, 0.0], P, [-1.0, 0.0]])
    c = SmoothCurve(P)
    for i in range(2, 19):
        assert abs(phi_curvature(c, PHI, i)) < 1e-8
    with pytest.raises(ValueError):
        phi_curvature(c, PHI, 0)
    with pytest.raises(ValueError):
        phi_curvature(c, PHI, c.nodes - 1)


def _ellipse_point(a, b, s):
    return np.array([a * math.cos(s), b * math.sin(s)])


def _ellipse_sd(a, b, x):
    """Signed distance to the ellipse by exact projection, negative inside."""
    s0 = math.atan2(x[1] / b, x[0] / a)
    res = minimize_scalar(lambda s: np.sum((_ellipse_point(a, b, s) - x) ** 2),
                          bounds=(s0 - 0.5, s0 + 0.5), method="bounded", options={"xatol": 1e-14})
    d = math.sqrt(res.fun)
    return -d if (x[0] / a) ** 2 + (x[1] / b) ** 2 < 1 else d


def _definition_curvature(phi, a, b, x, delta=2e-3):
    """div grad Phi(grad R) at x, with R the signed distance, by central differences."""
    def grad_R(y):
        e = np.eye(2) * delta
        return np.array([(_ellipse_sd(a, b, y + e[i]) - _ellipse_sd(a, b, y - e[i])) / (2 * delta) for i in range(2)])

    div = 0.0
    for i in range(2):
        e = np.eye(2)[i] * delta
        gp = phi.gradient(grad_R(x + e)[None])[0, i]
        gm = phi.gradient(grad_R(x - e)[None])[0, i]
        div += (gp - gm) / (2 * delta)
    return div


def test_ellipse_curvature_matches_definition():
    a, b = 0.8, 0.5
    s = np.linspace(0, np.pi, 256)
    P = np.stack([a * np.cos(s), b * np.sin(s)], 1)
    P[[0, -1], 1] = 0.0
    c = SmoothCurve(P)
    for i in (20, 64, 128, 200):
        ref = _definition_curvature(DIAG, a, b, P[i])
        assert phi_curvature(c, DIAG, i) == pytest.approx(ref, rel=0.02)


def _radius(run):
    return np.sqrt(2 * run.areas / np.pi)


@pytest.fixture(scope="module")
def unforced_run():
    ts = np.linspace(0, 0.4, 9)
    return ts, run_oracle(half_circle(1.0, 512), PHI, 0.0, 0.0, 0.4, 1e-4, 512, ts)


def test_unforced_half_circle_radius(unforced_run):
    ts, run = unforced_run
    assert run.stop_reason is None
    assert np.allclose(run.times, ts)
    assert np.all(np.abs(_radius(run) / np.sqrt(1 - 2 * ts) - 1) < 0.01)


def test_unforced_energy_nonincreasing(unforced_run):
    _, run = unforced_run
    assert np.all(np.diff(run.energies) <= 1e-9)


def test_forced_half_circle_against_ode():
    c = 0.5
    T = 0.3
    ts = np.linspace(0, T, 7)
    run = run_oracle(half_circle(1.0, 512), PHI, 0.0, c, T, 1e-4, 512, ts)
    sol = solve_ivp(lambda t, R: -1 / R - c, (0, T), [1.0], t_eval=ts, method="DOP853", rtol=1e-11, atol=1e-12)
    assert np.all(np.abs(_radius(run) / sol.y[0] - 1) < 0.01)


def test_area_error_shrinks_under_refinement():
    errs = []
    for nodes, dt in ((64, 8e-4), (128, 4e-4), (256, 2e-4)):
        run = run_oracle(half_circle(1.0, nodes), PHI, 0.0, 0.0, 0.2, dt, nodes)
        errs.append(abs(run.areas[-1] / (math.pi / 2 * (1 - 0.4)) - 1))
    assert errs[0] > errs[1] > errs[2]
    # at least first order
    assert errs[1] / errs[2] > 1.8


def test_contact_condition_enforced_each_step():
    th = np.linspace(0, np.pi, 257)
    r = 1 + 0.08 * np.sin(3 * th) ** 2
    P = np.stack([r * np.cos(th), r * np.sin(th)], 1)
    P[[0, -1], 1] = 0.0
    for phi, beta in ((PHI, 0.0), (PHI, 0.3), (DIAG, -0.2)):
        c = SmoothCurve(P)
        for _ in range(20):
            c = step_front(c, phi, beta, 0.0, 2e-4)
            assert max(abs(v) for v in contact_residuals(c, phi, beta)) <= 1e-6
            assert np.all(c.points[[0, -1], 1] == 0)
            assert np.all(c.points[1:-1, 1] > 0)


def test_step_rejects_unstable_dt():
    c = half_circle(1.0, 256)
    with pytest.raises(ValueError):
        step_front(c, PHI, 0.0, 0.0, 10 * STABILITY_CONSTANT * c.spacing().min())


def test_signed_distance_velocity():
    a, b = 0.8, 0.5
    s = np.linspace(0, np.pi, 257)
    P = np.stack([a * np.cos(s), b * np.sin(s)], 1)
    P[[0, -1], 1] = 0.0
    f = 0.5
    c0 = SmoothCurve(P)
    dt = 1e-4
    c1 = c0
    for _ in range(10):
        c1 = step_front(c1, DIAG, 0.0, f, dt)
    X = c0.points[40:-40]
    S = c1.segments()
    d = segment_distance(X, np.broadcast_to(S, (len(X),) + S.shape))
    sd = np.where(c1.contains(X), -d, d)
    rate = sd / (10 * dt)
    expected = phi_curvatures(c0, DIAG)[39:-39] + f
    assert np.median(np.abs(rate / expected - 1)) < 0.05


def test_strong_comparison_examples():
    inner, outer = half_circle(0.5, 256), half_circle(1.0, 256)
    res = strong_comparison_check(inner, outer, PHI, 0.0, 0.0, 0.0, 0.0, 0.1, 2e-4, 256, 11)
    assert res.ordered
    assert np.all(res.gaps > 0)
    # exact radii sqrt(R0^2 - 2t) stay ordered with gap R_out(t) - R_in(t)
    t = res.times
    exact = np.sqrt(1 - 2 * t) - np.sqrt(0.25 - 2 * t)
    assert np.allclose(res.gaps, exact, rtol=0.05)
    same = half_circle(1.0, 256)
    res = strong_comparison_check(same, same, PHI, 0.0, 0.0, 1.0, 0.0, 0.05, 2e-4, 256, 6)
    assert res.ordered
    with pytest.raises(SetupError):
        strong_comparison_check(same, same, PHI, 0.0, 0.0, 0.0, 0.0, 0.05, 2e-4)
    with pytest.raises(SetupError):
        strong_comparison_check(outer, inner, PHI, 0.0, 0.0, 0.0, 0.0, 0.05, 2e-4)


def test_oracle_stops_at_extinction():
    run = run_oracle(half_circle(0.3, 128), PHI, 0.0, 0.0, 0.1, 2e-5, 128)
    assert run.stop_reason is not None
    assert run.stop_time < 0.045 + 1e-3
