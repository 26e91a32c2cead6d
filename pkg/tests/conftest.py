import numpy as np
import pytest

from dropletflow.anisotropy import euclidean, linear_map, smoothed_l1
from dropletflow.gridset import BinarySet, GridDomain


@pytest.fixture(scope="session")
def phis():
    return {
        "euclidean": euclidean(2),
        "diag21": linear_map(np.diag([2.0, 1.0])),
        "sl1": smoothed_l1(0.1),
    }


def disk_set(h, R=1.0, box=1.25, center=(0.0, 0.0)):
    g = GridDomain.from_box((-box,), (box, box), h)
    X = g.cell_centers()
    return BinarySet(g, ((X - np.asarray(center)) ** 2).sum(-1) <= R * R)


def all_subsets(n_cells):
    """Every subset of n_cells cells as rows of a boolean matrix."""
    codes = np.arange(2**n_cells, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n_cells)) & 1).astype(bool)


def brute_force_energies(unary_q, I, J, w_q):
    """Integer cut energy of every subset, by exhaustive enumeration."""
    unary_q = np.asarray(unary_q, np.int64).ravel()
    B = all_subsets(unary_q.size)
    cut = (B[:, I] != B[:, J]).astype(np.int64) @ np.asarray(w_q, np.int64)
    return B, B.astype(np.int64) @ unary_q + cut


def step_unary(E0, tau, k, phi, beta=0.0, f=None, scale=None):
    """Quantized unaries and pairs of the step problem, as minimize_step builds them."""
    from dropletflow.gridset import euclidean_face_distance
    from dropletflow.stepper import StepModel, _as_forcing

    g = E0.grid
    fbar = _as_forcing(f).step_average(k, tau, g)
    model = StepModel(g, phi, beta, tau, None, scale, float(np.abs(fbar).max()))
    sd = np.where(E0.cells, -1, 1) * euclidean_face_distance(E0.cells, g.h)
    unary = model.static_q + model.distance_q(sd) + model.forcing_q(fbar)
    return model, unary


ACCEPTANCE: list = []


def record_criterion(name: str, ok: bool, detail: str = ""):
    """Store and print one acceptance line; the summary hook repeats them at the end."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
