"""Command line entry point: simulate, oracle, compare, verify, shapes."""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import io as dio
from . import verify as V
from .config import RunConfig, build, load_config
from .errors import AdmissibilityError, ConfigError, DropletFlowError, SetupError
from .fields import ContactAngleField, ForcingField
from .oracle2d import curve_from_points, run_oracle
from .shapes import WinterbottomShape, isoperimetric_constant, rasterize, winterbottom_constant
from .stepper import run_flat_flow

EXIT_OK, EXIT_CONFIG, EXIT_ADMISSIBILITY, EXIT_TRUNCATION, EXIT_CHECK = 0, 2, 3, 4, 5
THREADS_ENV = "DROPLETFLOW_THREADS"


def bundled(name: str) -> Path:
    """Path of a configuration or expected-values file shipped with the package."""
    return Path(str(resources.files("dropletflow") / "data" / name))


def _resolve_config(arg: str) -> RunConfig:
    p = Path(arg)
    if not p.exists():
        for cand in (bundled(arg), bundled(arg + ".cfg")):
            if cand.exists():
                p = cand
                break
    return load_config(p)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from None


def _outdir(cfg: RunConfig, override: str | None) -> Path:
    out = Path(override or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


_FILE_KEYS = ("anisotropy_file", "initial_file", "beta_file", "forcing_file", "expected")


def _copy_config(cfg: RunConfig, out: Path):
    """Store the configuration next to the artifacts, with file references made absolute."""
    if not cfg.source:
        return
    lines = []
    for raw in Path(cfg.source).read_text().splitlines():
        key = raw.split("#", 1)[0].split("=", 1)[0].strip()
        if key in _FILE_KEYS and getattr(cfg, key):
            raw = f"{key} = {cfg.resolve(getattr(cfg, key)).resolve()}"
        lines.append(raw)
    (out / "config.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------


def _simulate_one(cfg: RunConfig, tau: float, out: Path) -> dict:
    b = build(cfg)
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)

    def on_step(k, E, rec):
        if k % cfg.snapshot_stride == 0:
            dio.write_snapshot(snaps, E, tau, k)

    dio.write_snapshot(snaps, b.E0, tau, 0)
    state = run_flat_flow(b.E0, tau, cfg.T, b.phi, b.beta, b.forcing, cfg.select, interface=cfg.interface,
                          sd0=b.sd0, on_step=on_step)
    dio.write_metrics(out / f"metrics_tau{tau:g}.csv", state.records,
                      {"tau": repr(tau), "h": repr(cfg.h), "truncated": state.truncated})
    dio.save_state(out / f"state_tau{tau:g}.npz", state)
    return {"tau": tau, "steps": state.k, "truncated": state.truncated, "extinct_at": state.extinct_at,
            "final_volume": float(state.records[-1].volume) if state.records else float(b.E0.volume)}


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args.config)
    out = _outdir(cfg, args.output)
    _copy_config(cfg, out)
    build(cfg)  # admissibility and setup errors before any work
    taus = list(cfg.tau)
    workers = min(_workers(), len(taus))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_simulate_one, [cfg] * len(taus), taus, [out] * len(taus)))
    else:
        results = [_simulate_one(cfg, t, out) for t in taus]
    for r in results:
        print(f"tau={r['tau']:g}: {r['steps']} steps, final volume {r['final_volume']:.6g}"
              + (", TRUNCATED" if r["truncated"] else ""))
    if any(r["truncated"] for r in results):
        print("warning: the droplet reached the box faces; enlarge the box", file=sys.stderr)
        return EXIT_TRUNCATION
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _resolve_config(args.config)
    if cfg.dim != 2:
        raise ConfigError("front tracking is planar")
    b = build(cfg)
    if not isinstance(b.shape, WinterbottomShape):
        raise ConfigError("the oracle starts from a Winterbottom initial shape")
    out = _outdir(cfg, args.output)
    _copy_config(cfg, out)
    curve = curve_from_points(b.shape.boundary(4 * cfg.oracle_nodes), cfg.oracle_nodes)
    stride = cfg.snapshot_stride * cfg.tau[0]
    times = np.arange(0, cfg.T + 1e-12, stride)
    run = run_oracle(curve, b.phi, b.beta, b.forcing, cfg.T, cfg.oracle_dt, cfg.oracle_nodes, times)
    rows = []
    for i, (t, c) in enumerate(zip(run.times, run.curves)):
        dio.write_polyline(out / f"curve_t{t:.6g}.csv", c.points, t)
        per = c.perimeter_phi(b.phi)
        cap = c.capillary(b.phi, b.beta)
        rows.append({"k": i, "t": float(t), "volume": c.area(), "perimeter_phi": per, "adhesion": cap - per,
                     "capillary": cap, "dissipation": 0.0, "forcing": 0.0, "mincut_value": 0.0, "ms": 0.0})
    dio.write_metrics(out / "metrics_oracle.csv", rows, {"dt": repr(cfg.oracle_dt), "nodes": cfg.oracle_nodes,
                                                         "stop_reason": run.stop_reason})
    print(f"oracle: {len(rows)} samples" + (f", stopped at t={run.stop_time:.4g}: {run.stop_reason}"
                                              if run.stop_reason else ""))
    return EXIT_OK


def cmd_compare(args) -> int:
    """Paired nested runs from the configured data plus the randomized suite."""
    cfg = _resolve_config(args.config)
    out = _outdir(cfg, args.output)
    _copy_config(cfg, out)
    b = build(cfg)
    reports = []
    if isinstance(b.shape, WinterbottomShape):
        tau = cfg.tau[0]
        inner = WinterbottomShape(b.phi, b.shape.beta0, b.shape.radius * cfg.compare_shrink, b.shape.horizontal_center)
        E1 = rasterize(inner, b.grid)
        fl = b.beta.floor_values(b.grid)
        bound = (1 - 2 * b.beta.eta) * b.phi.phi_en
        b1 = ContactAngleField(b.phi, np.minimum(fl + cfg.compare_dbeta, bound), eta=b.beta.eta, grid=b.grid)
        f1 = b.forcing.cell_values(0.0, b.grid) + cfg.compare_dforcing
        F1 = ForcingField.tabulated([0.0], [f1], b.grid)
        from .stepper import StepModel

        scale = StepModel(b.grid, b.phi, b1, tau, forcing_bound=float(np.abs(f1).max())).scale
        s1 = run_flat_flow(E1, tau, cfg.T, b.phi, b1, F1, "minimal", interface="binary", scale=scale)
        s2 = run_flat_flow(b.E0, tau, cfg.T, b.phi, b.beta, b.forcing, "maximal", interface="binary", scale=scale)
        off = [k for k in range(min(s1.k, s2.k) + 1) if not (s1.set_at(k) <= s2.set_at(k))]
        reports.append(V.CheckReport("paired_inclusion", not off, {"steps": min(s1.k, s2.k) + 1,
                                                                   "violations": len(off)}, {"violations": 0}, off))
    reports.append(V.check_comparison_suite(cfg.seed, cfg.compare_instances))
    return _emit(reports, out)


def _expected(cfg: RunConfig, override: str | None) -> dict:
    path = override or (cfg.resolve(cfg.expected) if cfg.expected else None)
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def run_checks(cfg: RunConfig, states: dict, expected: dict, checks) -> list:
    """The configured checks on saved flat flows (one per tau)."""
    b = build(cfg)
    reports = []
    for tau, st in sorted(states.items(), reverse=True):
        tag = f"[tau={tau:g}]"
        for name in checks:
            if name == "density":
                radii = [r for r in (4 * cfg.h, 8 * cfg.h, 16 * cfg.h)]
                r = V.check_density_estimates(st, radii, expected.get("theta_density"), seed=cfg.seed)
            elif name == "linf":
                r = V.check_linf_displacement(st, expected.get("theta_linf"))
            elif name == "holder":
                r = V.check_holder(st)
                ref = expected.get("holder_C0")
                if ref is not None:
                    c0 = r.metrics["C0"]
                    r.passed = ref / 2 < c0 < 2 * ref
                    r.thresholds["C0"] = f"({ref / 2:.4g}, {2 * ref:.4g})"
            elif name == "coercivity":
                stride = max(1, st.k // 20)
                r = V.check_coercivity([st.set_at(k) for k in range(0, st.k + 1, stride)], b.phi, b.beta, st.stencil)
            elif name == "volume_distance":
                theta = expected.get("theta_density")
                if theta is None:
                    continue
                r = V.check_volume_distance(st, theta)
            elif name == "winterbottom":
                r = V.check_winterbottom_containment(st, _containment_beta0(b))
            else:
                raise ConfigError(f"unknown check {name!r}")
            r.name = f"{r.name}{tag}"
            reports.append(r)
    if "holder" in checks and len(states) > 1:
        c0 = [V.check_holder(st).metrics["C0"] for _, st in sorted(states.items())]
        ratio = max(c0) / max(min(c0), 1e-300)
        reports.append(V.CheckReport("holder_stability", ratio < 2, {"max_over_min": ratio}, {"max_over_min": 2.0}))
    return reports


def _containment_beta0(b) -> float:
    # strictly inside (-Phi(e_n), -(1 - 2 eta) Phi(e_n))
    en = b.phi.phi_en
    return -en * (1 - b.beta.eta)


def cmd_verify(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = load_config(run_dir / "config.txt")
    expected = _expected(cfg, args.expected)
    b = build(cfg)
    states = {}
    for p in sorted(run_dir.glob("state_tau*.npz")):
        st = dio.load_state(p, b.phi, b.beta, b.forcing)
        states[st.tau] = st
    if not states:
        raise ConfigError(f"{run_dir}: no saved runs (state_tau*.npz)")
    checks = args.checks.replace(",", " ").split() if args.checks else list(cfg.checks)
    return _emit(run_checks(cfg, states, expected, checks), run_dir)


def cmd_shapes(args) -> int:
    cfg = _resolve_config(args.config)
    out = _outdir(cfg, args.output)
    b = build(cfg)
    c_iso = isoperimetric_constant(b.phi)
    rows = [("isoperimetric", "", c_iso)]
    for beta0 in args.beta0:
        rows.append(("winterbottom", beta0, winterbottom_constant(b.phi, beta0)))
    with open(out / "shapes.csv", "w") as fh:
        fh.write(f"# anisotropy = {cfg.anisotropy}, n = {cfg.dim}\nkind,beta0,constant\n")
        for kind, beta0, c in rows:
            fh.write(f"{kind},{beta0},{c!r}\n")
    for kind, beta0, c in rows:
        print(f"{kind:13s} {str(beta0):>6s}  {c:.6f}")
    dio.write_snapshot(out, b.E0, 0.0, 0)
    return EXIT_OK


def _emit(reports, out: Path) -> int:
    dio.write_report(out / "report.csv", reports)
    for r in reports:
        print(r.summary())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dropletflow", description="Flat flows of forced anisotropic capillary droplets.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("simulate", cmd_simulate, "run flat flows for every configured tau"),
        ("oracle", cmd_oracle, "planar front tracking of the smooth flow"),
        ("compare", cmd_compare, "paired nested runs and the randomized comparison suite"),
        ("shapes", cmd_shapes, "isoperimetric constants and shape fixtures"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", help="configuration file or bundled name (e.g. halfdisk)")
        s.add_argument("-o", "--output", help="output directory (overrides the configuration)")
        s.set_defaults(func=fn)
        if name == "shapes":
            s.add_argument("--beta0", type=float, nargs="*", default=[0.0])
    s = sub.add_parser("verify", help="run checks on a simulate output directory")
    s.add_argument("run_dir")
    s.add_argument("--checks", help="comma separated subset of the configured checks")
    s.add_argument("--expected", help="expected-values JSON (default: from the configuration)")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdmissibilityError as exc:
        print(f"admissibility error: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    except SetupError as exc:
        print(f"check setup error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except DropletFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
