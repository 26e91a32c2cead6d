"""Plain-text run configuration (``key = value`` lines, ``#`` comments)."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anisotropy import Anisotropy, make_anisotropy
from .errors import AdmissibilityError, ConfigError
from .fields import ContactAngleField, ForcingField
from .gridset import BinarySet, GridDomain
from .shapes import WinterbottomShape, WulffShape, initial_signed_distance, rasterize

__all__ = ["RunConfig", "load_config", "parse_config", "build"]


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.replace(",", " ").split())


def _matrix(s: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(row) for row in s.split(";"))


@dataclass
class RunConfig:
    name: str = "run"
    dim: int = 2
    h: float = 1 / 64
    box_lower: tuple = (-1.25,)
    box_upper: tuple = (1.25, 1.25)
    anisotropy: str = "euclidean"
    anisotropy_matrix: tuple = ()
    anisotropy_eps: float = 0.1
    anisotropy_file: str = ""
    initial: str = "winterbottom"
    initial_radius: float = 1.0
    initial_center: tuple = ()
    initial_beta0: float = 0.0
    initial_file: str = ""
    beta: float = 0.0
    beta_file: str = ""
    beta_eta: float | None = None
    forcing: float = 0.0
    forcing_file: str = ""
    tau: tuple = (4e-3,)
    T: float = 0.25
    select: str = "any"
    interface: str = "auto"
    snapshot_stride: int = 10
    output: str = "out"
    seed: int = 0
    oracle_nodes: int = 512
    oracle_dt: float = 1e-4
    compare_shrink: float = 0.8
    compare_dbeta: float = 0.2
    compare_dforcing: float = 0.5
    compare_instances: int = 20
    checks: tuple = ("density", "linf", "holder", "coercivity", "volume_distance")
    expected: str = ""
    source: str = field(default="", repr=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        if any(t <= 0 or t >= self.T for t in self.tau):
            raise ConfigError(f"every tau must satisfy 0 < tau < T = {self.T:g}")
        if self.select not in ("any", "minimal", "maximal"):
            raise ConfigError(f"unknown select policy {self.select!r}")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be positive")
        for key in ("anisotropy_file", "initial_file", "beta_file", "forcing_file", "expected"):
            p = getattr(self, key)
            if p and not self.resolve(p).exists():
                raise ConfigError(f"{key}: file {p} does not exist")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.source:
            path = Path(self.source).parent / path
        return path


# field annotations are strings under postponed evaluation
_CONVERT = {
    "int": int,
    "float": float,
    "str": str,
    "tuple": _floats,
    "float | None": lambda s: None if s.lower() == "none" else float(s),
}


def parse_config(text: str, source: str = "") -> RunConfig:
    """Parse ``key = value`` text; unknown or repeated keys are rejected."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "source"}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: repeated key {key!r}")
        try:
            if key == "anisotropy_matrix":
                values[key] = _matrix(val)
            elif key == "checks":
                values[key] = tuple(val.replace(",", " ").split())
            else:
                values[key] = _CONVERT[fields[key].type](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    values["source"] = source
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


@dataclass
class Built:
    """Objects constructed from a RunConfig."""

    grid: GridDomain
    phi: Anisotropy
    beta: ContactAngleField
    forcing: ForcingField
    E0: BinarySet
    sd0: np.ndarray | None
    shape: object | None


def build(cfg: RunConfig) -> Built:
    """Grid, anisotropy, data fields and initial set of a configuration.

    Raises AdmissibilityError when beta violates sup|beta| <= (1 - 2 eta) Phi(e_n).
    """
    n = cfg.dim
    if len(cfg.box_lower) != n - 1 or len(cfg.box_upper) != n:
        raise ConfigError("box_lower needs n - 1 and box_upper n entries")
    try:
        grid = GridDomain.from_box(cfg.box_lower, cfg.box_upper, cfg.h)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    params: dict = {}
    if cfg.anisotropy_matrix:
        params["A"] = np.asarray(cfg.anisotropy_matrix, float)
    if cfg.anisotropy.lower() in ("smoothedl1", "smoothed_l1"):
        params["eps"] = cfg.anisotropy_eps
    if cfg.anisotropy_file:
        params["path"] = cfg.resolve(cfg.anisotropy_file)
    try:
        phi = make_anisotropy(cfg.anisotropy, n, **params)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, AdmissibilityError):
            raise
        raise ConfigError(f"anisotropy: {exc}") from None
    if cfg.beta_file:
        table = np.loadtxt(cfg.resolve(cfg.beta_file), ndmin=1).reshape(grid.counts[:-1])
        beta = ContactAngleField(phi, table, eta=cfg.beta_eta, grid=grid)
    else:
        beta = ContactAngleField(phi, cfg.beta, eta=cfg.beta_eta)
    if cfg.forcing_file:
        data = np.load(cfg.resolve(cfg.forcing_file))
        forcing = ForcingField.tabulated(data["times"], data["table"], grid)
    else:
        forcing = ForcingField.constant(cfg.forcing)
    shape = None
    sd0 = None
    center = cfg.initial_center or (0.0,) * (n - 1)
    if cfg.initial == "file":
        from .io import read_snapshot

        E0 = read_snapshot(cfg.resolve(cfg.initial_file), grid)
    elif cfg.initial == "winterbottom":
        shape = WinterbottomShape(phi, cfg.initial_beta0, cfg.initial_radius, tuple(center))
        E0 = rasterize(shape, grid)
        if n == 2:
            sd0 = initial_signed_distance(shape, grid, E0)
    elif cfg.initial == "wulff":
        shape = WulffShape(phi, tuple(center) if len(center) == n else tuple(center) + (cfg.initial_radius * 1.1,),
                           cfg.initial_radius)
        E0 = rasterize(shape, grid)
    else:
        raise ConfigError(f"unknown initial shape {cfg.initial!r}")
    return Built(grid, phi, beta, forcing, E0, sd0, shape)
