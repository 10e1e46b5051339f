"""Experiment orchestration: configs, timed runs, sweeps, field dumps.

A run executes the full pipeline -- assemble, per-element local work
(timed as pre0), coarse construction (pre1), preconditioned GMRES (ite)
-- and emits a JSON report.  Sweeps repeat a base configuration along one
parameter axis and summarize to CSV.  Worker counts shape the coarse
partition exactly like a process grid would, and bound the thread pool
used for the element-wise phase.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import assembly, media, mesh, precond, spectral, verify
from .krylov import gmres

SWEEP_AXES = ("cr", "L", "m", "sd")


class ConfigError(ValueError):
    """A run configuration is malformed or violates a precondition."""


def _parse_bool(text: str) -> bool:
    val = text.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _parse_opt_float(text: str):
    return float(text) if text.strip() else None


def _parse_opt_str(text: str):
    return text.strip() or None


# key -> (parser, default); every key is also a CLI flag of the same name
CONFIG_SCHEMA = {
    "dims": (_parse_ints, None),
    "lengths": (_parse_floats, None),
    "spacing": (_parse_floats, None),
    "medium": (str.strip, "uniform"),
    "kappa": (float, 1.0),
    "channels": (int, 3),
    "cr": (float, 0.0),
    "raster": (_parse_opt_str, None),
    "contrast": (float, 1000.0),
    "seed": (int, 0),
    "sd": (int, 1),
    "workers": (int, 1),
    "m": (int, 1),
    "L": (int, 1),
    "adaptive_eps": (_parse_opt_float, None),
    "weights": (str.strip, "kappa"),
    "tol": (float, 1e-5),
    "relative_tol": (_parse_bool, False),
    "restart": (int, 30),
    "maxit": (int, 1000),
    "audit": (_parse_bool, False),
    "report": (_parse_opt_str, None),
    "dump_pressure": (_parse_opt_str, None),
    "dump_velocity": (_parse_opt_str, None),
}


@dataclass(frozen=True)
class RunConfig:
    dims: tuple[int, ...]
    lengths: tuple[float, ...] | None = None
    spacing: tuple[float, ...] | None = None
    medium: str = "uniform"
    kappa: float = 1.0
    channels: int = 3
    cr: float = 0.0
    raster: str | None = None
    contrast: float = 1000.0
    seed: int = 0
    sd: int = 1
    workers: int = 1
    m: int = 1
    L: int = 1
    adaptive_eps: float | None = None
    weights: str = "kappa"
    tol: float = 1e-5
    relative_tol: bool = False
    restart: int = 30
    maxit: int = 1000
    audit: bool = False
    report: str | None = None
    dump_pressure: str | None = None
    dump_velocity: str | None = None

    def grid(self) -> mesh.StructuredGrid:
        dims = tuple(self.dims)
        if self.spacing is not None:
            spacing = tuple(self.spacing)
        else:
            lengths = self.lengths if self.lengths is not None else (1.0,) * len(dims)
            if len(lengths) != len(dims):
                raise ConfigError("lengths must match dims")
            spacing = tuple(l / d for l, d in zip(lengths, dims))
        return mesh.StructuredGrid(dims, spacing)

    def validate(self) -> None:
        """Check module preconditions before any work starts."""
        self.grid()
        if self.medium not in ("uniform", "channel", "raster", "random"):
            raise ConfigError(f"unknown medium {self.medium!r}")
        if self.medium == "raster" and not self.raster:
            raise ConfigError("medium=raster needs a raster path")
        if self.medium == "channel" and self.channels not in (2, 3, 4, 5):
            raise ConfigError(f"channel count must be in 2..5, got {self.channels}")
        if self.medium == "channel" and self.cr < 0:
            raise ConfigError("cr must be >= 0")
        if self.weights not in ("kappa", "lumped"):
            raise ConfigError(f"weights must be 'kappa' or 'lumped', got {self.weights!r}")
        if self.sd < 1 or self.workers < 1 or self.m < 0:
            raise ConfigError("sd and workers must be >= 1 and m >= 0")
        if self.L < 1 and self.adaptive_eps is None:
            raise ConfigError("L must be >= 1")
        if self.adaptive_eps is not None and self.adaptive_eps <= 0:
            raise ConfigError("adaptive_eps must be positive")
        if self.tol <= 0 or self.restart < 1 or self.maxit < 0:
            raise ConfigError("tol must be > 0, restart >= 1, maxit >= 0")

    def build_medium(self, grid: mesh.StructuredGrid) -> media.PermField:
        if self.medium == "uniform":
            return media.uniform_medium(grid, self.kappa)
        if self.medium == "channel":
            return media.channel_medium(grid, self.channels, self.cr)
        if self.medium == "raster":
            if not self.raster:
                raise ConfigError("medium=raster needs a raster path")
            return media.load_raster(self.raster, grid, self.cr)
        if self.medium == "random":
            return media.random_medium(grid, self.contrast, seed=self.seed)
        raise ConfigError(f"unknown medium {self.medium!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("dims", "lengths", "spacing"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out


def parse_config_text(text: str) -> dict:
    """Parse 'key = value' lines; '#' starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def build_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    merged = dict(raw)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(merged) - set(CONFIG_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values = {}
    for key, (parser, default) in CONFIG_SCHEMA.items():
        if key in merged:
            value = merged[key]
            values[key] = parser(value) if isinstance(value, str) else value
        else:
            values[key] = default
    if values["dims"] is None:
        raise ConfigError("config must set dims")
    config = RunConfig(**values)
    config.validate()
    return config


def load_config(path, overrides: dict | None = None) -> RunConfig:
    return build_config(parse_config_text(Path(path).read_text()), overrides)


@dataclass
class RunReport:
    iterations: int
    converged: bool
    dof: int
    n_elements: int
    n_coarse: int
    timings: dict
    residuals: list
    final_residual: float
    final_relative: float
    mass_residual: float
    mass_ok: bool
    config: dict
    certificate: dict | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _element_work(grid, perm, layout, i, config):
    a_i = assembly.assemble_local(grid, perm, layout, i)
    factor = precond.factorize_local(a_i, element=i)
    a_hat = assembly.assemble_interior(grid, perm, layout, i)
    weights = assembly.assemble_weights(grid, perm, layout, i, mode=config.weights)
    if config.adaptive_eps is not None:
        basis = verify.adaptive_basis(a_hat, weights, config.adaptive_eps, element=i)
    else:
        count = min(config.L, weights.n)
        basis = spectral.solve_local_eigen(a_hat, weights, count, element=i)
    return a_i, factor, basis


def run(config: RunConfig) -> RunReport:
    """Execute the two-phase pipeline for one configuration."""
    t_start = time.perf_counter()
    grid = config.grid()
    perm = config.build_medium(grid)
    source = media.well_source(grid)
    b = source.values

    t0 = time.perf_counter()
    a_mat = assembly.assemble_fine(grid, perm)
    layout = mesh.build_layout(grid, config.sd, config.workers, config.m)
    t_assemble = time.perf_counter() - t0

    t0 = time.perf_counter()
    n_el = layout.n_elements
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda i: _element_work(grid, perm, layout, i, config), range(n_el)))
    else:
        results = [_element_work(grid, perm, layout, i, config) for i in range(n_el)]
    local_mats = [r[0] for r in results]
    local_factors = [r[1] for r in results]
    bases = [r[2] for r in results]
    pre0 = time.perf_counter() - t0

    t0 = time.perf_counter()
    space = spectral.build_coarse_space(layout, bases)
    pre = precond.setup(a_mat, layout, space, local_mats, local_factors=local_factors)
    pre1 = time.perf_counter() - t0

    t0 = time.perf_counter()
    pressure, solve_report = gmres(
        a_mat, b, m=pre.apply,
        tol=config.tol, restart=config.restart, maxit=config.maxit,
        relative=config.relative_tol,
    )
    ite = time.perf_counter() - t0

    velocity = assembly.recover_velocity(grid, perm, pressure)
    div = assembly.divergence(grid, velocity)
    mass_residual = float(np.abs(div - b).max())
    # conservation holds to round-off in the recovery; the solver residual
    # is the only systematic contribution
    mass_ok = bool(mass_residual <= 1e-10 * np.abs(b).max() + solve_report.final_residual)

    certificate = None
    if config.audit:
        policy = (
            {"eps_target": config.adaptive_eps, "fixed_count": None}
            if config.adaptive_eps is not None
            else {"eps_target": None, "fixed_count": config.L}
        )
        certificate = verify.audit(grid, perm, layout, weight_mode=config.weights,
                                   seed=config.seed, **policy).to_dict()

    report = RunReport(
        iterations=solve_report.iterations,
        converged=solve_report.converged,
        dof=grid.n,
        n_elements=layout.n_elements,
        n_coarse=space.n_coarse,
        timings={
            "assemble": t_assemble,
            "pre0": pre0,
            "pre1": pre1,
            "ite": ite,
            "total": time.perf_counter() - t_start,
        },
        residuals=solve_report.residuals,
        final_residual=solve_report.final_residual,
        final_relative=solve_report.final_relative,
        mass_residual=mass_residual,
        mass_ok=mass_ok,
        config=config.to_dict(),
        certificate=certificate,
    )
    if config.report:
        Path(config.report).write_text(json.dumps(report.to_dict(), indent=2))
    if config.dump_pressure:
        dump_field(config.dump_pressure, grid, pressure, kind="cell")
    if config.dump_velocity:
        dump_field(config.dump_velocity, grid, velocity, kind="face")
    return report


def sweep(config: RunConfig, axis: str, values, csv_path=None) -> list[RunReport | None]:
    """Repeat a run along one parameter axis; failures do not stop the sweep."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    reports: list[RunReport | None] = []
    rows = []
    for value in values:
        coerced = float(value) if axis == "cr" else int(value)
        cfg = dataclasses.replace(config, **{axis: coerced}, report=None,
                                  dump_pressure=None, dump_velocity=None)
        try:
            rep = run(cfg)
        except Exception as exc:  # recorded, sweep continues
            reports.append(None)
            rows.append((coerced, "error", "", "", "", str(exc)))
            continue
        reports.append(rep)
        rows.append((coerced, rep.iterations, rep.timings["pre0"], rep.timings["pre1"],
                     rep.timings["ite"], "" if rep.converged else "not converged"))
    if csv_path:
        lines = [f"{axis},iter,pre0,pre1,ite,note"]
        for row in rows:
            lines.append(",".join(str(c) for c in row))
        Path(csv_path).write_text("\n".join(lines) + "\n")
    return reports


def dump_field(path, grid: mesh.StructuredGrid, values, kind: str = "cell") -> None:
    """Raw little-endian float64 dump with a JSON sidecar.

    ``kind`` is "cell" (length n, x-fastest) or "face" (internal faces,
    axis-0 block first).
    """
    values = np.asarray(values, dtype="<f8").ravel()
    expected = grid.n if kind == "cell" else sum(assembly.face_counts(grid))
    if kind not in ("cell", "face"):
        raise ValueError(f"kind must be 'cell' or 'face', got {kind!r}")
    if values.size != expected:
        raise ValueError(f"{kind} field on this grid needs {expected} values, got {values.size}")
    path = Path(path)
    path.write_bytes(values.tobytes())
    sidecar = {
        "dims": list(grid.dims),
        "spacing": list(grid.spacing),
        "kind": kind,
        "count": int(values.size),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar))


def load_field(path, grid: mesh.StructuredGrid | None = None) -> tuple[np.ndarray, dict]:
    """Read a dumped field; validates dims against ``grid`` when given."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    values = np.frombuffer(path.read_bytes(), dtype="<f8")
    if values.size != meta.get("count"):
        raise ValueError(f"field holds {values.size} values, sidecar declares {meta.get('count')}")
    if grid is not None and tuple(meta["dims"]) != grid.dims:
        raise ValueError(f"field dims {meta['dims']} do not match grid dims {list(grid.dims)}")
    return values.copy(), meta
