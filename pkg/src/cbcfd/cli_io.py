"""Configuration files, field and table export, and the command-line entry point.

A run is described by a TOML document::

    scenario = "e3"

    [domain]   x_lo, x_hi, y_lo, y_hi
    [grid]     nx, ny, bc = "periodic" | "noflow"
    [time]     t_end, n_pressure, q_ratio
    [physics]  porosity, permeability (number or {default, boxes}),
               viscosity = {model = "quarter-power", mu0, mobility_ratio},
               dispersion = {alpha_m, alpha_l, alpha_t}
    [wells]    injectors / producers = [{x, y, rate, concentration}]
    [output]   directory, snapshot_times, formats, fields

Every section is optional; missing values come from the named scenario.
Manufactured scenarios fix their physics, so ``[physics]`` and ``[wells]``
are rejected for them. Unknown keys are errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import tomli
import tomli_w

from .diagnostics import ErrorRecord, MassSeries, eoc
from .grid import BoundaryKind, Domain, GridError, GridSpec, Location, TimeGrid, build_grid
from .linsolve import SolverError
from .physics import BearScheidegger, PhysicsConfig, PhysicsError, Piecewise, QuarterPower, Well, WellConfig
from .scenarios import SCENARIOS, get_scenario
from .timestepper import OutputPolicy, RunError, RunReport, RunSpec, run

OUTPUT_ENV = "CBCFD_OUTPUT_DIR"
FORMATS = ("csv", "vtk")
EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2

_SECTIONS = {
    "domain": {"x_lo", "x_hi", "y_lo", "y_hi"},
    "grid": {"nx", "ny", "bc"},
    "time": {"t_end", "n_pressure", "q_ratio"},
    "physics": {"porosity", "permeability", "viscosity", "dispersion"},
    "wells": {"injectors", "producers"},
    "output": {"directory", "snapshot_times", "formats", "fields"},
}
_STATE_FIELDS = ("C", "Vx", "Vy", "Wx", "Wy")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending key path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- parsing -------------------------------------------------------------------


def _check_keys(table: dict, allowed: set, path: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _number(value, path: str, integer: bool = False, positive: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        value = int(value)
    elif math.isnan(value):
        raise ConfigError(path, "not a number")
    if positive and not value > 0:
        raise ConfigError(path, f"must be positive, got {value!r}")
    return value if integer else float(value)


def _table(doc: dict, name: str) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(name, "expected a table")
    _check_keys(value, _SECTIONS[name], name)
    return value


def _coefficient(value, path: str):
    if isinstance(value, dict):
        _check_keys(value, {"default", "boxes"}, path)
        if "default" not in value:
            raise ConfigError(f"{path}.default", "missing")
        boxes = []
        for i, box in enumerate(value.get("boxes", [])):
            if not isinstance(box, list) or len(box) != 5:
                raise ConfigError(f"{path}.boxes[{i}]", "expected [x0, x1, y0, y1, value]")
            boxes.append(tuple(_number(b, f"{path}.boxes[{i}]") for b in box))
        default = _number(value["default"], f"{path}.default", positive=True)
        if not boxes:
            return default
        return Piecewise(default, tuple(boxes))
    return _number(value, path, positive=True)


def _viscosity(value, path: str) -> QuarterPower:
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a table")
    _check_keys(value, {"model", "mu0", "mobility_ratio"}, path)
    if value.get("model", "quarter-power") != "quarter-power":
        raise ConfigError(f"{path}.model", "only 'quarter-power' is configurable")
    return QuarterPower(
        _number(value.get("mu0", 1.0), f"{path}.mu0", positive=True),
        _number(value.get("mobility_ratio", 1.0), f"{path}.mobility_ratio", positive=True),
    )


def _dispersion(value, path: str) -> BearScheidegger:
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a table")
    _check_keys(value, {"alpha_m", "alpha_l", "alpha_t"}, path)
    a = {k: _number(value.get(k, 0.0), f"{path}.{k}") for k in ("alpha_m", "alpha_l", "alpha_t")}
    for k, v in a.items():
        if v < 0:
            raise ConfigError(f"{path}.{k}", "must be non-negative")
    return BearScheidegger(a["alpha_m"], a["alpha_l"], a["alpha_t"])


def _wells(value, path: str) -> tuple:
    if not isinstance(value, list):
        raise ConfigError(path, "expected an array of tables")
    out = []
    for i, w in enumerate(value):
        p = f"{path}[{i}]"
        if not isinstance(w, dict):
            raise ConfigError(p, "expected a table")
        _check_keys(w, {"x", "y", "rate", "concentration"}, p)
        for k in ("x", "y", "rate"):
            if k not in w:
                raise ConfigError(f"{p}.{k}", "missing")
        out.append(Well(_number(w["x"], f"{p}.x"), _number(w["y"], f"{p}.y"), _number(w["rate"], f"{p}.rate"),
                        _number(w.get("concentration", 1.0), f"{p}.concentration")))
    return tuple(out)


def parse_config(text: str) -> RunSpec:
    """Validate a TOML document and turn it into a :class:`RunSpec`."""
    if not text.strip():
        raise ConfigError("<document>", "empty configuration")
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"malformed TOML: {exc}") from exc
    _check_keys(doc, set(_SECTIONS) | {"scenario"}, "")
    if "scenario" not in doc:
        raise ConfigError("scenario", "missing")
    name = doc["scenario"]
    if name not in SCENARIOS:
        raise ConfigError("scenario", f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    sc = get_scenario(name)

    d = _table(doc, "domain")
    base = sc.domain
    try:
        domain = Domain(*(_number(d.get(k, getattr(base, k)), f"domain.{k}") for k in ("x_lo", "x_hi", "y_lo", "y_hi")))
    except GridError as exc:
        raise ConfigError("domain", str(exc)) from exc

    g = _table(doc, "grid")
    nx = _number(g.get("nx", sc.defaults.get("nx", 20)), "grid.nx", integer=True, positive=True)
    ny = _number(g.get("ny", nx), "grid.ny", integer=True, positive=True)
    try:
        bc = BoundaryKind(g.get("bc", sc.bc.value))
    except ValueError as exc:
        raise ConfigError("grid.bc", f"expected one of {[b.value for b in BoundaryKind]}") from exc
    if bc is not sc.bc:
        raise ConfigError("grid.bc", f"scenario {name} needs {sc.bc.value} boundaries")
    try:
        grid = build_grid(domain, nx, ny, bc)
    except GridError as exc:
        raise ConfigError("grid", str(exc)) from exc

    t = _table(doc, "time")
    t_end = _number(t.get("t_end", sc.t_end), "time.t_end", positive=True)
    q = _number(t.get("q_ratio", sc.defaults.get("ratio_q", 1)), "time.q_ratio", integer=True, positive=True)
    if "n_pressure" in t:
        n_p = _number(t["n_pressure"], "time.n_pressure", integer=True, positive=True)
    elif "n_pressure" in sc.defaults:
        n_p = sc.defaults["n_pressure"]
    else:
        n_conc = nx * nx  # dt_c = h^2 on the unit square
        if n_conc % q:
            raise ConfigError("time.n_pressure", f"required: {nx}^2 steps are not divisible by Q={q}")
        n_p = n_conc // q
    time = TimeGrid(t_end, n_p, q)

    physics = sc.physics
    ph, wl = _table(doc, "physics"), _table(doc, "wells")
    if sc.manufactured and (ph or wl):
        raise ConfigError("physics" if ph else "wells", f"manufactured scenario {name} fixes its physics")
    if ph or wl:
        physics = PhysicsConfig(
            porosity=_coefficient(ph["porosity"], "physics.porosity") if "porosity" in ph else physics.porosity,
            permeability=_coefficient(ph["permeability"], "physics.permeability") if "permeability" in ph else physics.permeability,
            viscosity=_viscosity(ph["viscosity"], "physics.viscosity") if "viscosity" in ph else physics.viscosity,
            dispersion=_dispersion(ph["dispersion"], "physics.dispersion") if "dispersion" in ph else physics.dispersion,
            sources=WellConfig(
                _wells(wl["injectors"], "wells.injectors") if "injectors" in wl else physics.sources.injectors,
                _wells(wl["producers"], "wells.producers") if "producers" in wl else physics.sources.producers,
            ),
        )

    o = _table(doc, "output")
    times = o.get("snapshot_times", [])
    if not isinstance(times, list):
        raise ConfigError("output.snapshot_times", "expected an array")
    snaps = tuple(_number(v, f"output.snapshot_times[{i}]") for i, v in enumerate(times))
    for i, v in enumerate(snaps):
        if not 0.0 <= v <= t_end:
            raise ConfigError(f"output.snapshot_times[{i}]", f"outside [0, {t_end}]")
    formats = tuple(o.get("formats", ["csv"]))
    for i, f in enumerate(formats):
        if f not in FORMATS:
            raise ConfigError(f"output.formats[{i}]", f"expected one of {FORMATS}")
    fields = tuple(o.get("fields", ["C"]))
    for i, f in enumerate(fields):
        if f not in _STATE_FIELDS:
            raise ConfigError(f"output.fields[{i}]", f"expected one of {_STATE_FIELDS}")
    directory = o.get("directory", "output")
    if not isinstance(directory, str) or not directory:
        raise ConfigError("output.directory", "expected a non-empty string")
    output = OutputPolicy(snapshot_times=snaps, fields=fields, directory=directory, formats=formats)

    spec = RunSpec(grid, time, physics, sc, output)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError("<document>", str(exc)) from exc
    return spec


# -- serialization -------------------------------------------------------------


def _coef_doc(c):
    if isinstance(c, Piecewise):
        return {"default": c.default, "boxes": [list(b) for b in c.boxes]}
    return float(c)


def _wells_doc(wells) -> list:
    return [{"x": w.x, "y": w.y, "rate": w.rate, "concentration": w.concentration} for w in wells]


def serialize(spec: RunSpec) -> str:
    """TOML text that :func:`parse_config` maps back to an equal spec."""
    g, t, o = spec.grid, spec.time, spec.output
    doc = {
        "scenario": spec.scenario.name,
        "domain": {k: getattr(g.domain, k) for k in ("x_lo", "x_hi", "y_lo", "y_hi")},
        "grid": {"nx": g.nx, "ny": g.ny, "bc": g.bc.value},
        "time": {"t_end": t.t_end, "n_pressure": t.n_pressure, "q_ratio": t.ratio_q},
        "output": {
            "directory": o.directory,
            "snapshot_times": list(o.snapshot_times),
            "formats": list(o.formats),
            "fields": list(o.fields),
        },
    }
    if not spec.scenario.manufactured:
        p = spec.physics
        if not isinstance(p.viscosity, QuarterPower) or not isinstance(p.dispersion, BearScheidegger):
            raise ConfigError("physics", "only quarter-power viscosity and Bear-Scheidegger dispersion serialize")
        doc["physics"] = {
            "porosity": _coef_doc(p.porosity),
            "permeability": _coef_doc(p.permeability),
            "viscosity": {"model": "quarter-power", "mu0": p.viscosity.mu0, "mobility_ratio": p.viscosity.mobility_ratio},
            "dispersion": {"alpha_m": float(p.dispersion.alpha_m), "alpha_l": p.dispersion.alpha_l, "alpha_t": p.dispersion.alpha_t},
        }
        doc["wells"] = {"injectors": _wells_doc(p.sources.injectors), "producers": _wells_doc(p.sources.producers)}
    return tomli_w.dumps(doc)


# -- export --------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_field_csv(path, grid: GridSpec, values: np.ndarray, loc: Location = Location.CELL) -> Path:
    """Rows ``i,j,x,y,value`` in row-major order."""
    path = Path(path)
    X, Y = grid.coords(loc)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != X.shape:
        raise ValueError(f"field shape {values.shape} does not match {loc.value} shape {X.shape}")
    lines = ["i,j,x,y,value"]
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            lines.append(f"{i},{j},{_fmt(X[i, j])},{_fmt(Y[i, j])},{_fmt(values[i, j])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_vtk(path, grid: GridSpec, name: str, values: np.ndarray) -> Path:
    """Legacy ASCII structured-points file with one point per cell centre."""
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.nx, grid.ny):
        raise ValueError("VTK export takes cell fields")
    x0, y0 = grid.centers("x")[0], grid.centers("y")[0]
    head = [
        "# vtk DataFile Version 3.0",
        f"{name}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {grid.nx} {grid.ny} 1",
        f"ORIGIN {_fmt(x0)} {_fmt(y0)} 0.0",
        f"SPACING {_fmt(grid.hx)} {_fmt(grid.hy)} 1.0",
        f"POINT_DATA {grid.nx * grid.ny}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    # VTK orders points with x fastest
    body = [_fmt(v) for v in values.T.ravel()]
    path.write_text("\n".join(head + body) + "\n")
    return path


def write_eoc_table(path, records: Sequence[ErrorRecord]) -> Path:
    """Columns ``N, e_c, order, e_p, order, e_u, order, |e_p|_1, order``."""
    path = Path(path)
    rows = eoc(records) if len(records) > 1 else list(records)
    lines = ["N,e_c,order,e_p,order,e_u,order,|e_p|_1,order"]
    for r in rows:
        cells = [str(r.nx)]
        for k, v in enumerate(r.values()):
            cells.append(f"{v:.6e}")
            cells.append("" if r.orders is None else f"{r.orders[k]:.4f}")
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_mass_series(path, series: MassSeries) -> Path:
    path = Path(path)
    lines = ["n,t,E"]
    for n, (t, e) in enumerate(zip(series.times, series.errors)):
        lines.append(f"{n},{_fmt(t)},{_fmt(e)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def output_directory(policy: OutputPolicy) -> Path:
    """The policy directory unless the environment overrides it."""
    return Path(os.environ.get(OUTPUT_ENV) or policy.directory)


def _field_location(name: str) -> Location:
    return {"C": Location.CELL, "Vx": Location.XFACE, "Wx": Location.XFACE}.get(name, Location.YFACE)


def export(report: RunReport, policy: Optional[OutputPolicy] = None, directory=None) -> list:
    """Write snapshots, the final state and the mass series; return the paths."""
    policy = policy or report.spec.output
    out = Path(directory) if directory is not None else output_directory(policy)
    out.mkdir(parents=True, exist_ok=True)
    grid = report.spec.grid
    written = []
    frames = [(f"t{s['t']:.6g}", s) for _, s in sorted(report.snapshots.items())]
    final = {"t": report.final.t, **{f: getattr(report.final, f) for f in policy.fields}}
    frames.append(("final", final))
    for tag, frame in frames:
        for name in policy.fields:
            if name not in frame:
                continue
            if "csv" in policy.formats:
                written.append(write_field_csv(out / f"{name}_{tag}.csv", grid, frame[name], _field_location(name)))
            if "vtk" in policy.formats and name == "C":
                written.append(write_vtk(out / f"{name}_{tag}.vtk", grid, name, frame[name]))
    written.append(write_mass_series(out / "mass.csv", report.mass))
    if report.errors is not None:
        written.append(write_eoc_table(out / "errors.csv", [report.errors]))
    return written


# -- convergence studies -------------------------------------------------------


def convergence_spec(scenario: str, q: int, nx: int) -> RunSpec:
    """Manufactured run with ``N_c = N_x^2`` concentration steps."""
    sc = get_scenario(scenario)
    if not sc.manufactured:
        raise ConfigError("scenario", f"{scenario} has no exact solution")
    n_conc = nx * nx
    if n_conc % q:
        raise ConfigError("q", f"{nx}^2 steps are not divisible by Q={q}")
    grid = build_grid(sc.domain, nx, nx, sc.bc)
    return RunSpec(grid, TimeGrid.from_steps(sc.t_end, n_conc, q), sc.physics, sc)


def _convergence_one(args) -> ErrorRecord:
    scenario, q, nx = args
    return run(convergence_spec(scenario, q, nx)).errors


def convergence_study(scenario: str, q: int, sizes: Iterable[int], jobs: int = 1) -> list:
    """Error records with pairwise orders for each ``N_x`` in ``sizes``."""
    sizes = list(sizes)
    if len(set(sizes)) != len(sizes):
        raise ConfigError("nx", "duplicate grid sizes")
    for nx in sizes:
        convergence_spec(scenario, q, nx)  # validate before running anything
    tasks = [(scenario, q, nx) for nx in sizes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_convergence_one, tasks))
    else:
        records = [_convergence_one(t) for t in tasks]
    return eoc(records) if len(records) > 1 else records


# -- command line --------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbcfd", description="Compact block-centred miscible displacement solver")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a configured simulation and export fields")
    s.add_argument("--config", required=True, type=Path)
    c = sub.add_parser("convergence", help="manufactured-solution convergence table")
    c.add_argument("--scenario", required=True, choices=("e1", "e2"))
    c.add_argument("--q", type=int, default=1)
    c.add_argument("--nx", required=True, help="comma-separated grid sizes, e.g. 20,30,40")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--output", type=Path, default=None, help="directory for eoc.csv")
    m = sub.add_parser("mass-report", help="run a configuration and report the mass error")
    m.add_argument("--config", required=True, type=Path)
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    return p


def _load(path: Path) -> RunSpec:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from exc
    return parse_config(text)


def _print_table(records: Sequence[ErrorRecord]) -> None:
    print(f"{'N':>4} {'e_c':>10} {'order':>6} {'e_p':>10} {'order':>6} {'e_u':>10} {'order':>6} {'|e_p|_1':>10} {'order':>6}")
    for r in records:
        cells = []
        for k, v in enumerate(r.values()):
            cells.append(f"{v:10.3e} " + ("      " if r.orders is None else f"{r.orders[k]:6.2f}"))
        print(f"{r.nx:>4} " + " ".join(cells))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            for name in SCENARIOS:
                sc = get_scenario(name)
                print(f"{name}  {sc.bc.value:8}  {sc.description}")
            return EXIT_OK
        if args.command == "convergence":
            try:
                sizes = [int(v) for v in args.nx.split(",") if v.strip()]
            except ValueError as exc:
                raise ConfigError("nx", f"expected comma-separated integers, got {args.nx!r}") from exc
            if not sizes or args.q < 1:
                raise ConfigError("nx" if not sizes else "q", "invalid value")
            records = convergence_study(args.scenario, args.q, sizes, jobs=args.jobs)
            _print_table(records)
            out = args.output or Path(os.environ.get(OUTPUT_ENV) or "output")
            out.mkdir(parents=True, exist_ok=True)
            print(f"wrote {write_eoc_table(out / f'eoc_{args.scenario}_q{args.q}.csv', records)}")
            return EXIT_OK
        spec = _load(args.config)
        report = run(spec)
        if args.command == "simulate":
            paths = export(report)
            print(f"{spec.scenario.name}: {report.concentration_solves} concentration steps, "
                  f"{report.pressure_solves} pressure solves, max |E| = {report.mass.max_abs:.3e}")
            print(f"wrote {len(paths)} files to {output_directory(spec.output)}")
        else:
            out = output_directory(spec.output)
            out.mkdir(parents=True, exist_ok=True)
            path = write_mass_series(out / "mass.csv", report.mass)
            print(f"max |E| = {report.mass.max_abs:.3e} (relative {report.mass.max_relative:.3e}); wrote {path}")
        return EXIT_OK
    except (ConfigError, PhysicsError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RunError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
