"""Multirate time loop: pressure every ``Q`` concentration steps."""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diagnostics import ErrorRecord, MassSeries, MassTracker, error_norms
from .grid import GridSpec, Location, TimeGrid
from .linsolve import SolverError
from .physics import PhysicsConfig, check_compatibility, well_source_fields
from .pressure import PressureSolution, solve_pressure_velocity
from .scenarios import Scenario
from .transport import (
    TransportSolver,
    TransportState,
    VelocityHistory,
    compact_gradient,
    extrapolate_velocity,
    initial_W,
    predictor_step,
)


class RunError(RuntimeError):
    """A component failure inside the time loop, tagged with where it happened."""

    def __init__(self, message: str, step: int, residual: float = float("nan")):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.residual = residual


@dataclass(frozen=True)
class OutputPolicy:
    snapshot_times: tuple = ()  # concentration snapshots retained at the nearest step
    keep_pressure: bool = False  # retain every pressure solution
    fields: tuple = ("C",)
    directory: str = "output"
    formats: tuple = ("csv",)  # any of "csv", "vtk"


@dataclass(frozen=True)
class RunSpec:
    grid: GridSpec
    time: TimeGrid
    physics: PhysicsConfig
    scenario: Scenario
    output: OutputPolicy = OutputPolicy()

    def validate(self) -> None:
        if self.grid.bc is not self.scenario.bc:
            raise ValueError(
                f"scenario {self.scenario.name} needs {self.scenario.bc.value} boundaries"
            )
        if self.time.ratio_q < 1:
            raise ValueError("Q must be at least 1")


@dataclass(frozen=True)
class StepInfo:
    """What the observer sees after each concentration step (arrays are read-only)."""

    n: int
    t: float
    state: TransportState
    U_sharp: tuple
    history_pair: tuple
    history_weights: tuple


@dataclass
class RunReport:
    spec: RunSpec
    final: TransportState
    pressure: PressureSolution
    mass: MassSeries
    errors: Optional[ErrorRecord]
    pressure_solves: int
    concentration_solves: int
    pressure_time: float
    concentration_time: float
    snapshots: dict = field(default_factory=dict)  # t -> {"C": ..., ...}
    pressure_history: list = field(default_factory=list)
    factorizations: int = 0


def _freeze(*arrays):
    for a in arrays:
        if isinstance(a, np.ndarray):
            a.flags.writeable = False


def initial_state(scenario: Scenario, grid: GridSpec) -> TransportState:
    Xc, Yc = grid.coords(Location.CELL)
    C0 = np.array(np.broadcast_to(scenario.initial_c(Xc, Yc), Xc.shape), dtype=np.float64)
    if scenario.initial_v is not None:
        Xx, Yx = grid.coords(Location.XFACE)
        Xy, Yy = grid.coords(Location.YFACE)
        Vx = np.array(np.broadcast_to(scenario.initial_v[0](Xx, Yx), Xx.shape), dtype=np.float64)
        Vy = np.array(np.broadcast_to(scenario.initial_v[1](Xy, Yy), Xy.shape), dtype=np.float64)
        if not grid.periodic:
            Vx[[0, -1], :] = 0.0
            Vy[:, [0, -1]] = 0.0
    else:
        Vx, Vy = compact_gradient(C0, grid)
    zx = np.zeros(grid.shape(Location.XFACE))
    zy = np.zeros(grid.shape(Location.YFACE))
    return TransportState(C0, Vx, Vy, zx, zy, 0.0)


def run(spec: RunSpec, observer: Optional[Callable[[StepInfo], None]] = None) -> RunReport:
    """Run the scheme from ``t = 0`` to ``spec.time.t_end``."""
    spec.validate()
    grid, tg, physics = spec.grid, spec.time, spec.physics
    Q, dt_c, dt_p = tg.ratio_q, tg.dt_c, tg.dt_p
    manufactured = spec.scenario.manufactured
    check = not manufactured
    if check:
        check_compatibility(grid, well_source_fields(physics.sources, grid, 0.0, check=False)[0])

    timers = {"p": 0.0, "c": 0.0}
    counts = {"p": 0, "c": 0}
    pressure_history = []

    def pressure(C, t, step, x0=None):
        t0 = _time.perf_counter()
        try:
            sol = solve_pressure_velocity(C, t, physics, grid, x0=x0, check_sources=check)
        except SolverError as exc:
            raise RunError(str(exc), step, exc.residual) from exc
        timers["p"] += _time.perf_counter() - t0
        counts["p"] += 1
        if spec.output.keep_pressure:
            pressure_history.append(sol)
        return sol

    state = initial_state(spec.scenario, grid)
    # (1) initial pressure and velocity
    sol = pressure(state.C, 0.0, 0)
    U0 = (sol.Ux, sol.Uy)
    # (2) initial flux
    Wx, Wy = initial_W(state.C, state.Vx, state.Vy, U0, physics, grid)
    state = TransportState(state.C, state.Vx, state.Vy, Wx, Wy, 0.0)
    solver = TransportSolver(physics, grid)
    # (3) predictor: one frozen-velocity step over the first pressure window
    t0, p_before = _time.perf_counter(), timers["p"]
    try:
        _, pred = predictor_step(state, U0, dt_p, physics, grid, solver, pressure_solve=lambda C, t: pressure(C, t, 0))
    except SolverError as exc:
        raise RunError(f"predictor: {exc}", 0, exc.residual) from exc
    timers["c"] += _time.perf_counter() - t0 - (timers["p"] - p_before)
    history = VelocityHistory(dt_p, U0, U_pred=(pred.Ux, pred.Uy))

    tracker = MassTracker(grid, physics, state.C)
    snapshots = {}
    want = sorted(spec.output.snapshot_times)
    targets = {min(range(tg.n_conc + 1), key=lambda n: abs(n * dt_c - ts)): ts for ts in want}
    if 0 in targets:
        snapshots[targets[0]] = _snapshot(state, spec.output.fields)

    n = 0
    for m in range(tg.n_pressure):
        for _ in range(Q):
            t_new = (n + 1) * dt_c
            U_sharp = extrapolate_velocity(history, t_new)
            t0 = _time.perf_counter()
            try:
                new = solver.step(state, U_sharp, dt_c)
            except SolverError as exc:
                raise RunError(f"concentration step: {exc}", n + 1, exc.residual) from exc
            new = TransportState(new.C, new.Vx, new.Vy, new.Wx, new.Wy, t_new)
            timers["c"] += _time.perf_counter() - t0
            counts["c"] += 1
            tracker.record(state.C, new.C, n * dt_c + 0.5 * dt_c, dt_c, t_new)
            state = new
            n += 1
            if n in targets:
                snapshots[targets[n]] = _snapshot(state, spec.output.fields)
            if observer is not None:
                _freeze(state.C, state.Vx, state.Vy, state.Wx, state.Wy, *U_sharp)
                observer(StepInfo(n, t_new, state, U_sharp, history.pair(), history.weights(t_new)))
        # pressure update at t_p^{m+1}
        sol = pressure(state.C, (m + 1) * dt_p, n, x0=sol.P)
        history.advance((sol.Ux, sol.Uy))

    errors = None
    if manufactured:
        errors = error_norms(grid, spec.scenario.exact, tg.t_end, state.C, sol.P, sol.Ux, sol.Uy)
    return RunReport(
        spec=spec,
        final=state,
        pressure=sol,
        mass=tracker.series,
        errors=errors,
        pressure_solves=counts["p"],
        concentration_solves=counts["c"],
        pressure_time=timers["p"],
        concentration_time=timers["c"],
        snapshots=snapshots,
        pressure_history=pressure_history,
        factorizations=solver.factorizations,
    )


def _snapshot(state: TransportState, fields: tuple) -> dict:
    out = {"t": state.t}
    for name in fields:
        out[name] = np.array(getattr(state, name))
    return out
