"""Error norms, invariant drift, convergence studies and speed-up timing."""

from __future__ import annotations

import logging
import math
import os
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cdc import CdcConfig, cdc_integrate
from .errors import KahanCdcError, StepFailure, ValidationError
from .integrators import (NewtonConfig, integrate_fixed, kahan_endpoint_samples,
                          reference_solve)
from .models import InvariantObservable, ModelBundle
from .trajectory import Trajectory

log = logging.getLogger(__name__)

SPACING_RTOL = 1e-9
THREADS_ENV = "KAHAN_CDC_THREADS"

__all__ = [
    "Trajectory", "invariant_trace", "l2_invariant_error", "l2_solution_error",
    "convergence_order", "StudyRow", "CellResult", "ConvergenceReport",
    "convergence_study", "SpeedupResult", "speedup_bench", "study_threads",
]


def invariant_trace(traj: Trajectory, obs: InvariantObservable) -> np.ndarray:
    """``H(u(t_i)) - H(u(t_0))`` along the trajectory."""
    vals = obs.along(traj.states)
    return vals - vals[0]


def _check_spacing(times: np.ndarray, dt: float) -> None:
    if times.size < 2:
        raise ValidationError("need at least two samples for an L2 norm")
    steps = np.diff(times)
    if not np.allclose(steps, dt, rtol=SPACING_RTOL, atol=0.0):
        raise ValidationError(
            f"trajectory spacing {steps.min():.6g}..{steps.max():.6g} does not match dt={dt!r}")


def l2_invariant_error(traj: Trajectory, obs: InvariantObservable, dt: float) -> float:
    """``sqrt(dt * sum_{i>=1} (H(t_i) - H(0))^2)``."""
    _check_spacing(traj.times, dt)
    drift = invariant_trace(traj, obs)[1:]
    return math.sqrt(dt * float(np.sum(drift * drift)))


def l2_solution_error(traj: Trajectory, ref: Trajectory, dt: float) -> float:
    """``sqrt(dt * sum_{i>=1} |u_i - u_ref(t_i)|^2)`` with the Euclidean norm."""
    _check_spacing(traj.times, dt)
    if traj.times.shape != ref.times.shape or not np.allclose(
            traj.times, ref.times, rtol=SPACING_RTOL, atol=1e-12):
        raise ValidationError("trajectory and reference are on different time grids")
    if traj.states.shape != ref.states.shape:
        raise ValidationError(
            f"state shapes differ: {traj.states.shape} vs {ref.states.shape}")
    diff = traj.states[1:] - ref.states[1:]
    return math.sqrt(dt * float(np.sum(diff * diff)))


def convergence_order(err_coarse: float, err_fine: float) -> float:
    """``log2(err_coarse / err_fine)`` for errors at steps ``dt`` and ``dt / 2``."""
    if not (err_coarse > 0 and err_fine > 0):
        raise ValidationError(
            f"errors must be positive to estimate an order, got {err_coarse!r}, {err_fine!r}")
    return math.log2(err_coarse / err_fine)


def study_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


@dataclass
class StudyRow:
    dt: float
    l2_u: float
    l2_h1: float
    l2_h2: float
    wall_s: float
    ref_floor: float = float("nan")
    order_u: float = float("nan")
    order_h1: float = float("nan")
    order_h2: float = float("nan")
    # Set when this row's error is dominated by round-off or the reference error.
    saturated: bool = False


@dataclass
class CellResult:
    corrections: int
    nodes: int
    metric: str
    rows: list[StudyRow] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def expected_order(self) -> int:
        return min(2 * self.corrections + 2, self.nodes - 1)

    def orders(self, metric: str | None = None) -> list[float]:
        key = "order_" + _metric_key(metric or self.metric)
        return [getattr(r, key) for r in self.rows[1:]]

    def measured_order(self, metric: str | None = None) -> float:
        """Order from the finest pair of steps whose finer error is not saturated."""
        key = "order_" + _metric_key(metric or self.metric)
        valid = [getattr(r, key) for r in self.rows[1:] if not r.saturated]
        valid = [o for o in valid if np.isfinite(o)]
        return valid[-1] if valid else float("nan")


@dataclass
class ConvergenceReport:
    model: str
    cells: list[CellResult]
    speedup: float | None = None

    CSV_HEADER = "S,n,dt,l2_u,l2_H1,l2_H2,order_u,order_H1,order_H2,wall_s"

    def csv_lines(self) -> list[str]:
        lines = [self.CSV_HEADER]
        for cell in self.cells:
            for r in cell.rows:
                vals = [r.dt, r.l2_u, r.l2_h1, r.l2_h2, r.order_u, r.order_h1, r.order_h2]
                fields = [str(cell.corrections), str(cell.nodes)]
                fields += [_fmt(v) for v in vals]
                fields.append(f"{r.wall_s:.6f}")
                lines.append(",".join(fields))
        return lines


def _fmt(v: float) -> str:
    return "" if v is None or not np.isfinite(v) else f"{v:.16e}"


def _metric_key(metric: str) -> str:
    m = metric.lower()
    if m not in ("u", "h1", "h2"):
        raise ValidationError(f"metric must be one of u, H1, H2; got {metric!r}")
    return m


def _run(model: ModelBundle, u0, dt, t_end, S, n, newton) -> Trajectory:
    cfg = CdcConfig(dt=dt, t_end=t_end, corrections=S, nodes_per_interval=n, newton=newton)
    return cdc_integrate(model.system, u0, cfg)


def _snap_dt(dt0: float, t_end: float) -> float:
    """Nearest step that divides ``t_end`` into a whole number of intervals."""
    J = max(1, round(t_end / dt0))
    return t_end / J


class _ReferenceCache:
    def __init__(self, model, u0, t_end, tol):
        self.model, self.u0, self.t_end, self.tol = model, u0, t_end, tol
        self._cache: dict[int, tuple[Trajectory, float]] = {}
        self._lock = threading.Lock()

    def get(self, intervals: int) -> tuple[Trajectory, float]:
        """Reference on the grid with ``intervals`` steps and an estimate of its own L2 error."""
        with self._lock:
            return self._get(intervals)

    def _get(self, intervals: int) -> tuple[Trajectory, float]:
        if intervals not in self._cache:
            times = np.linspace(0.0, self.t_end, intervals + 1)
            ref = reference_solve(self.model.system, self.u0, times[1:], self.tol)
            ref = Trajectory(times, np.vstack([self.u0, ref.states]), method=ref.method)
            fine_tol = max(self.tol / 10.0, 1e-14)
            if fine_tol < self.tol:
                ref2 = reference_solve(self.model.system, self.u0, times[1:], fine_tol)
                diff = ref.states[1:] - ref2.states
                floor = math.sqrt(self.t_end / intervals * float(np.sum(diff * diff)))
            else:
                floor = float("nan")
            self._cache[intervals] = (ref, floor)
        return self._cache[intervals]


def _study_cell(model, u0, t_end, S, n, dt0, target, metric, refs, saturation_factor,
                floor_factor, max_halvings, newton) -> CellResult:
    key = _metric_key(metric)
    cell = CellResult(S, n, metric)
    dt = _snap_dt(dt0, t_end)
    for k in range(max_halvings + 1):
        J = round(t_end / dt)
        t0 = time.perf_counter()
        try:
            traj = _run(model, u0, dt, t_end, S, n, newton)
        except KahanCdcError as exc:
            raise type(exc)(f"study cell S={S}, n={n}, dt={dt:.6g}: {exc}") from exc
        wall = time.perf_counter() - t0
        ref, floor = refs.get(J)
        row = StudyRow(
            dt=dt,
            l2_u=l2_solution_error(traj, ref, dt),
            l2_h1=l2_invariant_error(traj, model.h1, dt) if model.h1 else float("nan"),
            l2_h2=l2_invariant_error(traj, model.h2, dt) if model.h2 else float("nan"),
            wall_s=wall,
            ref_floor=floor,
        )
        if cell.rows:
            prev = cell.rows[-1]
            for name in ("u", "h1", "h2"):
                a, b = getattr(prev, "l2_" + name), getattr(row, "l2_" + name)
                if a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b):
                    setattr(row, "order_" + name, convergence_order(a, b))
        err = getattr(row, "l2_" + key)
        if key == "u" and np.isfinite(floor) and err <= floor_factor * floor:
            row.saturated = True
            cell.stop_reason = "reference floor"
        if cell.rows:
            prev_err = getattr(cell.rows[-1], "l2_" + key)
            if err == 0.0 or prev_err / err < saturation_factor:
                row.saturated = True
                cell.stop_reason = "round-off saturation"
        cell.rows.append(row)
        if row.saturated and len(cell.rows) > 1:
            break
        if err <= target and len(cell.rows) > 1:
            cell.stop_reason = "target reached"
            break
        dt /= 2.0
    else:
        cell.stop_reason = "max halvings"
    return cell


def convergence_study(model: ModelBundle, u0, t_end: float, cells, dt0: float | None = None,
                      target: float = 1e-10, metric: str = "u", reference_tol: float = 1e-13,
                      saturation_factor: float = 1.2, floor_factor: float = 10.0,
                      max_halvings: int = 12, newton: NewtonConfig = NewtonConfig(),
                      threads: int | None = None) -> ConvergenceReport:
    """Step-halving study over correction/node cells.

    ``cells`` holds ``(S, n)`` or ``(S, n, dt0)`` tuples.  For each cell the
    interval length starts at ``dt0`` (snapped so it divides ``t_end``) and is
    halved until the ``metric`` error is at most ``target``, or the error stops
    shrinking by ``saturation_factor``, or (for ``metric="u"``) it drops below
    ``floor_factor`` times the estimated reference error.  At least two step
    sizes are always run so an order is available.
    """
    cells = list(cells)
    if not cells:
        raise ValidationError("convergence study needs at least one (S, n) cell")
    _metric_key(metric)
    if metric.lower() != "u" and getattr(model, metric.lower()) is None:
        raise ValidationError(f"model {model.name!r} has no invariant {metric!r}")
    parsed = []
    for c in cells:
        if len(c) == 2:
            if dt0 is None:
                raise ValidationError(f"cell {c!r} has no starting dt and no default dt0 given")
            parsed.append((int(c[0]), int(c[1]), float(dt0)))
        elif len(c) == 3:
            parsed.append((int(c[0]), int(c[1]), float(c[2])))
        else:
            raise ValidationError(f"cells must be (S, n) or (S, n, dt0), got {c!r}")
    u0 = np.asarray(u0, dtype=float)
    refs = _ReferenceCache(model, u0, t_end, reference_tol)

    def work(c):
        S, n, d0 = c
        return _study_cell(model, u0, t_end, S, n, d0, target, metric, refs,
                           saturation_factor, floor_factor, max_halvings, newton)

    workers = min(threads or study_threads(), len(parsed))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, parsed))
    else:
        results = [work(c) for c in parsed]
    return ConvergenceReport(model.name, results)


@dataclass
class SpeedupResult:
    ratio: float
    cdc_seconds: float
    kahan_seconds: float
    cdc_error: float
    kahan_error: float
    kahan_dt: float
    cdc_dt: float
    metric: str


def _median_time(fn, repeats: int):
    """Median wall time of ``repeats`` calls after one untimed warm-up call."""
    out = fn()  # loads compiled kernels outside the timed region
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def _grid_error(model, traj, metric, dt, refs):
    key = _metric_key(metric)
    if key == "u":
        ref, _ = refs.get(len(traj) - 1)
        return l2_solution_error(traj, ref, dt)
    return l2_invariant_error(traj, getattr(model, key), dt)


def speedup_bench(model: ModelBundle, u0, cdc_cfg: CdcConfig, target: float = 1e-10,
                  metric: str = "H1", repeats: int = 5, reference_tol: float = 1e-13,
                  min_dt: float = 1e-8) -> SpeedupResult:
    """Wall-time ratio of plain Kahan to CDC at matched accuracy.

    Kahan is run at the largest tried step whose error reaches ``target``.
    Both errors are measured on the CDC interval grid, so the fine Kahan run
    only keeps every k-th state.  Steps are predicted from the observed
    second-order decay and refined by 10% until the target is met.
    """
    u0 = np.asarray(u0, dtype=float)
    T, dt_c = cdc_cfg.t_end, cdc_cfg.dt
    refs = _ReferenceCache(model, u0, T, reference_tol)

    def run_cdc():
        return cdc_integrate(model.system, u0, cdc_cfg)

    cdc_time, cdc_traj = _median_time(run_cdc, repeats)
    cdc_err = _grid_error(model, cdc_traj, metric, dt_c, refs)
    if cdc_err > 10 * target:
        log.warning("CDC run error %.3e is more than 10x the target %.1e", cdc_err, target)

    def kahan_error(sub):
        traj = kahan_endpoint_samples(model.system, u0, dt_c / sub, cdc_cfg.intervals * sub, sub)
        return _grid_error(model, traj, metric, dt_c, refs)

    sub = 1
    err = kahan_error(sub)
    while err > target:
        # second order: error ~ C dt^2
        grow = max(1.1, math.sqrt(err / target) * 1.02)
        sub = max(sub + 1, int(math.ceil(sub * grow)))
        if dt_c / sub < min_dt:
            raise StepFailure(f"plain Kahan cannot reach {target:.1e} above dt={min_dt:.1e}",
                              dt=dt_c / sub)
        err = kahan_error(sub)

    def run_kahan():
        return kahan_endpoint_samples(model.system, u0, dt_c / sub, cdc_cfg.intervals * sub, sub)

    kahan_time, _ = _median_time(run_kahan, repeats)
    return SpeedupResult(
        ratio=kahan_time / cdc_time,
        cdc_seconds=cdc_time,
        kahan_seconds=kahan_time,
        cdc_error=cdc_err,
        kahan_error=err,
        kahan_dt=dt_c / sub,
        cdc_dt=dt_c,
        metric=metric,
    )


def plain_kahan_trajectory(model: ModelBundle, u0, dt: float, t_end: float) -> Trajectory:
    J = round(t_end / dt)
    if abs(J * dt - t_end) > 1e-9 * t_end:
        raise ValidationError(f"t_end={t_end!r} is not a multiple of dt={dt!r}")
    return integrate_fixed(model.system, u0, dt, J)
