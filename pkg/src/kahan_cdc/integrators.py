"""One-step methods and drivers.

* :func:`kahan_step` -- Kahan's linearly implicit scheme, one dense solve per step.
* :func:`kahan_step_rk_form` -- the same map written as a three-stage
  Runge-Kutta relation with weights (-1/2, 2, -1/2), solved by Newton.  Only
  used to cross-check :func:`kahan_step`.
* :func:`midpoint_step` -- implicit midpoint rule for non-autonomous systems.
* :func:`integrate_fixed` -- fixed-step Kahan trajectories.
* :func:`reference_solve` -- adaptive Dormand-Prince 5(4) reference solutions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import NewtonDivergence, StepFailure, ValidationError
from .quadratic import QuadraticSystem, as_state, eval_field, eval_jacobian
from .trajectory import Trajectory

COND_LIMIT = 1e14


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-14
    max_iters: int = 25

    def __post_init__(self):
        if not (self.abs_tol > 0 and np.isfinite(self.abs_tol)):
            raise ValidationError(f"Newton abs_tol must be positive, got {self.abs_tol!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValidationError(f"Newton max_iters must be an integer >= 1, got {self.max_iters!r}")


def _check_dt(dt) -> float:
    dt = float(dt)
    if dt == 0.0 or not np.isfinite(dt):
        raise ValidationError(f"step size must be finite and non-zero, got {dt!r}")
    return dt


def kahan_step(sys: QuadraticSystem, u, dt: float) -> np.ndarray:
    """Advance ``u`` by one Kahan step of size ``dt``.

    Solves ``(I - dt/2 f'(u)) w = dt f(u)`` and returns ``u + w``.  Negative
    ``dt`` runs the map backwards.

    Raises
    ------
    StepFailure
        If the linear system is singular or worse conditioned than 1e14.
    """
    u = as_state(u, sys.dim)
    dt = _check_dt(dt)
    M = np.eye(sys.dim) - 0.5 * dt * eval_jacobian(sys, u)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise StepFailure(f"Kahan step matrix ill-conditioned (cond={cond:.3e}) at dt={dt!r}, u={u}",
                          dt=dt, state=u)
    w = np.linalg.solve(M, dt * eval_field(sys, u))
    out = u + w
    if not np.all(np.isfinite(out)):
        raise StepFailure(f"Kahan step produced non-finite state at dt={dt!r}, u={u}", dt=dt, state=u)
    return out


def kahan_step_rk_form(sys: QuadraticSystem, u, dt: float,
                       cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    u = as_state(u, sys.dim)
    dt = _check_dt(dt)
    eye = np.eye(sys.dim)
    fu = eval_field(sys, u)
    v = u + dt * fu
    res = np.inf
    for it in range(cfg.max_iters + 1):
        mid = 0.5 * (u + v)
        g = v - u - dt * (-0.5 * fu + 2.0 * eval_field(sys, mid) - 0.5 * eval_field(sys, v))
        res = np.linalg.norm(g)
        if res <= cfg.abs_tol:
            return v
        if it == cfg.max_iters or not np.isfinite(res):
            break
        jac = eye - dt * (eval_jacobian(sys, mid) - 0.5 * eval_jacobian(sys, v))
        v = v - np.linalg.solve(jac, g)
    raise NewtonDivergence(
        f"RK-form Kahan step did not converge in {cfg.max_iters} iterations (residual {res:.3e})",
        iterations=cfg.max_iters, residual=res)


def midpoint_step(rhs: Callable[[float, np.ndarray], np.ndarray],
                  rhs_jac: Callable[[float, np.ndarray], np.ndarray],
                  t: float, e, dt: float, cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """Implicit midpoint step ``e+ = e + dt rhs(t + dt/2, (e + e+)/2)``.

    Full Newton on the residual starting from ``e+ = e``; converged once the
    residual norm is at most ``cfg.abs_tol``.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    dt = _check_dt(dt)
    tm = t + 0.5 * dt
    eye = np.eye(e.shape[0])
    x = e.copy()
    res = np.inf
    for it in range(cfg.max_iters + 1):
        mid = 0.5 * (e + x)
        g = x - e - dt * np.atleast_1d(rhs(tm, mid))
        res = np.linalg.norm(g)
        if res <= cfg.abs_tol:
            return x
        if it == cfg.max_iters or not np.isfinite(res):
            break
        jac = eye - 0.5 * dt * np.atleast_2d(rhs_jac(tm, mid))
        x = x - np.linalg.solve(jac, g)
    raise NewtonDivergence(
        f"midpoint Newton failed after {it} iterations, residual {res:.3e}",
        iterations=it, residual=res)


def integrate_fixed(sys: QuadraticSystem, u0, dt: float, steps: int,
                    method: str = "kahan") -> Trajectory:
    """Fixed-step trajectory with ``steps + 1`` records at ``t_k = k dt``."""
    if method != "kahan":
        raise ValidationError(f"unknown fixed-step method {method!r}")
    u0 = as_state(u0, sys.dim, name="u0")
    dt = float(dt)
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt!r}")
    if int(steps) != steps or steps < 1:
        raise ValidationError(f"steps must be an integer >= 1, got {steps!r}")
    steps = int(steps)
    out = np.empty((steps + 1, sys.dim))
    status, idx = _kernels.kahan_run(sys.quad, sys.linear, u0, dt, steps, out)
    if status != _kernels.OK:
        raise StepFailure(f"Kahan step {idx} failed (status {status}) at dt={dt!r}",
                          dt=dt, state=out[idx].copy(), index=idx)
    return Trajectory(dt * np.arange(steps + 1), out, method="kahan", dt=dt,
                      corrections=0, nodes=None)


def kahan_endpoint_samples(sys: QuadraticSystem, u0, dt: float, steps: int,
                           sample_every: int) -> Trajectory:
    """Fixed-step Kahan run keeping only every ``sample_every``-th state.

    Same arithmetic as :func:`integrate_fixed` without storing the full path;
    used when a fine step is compared on a coarse grid.
    """
    u0 = as_state(u0, sys.dim, name="u0")
    if steps % sample_every:
        raise ValidationError(f"steps={steps} is not a multiple of sample_every={sample_every}")
    out = np.empty((steps // sample_every + 1, sys.dim))
    status, idx = _kernels.kahan_final(sys.quad, sys.linear, u0, float(dt), int(steps),
                                       int(sample_every), out)
    if status != _kernels.OK:
        raise StepFailure(f"Kahan step {idx} failed (status {status}) at dt={dt!r}",
                          dt=dt, index=idx)
    times = dt * sample_every * np.arange(out.shape[0])
    return Trajectory(times, out, method="kahan", dt=dt * sample_every, corrections=0)


def reference_solve(sys: QuadraticSystem, u0, t_out, tol: float = 1e-13,
                    t0: float = 0.0, max_steps: int = 50_000_000) -> Trajectory:
    """High-accuracy reference solution at the times ``t_out``.

    Dormand-Prince 5(4) with a PI step-size controller and a mixed error test
    ``|err_i| <= tol (1 + max(|y_i|, |y_new_i|))``.  Steps are shortened to land
    exactly on every requested output time.
    """
    if not (1e-14 <= tol <= 1e-6):
        raise ValidationError(f"reference tolerance must lie in [1e-14, 1e-6], got {tol!r}")
    u0 = as_state(u0, sys.dim, name="u0")
    t_out = np.asarray(t_out, dtype=float)
    if t_out.ndim != 1 or t_out.size == 0:
        raise ValidationError("t_out must be a non-empty 1-D array")
    if t_out[0] < t0 or np.any(np.diff(t_out) <= 0):
        raise ValidationError("t_out must be strictly increasing and start at or after t0")
    span = t_out[-1] - t0
    h_min = 1e-14 * max(span, 1.0)
    out = np.empty((t_out.size + 1, sys.dim))
    status, acc, rej = _kernels.dopri_run(sys.quad, sys.linear, u0, float(t0), t_out,
                                          tol, tol, h_min, max_steps, out)
    if status == _kernels.UNDERFLOW:
        raise StepFailure(f"reference solver step size fell below {h_min:.3e}", dt=h_min)
    if status != _kernels.OK:
        raise StepFailure(f"reference solver failed with status {status} after {acc} steps")
    return Trajectory(t_out, out[1:], method="dopri54", dt=None,
                      extra={"accepted": int(acc), "rejected": int(rej), "tol": tol})
