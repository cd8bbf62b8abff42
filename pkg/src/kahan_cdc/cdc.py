"""Classical deferred correction on uniform node grids.

Each interval ``[t_j, t_j + dt]`` carries ``n`` equispaced nodes.  A provisional
solution is computed node to node with Kahan's method, then ``S`` correction
sweeps integrate the error equation

    e' = f(e + U(t)) - U'(t),    e(t_j) = 0,

with the implicit midpoint rule, where ``U`` is the Lagrange interpolant of the
current node values.  After every sweep ``U <- U + E``.  The last node value of
the final sweep starts the next interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NewtonDivergence, StepFailure, ValidationError
from .integrators import NewtonConfig, kahan_step, midpoint_step
from .quadratic import QuadraticSystem, as_state, eval_field, eval_jacobian
from .trajectory import Trajectory

INTERVAL_TOL = 1e-9


def barycentric_weights(nodes) -> np.ndarray:
    """``w_k = 1 / prod_{i != k} (t_k - t_i)``."""
    x = np.asarray(nodes, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValidationError("nodes must be a non-empty 1-D array")
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise ValidationError(f"duplicate interpolation nodes: {x}")
    return 1.0 / np.prod(diff, axis=1)


def differentiation_matrix(nodes, weights=None) -> np.ndarray:
    """First-derivative matrix of the interpolant at its own nodes."""
    x = np.asarray(nodes, dtype=float)
    w = barycentric_weights(x) if weights is None else np.asarray(weights, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    # negative-sum diagonal: each row sums to zero, so constants differentiate to ~0
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@dataclass(frozen=True, eq=False)
class NodeGrid:
    t_start: float
    t_end: float
    n: int
    nodes: np.ndarray = field(init=False, repr=False)
    bary_w: np.ndarray = field(init=False, repr=False)
    diff_mat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError(f"node count must be an integer >= 2, got {self.n!r}")
        if not self.t_end > self.t_start:
            raise ValidationError(f"empty interval [{self.t_start}, {self.t_end}]")
        nodes = np.linspace(self.t_start, self.t_end, int(self.n))
        nodes[0], nodes[-1] = self.t_start, self.t_end
        w = barycentric_weights(nodes)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "bary_w", w)
        object.__setattr__(self, "diff_mat", differentiation_matrix(nodes, w))

    @property
    def spacing(self) -> float:
        return (self.t_end - self.t_start) / (self.n - 1)


@dataclass(frozen=True, eq=False)
class NodeSolution:
    grid: NodeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n:
            raise ValidationError(f"expected {self.grid.n} node values, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("node values must be finite")
        object.__setattr__(self, "values", v)


def _locate(ns: NodeSolution, t: float):
    g = ns.grid
    if not (g.t_start <= t <= g.t_end):
        raise ValidationError(f"t={t!r} outside interpolation interval [{g.t_start}, {g.t_end}]")
    hit = np.flatnonzero(g.nodes == t)
    return int(hit[0]) if hit.size else None


def _basis_at(grid: NodeGrid, t: float, derivative: bool) -> np.ndarray:
    """Lagrange basis (or its derivative) at ``t`` in the first barycentric form.

    ``l_k(t) = w_k prod_{i != k} (t - t_i)`` needs no division by ``t - t_k``,
    so it stays accurate arbitrarily close to a node.
    """
    d = t - grid.nodes
    n = d.size
    if not derivative:
        prods = np.array([np.prod(np.delete(d, k)) for k in range(n)])
        return grid.bary_w * prods
    out = np.empty(n)
    for k in range(n):
        rest = np.delete(d, k)
        out[k] = sum(np.prod(np.delete(rest, m)) for m in range(n - 1))
    return grid.bary_w * out


def interp_eval(ns: NodeSolution, t: float) -> np.ndarray:
    """Barycentric evaluation of the interpolant; node hits return stored values."""
    k = _locate(ns, t)
    if k is not None:
        return ns.values[k].copy()
    return _basis_at(ns.grid, t, False) @ ns.values


def interp_deriv(ns: NodeSolution, t: float) -> np.ndarray:
    """Time derivative of the interpolant.

    At nodes this is a row of the differentiation matrix; elsewhere the
    derivative of the barycentric basis.
    """
    k = _locate(ns, t)
    if k is not None:
        return ns.grid.diff_mat[k] @ ns.values
    return _basis_at(ns.grid, t, True) @ ns.values


def midpoint_basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Lagrange basis values and derivatives at the midpoints of a unit-spaced grid.

    Row ``i`` refers to the point halfway between nodes ``i`` and ``i + 1`` of
    the nodes ``0, 1, ..., n - 1``.  Derivatives are per unit node spacing.
    Uses the product form of the basis, independent of the barycentric code.
    """
    x = np.arange(n, dtype=float)
    s = x[:-1] + 0.5
    vals = np.empty((n - 1, n))
    ders = np.empty((n - 1, n))
    for k in range(n):
        others = np.delete(x, k)
        lk = np.prod((s[:, None] - others[None, :]) / (x[k] - others[None, :]), axis=1)
        vals[:, k] = lk
        ders[:, k] = lk * np.sum(1.0 / (s[:, None] - others[None, :]), axis=1)
    return vals, ders


@dataclass(frozen=True)
class CdcConfig:
    """Interval length ``dt``, horizon ``t_end``, ``corrections`` sweeps, ``n`` nodes."""

    dt: float
    t_end: float
    corrections: int = 1
    nodes_per_interval: int | None = None
    newton: NewtonConfig = NewtonConfig()
    node_kind: str = "uniform"

    def __post_init__(self):
        if int(self.corrections) != self.corrections or self.corrections < 0:
            raise ValidationError(f"corrections must be an integer >= 0, got {self.corrections!r}")
        object.__setattr__(self, "corrections", int(self.corrections))
        if self.nodes_per_interval is None:
            object.__setattr__(self, "nodes_per_interval", 2 * self.corrections + 3)
        n = self.nodes_per_interval
        if int(n) != n or n < 2:
            raise ValidationError(f"nodes_per_interval must be an integer >= 2, got {n!r}")
        object.__setattr__(self, "nodes_per_interval", int(n))
        if self.node_kind != "uniform":
            raise ValidationError(f"only uniform nodes are supported, got {self.node_kind!r}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt!r}")
        if not (self.t_end > 0 and np.isfinite(self.t_end)):
            raise ValidationError(f"t_end must be positive, got {self.t_end!r}")
        ratio = self.t_end / self.dt
        if abs(ratio - round(ratio)) > INTERVAL_TOL * ratio or round(ratio) < 1:
            raise ValidationError(
                f"t_end / dt = {ratio!r} is not an integer; intervals must be equidistant")

    @property
    def intervals(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def n(self) -> int:
        return self.nodes_per_interval

    @property
    def expected_order(self) -> int:
        # each Kahan / midpoint pass contributes order 2
        return min(2 * self.corrections + 2, self.nodes_per_interval - 1)


def kahan_provisional(sys: QuadraticSystem, u_start, grid: NodeGrid) -> NodeSolution:
    vals = np.empty((grid.n, sys.dim))
    vals[0] = as_state(u_start, sys.dim)
    h = grid.spacing
    for i in range(grid.n - 1):
        vals[i + 1] = kahan_step(sys, vals[i], h)
    return NodeSolution(grid, vals)


def cdc_sweep(sys: QuadraticSystem, prev: NodeSolution, cfg: CdcConfig) -> NodeSolution:
    """One correction sweep: solve the error equation node to node, return ``prev + E``."""
    grid = prev.grid

    def rhs(t, e):
        return eval_field(sys, e + interp_eval(prev, t)) - interp_deriv(prev, t)

    def rhs_jac(t, e):
        return eval_jacobian(sys, e + interp_eval(prev, t))

    errs = np.zeros_like(prev.values)
    for i in range(grid.n - 1):
        h = grid.nodes[i + 1] - grid.nodes[i]
        try:
            errs[i + 1] = midpoint_step(rhs, rhs_jac, grid.nodes[i], errs[i], h, cfg.newton)
        except NewtonDivergence as exc:
            exc.index = i + 1
            raise
    return NodeSolution(grid, prev.values + errs)


def _cdc_integrate_python(sys, u0, cfg):
    J, n = cfg.intervals, cfg.n
    out = np.empty((J + 1, sys.dim))
    nodes = np.empty((J, n, sys.dim))
    out[0] = u0
    for j in range(J):
        t0 = j * cfg.dt
        grid = NodeGrid(t0, t0 + cfg.dt, n)
        U = kahan_provisional(sys, out[j], grid)
        for _ in range(cfg.corrections):
            U = cdc_sweep(sys, U, cfg)
        out[j + 1] = U.values[-1]
        nodes[j] = U.values
    return out, nodes


_STATUS = {
    _kernels.SINGULAR: "singular linear system",
    _kernels.NONFINITE: "non-finite state",
    _kernels.NEWTON_FAIL: "midpoint Newton iteration did not converge",
}


def cdc_integrate(sys: QuadraticSystem, u0, cfg: CdcConfig, *, keep_nodes: bool = False,
                  engine: str = "compiled") -> Trajectory:
    """Propagate ``u0`` over ``cfg.intervals`` intervals of length ``cfg.dt``.

    Returns the interval endpoints; with ``keep_nodes`` the corrected node
    values of every interval are stored in ``traj.extra["nodes"]`` with shape
    ``(J, n, m)``.  ``engine="python"`` runs the same algorithm through
    :func:`kahan_step` and :func:`cdc_sweep`; it is slow and meant for checks.
    """
    u0 = as_state(u0, sys.dim, name="u0")
    J, n, S = cfg.intervals, cfg.n, cfg.corrections
    if engine == "python":
        out, nodes = _cdc_integrate_python(sys, u0, cfg)
    elif engine == "compiled":
        vals, ders = midpoint_basis(n)
        h = cfg.dt / (n - 1)
        out = np.empty((J + 1, sys.dim))
        nodes = np.empty((J, n, sys.dim)) if keep_nodes else np.empty((0, n, sys.dim))
        status, jdx, node, sweep = _kernels.cdc_run(
            sys.quad, sys.linear, u0, float(cfg.dt), J, n, S, vals, ders / h,
            cfg.newton.abs_tol, cfg.newton.max_iters, out, nodes)
        if status == _kernels.NEWTON_FAIL:
            raise NewtonDivergence(
                f"interval {jdx}, sweep {sweep}, node {node}: {_STATUS[status]}",
                iterations=cfg.newton.max_iters, index=jdx)
        if status != _kernels.OK:
            raise StepFailure(f"interval {jdx}, sweep {sweep}, node {node}: {_STATUS[status]}",
                              dt=cfg.dt, index=jdx)
    else:
        raise ValidationError(f"unknown engine {engine!r}")
    extra = {"nodes": nodes} if keep_nodes else {}
    return Trajectory(cfg.dt * np.arange(J + 1), out, method="cdc" if S else "kahan",
                      dt=cfg.dt, corrections=S, nodes=n, extra=extra)


def expected_order(corrections: int, nodes: int) -> int:
    return min(2 * corrections + 2, nodes - 1)


def default_node_count(corrections: int) -> int:
    return 2 * corrections + 3

