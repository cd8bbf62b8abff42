"""Three-dimensional bi-Hamiltonian Lotka-Volterra systems.

Two models are provided:

* :func:`build_lv1`, the six-parameter family
  ``u1' = u1 (c u2 + u3 + lam)``, ``u2' = u2 (u1 + a u3 + mu)``,
  ``u3' = u3 (b u1 + u2 + nu)`` with ``abc = -1`` and ``nu = mu b - lam a b``;
* :func:`build_lv2`, the reversible circulant system
  ``u1' = u1 (u2 - u3)`` and cyclic permutations.

Each bundle carries both integrals with closed-form gradients and both Poisson
matrices, so that ``f = J1 grad H2 = J2 grad H1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, ValidationError
from .quadratic import QuadraticSystem, as_state, eval_field, lvs_to_quadratic

PARAM_TOL = 1e-12


@dataclass(frozen=True)
class Lv1Params:
    a: float
    b: float
    c: float
    lam: float
    mu: float
    nu: float

    def validate(self) -> None:
        vals = np.array([self.a, self.b, self.c, self.lam, self.mu, self.nu], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"LV1 parameters must be finite: {self}")
        if abs(self.a * self.b * self.c + 1.0) > PARAM_TOL:
            raise ValidationError(
                f"LV1 requires abc = -1, got abc = {self.a * self.b * self.c!r}")
        nu_expected = self.mu * self.b - self.lam * self.a * self.b
        if abs(self.nu - nu_expected) > PARAM_TOL:
            raise ValidationError(
                f"LV1 requires nu = mu*b - lam*a*b = {nu_expected!r}, got nu = {self.nu!r}")

    def as_dict(self) -> dict:
        return asdict(self)


LV1_PARAMS = Lv1Params(a=-1.0, b=-1.0, c=-1.0, lam=0.0, mu=1.0, nu=-1.0)
LV1_U0 = (1.0, 1.9, 0.5)
LV2_U0 = (0.3, 0.3, 0.4)


def _require_positive(u: np.ndarray, label: str) -> None:
    if np.any(u <= 0.0):
        raise DomainError(f"{label} needs strictly positive densities, got {u}")


@dataclass(frozen=True)
class InvariantObservable:
    """A conserved quantity with its gradient.

    ``positive_domain`` marks observables containing logarithms; those reject
    states with a non-positive component.
    """

    label: str
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    positive_domain: bool = False

    def _check(self, u) -> np.ndarray:
        u = as_state(u, 3)
        if self.positive_domain:
            _require_positive(u, self.label)
        return u

    def __call__(self, u) -> float:
        return float(self.value(self._check(u)))

    def grad(self, u) -> np.ndarray:
        return np.asarray(self.gradient(self._check(u)), dtype=float)

    def along(self, states) -> np.ndarray:
        """Vectorized evaluation over an ``(N, 3)`` array of states."""
        states = np.asarray(states, dtype=float)
        if self.positive_domain and np.any(states <= 0.0):
            bad = int(np.argmax(np.any(states <= 0.0, axis=1)))
            raise DomainError(
                f"{self.label} needs strictly positive densities; row {bad} is {states[bad]}")
        return np.asarray(self.value(states.T), dtype=float)


def eval_invariant(obs: InvariantObservable, u) -> float:
    return obs(u)


@dataclass(frozen=True)
class ModelBundle:
    name: str
    system: QuadraticSystem
    h1: InvariantObservable | None = None
    h2: InvariantObservable | None = None
    j1: Callable[[np.ndarray], np.ndarray] | None = None
    j2: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def invariants(self) -> tuple[InvariantObservable, ...]:
        return tuple(h for h in (self.h1, self.h2) if h is not None)

    @property
    def has_structure(self) -> bool:
        return None not in (self.h1, self.h2, self.j1, self.j2)


def build_lv1(p: Lv1Params = LV1_PARAMS) -> ModelBundle:
    p.validate()
    a, b, c, lam, mu, nu = p.a, p.b, p.c, p.lam, p.mu, p.nu
    ab = a * b
    system = lvs_to_quadratic([lam, mu, nu], [[0.0, c, 1.0], [1.0, 0.0, a], [b, 1.0, 0.0]])

    h1 = InvariantObservable(
        "H1",
        lambda u: ab * np.log(u[0]) - b * np.log(u[1]) + np.log(u[2]),
        lambda u: np.array([ab / u[0], -b / u[1], 1.0 / u[2]]),
        positive_domain=True,
    )
    h2 = InvariantObservable(
        "H2",
        lambda u: ab * u[0] + u[1] - a * u[2] + nu * np.log(u[1]) - mu * np.log(u[2]),
        lambda u: np.array([ab, 1.0 + nu / u[1], -a - mu / u[2]]),
        positive_domain=True,
    )

    def j1(u):
        u1, u2, u3 = as_state(u, 3)
        return np.array([
            [0.0, c * u1 * u2, b * c * u1 * u3],
            [-c * u1 * u2, 0.0, -u2 * u3],
            [-b * c * u1 * u3, u2 * u3, 0.0],
        ])

    def j2(u):
        u1, u2, u3 = as_state(u, 3)
        p12 = c * u1 * u2 * (a * u3 + mu)
        p13 = c * u1 * u3 * (u2 + nu)
        p23 = u1 * u2 * u3
        return np.array([
            [0.0, p12, p13],
            [-p12, 0.0, p23],
            [-p13, -p23, 0.0],
        ])

    return ModelBundle("lv1", system, h1, h2, j1, j2)


def build_lv2() -> ModelBundle:
    system = lvs_to_quadratic([0.0, 0.0, 0.0],
                              [[0.0, 1.0, -1.0], [-1.0, 0.0, 1.0], [1.0, -1.0, 0.0]])
    h1 = InvariantObservable(
        "H1",
        lambda u: u[0] + u[1] + u[2],
        lambda u: np.ones(3),
    )
    h2 = InvariantObservable(
        "H2",
        lambda u: u[0] * u[1] * u[2],
        lambda u: np.array([u[1] * u[2], u[0] * u[2], u[0] * u[1]]),
    )
    j1_const = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
    j1_const.setflags(write=False)

    def j1(u):
        as_state(u, 3)
        return j1_const.copy()

    def j2(u):
        u1, u2, u3 = as_state(u, 3)
        return np.array([
            [0.0, u1 * u2, -u1 * u3],
            [-u1 * u2, 0.0, u2 * u3],
            [u1 * u3, -u2 * u3, 0.0],
        ])

    return ModelBundle("lv2", system, h1, h2, j1, j2)


def build_custom(r, A, name: str = "custom") -> ModelBundle:
    """Generic Lotka-Volterra system without known invariants."""
    return ModelBundle(name, lvs_to_quadratic(r, A))


def structure_residuals(mb: ModelBundle, u) -> tuple[float, float, float, float]:
    """Norms of ``J1 grad H1``, ``J2 grad H2``, ``J1 grad H2 - f`` and ``J2 grad H1 - f``."""
    if not mb.has_structure:
        raise ValidationError(f"model {mb.name!r} has no bi-Hamiltonian structure attached")
    u = as_state(u, 3)
    _require_positive(u, "structure_residuals")
    g1, g2 = mb.h1.grad(u), mb.h2.grad(u)
    J1, J2 = mb.j1(u), mb.j2(u)
    f = eval_field(mb.system, u)
    return (
        float(np.linalg.norm(J1 @ g1)),
        float(np.linalg.norm(J2 @ g2)),
        float(np.linalg.norm(J1 @ g2 - f)),
        float(np.linalg.norm(J2 @ g1 - f)),
    )


def nambu_field(mb: ModelBundle, u) -> np.ndarray:
    """``grad H1 x grad H2``; equals the vector field for LV2."""
    return np.cross(mb.h1.grad(u), mb.h2.grad(u))
