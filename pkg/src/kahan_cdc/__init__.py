"""Kahan's method and classical deferred correction for quadratic ODEs.

Typical use::

    from kahan_cdc import build_lv1, CdcConfig, cdc_integrate

    model = build_lv1()
    traj = cdc_integrate(model.system, (1.0, 1.9, 0.5), CdcConfig(dt=0.01, t_end=100.0))
"""

from .analysis import (ConvergenceReport, convergence_order, convergence_study, invariant_trace,
                       l2_invariant_error, l2_solution_error, speedup_bench)
from .cdc import (CdcConfig, NodeGrid, NodeSolution, barycentric_weights, cdc_integrate,
                  cdc_sweep, interp_deriv, interp_eval)
from .errors import (DomainError, KahanCdcError, NewtonDivergence, NumericalError, StepFailure,
                     ValidationError)
from .integrators import (NewtonConfig, integrate_fixed, kahan_step, kahan_step_rk_form,
                          midpoint_step, reference_solve)
from .models import (Lv1Params, ModelBundle, build_lv1, build_lv2, eval_invariant,
                     structure_residuals)
from .quadratic import QuadraticSystem, eval_field, eval_jacobian, lvs_to_quadratic, polarize
from .trajectory import Trajectory

__version__ = "0.1.0"
