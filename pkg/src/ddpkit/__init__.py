"""DDP/iLQR trajectory optimization for rigid-body chains.

Exact second-order dynamics derivatives are computed tensor-free by
reverse-mode differentiation of the recursive dynamics algorithms, at the
same asymptotic cost as the first-order derivatives used by iLQR.
"""

from .config import (DEFAULTS, build_model, build_problem, build_u_init,
                     parse_config)
from .ddp import (IterRecord, OcpProblem, SolveReport, Trajectory,
                  make_deriv_provider, make_step_fn, rollout, solve,
                  trajectory_cost)
from .derivs import (BACKENDS, FIRST_ORDER_BACKENDS, SECOND_ORDER_BACKENDS,
                     DerivEngine, DynDerivs, engine_for, family_of,
                     first_order_aba, first_order_rnea, second_order_aba,
                     second_order_rnea, second_order_tensor)
from .dynamics import (SingularInertiaError, aba, mass_matrix, mod_rnea,
                       rnea, step_euler)
from .rbmodel import (RigidBodyModel, build_pendubot, build_serial_arm,
                      build_serial_arm7, dissipative_controller, load_model,
                      ou_control_sequence, sample_initial_state, save_model)
from .tape import (HessianTape, Tape, TapeError, jacobian, record, vjp,
                   vjp_grad)

__version__ = "0.1.0"

__all__ = [
    "DEFAULTS", "build_model", "build_problem", "build_u_init",
    "parse_config",
    "IterRecord", "OcpProblem", "SolveReport", "Trajectory",
    "make_deriv_provider", "make_step_fn", "rollout", "solve",
    "trajectory_cost",
    "BACKENDS", "FIRST_ORDER_BACKENDS", "SECOND_ORDER_BACKENDS",
    "DerivEngine", "DynDerivs", "engine_for", "family_of",
    "first_order_aba", "first_order_rnea", "second_order_aba",
    "second_order_rnea", "second_order_tensor",
    "SingularInertiaError", "aba", "mass_matrix", "mod_rnea", "rnea",
    "step_euler",
    "RigidBodyModel", "build_pendubot", "build_serial_arm",
    "build_serial_arm7", "dissipative_controller", "load_model",
    "ou_control_sequence", "sample_initial_state", "save_model",
    "HessianTape", "Tape", "TapeError", "jacobian", "record", "vjp",
    "vjp_grad",
    "__version__",
]
