"""Hierarchical incentive games: marginal-cost pricing with ADMM coupling.

Controllers pay agents per unit of resource; agents answer with best
responses; prices move to marginal costs. Coupling constraints between
agents or between controllers are handled by an inner primal-dual loop.
"""

from types import ModuleType

from .admm import AdmmOptions, AdmmResult, DualState, admm_solve, dual_update, residuals
from .basic import BasicResult, BasicSolveOptions, agent_best_response, price_update, solve_basic
from .errors import (ConvexityError, DomainError, HierGameError, InfeasibleError,
                     InstanceMismatchError, NonConvergenceError, ParameterError, ValidationError)
from .extended import (CoupledResult, MlmfResult, TwoSidedDuals, solve_mlmf,
                       solve_single_controller_coupled)
from .harness import (BASELINE_LABEL, LinearityFit, SweepTable, baseline_uncoordinated,
                      fit_linearity, nash_certificate, run_experiment, solve, sweep_epsilon,
                      table_from_traces)
from .model import (Agent, Allocation, Controller, GameInstance, LinearConstraint, PriceProfile,
                    ValidationReport, agent_utility, epsilon, load_instance, objective_values,
                    save_instance, validate_instance)
from .oracle import KKTReport, OracleResult, centralized_optimum, grid_search, kkt_check
from .scalar import (Box, InvShannon, Linear, LogConcaveCost, PowerLaw, Quadratic, ScalarFn, Sum,
                     argmin_shifted)
from .scenarios import KINDS, ScenarioParams, gen_scenario
from .trace import CSV_COLUMNS, SolveTrace, TraceRow

__version__ = "0.1.0"

__all__ = sorted(name for name, obj in globals().items()
                 if not name.startswith("_") and not isinstance(obj, ModuleType))
