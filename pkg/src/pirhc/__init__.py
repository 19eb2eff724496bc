"""Monte Carlo path-integral approximation of receding-horizon optimal
control for nonlinear stochastic systems, with closed-loop error injection
and empirical stochastic stability analysis."""

from .costs import (CostSpec, GammaCoupling, ValueEstimate,
                    check_gamma_coupling, estimate_value, path_cost,
                    quadratic_cost)
from .engine import backend_name
from .errors import (AllRolloutsFailedError, ConfigError,
                     CouplingViolationError, DegenerateWeightsError,
                     GainRankError, NoTransientError, NumericalBlowupError,
                     PirhcError, RiccatiSolveError)
from .instances import ProblemInstance, make_instance
from .models import (NoiseStream, SdeModel, Trajectory, linear_sde,
                     scalar_polynomial_sde, validate_model)
from .pathint import (ControlEstimate, PathIntegralController, PiConfig,
                      bias_sweep, estimate_control, noise_functional)
from .rhc import (ErrorInjector, RhcConfig, RhcResult, hold_wrap, run_rhc,
                  run_rhc_batch)
from .sde import euler_maruyama_step, simulate_controlled, simulate_uncontrolled
from .stability import (LqOracle, estimate_level_set, estimate_moments,
                        fit_decay_rate, level_set_statistics, robustness_sweep,
                        solve_riccati)

__version__ = "0.1.0"
