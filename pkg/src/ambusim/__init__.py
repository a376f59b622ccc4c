"""Game-theoretic discrete-event simulation of ambulance dispatching."""

__version__ = "0.1.0"

from .scenario import Scenario, load_scenario, generate_synthetic_patients  # noqa: F401
from .des import run_simulation, replicate, dispatch  # noqa: F401
from .game import build_payoff_tensor, find_pure_nash, equilibrium_map, optimal_profile  # noqa: F401
from .queueing import QueueParams, lq, wq, stability  # noqa: F401
from .sensitivity import FactorSpace, saltelli_sample, sobol_indices, convergence_study  # noqa: F401
from .stochastic import (exp_interarrival_cdf, poisson_pmf, fit_exponential,  # noqa: F401
                         kde_fit, ks_test)
