"""Learning coupling functions of stochastic networked systems from one trajectory."""
from .network import (CouplingDomainError, CouplingFunction, CuckerSmale, FormationRepulsive,
                      NetworkSpec, NetworkState, NoiseModel, ConstantCoupling, ZeroCoupling,
                      complete_graph, contractivity, force, formation_offset, laplacian,
                      path_graph, project_diagonal, spectral_deviation, state_bound, step)
from .basis import (BasisDomainError, BasisExpansion, BasisFamily, NoInformativeSamples,
                    coercivity_constant, coercivity_matrices)
from .simulator import (DistanceHistogram, SimulationDomainError, Trajectory, histogram,
                        kl_divergence, read_trajectory, simulate, trajectory_histogram,
                        weighted_l2_distance, write_trajectory)
from .learner import (LearnResult, assemble, best_approximation, empirical_error, evaluate,
                      learn, noise_floor, solve)
from .config import ConfigError, ExperimentConfig, preset

__version__ = "0.1.0"
