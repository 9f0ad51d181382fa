"""Low-rank PGD solver for separable conformable-fractional problems.

Greedy rank-one updates maximize the energy Rayleigh quotient by
alternating least squares; the exact line search makes the energy error
drop by exactly the achieved quotient at every step.

>>> from confpgd import ProblemSpec, build_problem, greedy_solve
>>> result = greedy_solve(build_problem(ProblemSpec(alpha_x=0.5, alpha_y=0.5, n_x=16, n_y=16)))
>>> result.status
'converged'
"""
from .assembly import (GrunwaldOperator, LoadFactors, OperatorPair, StencilChoice,
                       assemble_fem_pair, assemble_grunwald_operator, assemble_load_factor,
                       grunwald_energy_pair)
from .linalg import KroneckerSumOperator, ToeplitzFFT, dual_norm_squared, kron_sum_matvec, spd_solve, toeplitz_matvec
from .lowrank import (RankOneMode, ResidualContraction, SeparableFunction, rank_one_energy,
                      renormalize)
from .pgd import (AlsConfig, Diagnostics, GreedyConfig, GreedyResult, IterationRecord, als_maximize,
                  estimate_theta, greedy_solve, line_search_tau)
from .problems import (LoadSpec, Problem, ProblemSpec, build_problem, manufactured_rank_one_load,
                       reference_solution_dense)
from .spaces import (FractionalInterval, FractionalOrder, Mesh1D, make_graded_mesh, make_interval,
                     make_uniform_mesh)

__version__ = "0.1.0"
