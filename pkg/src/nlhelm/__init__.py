"""Nonlocal Helmholtz equations on unbounded domains, truncated by perfectly matched layers."""
from .analytic import (
    DecayBoundParams,
    DispersionError,
    DispersionRoot,
    RootKind,
    averaged_solution,
    decay_bound,
    dispersion_residual,
    dispersion_root,
    exact_solution_exponential,
    green_value,
    kappa_weight,
)
from .assembly import (
    QuadratureError,
    SparseComplexSystem,
    assemble,
    coeff_1d,
    coeff_2d,
    row_stencil,
    stencil_offsets,
)
from .estimator import NonlocalPMLSolver
from .experiments import (
    ExperimentConfig,
    SolutionField,
    convergence_orders,
    l2_error,
    load_config,
    run_experiment,
    write_results,
)
from .grid import Grid1D, Grid2D, IndexClass, build_grid_1d, build_grid_2d
from .kernel import KernelFamily, KernelSpec, eval_complex, second_moment, tail_mass
from .solver import SolveOptions, SolveReport, SolverError, solve
from .sources import GaussianSource, standard_source
from .stretch import AbsorptionProfile, Stretch, StretchConfig, stretch_1d, stretch_2d_cartesian, stretch_2d_polar

__version__ = "0.1.0"
