"""gradflow: gradient-flow integration, exact Hessians, and fixed-point
search on the loss landscapes of small dense networks, with an
infinite-data (population) twin for bias-free two-layer architectures."""

__version__ = "0.1.0"

from .network import (
    Activation,
    activation_triple,
    Dataset,
    DimensionMismatchError,
    LayerSpec,
    LossConfig,
    Net,
    activation_eval,
    barrier,
    forward,
    forward_batch,
    init_params,
    pack,
    predict,
    unpack,
)
from .derivatives import (
    EigenSolverError,
    EvalWork,
    Objective,
    as_objective,
    fd_gradient,
    fd_hessian,
    gradient,
    hessian,
    hessian_spectrum,
    loss,
)
from .ode import (
    AdaptiveRK45,
    method_from_name,
    method_name,
    Euler,
    IntegratorConfig,
    RK4,
    Rosenbrock,
    Trajectory,
    flow_jacobian,
    flow_rhs,
    integrate,
    integrate_objective,
    log_grid,
)
from .optimize import (
    Adam,
    BFGS,
    Budget,
    ConvergenceReport,
    GD,
    LBFGS,
    NewtonTR,
    min_eigenvalue,
    minimize,
    optimizer_from_name,
    optimizer_name,
    probably_converged_protocol_objective,
    minimize_objective,
    newton_tr_step,
    probably_converged_protocol,
)
from .population import (
    NetISpec,
    UnsupportedActivationError,
    align_student,
    aligned_sq_distance,
    mc_oracle,
    neti_gradient,
    neti_hessian,
    neti_loss,
    neti_objective,
    neti_pack,
    neti_train,
    neti_unpack,
)
from .analysis import (
    ComparisonRecord,
    benchmark,
    read_benchmark_csv,
    write_benchmark_csv,
    reference_trajectory,
    traj_distance,
    traj_progress,
)
from .datagen import gaussian_inputs, teacher_student_dataset, two_layer_net
from .persist import (
    PersistError,
    load_params,
    load_trajectory,
    read_run_json,
    save_params,
    save_trajectory,
    write_run_json,
)

__all__ = [name for name in dir() if not name.startswith("_")]
