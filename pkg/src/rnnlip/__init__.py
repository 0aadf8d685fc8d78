"""Certified Lipschitz bounds for finite-horizon tanh RNNs.

The package bundles five pieces that form a self-contained pipeline:

* ``model``      -- the RNN, its unrolled block operators, input gradients;
* ``intervals``  -- interval propagation producing local slope bounds;
* ``certify``    -- the semidefinite certification and horizon sweeps;
* ``empirical``  -- random/active exploration lower bounds;
* ``tanks`` / ``training`` -- synthetic data generation and stable training;
* ``cli``        -- the ``rnnlip`` command wiring everything together.
"""

from .certify import (
    CertificationResult,
    CertProblem,
    QBasis,
    SweepResult,
    build_M,
    build_problem,
    build_Q_global,
    build_Q_local,
    certify_horizon,
    product_bound,
    solve_lipschitz,
    sweep_horizons,
)
from .conic import ClarabelBackend, ConicBackend, ConicProblem, ScsBackend, default_backend
from .empirical import (
    EmpiricalResult,
    ExplorationConfig,
    active_explore,
    l_emp,
    random_explore,
    sequence_vs_pointwise_demo,
)
from .errors import ContractError, NumericalError
from .intervals import (
    IntervalBox,
    SlopeBoundSet,
    local_slopes,
    next_hidden_bounds,
    preactivation_bounds,
    propagate_slope_bounds,
)
from .model import (
    RnnModel,
    UnrolledSystem,
    build_unrolled,
    forward_final_batch,
    forward_sequence,
    forward_step,
    input_gradient,
    load_model,
    pack_input,
    save_model,
    unpack_input,
)
from .tanks import (
    SequenceDataset,
    TankConfig,
    generate_dataset,
    load_dataset,
    save_dataset,
    simulate,
    steady_state,
    tank_step,
)
from .training import TrainConfig, TrainingLog, loss_accuracy, loss_stability, spectral_norm, train

__version__ = "0.1.0"
