"""Neural index policies for multi-action restless bandits with budgets.

Pipeline: generate an instance, solve its occupancy-measure LP for the
oracle policy and reward upper bound, train an index network end-to-end
through a differentiable entropic-transport layer, then simulate and
compare against the oracle.
"""

from .errors import (
    BudgetViolationError,
    DataError,
    DegenerateChainError,
    NumericalError,
    TrainingDivergedError,
)
from .instances import RmabInstance, generate_instance, read_instance, step, validate_instance, write_instance
from .network import IndexNetwork, encode, initialize_network, load_checkpoint, save_checkpoint
from .occupancy import (
    OccupancyMeasure,
    build_occupancy_lp,
    extract_policy,
    read_occupancy,
    single_arm_average_reward,
    solve_occupancy,
    write_occupancy,
)
from .simplex import LinearProgram, SimplexResult, make_lp, solve_lp
from .training import TrainConfig, TrainLog, kl_loss, kl_target, reward_loss, train
from .transport import (
    HardAssignment,
    TransportPlan,
    plan_to_actions,
    sinkhorn_backward,
    sinkhorn_forward,
    solve_knapsack_exact,
)
from .evaluation import (
    EvalReport,
    evaluate,
    oracle_policy_callback,
    percentage_reward_gap,
    predicted_policy_callback,
    random_policy_callback,
    run_sweep,
    simulate_policy,
)

__version__ = "0.1.0"
