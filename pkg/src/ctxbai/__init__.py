"""Contextual best-arm identification with fixed confidence."""

__version__ = "0.1.0"

from .allocator import (  # noqa: E402
    AllocationResult,
    AlternativeSolution,
    allocation_set_distance,
    brute_force_oracle,
    characteristic_time,
    min_pairwise_cost,
    pairwise_cost,
)
from .cts import CtsConfig, CtsTrace, forced_exploration_set, run_cts, select_arm  # noqa: E402
from .gaussian import (  # noqa: E402
    efficiency_gain,
    gaussian_characteristic_time,
    run_alpha_elimination,
)
from .glrt import glrt_statistic, stopping_decision  # noqa: E402
from .kl import (  # noqa: E402
    bernoulli_kl,
    bernoulli_kl_derivative,
    binary_relative_entropy,
    cts_threshold,
    elimination_threshold,
)
from .model import (  # noqa: E402
    BernoulliInstance,
    CountsState,
    GaussianTwoArmInstance,
    InstanceError,
    SeededStream,
    collapse_context,
    load_instance,
    marginal_means,
)
