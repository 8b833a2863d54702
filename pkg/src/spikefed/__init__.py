"""Desk-scale federated training of integrate-and-fire spiking networks
with firing-rate-credit client selection."""

from .network import (
    Conv,
    Dense,
    NetworkConfig,
    NetworkParams,
    TrainConfig,
    backward,
    count_flops,
    forward,
    forward_batch,
    heaviside,
    if_step,
    init_params,
    loss,
    sgd_step,
    surrogate_grad,
    train_local,
)
from .data import (
    ClientPartition,
    Dataset,
    add_gaussian_noise,
    load_idx,
    partition_class_imbalanced,
    partition_dirichlet,
    partition_dirichlet_full,
    partition_shards,
    synth_blobs,
)
from .selection import (
    CreditRecord,
    SelectionConfig,
    firing_rate_difference,
    mean_firing_rates,
    random_selection,
    sample_candidates,
    select_top_p,
)
from .federation import (
    FederationConfig,
    RoundRecord,
    ServerState,
    aggregate,
    run_federation,
    run_round,
)
from .metrics import (
    EnergyLedger,
    energy_pj,
    rounds_to_target,
    selected_distribution,
    sops,
    test_accuracy,
)
from .config import ExperimentConfig, parse_config
from .estimator import SNNClassifier

__version__ = "0.1.0"
