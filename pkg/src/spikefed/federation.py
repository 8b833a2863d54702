"""The federation state machine.

Each round: sample candidates, run the candidates' local work (firing
rates before training, local SGD, rates after), score them, aggregate
the selected models into the next global model, and evaluate on the
held-out test set. Candidate work may run on a thread pool; results are
merged in client-id order so the history is identical under any
schedule.

Randomness is derived from the master seed through counter-style
streams keyed by (purpose, round, client), so no execution order can
perturb a draw.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics, selection
from .data import ClientPartition, Dataset
from .network import (
    NetworkConfig,
    NetworkParams,
    TrainConfig,
    _train_epochs,
    count_flops,
    init_params,
)
from .selection import CreditRecord, SelectionConfig

__all__ = [
    "ServerState",
    "ClientState",
    "RoundRecord",
    "FederationConfig",
    "derive_seed",
    "aggregate",
    "run_round",
    "run_federation",
]

# stream purposes for seed derivation
_PURPOSE_INIT = 0
_PURPOSE_CANDIDATES = 1
_PURPOSE_TRAIN = 2


def derive_seed(master_seed: int, purpose: int, round_index: int = 0,
                client_id: int = 0) -> np.random.SeedSequence:
    """Independent stream per (purpose, round, client)."""
    return np.random.SeedSequence([master_seed, purpose, round_index, client_id])


def _stream_seed(master_seed: int, purpose: int, round_index: int = 0,
                 client_id: int = 0) -> int:
    return int(derive_seed(master_seed, purpose, round_index,
                           client_id).generate_state(1)[0])


@dataclass
class ServerState:
    global_params: NetworkParams
    round: int = 0


@dataclass
class ClientState:
    client_id: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) == 0:
            raise ValueError(f"client {self.client_id} has no data")

    @property
    def n_samples(self) -> int:
        return len(self.x)


@dataclass
class RoundRecord:
    round: int
    candidate_ids: list[int]
    credits: list[CreditRecord]
    selected_ids: list[int]
    test_accuracy: float
    train_flops: int
    train_sops: int
    wallclock: float


@dataclass(frozen=True)
class FederationConfig:
    selection: SelectionConfig
    train: TrainConfig
    rounds: int = 300
    aggregation: str = "weighted"      # or "uniform"
    parallel: bool = False
    energy_backward_multiplier: float = 2.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.aggregation not in ("weighted", "uniform"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


def aggregate(models: list[NetworkParams], weights: list[float] | None = None,
              uniform: bool = False) -> NetworkParams:
    """Elementwise weighted mean of parameter sets; weights default to the
    clients' data sizes upstream. ``uniform=True`` ignores the weights."""
    if not models:
        raise ValueError("nothing to aggregate")
    if weights is None or uniform:
        weights = [1.0] * len(models)
    if len(weights) != len(models):
        raise ValueError("one weight per model required")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    shapes = [tuple(w.shape for w in m.weights) for m in models]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ValueError("model shape mismatch")
    total = float(sum(weights))
    out = []
    for layer in range(len(models[0].weights)):
        acc = np.zeros_like(models[0].weights[layer])
        for model, w in zip(models, weights):  # fixed order: deterministic
            acc += (w / total) * model.weights[layer]
        out.append(acc)
    return NetworkParams(tuple(out))


def _candidate_work(global_params: NetworkParams, client: ClientState,
                    train_cfg: TrainConfig, net_cfg: NetworkConfig,
                    n_classes: int, with_rates: bool):
    """One candidate's round work: optional rate pass, local training,
    optional second rate pass. Returns (client_id, params, credit, flops, sops)."""
    flops = 0
    sops = 0
    rates_before = rates_after = None
    if with_rates:
        rates_before, layer_means = selection._rates_by_class(
            global_params, client.x, client.y, n_classes, net_cfg)
        f, s = metrics.inference_ops(net_cfg, layer_means)
        flops += f * client.n_samples
        sops += s * client.n_samples
    local_params, rate_sums, n_passes = _train_epochs(
        global_params, client.x, client.y, train_cfg, net_cfg)
    if with_rates:
        rates_after, layer_means = selection._rates_by_class(
            local_params, client.x, client.y, n_classes, net_cfg)
        f, s = metrics.inference_ops(net_cfg, layer_means)
        flops += f * client.n_samples
        sops += s * client.n_samples
    credit = None
    if with_rates:
        credit = CreditRecord(
            client_id=client.client_id,
            delta_r=selection.firing_rate_difference(rates_before, rates_after),
            rates_before=rates_before,
            rates_after=rates_after,
        )
    return client.client_id, local_params, credit, flops, sops, rate_sums, n_passes


def _training_energy(net_cfg: NetworkConfig, rate_sums: np.ndarray, n_passes: int,
                     backward_multiplier: float) -> tuple[int, int]:
    """Charge local training as forward passes plus a backward-pass
    multiplier on the same operation counts."""
    macs = count_flops(net_cfg)
    factor = 1.0 + backward_multiplier
    flops = n_passes * macs[0] * factor
    total_sops = 0.0
    for l in range(1, len(macs)):
        total_sops += rate_sums[l - 1] * net_cfg.t_steps * macs[l]
    return int(round(flops)), int(round(total_sops * factor))


def run_round(server: ServerState, clients: list[ClientState],
              fed_cfg: FederationConfig, net_cfg: NetworkConfig,
              n_classes: int, master_seed: int,
              test_x: np.ndarray, test_y: np.ndarray) -> tuple[ServerState, RoundRecord]:
    """Execute one federation round and evaluate the new global model."""
    t0 = time.perf_counter()
    sel = fed_cfg.selection
    r = server.round
    cand_seed = _stream_seed(master_seed, _PURPOSE_CANDIDATES, r)

    if sel.strategy == "sfedca":
        candidate_ids = selection.sample_candidates(sel.n_clients, sel.n_candidates,
                                                    cand_seed)
        train_ids = candidate_ids
        with_rates = True
    elif sel.strategy == "random":
        candidate_ids = selection.random_selection(sel.n_clients, sel.n_selected,
                                                   cand_seed)
        train_ids = candidate_ids
        with_rates = False
    else:  # full participation
        candidate_ids = list(range(sel.n_clients))
        train_ids = candidate_ids
        with_rates = False

    def work(client_id: int):
        tcfg = TrainConfig(
            learning_rate=fed_cfg.train.learning_rate,
            epochs=fed_cfg.train.epochs,
            batch_size=fed_cfg.train.batch_size,
            seed=_stream_seed(master_seed, _PURPOSE_TRAIN, r, client_id),
        )
        return _candidate_work(server.global_params, clients[client_id], tcfg,
                               net_cfg, n_classes, with_rates)

    if fed_cfg.parallel and len(train_ids) > 1:
        with ThreadPoolExecutor(max_workers=min(8, len(train_ids))) as pool:
            results = list(pool.map(work, train_ids))
    else:
        results = [work(cid) for cid in train_ids]
    results.sort(key=lambda item: item[0])  # merge in client-id order

    local_models = {cid: params for cid, params, *_ in results}
    credits = [credit for _, _, credit, *_ in results if credit is not None]
    flops = sum(item[3] for item in results)
    sops = sum(item[4] for item in results)
    for item in results:
        f, s = _training_energy(net_cfg, item[5], item[6],
                                fed_cfg.energy_backward_multiplier)
        flops += f
        sops += s

    if sel.strategy == "sfedca":
        selected_ids = selection.select_top_p(credits, sel.n_selected)
    else:
        selected_ids = list(candidate_ids)

    new_global = aggregate(
        [local_models[cid] for cid in selected_ids],
        weights=[clients[cid].n_samples for cid in selected_ids],
        uniform=(fed_cfg.aggregation == "uniform"),
    )
    accuracy = metrics.test_accuracy(new_global, test_x, test_y, net_cfg)
    record = RoundRecord(
        round=r,
        candidate_ids=list(candidate_ids),
        credits=credits,
        selected_ids=selected_ids,
        test_accuracy=accuracy,
        train_flops=flops,
        train_sops=sops,
        wallclock=time.perf_counter() - t0,
    )
    return ServerState(global_params=new_global, round=r + 1), record


def run_federation(train_set: Dataset, test_set: Dataset,
                   partition: ClientPartition, net_cfg: NetworkConfig,
                   fed_cfg: FederationConfig, master_seed: int) -> list[RoundRecord]:
    """Run the full round loop from a seeded initial model; returns one
    record per round."""
    if partition.n_clients != fed_cfg.selection.n_clients:
        raise ValueError("partition size does not match N")
    clients = [
        ClientState(client_id=k, x=train_set.samples[idx], y=train_set.labels[idx])
        for k, idx in enumerate(partition.assignments)
    ]
    server = ServerState(
        global_params=init_params(net_cfg, _stream_seed(master_seed, _PURPOSE_INIT)),
        round=0,
    )
    history = []
    for _ in range(fed_cfg.rounds):
        server, record = run_round(server, clients, fed_cfg, net_cfg,
                                   train_set.n_classes, master_seed,
                                   test_set.samples, test_set.labels)
        history.append(record)
    return history
