"""Client credit assignment and selection strategies.

A client's credit is the squared change of its per-category mean firing
rates between the incoming global model and the locally trained model.
Clients with high credit contribute the most new distributional
information, so the server aggregates the top-P of a randomly sampled
candidate set. Random selection and full participation are the
baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkConfig, NetworkParams, forward_batch

__all__ = [
    "CreditRecord",
    "SelectionConfig",
    "mean_firing_rates",
    "firing_rate_difference",
    "sample_candidates",
    "select_top_p",
    "random_selection",
    "credit_csv_row",
]

STRATEGIES = ("sfedca", "random", "full")


@dataclass(frozen=True)
class CreditRecord:
    client_id: int
    delta_r: float
    rates_before: np.ndarray
    rates_after: np.ndarray

    def __post_init__(self):
        if self.delta_r < 0:
            raise ValueError("delta_r must be nonnegative")


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "sfedca"
    n_clients: int = 100
    n_candidates: int = 10
    n_selected: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if min(self.n_clients, self.n_candidates, self.n_selected) < 1:
            raise ValueError("N, S and P must be positive")
        if self.strategy == "sfedca":
            if not self.n_selected <= self.n_candidates <= self.n_clients:
                raise ValueError("require P <= S <= N for sfedca")
        elif self.n_selected > self.n_clients:
            raise ValueError("require P <= N")


def _rates_by_class(params: NetworkParams, x: np.ndarray, y: np.ndarray,
                    n_classes: int, config: NetworkConfig,
                    batch_size: int = 256):
    """Per-class mean firing rates plus the per-layer mean rates of the
    whole pass (the latter feeds energy accounting)."""
    if len(x) == 0:
        raise ValueError("empty dataset")
    per_sample = np.empty(len(x))
    layer_totals = None
    for start in range(0, len(x), batch_size):
        res = forward_batch(params, x[start:start + batch_size], config)
        per_sample[start:start + len(res.layer_rates)] = res.layer_rates.mean(axis=1)
        batch_sum = res.layer_rates.sum(axis=0)
        layer_totals = batch_sum if layer_totals is None else layer_totals + batch_sum
    rates = np.zeros(n_classes)
    for c in range(n_classes):
        mask = y == c
        if mask.any():
            rates[c] = per_sample[mask].mean()
    return rates, layer_totals / len(x)


def mean_firing_rates(params: NetworkParams, x: np.ndarray, y: np.ndarray,
                      n_classes: int, config: NetworkConfig) -> np.ndarray:
    """Per-category mean firing rate of the network on a client's data.

    For each sample the rate is averaged over layers, neurons and
    timesteps; categories the client does not hold get rate 0 so the
    vector stays comparable across clients.
    """
    rates, _ = _rates_by_class(params, x, y, n_classes, config)
    return rates


def firing_rate_difference(before: np.ndarray, after: np.ndarray) -> float:
    """Sum of squared per-category rate changes; the selection credit."""
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    if before.shape != after.shape:
        raise ValueError("rate vectors differ in length")
    diff = after - before
    return float(np.dot(diff, diff))


def sample_candidates(n_clients: int, n_candidates: int, round_seed) -> list[int]:
    """Uniform sample of client ids without replacement, sorted."""
    if n_candidates > n_clients:
        raise ValueError("cannot sample more candidates than clients")
    rng = np.random.default_rng(round_seed)
    return sorted(rng.choice(n_clients, size=n_candidates, replace=False).tolist())


def select_top_p(credits: list[CreditRecord], n_selected: int) -> list[int]:
    """Ids of the ``n_selected`` highest-credit clients; ties go to the
    lowest client id. Result sorted by id."""
    if n_selected > len(credits):
        raise ValueError("cannot select more clients than candidates")
    ranked = sorted(credits, key=lambda cr: (-cr.delta_r, cr.client_id))
    return sorted(cr.client_id for cr in ranked[:n_selected])


def random_selection(n_clients: int, n_selected: int, round_seed) -> list[int]:
    """Uniform selection without replacement, seed-deterministic."""
    if n_selected > n_clients:
        raise ValueError("cannot select more clients than available")
    rng = np.random.default_rng(round_seed)
    return sorted(rng.choice(n_clients, size=n_selected, replace=False).tolist())


def credit_csv_row(round_index: int, credit: CreditRecord) -> str:
    """round, client_id, delta_r, rates_before..., rates_after..."""
    cells = [str(round_index), str(credit.client_id), repr(credit.delta_r)]
    cells += [repr(float(v)) for v in credit.rates_before]
    cells += [repr(float(v)) for v in credit.rates_after]
    return ",".join(cells)
