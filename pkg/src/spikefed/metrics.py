"""Accuracy, convergence and energy accounting.

Energy follows the spiking convention: real-valued multiply-accumulate
work (the first layer's input injection, and everything in a
conventional network) is billed as FLOPs at 4.6 pJ each, while
spike-driven accumulates in deeper layers are billed as SOPs at 0.9 pJ.
SOPs per layer and sample are mean input firing rate x T x MACs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkConfig, NetworkParams, count_flops, forward_batch

__all__ = [
    "PJ_PER_FLOP",
    "PJ_PER_SOP",
    "EnergyLedger",
    "DistributionTrace",
    "test_accuracy",
    "rounds_to_target",
    "sops",
    "energy_pj",
    "inference_ops",
    "selected_distribution",
]

PJ_PER_FLOP = 4.6
PJ_PER_SOP = 0.9


@dataclass
class EnergyLedger:
    """Monotone counters of MAC (flops) and spike-accumulate (sops) work."""

    flops: int = 0
    sops: int = 0

    def charge(self, flops: int = 0, sops: int = 0) -> None:
        if flops < 0 or sops < 0:
            raise ValueError("energy charges must be nonnegative")
        self.flops += int(flops)
        self.sops += int(sops)


def sops(mean_firing_rate: float, t_steps: int, flops: int) -> int:
    """Synaptic operation count: rate x T x MACs, rounded to nearest."""
    if not 0.0 <= mean_firing_rate <= 1.0:
        raise ValueError("firing rate must be in [0, 1]")
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    return int(round(mean_firing_rate * t_steps * flops))


def energy_pj(ledger: EnergyLedger) -> float:
    """Total picojoules: 4.6 per FLOP, 0.9 per SOP."""
    return PJ_PER_FLOP * ledger.flops + PJ_PER_SOP * ledger.sops


def inference_ops(config: NetworkConfig, layer_rates: np.ndarray) -> tuple[int, int]:
    """(flops, sops) of one forward pass given the observed per-layer
    mean firing rates.

    The first layer consumes the real-valued sample, so its MACs count
    as FLOPs (one pass; the static input current is reused across
    timesteps). Every deeper layer is driven by spikes: SOPs = input
    layer rate x T x MACs.
    """
    macs = count_flops(config)
    flops = macs[0]
    total_sops = 0
    for l in range(1, len(macs)):
        total_sops += sops(float(layer_rates[l - 1]), config.t_steps, macs[l])
    return flops, total_sops


def test_accuracy(params: NetworkParams, x: np.ndarray, y: np.ndarray,
                  config: NetworkConfig, batch_size: int = 256) -> float:
    """Fraction of argmax predictions matching the labels; prediction
    ties break to the lowest class id."""
    if len(x) == 0:
        raise ValueError("empty test set")
    correct = 0
    for start in range(0, len(x), batch_size):
        probs = forward_batch(params, x[start:start + batch_size], config).class_probs
        correct += int(np.sum(np.argmax(probs, axis=1) == y[start:start + len(probs)]))
    return correct / len(x)


def rounds_to_target(accuracies, target: float):
    """Smallest round index whose accuracy reaches ``target``; None if
    the run never gets there."""
    for r, acc in enumerate(accuracies):
        if acc >= target:
            return r
    return None


@dataclass
class DistributionTrace:
    """Cumulative per-class sample counts of the selected clients."""

    counts: np.ndarray       # (rounds, n_classes), cumulative
    proportions: np.ndarray  # (rounds, n_classes), counts normalized per round


def selected_distribution(selected_per_round: list[list[int]],
                          client_histograms: np.ndarray) -> DistributionTrace:
    """Accumulate the class histograms of each round's selected clients.

    ``client_histograms`` is the (n_clients, n_classes) matrix from
    :meth:`ClientPartition.class_histograms`.
    """
    n_clients, n_classes = client_histograms.shape
    counts = np.zeros((len(selected_per_round), n_classes), dtype=int)
    running = np.zeros(n_classes, dtype=int)
    for r, selected in enumerate(selected_per_round):
        for k in selected:
            if not 0 <= k < n_clients:
                raise ValueError(f"unknown client id {k}")
            running = running + client_histograms[k]
        counts[r] = running
    totals = counts.sum(axis=1, keepdims=True)
    proportions = np.divide(counts, totals, out=np.zeros(counts.shape, dtype=float),
                            where=totals > 0)
    return DistributionTrace(counts=counts, proportions=proportions)
