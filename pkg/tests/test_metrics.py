"""Energy accounting, accuracy, convergence, and distribution-tracking
metrics. Energy identities are checked against hand-computed values."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikefed.data import synth_blobs
from spikefed.metrics import (
    PJ_PER_FLOP,
    PJ_PER_SOP,
    DistributionTrace,
    EnergyLedger,
    energy_pj,
    inference_ops,
    rounds_to_target,
    selected_distribution,
    sops,
)
from spikefed.metrics import test_accuracy as accuracy_of
from spikefed.network import Dense, NetworkConfig, init_params


# ---------------------------------------------------------------------------
# Energy model
# ---------------------------------------------------------------------------

def test_sops_hand_computed():
    assert sops(0.1, 12, 78400) == 94080
    assert sops(0.0, 12, 1000) == 0
    assert sops(1.0, 1, 7) == 7
    with pytest.raises(ValueError):
        sops(1.2, 12, 10)
    with pytest.raises(ValueError):
        sops(0.5, 0, 10)


def test_energy_constants():
    assert energy_pj(EnergyLedger(flops=1, sops=0)) == pytest.approx(4.6)
    assert energy_pj(EnergyLedger(flops=0, sops=10)) == pytest.approx(9.0)
    assert PJ_PER_FLOP == 4.6 and PJ_PER_SOP == 0.9


def test_ledger_accumulates_and_rejects_negative():
    ledger = EnergyLedger()
    ledger.charge(flops=10, sops=5)
    ledger.charge(sops=5)
    assert (ledger.flops, ledger.sops) == (10, 10)
    with pytest.raises(ValueError):
        ledger.charge(flops=-1)


@settings(max_examples=300, deadline=None)
@given(rate=st.floats(0.0, 1.0), t=st.integers(1, 64),
       macs=st.integers(0, 10 ** 7))
def test_sops_never_exceed_dense_work(rate, t, macs):
    # spike-driven work is at most T x MACs because rates cap at 1
    assert 0 <= sops(rate, t, macs) <= t * macs


def test_inference_ops_decomposition():
    cfg = NetworkConfig(layers=(Dense(784, 100), Dense(100, 10)), t_steps=12)
    flops, s = inference_ops(cfg, np.array([0.1, 0.3]))
    assert flops == 78400                     # encoder works on real values
    assert s == sops(0.1, 12, 1000)           # deeper layer driven by spikes


# ---------------------------------------------------------------------------
# Accuracy / convergence
# ---------------------------------------------------------------------------

def test_accuracy_beats_chance_on_separable_data():
    # sanity oracle: a nearest-centroid classifier gets these blobs
    # perfectly; a trained spiking net must clear chance by a wide margin
    from spikefed.network import TrainConfig, train_local

    ds = synth_blobs(3, 150, dim=5, separation=6.0, seed=0)
    centers = np.stack([ds.samples[ds.labels == c].mean(axis=0) for c in range(3)])
    centroid_pred = np.argmin(
        ((ds.samples[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    assert (centroid_pred == ds.labels).mean() > 0.99

    cfg = NetworkConfig(layers=(Dense(5, 12), Dense(12, 3)), t_steps=12)
    params = train_local(init_params(cfg, 0), ds.samples, ds.labels,
                         TrainConfig(learning_rate=0.05, epochs=10,
                                     batch_size=32, seed=0), cfg)
    assert accuracy_of(params, ds.samples, ds.labels, cfg) > 0.8


def test_accuracy_empty_set_rejected():
    cfg = NetworkConfig(layers=(Dense(2, 2),), t_steps=2)
    with pytest.raises(ValueError):
        accuracy_of(init_params(cfg, 0), np.zeros((0, 2)), np.zeros(0), cfg)


def test_rounds_to_target_edges():
    accs = [0.1, 0.3, 0.5, 0.4, 0.6]
    assert rounds_to_target(accs, 0.5) == 2
    assert rounds_to_target(accs, 0.05) == 0
    assert rounds_to_target(accs, 0.9) is None
    assert rounds_to_target([], 0.1) is None


# ---------------------------------------------------------------------------
# Selected-client distribution tracking
# ---------------------------------------------------------------------------

def test_selected_distribution_accumulates():
    hists = np.array([[10, 0], [0, 10], [5, 5]])
    trace = selected_distribution([[0], [1, 2]], hists)
    assert isinstance(trace, DistributionTrace)
    assert np.array_equal(trace.counts, [[10, 0], [15, 15]])
    assert np.allclose(trace.proportions, [[1.0, 0.0], [0.5, 0.5]])


def test_selected_distribution_rejects_unknown_client():
    with pytest.raises(ValueError):
        selected_distribution([[3]], np.ones((2, 2), dtype=int))
