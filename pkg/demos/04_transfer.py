"""Move learned physics onto a graph it never saw.

Train on the 11-node network (or load a checkpoint), then run the learned
node and coupling networks on the 3-node cycle next to the true system.

The default is the full 1000 + 1000 epoch schedule, about 5 minutes. With
--quick (150 + 50 epochs) the learned system has not yet picked up the limit
cycle and decays to a fixed point instead, which is instructive on its own.

Run: python demos/04_transfer.py [--quick | checkpoint.json]
"""
import sys

import numpy as np

from netude.dynamics import CYCLE3, fixture_adjacency, random_initial_condition, simulate_oscillators
from netude.evaluation import GroundTruthPhysics, TransferSpec, transfer_eval
from netude.model import load_checkpoint
from netude.training import TrainConfig, split_thirds, train_two_phase

args = sys.argv[1:]
if args and args[0] != "--quick":
    model = load_checkpoint(args[0])
else:
    A = fixture_adjacency("net11")
    splits = split_thirds(simulate_oscillators(A, 500, 0.1, seed=0))
    epochs = (150, 50) if args else (1000, 1000)
    cfg = TrainConfig(epochs_phase1=epochs[0], epochs_phase2=epochs[1], alpha=1e-6)
    model = train_two_phase(splits, cfg, A_true=A).model
    print("training on 11 nodes done")

spec = TransferSpec(CYCLE3, random_initial_condition(3, 1), n_steps=500, dt=0.1)
report, learned, true = transfer_eval(model, spec)

print("transient MSE (t < 20):", f"{report.transient_mse:.3e}")
print("limit-cycle amplitude  learned:", np.round(report.amplitude_learned, 3))
print("                       true:   ", np.round(report.amplitude_true, 3))
print("                       ratio:  ", np.round(report.amplitude_ratio, 3))

for k in range(0, 501, 100):
    print(f"t={k * 0.1:5.1f}  learned x {np.round(learned.states[k, :, 0], 3)}  true x {np.round(true.states[k, :, 0], 3)}")

# Sanity anchor: the true physics transferred onto itself is exact
oracle, _, _ = transfer_eval(GroundTruthPhysics(), spec)
print("oracle self-transfer MSE:", oracle.rollout_mse, " ratios:", oracle.amplitude_ratio)
