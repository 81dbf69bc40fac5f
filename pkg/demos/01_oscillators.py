"""Ground-truth data: coupled nonlinear oscillators on a directed graph.

Run: python demos/01_oscillators.py
"""
import numpy as np

from netude.dynamics import (CYCLE3, OscillatorParams, fixture_adjacency, random_initial_condition,
                             simulate_oscillators)

# The two graphs used throughout: an 11-node sparse directed network and a
# 3-node directed cycle. Row i lists the nodes that node i listens to.
A11 = fixture_adjacency("net11")
print("11-node fixture:", int(A11.sum()), "edges, symmetric:", np.array_equal(A11, A11.T))
print(A11.astype(int))

# 500 RK4 steps at dt = 0.1 from a seeded uniform[-1, 1] start
traj = simulate_oscillators(A11, steps=500, dt=0.1, seed=0)
print("trajectory shape (T, N, d):", traj.states.shape)

# Amplitude over the second half: the network settles onto a sustained oscillation
late = traj.states[250:, :, 0]
print("per-node max |x| over t in [25, 50]:", np.round(np.abs(late).max(axis=0), 3))

# The coupling orientation matters. With the opposite sign every node
# relaxes to the origin, and an isolated node does too.
flipped = simulate_oscillators(A11, 500, 0.1, seed=0, params=OscillatorParams(coupling_sign=-1))
alone = simulate_oscillators(np.zeros((1, 1)), 500, 0.1, seed=0)
print("flipped sign, late max |x|:", round(float(np.abs(flipped.states[250:, :, 0]).max()), 4))
print("isolated node, late max |x|:", round(float(np.abs(alone.states[250:, :, 0]).max()), 4))

# A quick look at the 3-node cycle: print x for each node every 5 time units
small = simulate_oscillators(CYCLE3, 500, 0.1, x0=random_initial_condition(3, 1))
for k in range(0, 501, 50):
    print(f"t={small.times[k]:5.1f}  x = {np.round(small.states[k, :, 0], 3)}")

# RK4 is fourth order: halving dt cuts the endpoint error about 16x
x0 = random_initial_condition(11, 0)
ends = [simulate_oscillators(A11, int(round(5 / dt)), dt, x0=x0).states[-1] for dt in (0.1, 0.05, 0.025)]
print("observed order:", round(float(np.log2(np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2]))), 3))
