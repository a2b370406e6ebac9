# # Scheduling a five-queue network with a reverse loop
#
# Traffic enters at queue 1. Queue 3 can either send work to the exit path
# (queue 4) or back around through queue 5, and it cannot do both in the
# same slot. We compare several scheduling fields on this network as the
# load grows.

# %%
import numpy as np

from crwfield import (
    HMaxWeightField, Linear, MaxWeightField, MuPThetaField, Perturbation,
    check_stabilizable, fig1_loop, sweep,
)
from crwfield.sim import mean_by

net = fig1_loop(0.5)
print("B =\n", net.B)
print("feasible controls:", len(net.controls))

# %% [markdown]
# The stabilizability margin is the largest uniform drain rate a relaxed
# control can achieve. It shrinks linearly to zero as the load approaches 1.

# %%
for a in (0.1, 0.5, 0.9, 1.0):
    rep = check_stabilizable(net.with_alpha((a, 0, 0, 0, 0)))
    print(f"alpha={a:.1f}  margin={rep.margin:.4f}")

# %% [markdown]
# Holding costs: queue 5 (the loop queue) is five times as expensive.

# %%
cost = Linear((1.0, 1.0, 1.0, 1.0, 5.0))
policies = {
    "MaxWeight": MaxWeightField(None),
    "h-MaxWeight-exp": HMaxWeightField(cost, Perturbation("exp", 10.0)),
    "h-MaxWeight-log": HMaxWeightField(cost, Perturbation("log", 10.0)),
    "MuPTheta": MuPThetaField(cost, 1.0),
}
alphas = (0.3, 0.6, 0.9)
rows = sweep(net, policies, alphas, seeds=range(3), horizon=5000, cost=cost)
means = mean_by(rows)

print(f"{'policy':<18}" + "".join(f"{a:>10.1f}" for a in alphas))
for label in policies:
    print(f"{label:<18}" + "".join(f"{means[(label, a)]:>10.3f}" for a in alphas))

# %% [markdown]
# With unit costs every activity weight is a difference of two field
# components. MaxWeight and MuPTheta then rank queues identically, so their
# decisions (and costs) coincide exactly.

# %%
unit = Linear((1.0,) * 5)
same = sweep(net, {"MaxWeight": MaxWeightField(None), "MuPTheta": MuPThetaField(unit, 1.0)},
             (0.5,), seeds=(0,), horizon=5000, cost=unit)
print([r.metrics.avg_cost for r in same])
assert np.isclose(same[0].metrics.avg_cost, same[1].metrics.avg_cost)
