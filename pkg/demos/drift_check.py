# # Monte Carlo drift of a quadratic Lyapunov function
#
# Under MaxWeight on the tandem network, the one-step drift of |x|^2 / 2 should
# be negative away from the origin. We estimate it with common random
# numbers and compare with the exact expectation where it is cheap.

# %%
import numpy as np

from crwfield import MaxWeightField, Policy, QuadraticDiag, estimate_drift, tandem2

net = tandem2(0.6)
pol = Policy(net, MaxWeightField(None))
V = QuadraticDiag((1.0, 1.0))

# %%
for x in ([0, 0], [3, 0], [0, 3], [20, 20], [125, 125]):
    mean, se = estimate_drift(pol, net, np.array(x), 20_000, 1, V)
    print(f"x={x!s:<12} drift={mean:8.3f} +/- {se:.3f}   control={pol.select(x).tolist()}")

# %% [markdown]
# On the diagonal MaxWeight drains queue 2 and lets queue 1 fill at rate
# 0.6, so the drift is close to -(1 - 0.6) * 125 = -50 at (125, 125).
