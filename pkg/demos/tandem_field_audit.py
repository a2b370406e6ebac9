# # Auditing scheduling fields on a tandem queue
#
# Two unit-rate queues in series, with the fluid value function as the base
# cost. The plain exponentially perturbed gradient pushes weight onto a
# queue that is nearly empty. The modified field does not. The audits below
# show this on sampled states.

# %%
from crwfield import (
    HMaxWeightField, MuPThetaField, Perturbation, SampleSpec, TandemFluid,
    check_cor42, check_cor43,
)

tf = TandemFluid(1.0, 2.0, 0.5, 1.0)
exp_field = HMaxWeightField(tf, Perturbation("exp", 1.0))
mod_field = MuPThetaField(tf, 1.0)

# %% [markdown]
# Relative gradient of each field component, plus the zero-on-empty-queue
# requirement.

# %%
sample = SampleSpec(points_per_shell=256)
for name, fld in (("exp-perturbed", exp_field), ("modified", mod_field)):
    rep = check_cor42(fld, 0.05, sample)
    print(f"{name:<14} passed={rep.passed}  worst={rep.worst_violation:.3g}  "
          f"counterexamples={len(rep.counterexamples)}")
    for cx in rep.counterexamples[:2]:
        print("   ", cx)

# %% [markdown]
# Growth audit for the perturbation itself: the exponential map saturates,
# the logarithmic one keeps growing.

# %%
for kind in ("exp", "log"):
    rep = check_cor43(tf, Perturbation(kind, 1.0), 0.05, sample)
    print(f"{kind}: passed={rep.passed}")
