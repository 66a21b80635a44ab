"""
Temperature-scaled attention, one kernel at a time
===================================================

The model is built from a handful of numpy kernels, each with a hand-written
backward pass.  This script pokes at the two that carry most of the behaviour.
"""

# %%
import math

import numpy as np

from symattn import numkern as nk
from symattn.gradcheck import check_model

# %% [markdown]
# Dividing logits by a temperature flattens or sharpens the distribution.
# With logits ``[ln 2, 0]`` and tau 1 the weights are exactly 2/3 and 1/3.

# %%
print(nk.softmax_temp([math.log(2), 0.0], 1.0)[0])
for tau in (0.1, 1.0, 10.0, 1000.0):
    w, _ = nk.softmax_temp([10.0, 0.0, -3.0], tau)
    print(f"tau={tau:>7}: {np.round(w, 4)}")

# %% [markdown]
# Masked positions get exactly zero weight, so padding never leaks in.

# %%
w, _ = nk.softmax_temp([1.0, 5.0, 2.0], 1.0, mask=[True, False, True])
print(w, w.sum())

# %% [markdown]
# LayerNorm standardizes each row before the affine gain and bias.

# %%
x = np.array([[1.0, 3.0], [10.0, 30.0]])
print(nk.layernorm(x, np.ones(2), np.zeros(2), eps=0.0)[0])

# %% [markdown]
# The full model gradient is checked against central finite differences.

# %%
res = check_model(d_k=6, n_segments=4, hidden=3)
for name, err in res.per_param.items():
    print(f"{name:<12}{err:.2e}")
print("max relative error", res.max_rel_err, "max absolute error", res.max_abs_err)
