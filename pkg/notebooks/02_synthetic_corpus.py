"""
A corpus with planted evidence
==============================

Each participant is a bag of segment embeddings.  For every symptom with a
non-zero label, a few segments are planted along that symptom's signature
direction, scaled by ``1 + label``.  Everything else is isotropic noise.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from symattn import data as D
from symattn.model import SYMPTOM_NAMES

syn = D.generate_synthetic(seed=7)
print(syn.corpus.split_sizes, "d_k =", syn.corpus.d_k)

# %% [markdown]
# Look at one participant: project every segment on every signature.

# %%
rec = syn.corpus.split("train")[0]
proj = rec.segments @ syn.signatures.T
print(rec.id, "labels", rec.labels, "segments", rec.segments.shape[0])
for s, name in enumerate(SYMPTOM_NAMES):
    idx = syn.relevance[rec.id][s]
    planted = proj[idx, s].round(2).tolist() if idx else []
    print(f"{name:<14} y={rec.labels[s]}  planted={idx}  projections={planted}")

# %% [markdown]
# Planted rows sit far above the background on their own signature.

# %%
s = int(np.argmax(rec.labels))
rest = np.setdiff1d(np.arange(len(proj)), syn.relevance[rec.id][s])
print("background projection mean/sd:", proj[rest, s].mean().round(3), proj[rest, s].std().round(3))

# %% [markdown]
# On disk the corpus is a JSON-lines manifest plus one SGE1 file per
# participant (magic ``SGE1``, two u32 dims, float32 payload).

# %%
out = Path(tempfile.mkdtemp())
manifest = D.write_synthetic(out, syn)
print(manifest.read_text().splitlines()[0])
print(D.encode_embedding([[2.5]]).hex(" "))
