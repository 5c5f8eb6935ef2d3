# %% [markdown]
# Concatenation and partner sampling
#
# Every training cycle is joined with one partner into a 10 s input.  Without
# the patient-matching task, partners follow the four class/patient categories;
# with it, the sampler draws same-patient positives and other-patient negatives.

# %%
from collections import Counter

import numpy as np

from pcmcl.augment import AugmentConfig, build_augmented_dataset, pad_or_crop
from pcmcl.ingest import SynthConfig, split_cycles, synth_generate
from pcmcl.sampler import PairSpec, make_aux_samples

print(pad_or_crop(np.arange(3), 8), pad_or_crop(np.arange(9), 4))

# %%
train, _ = split_cycles(synth_generate(SynthConfig(n_patients=12, cycles_per_patient=8, seed=2)))
samples = build_augmented_dataset(train, AugmentConfig(weights=(0.2, 0.2, 0.3, 0.3), seed=0))
print(Counter(s.category for s in samples))
print(Counter(s.kind for s in samples))
s = samples[0]
print(s.sample_id, tuple(s.first.label), "+", tuple(s.second.label), "->", tuple(s.y_main), "y_aux", s.y_aux)

# %% [markdown]
# Hard negatives: another patient, identical pathology label.

# %%
aux = make_aux_samples(train, PairSpec(strategy="hard", seed=0), 160000)
neg = [a for a in aux if a.y_aux == 0]
print("positives:", len(aux) - len(neg), "negatives:", len(neg))
print("negatives with equal labels:", sum(a.first.label == a.second.label for a in neg), "/", len(neg))
