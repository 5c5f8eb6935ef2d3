# %% [markdown]
# Synthetic respiratory dataset
#
# Each patient gets a smooth spectral "signature" filter; crackles are short
# damped clicks, wheezes are sustained tones.  The generator writes the
# ICBHI directory layout, which ingests back unchanged.

# %%
import tempfile
from collections import Counter
from pathlib import Path

import numpy as np

from pcmcl.ingest import SynthConfig, load_icbhi_dir, split_cycles, synth_generate, write_icbhi_dir

cfg = SynthConfig(n_patients=10, cycles_per_patient=6, seed=1)
cycles = synth_generate(cfg)
train, test = split_cycles(cycles)
print(len(cycles), "cycles;", len(train), "train /", len(test), "test")
print("train patients:", sorted({c.patient for c in train}))
print("test patients: ", sorted({c.patient for c in test}))

# %%
print(Counter(tuple(c.label) for c in cycles))
durations = np.array([c.duration_s for c in cycles])
print(f"cycle length {durations.min():.2f}-{durations.max():.2f} s")

# %%
with tempfile.TemporaryDirectory() as tmp:
    write_icbhi_dir(cycles, tmp)
    print(sorted(p.name for p in Path(tmp).iterdir())[:5], "...")
    print((Path(tmp) / "101_1b1_Al_sc_Synth.txt").read_text().splitlines()[:3])
    back = load_icbhi_dir(tmp)
    same = all(np.array_equal(a.samples, b.samples) and a.label == b.label for a, b in zip(cycles, back))
    print("round trip exact:", same)
