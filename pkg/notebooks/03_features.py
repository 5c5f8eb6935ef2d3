# %% [markdown]
# Log-mel front end
#
# 25 ms Hann window, 10 ms hop, 1024-point FFT, 128 HTK mel bands, natural log.

# %%
import numpy as np

from pcmcl.features import SAMPLE_RATE, concat_mel, mel_centers, mel_spectrogram, n_frames

x = np.zeros(10 * SAMPLE_RATE)
print("10 s ->", mel_spectrogram(x).shape, "; formula:", n_frames(len(x)))

# %% [markdown]
# A pure tone peaks in the band whose centre is nearest on the mel axis.

# %%
t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
for f in (250, 1000, 4000):
    spec = mel_spectrogram(np.sin(2 * np.pi * f * t))
    k = int(np.argmax(spec.mean(axis=1)))
    print(f"{f:>5} Hz -> band {k:3d} (centre {mel_centers()[k]:.0f} Hz)")

# %% [markdown]
# Spectrogram of a concatenation from the halves' spectrograms: only the
# frames straddling the junction are recomputed.

# %%
rng = np.random.default_rng(0)
a, b = rng.standard_normal(80000), rng.standard_normal(80000)
fast = concat_mel(a, b, mel_spectrogram(a), mel_spectrogram(b))
direct = mel_spectrogram(np.concatenate([a, b]))
print("max |fast - direct| =", np.abs(fast - direct).max())
