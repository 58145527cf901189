#!/usr/bin/env python3
"""From a waveform to cortical magnitudes, one stage at a time.

Run with ``python demos/auditory_features.py [out_dir]``; figures land in
``out_dir`` (default: the current directory).
"""

import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from cortinv.cortical import cortical_transform, design_strf_bank, ripple_stimulus
from cortinv.frontend import audspec, design_cochlear_filterbank
from cortinv.signal_io import SynthSpec, synth_dataset

out = sys.argv[1] if len(sys.argv) > 1 else "."

# %% the cochlear filterbank: 128 channels, 24 per octave, from 180 Hz
fb = design_cochlear_filterbank()
print("center frequencies %.1f .. %.1f Hz" % (fb.center_freqs[0], fb.center_freqs[-1]))

f = np.geomspace(100, 8000, 2000)
h = np.abs(fb.response(f))
plt.figure(figsize=(7, 3))
for k in range(0, 128, 16):
    plt.semilogx(f, 20 * np.log10(h[k] + 1e-12), lw=0.8)
plt.ylim(-40, 3)
plt.xlabel("frequency (Hz)")
plt.ylabel("gain (dB)")
plt.tight_layout()
plt.savefig(f"{out}/filterbank.png", dpi=120)

# %% one synthetic utterance and its auditory spectrogram
utt = synth_dataset(SynthSpec(n_speakers=1, utterances_per_speaker=1, duration=2.0))[0]
sp = audspec(utt.audio, fb)
print("spectrogram", sp.frames.shape)

fig, ax = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
ax[0].imshow(sp.frames.T, origin="lower", aspect="auto", cmap="magma",
             extent=[0, sp.n_frames / 100, 0, 128])
ax[0].set_ylabel("channel")
t = np.arange(utt.tv.n_frames) / 100
for i, name in enumerate(utt.tv.channels):
    ax[1].plot(t, utt.tv.values[:, i], lw=0.8, label=name)
ax[1].legend(ncol=6, fontsize="small")
ax[1].set_xlabel("time (s)")
fig.tight_layout()
fig.savefig(f"{out}/utterance.png", dpi=120)

# %% cortical magnitudes: which (scale, rate) cell lights up for a moving ripple?
bank = design_strf_bank()
for rate, scale, direction in [(4, 2, "down"), (16, 1, "up"), (8, 4, "up")]:
    m = cortical_transform(ripple_stimulus(rate, scale, direction), bank).frames[20:-20]
    m = m.mean(axis=(0, 3))
    i, j = np.unravel_index(np.argmax(m), m.shape)
    print(f"ripple {rate:2d} Hz {scale} cyc/oct {direction:4s} -> "
          f"scale {bank.scales[i]}, rate {bank.signed_rates[j]:+g}")

seq = cortical_transform(sp, bank)
energy = (seq.frames ** 2).mean(axis=(0, 3))
plt.figure(figsize=(6, 3))
plt.imshow(energy, aspect="auto", cmap="viridis")
plt.yticks(range(4), bank.scales)
plt.xticks(range(10), [f"{r:+g}" for r in bank.signed_rates])
plt.xlabel("rate (Hz, + up / - down)")
plt.ylabel("scale (cyc/oct)")
plt.colorbar()
plt.tight_layout()
plt.savefig(f"{out}/cortical_energy.png", dpi=120)
