#!/usr/bin/env python3
"""How much of the cortical energy do the leading mode components hold?

Fits the per-mode bases on a few synthetic utterances and prints the
cumulative energy fractions, plus the error of a few truncations.
"""

import numpy as np

from cortinv.cortical import cortical_transform, design_strf_bank
from cortinv.frontend import audspec
from cortinv.signal_io import SynthSpec, synth_dataset
from cortinv.tensor_reduce import (
    accumulate_mode_covariances, fit_hosvd, pc_energy, project, reconstruct,
)

bank = design_strf_bank()
utts = synth_dataset(SynthSpec(n_speakers=3, utterances_per_speaker=2, duration=1.5))
seqs = [cortical_transform(audspec(u.audio), bank).frames for u in utts]

acc = None
for f in seqs[:-1]:
    acc = accumulate_mode_covariances(f, acc)
basis = fit_hosvd(acc)
print(f"basis fitted on {basis.frame_count} frames")

for mode in ("scale", "rate", "frequency"):
    cum = np.cumsum(pc_energy(basis, mode).alpha)
    print(f"{mode:9s}", " ".join(f"{c:.3f}" for c in cum[:8]))

# relative reconstruction error on the utterance left out of the fit
held = seqs[-1]
for trunc in [(2, 2, 2), (4, 5, 7), (4, 6, 8), (4, 10, 32)]:
    back = reconstruct(project(held, basis, trunc), basis)
    err = np.linalg.norm(back - held) / np.linalg.norm(held)
    print(trunc, f"{np.prod(trunc):5d} values/frame, relative error {err:.3f}")
