#!/usr/bin/env python3
"""A pocket-sized inversion run through the stage functions.

Six speakers, short utterances and a small network: under a minute on
one core. The workspace goes to ``demo_work/`` unless a path is given.
"""

import logging
import sys

from cortinv import pipeline
from cortinv.config import ExperimentConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")
work = sys.argv[1] if len(sys.argv) > 1 else "demo_work"

cfg = ExperimentConfig.from_dict({
    "work_dir": work,
    "data": {"synth": {"n_speakers": 6, "utterances_per_speaker": 6, "duration": 2.0},
             "fractions": [4 / 6, 1 / 6, 1 / 6]},
    "model": {"hidden_layers": 3, "hidden_width": 128, "width_grid": [128], "max_epochs": 15},
})

pipeline.cmd_synth(cfg)
pipeline.cmd_extract(cfg)
pipeline.cmd_fit_reduce(cfg)
pipeline.cmd_train(cfg)
rep = pipeline.cmd_eval(cfg)
print()
print(pipeline.cmd_report(cfg))
print(f"\ntest average correlation {rep.average:.3f}")
