"""Experiment configuration: one JSON document with a section per stage.

Every stage derives a short content hash from the sections it depends on,
so an artifact written under one configuration is refused by a later stage
running under another.
"""

import copy
import hashlib
import json
from dataclasses import dataclass

from .errors import DataError

DEFAULTS = {
    "work_dir": "work",
    "data": {
        "manifest": None,
        "assign_splits": False,
        "synth": {"n_speakers": 12, "utterances_per_speaker": 16, "duration": 3.0,
                  "seed": 7, "trajectory_bandwidth": 8.0},
        "split_mode": "by_speaker",
        "fractions": [8 / 12, 2 / 12, 2 / 12],
        "seed": 0,
    },
    "frontend": {"sample_rate": 16000, "n_channels": 128, "channels_per_octave": 24,
                 "min_center_freq": 180.0, "q": 4.0, "skirt": 0.03,
                 "skirt_onset": 0.25 / 24, "haircell_gain": 8.0,
                 "membrane_cutoff": 4000.0, "time_constant": 0.008},
    "cortical": {"scales": [1, 2, 4, 8], "rates": [2, 4, 8, 16, 32], "temporal_order": 2.0},
    "features": {"kind": "cortical", "n_mfcc": 13},
    "reduction": {"truncation": [4, 5, 7], "context": 7},
    "model": {"input_dim": None, "hidden_layers": 6, "hidden_width": 512, "width_grid": [512],
              "dropout_input": 0.1, "dropout_hidden": 0.2, "batch_size": 256,
              "max_epochs": 100, "learning_rate": 1e-3, "patience": 10, "seed": 0},
    "eval": {"kalman_q": 1.0, "kalman_r": 0.01, "tune_kalman": True, "smoother": True,
             "per_utterance": False, "plots": 0},
}

FEATURE_KINDS = ("cortical", "mfcc")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise DataError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def _digest(*parts):
    text = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, overrides=None):
        cfg = cls(_merge(DEFAULTS, overrides or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON config ({exc})") from None
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.raw, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def with_overrides(self, overrides):
        return ExperimentConfig.from_dict(_merge(self.raw, overrides))

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def feature_kind(self):
        return self.raw["features"]["kind"]

    @property
    def truncation(self):
        return tuple(int(k) for k in self.raw["reduction"]["truncation"])

    @property
    def context(self):
        return int(self.raw["reduction"]["context"])

    @property
    def input_dim(self):
        if self.feature_kind == "mfcc":
            return int(self.raw["features"]["n_mfcc"]) * self.context
        ks, kr, kf = self.truncation
        return ks * kr * kf * self.context

    def validate(self):
        r = self.raw
        if self.feature_kind not in FEATURE_KINDS:
            raise DataError(f"features.kind must be one of {FEATURE_KINDS}")
        trunc = self.truncation
        full = (len(r["cortical"]["scales"]), 2 * len(r["cortical"]["rates"]),
                r["frontend"]["n_channels"])
        if len(trunc) != 3 or any(not 1 <= k <= d for k, d in zip(trunc, full)):
            raise DataError(f"reduction.truncation {list(trunc)} outside the tensor shape {list(full)}")
        if self.context < 1 or self.context % 2 == 0:
            raise DataError("reduction.context must be a positive odd count")
        dim = r["model"].get("input_dim")
        if dim is not None and dim != self.input_dim:
            raise DataError(f"model.input_dim {dim} differs from the feature width {self.input_dim}")
        if not r["model"]["width_grid"]:
            raise DataError("model.width_grid must list at least one width")

    # -- per-stage provenance hashes ---------------------------------------

    def data_hash(self):
        d = self.raw["data"]
        return _digest("data", d["manifest"], d["synth"], d["split_mode"], d["fractions"], d["seed"],
                       d["assign_splits"], self.raw["frontend"]["sample_rate"])

    def extract_hash(self):
        parts = ["extract", self.data_hash(), self.raw["frontend"], self.feature_kind]
        if self.feature_kind == "cortical":
            parts.append(self.raw["cortical"])
        else:
            parts.append(self.raw["features"]["n_mfcc"])
        return _digest(*parts)

    def reduce_hash(self):
        return _digest("reduce", self.extract_hash())

    def train_hash(self, width=None):
        m = dict(self.raw["model"])
        m.pop("width_grid")
        if width is not None:
            m["hidden_width"] = int(width)
        return _digest("train", self.reduce_hash(), self.raw["reduction"], m)

    def eval_hash(self, width=None):
        return _digest("eval", self.train_hash(width), self.raw["eval"])
