"""On-disk experiment stages: synth, extract, fit-reduce, train, eval, infer, report.

Layout under ``work_dir``::

    data/       synthetic WAV + TV CSV pairs, manifest.csv
    features/   <utt>.<kind>.ftc per utterance (plus <utt>.audspec.ftc)
    reduce/     basis.ftc, energy.csv, train_files.txt
    models/     <tag>_w<width>.mlp1, <tag>_w<width>.log.csv, width_table.csv
    eval/       report.csv, <tag>_kalman.json, plots/<tag>/

``<tag>`` names the feature set (``cortical_980``, ``mfcc``, ...), so several
truncations and the MFCC baseline share one workspace; width_table.csv gains a
column and report.csv a row per tag.
"""

import csv
import json
import logging
import os
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ftc
from .config import ExperimentConfig
from .cortical import cortical_transform, design_strf_bank, mfcc_baseline
from .errors import DataError, ProvenanceError
from .frontend import audspec, design_cochlear_filterbank
from .regressor import MlpArchitecture, TrainConfig, load_model, predict, save_model, train
from .signal_io import (
    DatasetManifest, ManifestEntry, SynthSpec, align_frames, load_tv_csv, load_wav, make_splits,
    read_manifest, resample, synth_dataset, write_manifest, write_tv_csv, write_wav,
)
from .smoothing import (
    EvalReport, KalmanParams, evaluate_predictions, kalman_smooth, plot_trajectories,
    read_report_csv, tune_kalman, write_report_csv,
)
from .tensor_reduce import accumulate_mode_covariances, fit_hosvd, project, vectorize_with_context

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Workspace:
    root: str

    def _sub(self, *parts):
        return os.path.join(self.root, *parts)

    @property
    def data_dir(self):
        return self._sub("data")

    @property
    def manifest_path(self):
        return self._sub("data", "manifest.csv")

    def feature_path(self, utt_id, kind):
        return self._sub("features", f"{utt_id}.{kind}.ftc")

    @property
    def basis_path(self):
        return self._sub("reduce", "basis.ftc")

    @property
    def energy_path(self):
        return self._sub("reduce", "energy.csv")

    @property
    def train_files_path(self):
        return self._sub("reduce", "train_files.txt")

    def model_path(self, tag, width):
        return self._sub("models", f"{tag}_w{int(width)}.mlp1")

    def train_log_path(self, tag, width):
        return self._sub("models", f"{tag}_w{int(width)}.log.csv")

    @property
    def width_table_path(self):
        return self._sub("models", "width_table.csv")

    @property
    def report_path(self):
        return self._sub("eval", "report.csv")

    def kalman_path(self, tag):
        return self._sub("eval", f"{tag}_kalman.json")

    def plot_dir(self, tag):
        return self._sub("eval", "plots", tag)


def workspace(cfg):
    return Workspace(cfg["work_dir"])


def _atomic_write(path, writer):
    """Write through a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".part")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def feature_tag(cfg):
    if cfg.feature_kind == "mfcc":
        return "mfcc"
    return f"cortical_{cfg.input_dim}"


# --------------------------------------------------------------------------
# data


def cmd_synth(cfg):
    """Write the synthetic corpus and a split manifest; returns the manifest."""
    ws = workspace(cfg)
    d = cfg["data"]
    spec = SynthSpec(sample_rate=cfg["frontend"]["sample_rate"], **d["synth"])
    try:
        os.makedirs(os.path.join(ws.data_dir, "wav"), exist_ok=True)
        os.makedirs(os.path.join(ws.data_dir, "tv"), exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {ws.data_dir}: {exc}") from None
    entries = []
    for utt in synth_dataset(spec):
        uid = utt.audio.id
        wav_rel, tv_rel = f"wav/{uid}.wav", f"tv/{uid}.csv"
        write_wav(os.path.join(ws.data_dir, wav_rel), utt.audio, encoding="float32")
        write_tv_csv(os.path.join(ws.data_dir, tv_rel), utt.tv)
        entries.append(ManifestEntry(uid, utt.speaker_id, wav_rel, tv_rel))
    manifest = make_splits(DatasetManifest(entries, ws.data_dir), d["split_mode"],
                           tuple(d["fractions"]), d["seed"])
    write_manifest(ws.manifest_path, manifest)
    log.info("wrote %d utterances to %s", len(entries), ws.data_dir)
    return manifest


def load_manifest(cfg):
    d = cfg["data"]
    if d["manifest"]:
        manifest = read_manifest(d["manifest"])
        if d["assign_splits"]:
            manifest = make_splits(manifest, d["split_mode"], tuple(d["fractions"]), d["seed"])
    else:
        path = workspace(cfg).manifest_path
        if not os.path.exists(path):
            raise DataError(f"no manifest at {path}; run the synth stage or set data.manifest")
        manifest = read_manifest(path)
    if d["split_mode"] == "by_speaker" and not manifest.is_speaker_disjoint():
        raise DataError("manifest splits share speakers but split_mode is by_speaker")
    return manifest


def load_audio(path, sample_rate):
    a = load_wav(path)
    return a if a.sample_rate == sample_rate else resample(a, sample_rate)


# --------------------------------------------------------------------------
# feature extraction


def _frontend(cfg):
    f = cfg["frontend"]
    fb = design_cochlear_filterbank(f["sample_rate"], f["n_channels"], f["channels_per_octave"],
                                    f["min_center_freq"], f["q"], f["skirt"], f["skirt_onset"])
    return fb


def _bank(cfg):
    c = cfg["cortical"]
    return design_strf_bank(c["scales"], c["rates"], n_freq_channels=cfg["frontend"]["n_channels"],
                            channels_per_octave=cfg["frontend"]["channels_per_octave"],
                            temporal_order=c["temporal_order"])


def compute_features(audio, cfg):
    """Per-utterance features: {"cortical": seq, "audspec": sp} or {"mfcc": matrix}."""
    if cfg.feature_kind == "mfcc":
        return {"mfcc": mfcc_baseline(audio, int(cfg["features"]["n_mfcc"]))}
    f = cfg["frontend"]
    sp = audspec(audio, _frontend(cfg), f["haircell_gain"], f["membrane_cutoff"], f["time_constant"])
    # the resume check looks at the cortical file, so it is written last
    return {"audspec": sp, "cortical": cortical_transform(sp, _bank(cfg))}


def _write_features(ws, uid, feats, provenance):
    for kind, val in feats.items():
        path = ws.feature_path(uid, kind)
        if kind == "cortical":
            _atomic_write(path, lambda p: ftc.save_cortical(p, val, provenance))
        elif kind == "audspec":
            _atomic_write(path, lambda p: ftc.save_audspec(p, val, provenance))
        else:
            meta = {"kind": "mfcc", "frame_period_ms": "10", "axes": "time,coefficient",
                    "provenance": provenance}
            _atomic_write(path, lambda p: ftc.write_ftc(p, val, meta, np.float32))


def _extract_one(job):
    raw, root, uid, audio_path = job
    cfg = ExperimentConfig(raw)
    audio = load_audio(audio_path, cfg["frontend"]["sample_rate"])
    _write_features(Workspace(root), uid, compute_features(audio, cfg), cfg.extract_hash())
    return uid


def _stored_provenance(path):
    with open(path, "rb") as fh:
        head = fh.read(1 << 16)
    try:
        rank = struct.unpack_from("<H", head, 8)[0]
        pos = 10 + 8 * rank
        (mlen,) = struct.unpack_from("<I", head, pos)
        meta = ftc._decode_meta(head[pos + 4:pos + 4 + mlen])
    except (struct.error, DataError, UnicodeDecodeError):
        return None
    return meta.get("provenance")


def cmd_extract(cfg, jobs=1, force=False):
    """Compute missing feature files; returns the list of utterances computed."""
    ws = workspace(cfg)
    manifest = load_manifest(cfg)
    want = cfg.extract_hash()
    todo = []
    for e in manifest:
        path = ws.feature_path(e.utt_id, cfg.feature_kind)
        if os.path.exists(path) and not force:
            have = _stored_provenance(path)
            if have == want:
                continue
            raise ProvenanceError(
                f"{path} was extracted under configuration {have}, current is {want}; "
                "rerun with --force to overwrite"
            )
        todo.append((cfg.raw, ws.root, e.utt_id, manifest.resolve(e.audio_path)))
    log.info("extracting %d of %d utterances", len(todo), len(manifest))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            done = list(pool.map(_extract_one, todo))
    else:
        done = [_extract_one(job) for job in todo]
    return done


# --------------------------------------------------------------------------
# reduction


def load_feature_matrix(cfg, uid):
    ws = workspace(cfg)
    path = ws.feature_path(uid, cfg.feature_kind)
    if not os.path.exists(path):
        raise DataError(f"missing features for {uid}; run the extract stage")
    if cfg.feature_kind == "cortical":
        return ftc.load_cortical(path, cfg.extract_hash()).frames
    arr, meta = ftc.read_ftc(path)
    if meta.get("provenance") != cfg.extract_hash():
        raise ProvenanceError(f"{path}: features were extracted under a different configuration")
    return arr


def cmd_fit_reduce(cfg, splits=("train",)):
    """Fit the HOSVD basis on training features only."""
    if tuple(splits) != ("train",):
        raise DataError(f"refusing to fit the basis on {list(splits)}: only the train split is allowed")
    if cfg.feature_kind != "cortical":
        raise DataError(f"{cfg.feature_kind} features take no tensor reduction")
    ws = workspace(cfg)
    manifest = load_manifest(cfg)
    entries = manifest.subset("train")
    if not entries:
        raise DataError("manifest has no training utterances")
    acc = None
    for e in entries:
        acc = accumulate_mode_covariances(load_feature_matrix(cfg, e.utt_id), acc)
    basis = fit_hosvd(acc, cfg.reduce_hash())
    _atomic_write(ws.basis_path, lambda p: ftc.save_basis(p, basis))
    _atomic_write(ws.energy_path, lambda p: ftc.write_energy_csv(p, basis))

    def files(p):
        with open(p, "w", encoding="utf-8") as fh:
            fh.writelines(f"{e.utt_id}\n" for e in entries)

    _atomic_write(ws.train_files_path, files)
    return basis


def load_basis(cfg):
    path = workspace(cfg).basis_path
    if not os.path.exists(path):
        raise DataError(f"missing basis {path}; run the fit-reduce stage")
    basis = ftc.load_basis(path)
    if basis.config_hash != cfg.reduce_hash():
        raise ProvenanceError("basis was fitted under a different configuration")
    return basis


def vectorize(cfg, feats, basis=None):
    if cfg.feature_kind == "mfcc":
        return vectorize_with_context(np.asarray(feats, dtype=np.float64), cfg.context)
    red = project(np.asarray(feats, dtype=np.float64), basis, cfg.truncation)
    return vectorize_with_context(red, cfg.context)


def split_arrays(cfg, manifest, split, basis=None):
    """Feature matrices and aligned TV trajectories for one split, manifest order."""
    xs, tvs, ids = [], [], []
    for e in manifest.subset(split):
        x = vectorize(cfg, load_feature_matrix(cfg, e.utt_id), basis)
        tv = load_tv_csv(manifest.resolve(e.tv_path))
        n = align_frames(len(x), tv)
        xs.append(x[:n].astype(np.float32))
        tvs.append(tv.truncate(n))
        ids.append(e.utt_id)
    if not xs:
        raise DataError(f"split {split!r} is empty")
    return xs, tvs, ids


# --------------------------------------------------------------------------
# training


def _model_provenance(cfg, width, basis):
    return {"config_hash": cfg.train_hash(width), "feature": feature_tag(cfg),
            "basis_hash": basis.hash if basis is not None else "", "context": cfg.context,
            "truncation": list(cfg.truncation)}


def _arch(cfg, width):
    m = cfg["model"]
    return MlpArchitecture(cfg.input_dim, m["hidden_layers"], int(width), 6,
                           m["dropout_input"], m["dropout_hidden"])


def _train_config(cfg, fast=False):
    m = cfg["model"]
    return TrainConfig(m["batch_size"], m["max_epochs"], m["learning_rate"], patience=m["patience"],
                       seed=m["seed"], deterministic=not fast)


def _write_log(path, report):
    def w(p):
        with open(p, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["epoch", "train_mse", "dev_mse", "seconds"])
            for epoch, tr, dv, s in report.log_rows():
                out.writerow([epoch, repr(tr), repr(dv), f"{s:.3f}"])
    _atomic_write(path, w)


def _merge_width_table(path, tag, rows):
    """Table of dev average PPMC: one row per width, one column per feature tag."""
    table, tags = {}, []
    if os.path.exists(path):
        with open(path, newline="", encoding="utf-8") as fh:
            old = list(csv.reader(fh))
        tags = old[0][1:]
        for r in old[1:]:
            table[int(r[0])] = dict(zip(tags, r[1:]))
    if tag not in tags:
        tags.append(tag)
    for width, avg in rows:
        table.setdefault(width, {})[tag] = f"{avg:.6f}"

    def w(p):
        with open(p, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["hidden_width"] + tags)
            for width in sorted(table):
                out.writerow([width] + [table[width].get(t, "") for t in tags])
    _atomic_write(path, w)


def cmd_train(cfg, widths=None, fast=False):
    """Train one model per width; writes checkpoints, logs and the width table.

    The width table holds the unsmoothed dev-set average PPMC of each model.
    """
    cfg.validate()
    ws = workspace(cfg)
    tag = feature_tag(cfg)
    manifest = load_manifest(cfg)
    basis = load_basis(cfg) if cfg.feature_kind == "cortical" else None
    x_tr, tv_tr, _ = split_arrays(cfg, manifest, "train", basis)
    x_dv, tv_dv, _ = split_arrays(cfg, manifest, "dev", basis)
    if x_tr[0].shape[1] != cfg.input_dim:
        raise DataError(f"feature width {x_tr[0].shape[1]} differs from input_dim {cfg.input_dim}")
    x_train, y_train = np.vstack(x_tr), np.vstack([t.values for t in tv_tr])
    x_dev, y_dev = np.vstack(x_dv), np.vstack([t.values for t in tv_dv])
    rows, results = [], {}
    for width in widths or cfg["model"]["width_grid"]:
        log.info("training %s width %d on %d frames", tag, width, len(x_train))
        model, report = train(_arch(cfg, width), x_train, y_train, x_dev, y_dev,
                              _train_config(cfg, fast), provenance=_model_provenance(cfg, width, basis),
                              log=lambda r: log.info("epoch %d train %.4f dev %.4f (%.1fs)", *r))
        _atomic_write(ws.model_path(tag, width), lambda p: save_model(model, p))
        _write_log(ws.train_log_path(tag, width), report)
        dev_rep = evaluate_predictions([predict(model, x) for x in x_dv], tv_dv)
        rows.append((int(width), dev_rep.average))
        results[int(width)] = (model, report)
    _merge_width_table(ws.width_table_path, tag, rows)
    return results


# --------------------------------------------------------------------------
# evaluation and inference


def _default_kalman(cfg, model):
    e = cfg["eval"]
    return KalmanParams(q=e["kalman_q"], r=e["kalman_r"]).scaled(model.target_std)


def load_checked_model(cfg, path=None):
    if path is None:
        path = workspace(cfg).model_path(feature_tag(cfg), cfg["model"]["hidden_width"])
    if not os.path.exists(path):
        raise DataError(f"missing checkpoint {path}; run the train stage")
    model = load_model(path)
    if model.provenance.get("config_hash") != cfg.train_hash(model.arch.hidden_width):
        raise ProvenanceError(f"{path} was trained under a different configuration")
    return model


def _check_basis(model, basis):
    if basis is not None and model.provenance.get("basis_hash") != basis.hash:
        raise ProvenanceError("checkpoint was trained on a different basis")


def _merge_report(path, rep):
    reports = read_report_csv(path) if os.path.exists(path) else []
    reports = [r for r in reports if r.feature != rep.feature] + [rep]
    _atomic_write(path, lambda p: write_report_csv(reports, p))


def cmd_eval(cfg, checkpoint=None):
    """Smooth and score the test split; adds this feature set's row to the report."""
    ws = workspace(cfg)
    tag = feature_tag(cfg)
    model = load_checked_model(cfg, checkpoint)
    manifest = load_manifest(cfg)
    basis = load_basis(cfg) if cfg.feature_kind == "cortical" else None
    _check_basis(model, basis)
    e = cfg["eval"]
    if e["tune_kalman"]:
        x_dv, tv_dv, _ = split_arrays(cfg, manifest, "dev", basis)
        params = tune_kalman([predict(model, x) for x in x_dv], tv_dv, scale=model.target_std)
    else:
        params = _default_kalman(cfg, model)
    x_te, tv_te, ids = split_arrays(cfg, manifest, "test", basis)
    preds = [predict(model, x) for x in x_te]
    rep = evaluate_predictions(preds, tv_te, tag, cfg.context, params, e["smoother"],
                               e["per_utterance"], ids,
                               model=f"{model.arch.hidden_layers}x{model.arch.hidden_width}")
    _merge_report(ws.report_path, rep)

    def kal(p):
        with open(p, "w", encoding="utf-8") as fh:
            json.dump({"q": params.q, "r": params.r, "scale": list(params.scale),
                       "eval_hash": cfg.eval_hash(model.arch.hidden_width)}, fh, indent=2)
            fh.write("\n")
    _atomic_write(ws.kalman_path(tag), kal)
    if rep.per_utterance:
        _atomic_write(os.path.join(ws.root, "eval", f"{tag}_per_utterance.csv"),
                      lambda p: _write_breakdown(p, rep))
    n_plots = int(e["plots"])
    if n_plots:
        os.makedirs(ws.plot_dir(tag), exist_ok=True)
        for uid, pr, tv in list(zip(ids, preds, tv_te))[:n_plots]:
            plot_trajectories(kalman_smooth(pr, params, e["smoother"]), tv,
                              os.path.join(ws.plot_dir(tag), f"{uid}.svg"), uid)
    return rep


def _write_breakdown(path, rep):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["utt_id", "LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD"])
        for uid, vals in rep.per_utterance.items():
            out.writerow([uid] + [f"{v:.6f}" for v in vals])


def _stored_kalman(cfg, model):
    path = workspace(cfg).kalman_path(feature_tag(cfg))
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("eval_hash") == cfg.eval_hash(model.arch.hidden_width):
            return KalmanParams(q=doc["q"], r=doc["r"], scale=tuple(doc["scale"]))
    return _default_kalman(cfg, model)


def cmd_infer(cfg, wav_path, out_path, checkpoint=None):
    """Single-utterance inversion: WAV in, smoothed TV CSV out."""
    model = load_checked_model(cfg, checkpoint)
    basis = load_basis(cfg) if cfg.feature_kind == "cortical" else None
    _check_basis(model, basis)
    audio = load_audio(wav_path, cfg["frontend"]["sample_rate"])
    feats = compute_features(audio, cfg)[cfg.feature_kind]
    feats = feats.frames if hasattr(feats, "frames") else feats
    est = predict(model, vectorize(cfg, feats, basis))
    est = kalman_smooth(est, _stored_kalman(cfg, model), cfg["eval"]["smoother"])
    write_tv_csv(out_path, est)
    return est


def cmd_report(cfg):
    """Plain-text summary of whatever artifacts exist in the workspace."""
    ws = workspace(cfg)
    lines = []
    for title, path in (("width table", ws.width_table_path), ("test report", ws.report_path),
                        ("energy", ws.energy_path)):
        if not os.path.exists(path):
            continue
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if title == "energy":
            lines.append("leading PC energy fractions:")
            for mode in ("scale", "rate", "frequency"):
                alphas = [float(r[3]) for r in rows[1:] if r[0] == mode][:8]
                lines.append(f"  {mode:<9} " + " ".join(f"{a:.3f}" for a in alphas))
            continue
        lines.append(f"{title}:")
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        for r in rows:
            lines.append("  " + "  ".join(c.rjust(w) for c, w in zip(r, widths)))
    if not lines:
        raise DataError(f"no artifacts found under {ws.root}")
    return "\n".join(lines)


def read_report(cfg):
    return read_report_csv(workspace(cfg).report_path)


__all__ = [
    "Workspace", "workspace", "feature_tag", "cmd_synth", "load_manifest", "compute_features",
    "cmd_extract", "cmd_fit_reduce", "load_basis", "split_arrays", "cmd_train", "cmd_eval",
    "cmd_infer", "cmd_report", "EvalReport",
]
