"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end criteria (11, 12) run the full pipeline on the default
synthetic corpus and take about 17 minutes on one core; deselect them with
``-m "not slow"``.
"""

import contextlib
import filecmp
import os
import time

import numpy as np
import pytest

from cortinv import pipeline
from cortinv.config import ExperimentConfig
from cortinv.cortical import cortical_transform, design_strf_bank, ripple_stimulus
from cortinv.errors import DataError
from cortinv.frontend import audspec, design_cochlear_filterbank
from cortinv.ftc import read_energy_csv
from cortinv.regressor import AdamState, MlpArchitecture, TrainConfig, adam_step, loss_and_grads
from cortinv.signal_io import AudioBuffer, TvTrajectory
from cortinv.smoothing import REPORT_HEADER, KalmanParams, kalman_smooth, ppmc
from cortinv.tensor_reduce import (
    accumulate_mode_covariances, fit_hosvd, pc_energy, project, reconstruct, unfold,
    vectorize_with_context,
)
from gradcheck import f64_model, max_rel_error, min_abs_preactivation, numeric_grads

# first full run with max_epochs=30 scored ACHIEVED; CI pins ACHIEVED - 0.05
ACHIEVED_TEST_PPMC = 0.8127
PINNED_TEST_PPMC = 0.7627
TARGET_TEST_PPMC = 0.80


@pytest.fixture
def criterion(pytestconfig):
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    @contextlib.contextmanager
    def run(number, text):
        info = {}
        t0 = time.perf_counter()
        try:
            yield info
        except BaseException:
            status = "FAIL"
            raise
        else:
            status = "PASS"
        finally:
            extra = f" [{info['detail']}]" if "detail" in info else ""
            line = f"{status} criterion {number}: {text}{extra} ({time.perf_counter() - t0:.1f}s)"
            with capman.global_and_fixture_disabled():
                print("\n" + line, flush=True)
    return run


# ---------------------------------------------------------------- 1


def test_criterion_01_reference_numbers_not_reproduced(criterion):
    with criterion(1, "corpus results are references only; report layout matches") as c:
        # the reference tables report six per-TV correlations and their average
        assert REPORT_HEADER[2:] == ("LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD", "average")
        c["detail"] = "no corpus run"


# ---------------------------------------------------------------- 2


def test_criterion_02_dimension_bookkeeping(criterion):
    with criterion(2, "1 s -> 100 x 4x10x128 frames; 980 and 1344 inputs") as c:
        t0 = time.perf_counter()
        x = 0.1 * np.random.default_rng(0).standard_normal(16000)
        seq = cortical_transform(audspec(AudioBuffer(x, 16000)), design_strf_bank())
        assert seq.frames.shape == (100, 4, 10, 128) and seq.frames[0].size == 5120
        basis = fit_hosvd(accumulate_mode_covariances(seq.frames))
        dims = [vectorize_with_context(project(seq.frames, basis, t), 7).shape[1]
                for t in ((4, 5, 7), (4, 6, 8))]
        assert dims == [980, 1344]
        assert ExperimentConfig.from_dict().input_dim == 980
        elapsed = time.perf_counter() - t0
        c["detail"] = f"dims {dims}"
        assert elapsed < 30


# ---------------------------------------------------------------- 3


def _max_subspace_angle(a, b):
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    return float(np.arcsin(min(1.0, np.linalg.norm(qb - qa @ (qa.T @ qb), 2))))


def test_criterion_03_hosvd_oracle(criterion):
    with criterion(3, "streaming HOSVD equals unfolding SVD; full-rank round trip") as c:
        t0 = time.perf_counter()
        worst_angle, worst_err = 0.0, 0.0
        for seed in range(20):
            frames = np.random.default_rng(seed).standard_normal((8, 3, 4, 5))
            basis = fit_hosvd(accumulate_mode_covariances(frames))
            stacked = np.moveaxis(frames, 0, -1)
            for mode in range(3):
                u = np.linalg.svd(unfold(stacked, mode), full_matrices=False)[0]
                for k in range(1, u.shape[1]):
                    worst_angle = max(worst_angle,
                                      _max_subspace_angle(basis.factors[mode][:, :k], u[:, :k]))
            back = reconstruct(project(frames, basis, (3, 4, 5)), basis)
            worst_err = max(worst_err, float(np.max(np.abs(back - frames))))
        elapsed = time.perf_counter() - t0
        c["detail"] = f"angle {worst_angle:.1e}, round trip {worst_err:.1e}"
        assert worst_angle < 1e-8 and worst_err <= 1e-9 and elapsed < 5


# ---------------------------------------------------------------- 4


def test_criterion_04_energy_spectra(criterion, tmp_path):
    from cortinv.ftc import write_energy_csv
    with criterion(4, "mode spectra nonnegative, nonincreasing, unit sum; 142 CSV rows") as c:
        frames = np.abs(np.random.default_rng(0).standard_normal((50, 4, 10, 128)))
        basis = fit_hosvd(accumulate_mode_covariances(frames))
        worst = 0.0
        for mode in range(3):
            a = pc_energy(basis, mode).alpha
            assert np.all(a >= 0) and np.all(np.diff(a) <= 0)
            worst = max(worst, abs(a.sum() - 1.0))
        write_energy_csv(tmp_path / "e.csv", basis)
        rows = len(read_energy_csv(tmp_path / "e.csv"))
        c["detail"] = f"{rows} rows, sum error {worst:.1e}"
        assert worst <= 1e-12 and rows == 142


# ---------------------------------------------------------------- 5


def test_criterion_05_strf_tuning(criterion):
    bank = design_strf_bank()
    # the full design grid, edge filters included, is a superset of the interior
    grid = [(s, r, d) for s in bank.scales for r in bank.rates for d in ("up", "down")]
    with criterion(5, f"all {len(grid)} grid ripples hit their channel, >=2x mirror") as c:
        t0 = time.perf_counter()
        misses, worst_ratio = [], np.inf
        for scale, rate, direction in grid:
            m = cortical_transform(ripple_stimulus(rate, scale, direction, 2.0), bank)
            m = m.frames[20:-20].mean(axis=(0, 3))
            i, j = np.unravel_index(np.argmax(m), m.shape)
            signed = rate if direction == "up" else -rate
            if (bank.scales[i], bank.signed_rates[j]) != (scale, signed):
                misses.append((scale, signed))
            mirror = "down" if direction == "up" else "up"
            ii = bank.scales.index(scale)
            worst_ratio = min(worst_ratio, m[ii, bank.rate_index(rate, direction)]
                              / m[ii, bank.rate_index(rate, mirror)])
        elapsed = time.perf_counter() - t0
        c["detail"] = f"misses {misses}, worst direction ratio {worst_ratio:.2f}"
        assert not misses and worst_ratio >= 2.0 and elapsed < 60


# ---------------------------------------------------------------- 6


def test_criterion_06_tonotopy(criterion):
    fb = design_cochlear_filterbank()
    with criterion(6, "tones at cf[k] peak within one channel of k") as c:
        found = {}
        for k in (16, 40, 64, 88, 112):
            t = np.arange(16000) / 16000
            sp = audspec(AudioBuffer(0.1 * np.sin(2 * np.pi * fb.center_freqs[k] * t), 16000))
            found[k] = int(np.argmax(sp.frames.mean(axis=0)))
        c["detail"] = str(found)
        assert all(abs(v - k) <= 1 for k, v in found.items())


# ---------------------------------------------------------------- 7


def test_criterion_07_gradient_check(criterion):
    with criterion(7, "backprop matches central differences on random small MLPs") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        worst, checked = 0.0, 0
        while checked < 20:
            layers, width = int(rng.integers(1, 5)), int(rng.integers(2, 17))
            n_in, n_out = int(rng.integers(1, 9)), int(rng.integers(1, 7))
            seed = int(rng.integers(0, 10_000))
            m = f64_model(MlpArchitecture(n_in, layers, width, n_out, 0.0, 0.0), seed)
            x = rng.standard_normal((6, n_in))
            y = rng.standard_normal((6, n_out))
            if min_abs_preactivation(m, x) <= 1e-4:  # a difference step could cross a kink
                continue
            _, g = loss_and_grads(m, x, y)
            worst = max(worst, max_rel_error(g, numeric_grads(m, x, y)))
            checked += 1
        elapsed = time.perf_counter() - t0
        c["detail"] = f"{checked} nets, max relative error {worst:.1e}"
        assert worst < 1e-5 and elapsed < 10


# ---------------------------------------------------------------- 8


def test_criterion_08_adam_quadratic(criterion):
    # curvatures spread over [1, 10] under a random rotation, start uniform in [-1, 1]
    rng = np.random.default_rng(0)
    q = np.linalg.qr(rng.standard_normal((10, 10)))[0]
    a = q @ np.diag(np.linspace(1.0, 10.0, 10)) @ q.T
    w = [rng.uniform(-1, 1, 10)]
    with criterion(8, "Adam (default settings) reaches |grad| < 1e-4 in 2000 steps") as c:
        state = AdamState.zeros_like(w)
        cfg = TrainConfig()
        norm = np.inf
        for step in range(2001):
            g = a @ w[0]
            norm = float(np.linalg.norm(g))
            if norm < 1e-4 or step == 2000:
                break
            adam_step(w, [g], state, cfg)
        c["detail"] = f"lr {cfg.learning_rate:g}, |grad| {norm:.1e} after {step} steps"
        assert norm < 1e-4


# ---------------------------------------------------------------- 9


def test_criterion_09_ppmc(criterion):
    with criterion(9, "PPMC identity, affine, negation, constant, 4-point example"):
        x = np.random.default_rng(0).standard_normal(200)
        assert abs(ppmc(x, x) - 1.0) <= 1e-12
        assert abs(ppmc(3.0 * x + 2.0, x) - 1.0) <= 1e-12
        assert abs(ppmc(-x, x) + 1.0) <= 1e-12
        with pytest.raises(DataError):
            ppmc(np.full(10, 2.0), np.arange(10.0))
        assert abs(ppmc([1, 2, 3, 4], [1, 3, 2, 5]) - 11 / (5 * np.sqrt(7))) <= 1e-12


# ---------------------------------------------------------------- 10


def test_criterion_10_kalman(criterion):
    with criterion(10, "RTS < filtered < raw MSE; constants fixed after 10 frames") as c:
        rng = np.random.default_rng(0)
        t = np.arange(400)[:, None]
        clean = rng.standard_normal(6) + 0.01 * rng.standard_normal(6) * t
        noisy = clean + 0.1 * rng.standard_normal(clean.shape)
        p = KalmanParams(q=1e-3, r=0.01)
        mse = [float(np.mean((v - clean) ** 2)) for v in (
            kalman_smooth(TvTrajectory(noisy), p).values,
            kalman_smooth(TvTrajectory(noisy), p, smoother=False).values, noisy)]
        drift = max(float(np.max(np.abs(
            kalman_smooth(TvTrajectory(np.full((50, 6), level)), KalmanParams(q=q, r=r),
                          sm).values[10:] - level)))
            for level in (-3.0, 0.0, 12.5) for q in (1e-3, 1.0) for r in (0.01, 10.0)
            for sm in (False, True))
        c["detail"] = "mse " + " < ".join(f"{m:.2e}" for m in mse) + f", drift {drift:.1e}"
        assert mse[0] < mse[1] < mse[2] and drift <= 1e-6


# ---------------------------------------------------------------- 11, 12


def _e2e_config(work_dir, truncation=(4, 5, 7)):
    return ExperimentConfig.from_dict({"work_dir": str(work_dir),
                                       "reduction": {"truncation": list(truncation)},
                                       "model": {"max_epochs": 30}})


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    cfg = _e2e_config(root / "work")
    t0 = time.perf_counter()
    pipeline.cmd_synth(cfg)
    pipeline.cmd_extract(cfg)
    pipeline.cmd_fit_reduce(cfg)
    pipeline.cmd_train(cfg)
    rep = pipeline.cmd_eval(cfg)
    elapsed = time.perf_counter() - t0
    small = _e2e_config(root / "work", (2, 2, 2))
    pipeline.cmd_train(small)
    rep_small = pipeline.cmd_eval(small)
    return {"root": root, "cfg": cfg, "report": rep, "small": rep_small, "seconds": elapsed}


@pytest.mark.slow
def test_criterion_11_end_to_end(criterion, e2e):
    rep, small = e2e["report"], e2e["small"]
    with criterion(11, f"test PPMC >= {PINNED_TEST_PPMC} (pinned), (2,2,2) lower, under 15 min") as c:
        c["detail"] = (f"(4,5,7) {rep.average:.4f}, (2,2,2) {small.average:.4f}, "
                       f"pipeline {e2e['seconds'] / 60:.1f} min on {os.cpu_count()} core(s)")
        assert rep.average >= PINNED_TEST_PPMC
        assert small.average < rep.average
        # the budget is stated for four cores; meeting it on fewer is stricter
        assert e2e["seconds"] < 15 * 60


@pytest.mark.slow
def test_criterion_11_design_target(criterion, e2e):
    rep = e2e["report"]
    with criterion("11b", f"test average PPMC reaches the {TARGET_TEST_PPMC} design target") as c:
        c["detail"] = f"{rep.average:.4f}"
        assert rep.average >= TARGET_TEST_PPMC


def _same_files(a, b, names):
    return [n for n in names if not filecmp.cmp(os.path.join(a, n), os.path.join(b, n),
                                                 shallow=False)]


@pytest.mark.slow
def test_criterion_12_determinism(criterion, e2e, tmp_path):
    cfg = e2e["cfg"]
    ws = pipeline.workspace(cfg)
    with criterion(12, "reruns give bit-identical features, basis, model and report") as c:
        # criteria 2 and 3: features and basis recomputed from scratch
        x = 0.1 * np.random.default_rng(0).standard_normal(16000)
        runs = [cortical_transform(audspec(AudioBuffer(x, 16000)), design_strf_bank()).frames
                for _ in range(2)]
        assert runs[0].tobytes() == runs[1].tobytes()
        frames = np.random.default_rng(1).standard_normal((8, 3, 4, 5))
        b1, b2 = (fit_hosvd(accumulate_mode_covariances(frames)) for _ in range(2))
        assert all(u.tobytes() == v.tobytes() for u, v in zip(b1.factors, b2.factors))

        # criterion 11: same corpus and seeds in a second workspace
        again = _e2e_config(tmp_path / "work")
        ws2 = pipeline.workspace(again)
        pipeline.cmd_synth(again)
        diffs = _same_files(ws.data_dir, ws2.data_dir,
                            ["manifest.csv", "wav/spk03_utt05.wav", "tv/spk11_utt15.csv"])
        entries = list(pipeline.load_manifest(again))[::37]
        subset = [e.utt_id for e in entries]
        for e in entries:
            pipeline._extract_one((again.raw, ws2.root, e.utt_id,
                                   os.path.join(ws2.data_dir, e.audio_path)))
        diffs += _same_files(os.path.join(ws.root, "features"), os.path.join(ws2.root, "features"),
                             [f"{u}.cortical.ftc" for u in subset])
        # the remaining features are shared so the rerun costs one extraction pass less
        for name in os.listdir(os.path.join(ws.root, "features")):
            dst = os.path.join(ws2.root, "features", name)
            if not os.path.exists(dst):
                os.symlink(os.path.join(ws.root, "features", name), dst)
        pipeline.cmd_fit_reduce(again)
        pipeline.cmd_train(again)
        pipeline.cmd_eval(again)
        diffs += _same_files(ws.root, ws2.root, [
            "reduce/basis.ftc", "reduce/energy.csv", "models/cortical_980_w512.mlp1",
        ])
        # the training log also records wall-clock seconds; compare the losses only
        logs = [np.loadtxt(os.path.join(w.root, "models", "cortical_980_w512.log.csv"),
                           delimiter=",", skiprows=1)[:, :3] for w in (ws, ws2)]
        if logs[0].tobytes() != logs[1].tobytes():
            diffs.append("training log losses")
        rows = [[r.row() for r in pipeline.read_report(x) if r.feature == "cortical_980"]
                for x in (cfg, again)]
        same_report = rows[0] == rows[1] and len(rows[0]) == 1
        c["detail"] = f"{len(subset)} re-extracted, differing files {diffs or 'none'}"
        assert not diffs and same_report
