"""Kalman smoothing of estimated TV trajectories and PPMC evaluation.

Each TV channel is smoothed on its own with a constant-velocity model at
the frame rate,

    x[t+1] = F x[t] + w,   F = [[1, dt], [0, 1]],   w ~ N(0, q [[dt^3/3, dt^2/2], [dt^2/2, dt]])
    z[t]   = x[t][0] + v,  v ~ N(0, r)

followed by a Rauch-Tung-Striebel backward pass. ``q`` and ``r`` are given
in normalized units: values are divided by a per-channel scale (usually the
training-set target std) and time is counted in frames (``dt = 1``), so one
setting suits all six channels at any frame rate.
"""

import csv
import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .signal_io import TV_NAMES, TvTrajectory

log = logging.getLogger(__name__)

REPORT_HEADER = ("feature", "context") + TV_NAMES + ("average",)


@dataclass(frozen=True)
class KalmanParams:
    q: float = 1.0
    r: float = 0.01
    dt: float = 1.0
    prior_var: float = 1e4
    scale: tuple = None  # per-channel unit; None means 1

    def __post_init__(self):
        if not (np.all(np.asarray(self.q) > 0) and np.all(np.asarray(self.r) > 0)):
            raise ValueError("Kalman q and r must be positive")
        if self.dt <= 0 or self.prior_var <= 0:
            raise ValueError("dt and prior_var must be positive")

    def scaled(self, std):
        """Same normalized noise levels, applied to channels with spread ``std``."""
        return replace(self, scale=tuple(float(s) for s in np.maximum(std, 1e-8)))


def _kalman(z, q, r, dt, prior_var, smoother):
    """Vectorized over channels; ``z`` is (T, C), ``q`` and ``r`` length C."""
    n, c = z.shape
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = q[:, None, None] * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
    xf = np.empty((n, c, 2))
    pf = np.empty((n, c, 2, 2))
    xp = np.empty((n, c, 2))
    pp = np.empty((n, c, 2, 2))
    x = np.stack([z[0], np.zeros(c)], axis=1)
    p = np.broadcast_to(prior_var * np.eye(2), (c, 2, 2)).copy()
    for t in range(n):
        if t > 0:
            x = x @ F.T
            p = F @ p @ F.T + Q
        xp[t], pp[t] = x, p
        s = p[:, 0, 0] + r
        k = p[:, :, 0] / s[:, None]
        x = x + k * (z[t] - x[:, 0])[:, None]
        p = p - k[:, :, None] * p[:, None, 0, :]
        p = 0.5 * (p + np.swapaxes(p, 1, 2))
        xf[t], pf[t] = x, p
    if not smoother:
        return xf[:, :, 0]
    xs = xf.copy()
    ps = pf.copy()
    for t in range(n - 2, -1, -1):
        g = pf[t] @ F.T @ np.linalg.inv(pp[t + 1])
        xs[t] = xf[t] + np.einsum("cij,cj->ci", g, xs[t + 1] - xp[t + 1])
        ps[t] = pf[t] + g @ (ps[t + 1] - pp[t + 1]) @ np.swapaxes(g, 1, 2)
    return xs[:, :, 0]


def kalman_smooth(traj, params=KalmanParams(), smoother=True):
    """Constant-velocity Kalman filter, plus RTS smoothing unless ``smoother`` is off."""
    values = np.asarray(traj.values, dtype=np.float64)
    if values.shape[0] == 0:
        raise DataError("cannot smooth an empty trajectory")
    if not np.all(np.isfinite(values)):
        raise DataError("trajectory contains non-finite values")
    c = values.shape[1]
    scale = np.ones(c) if params.scale is None else np.asarray(params.scale, dtype=np.float64)
    q = np.broadcast_to(np.asarray(params.q, dtype=np.float64), (c,))
    r = np.broadcast_to(np.asarray(params.r, dtype=np.float64), (c,))
    z = values / scale
    out = _kalman(z, q, r, params.dt, params.prior_var, smoother) * scale
    return TvTrajectory(out, traj.frame_period, traj.channels)


def ppmc(estimate, truth):
    """Pearson correlation; raises on constant input instead of returning 0."""
    x = np.asarray(estimate, dtype=np.float64).ravel()
    y = np.asarray(truth, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise DataError("undefined correlation: constant sequence")
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


@dataclass(frozen=True)
class EvalReport:
    correlations: tuple
    feature: str = "cortical"
    context: int = 7
    model: str = ""
    per_utterance: dict = field(default=None, compare=False)

    @property
    def average(self):
        return float(np.mean(self.correlations))

    def row(self):
        return [self.feature, str(self.context)] + [f"{c:.6f}" for c in self.correlations] + \
            [f"{self.average:.6f}"]


def write_report_csv(reports, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for rep in reports:
            w.writerow(rep.row())


def read_report_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != REPORT_HEADER:
        raise DataError(f"{path}: report header mismatch")
    return [EvalReport(tuple(float(v) for v in r[2:8]), r[0], int(r[1])) for r in rows[1:]]


def _paired(estimates, truths):
    if len(estimates) != len(truths) or not estimates:
        raise DataError("need the same nonzero number of estimated and reference trajectories")
    pairs = []
    for e, t in zip(estimates, truths):
        if e.n_frames != t.n_frames:
            raise DataError(f"frame count mismatch: {e.n_frames} vs {t.n_frames}")
        pairs.append((e, t))
    return pairs


def evaluate_predictions(estimates, truths, feature="cortical", context=7, kalman=None,
                         smoother=True, per_utterance=False, ids=None, model=""):
    """Optionally smooth each estimate, then correlate per TV over the concatenated split."""
    pairs = _paired(estimates, truths)
    if kalman is not None:
        pairs = [(kalman_smooth(e, kalman, smoother), t) for e, t in pairs]
    est = np.vstack([e.values for e, _ in pairs])
    ref = np.vstack([t.values for _, t in pairs])
    corr = tuple(ppmc(est[:, i], ref[:, i]) for i in range(ref.shape[1]))
    breakdown = None
    if per_utterance:
        ids = ids or [str(i) for i in range(len(pairs))]
        breakdown = {}
        for uid, (e, t) in zip(ids, pairs):
            row = []
            for i in range(t.values.shape[1]):
                try:
                    row.append(ppmc(e.values[:, i], t.values[:, i]))
                except DataError:
                    row.append(float("nan"))
            breakdown[uid] = tuple(row)
    return EvalReport(corr, feature, int(context), model, breakdown)


def tune_kalman(estimates, truths, scale=None, q_grid=(0.001, 0.01, 0.1, 1.0, 10.0),
                r_grid=(0.01, 0.1, 1.0, 10.0)):
    """Grid search for the (q, r) pair maximizing average PPMC on a dev split."""
    best = None
    for q, r in itertools.product(q_grid, r_grid):
        params = KalmanParams(q=q, r=r)
        if scale is not None:
            params = params.scaled(scale)
        avg = evaluate_predictions(estimates, truths, kalman=params).average
        log.debug("kalman q=%g r=%g dev average %.4f", q, r, avg)
        if best is None or avg > best[0]:
            best = (avg, params)
    return best[1]


def plot_trajectories(estimate, truth, path, title=""):
    """SVG with one panel per TV: estimate against reference."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.arange(truth.n_frames) * truth.frame_period
    fig, axes = plt.subplots(len(truth.channels), 1, figsize=(8, 10), sharex=True)
    for ax, i in zip(axes, range(len(truth.channels))):
        ax.plot(t, truth.values[:, i], color="k", lw=1.0, label="reference")
        ax.plot(t, estimate.values[:, i], color="tab:red", lw=1.0, label="estimate")
        ax.set_ylabel(truth.channels[i])
    axes[0].legend(loc="upper right", fontsize="small")
    axes[-1].set_xlabel("time (s)")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
