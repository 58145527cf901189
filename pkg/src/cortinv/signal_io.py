"""Audio and tract-variable ingestion, dataset manifests and the synthetic corpus.

The synthetic generator stands in for an articulatory database: it draws
smooth random tract-variable (TV) trajectories and renders audio from them
with a small source-filter synthesizer, so every acoustic frame has a known
articulatory target.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import DataError

logger = logging.getLogger(__name__)

TV_NAMES = ("LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD")
FRAME_PERIOD = 0.010
SAMPLE_RATE = 16000
TV_CSV_HEADER = ("time_s",) + TV_NAMES
MANIFEST_HEADER = ("utt_id", "speaker_id", "audio_path", "tv_path", "split")
SPLITS = ("train", "dev", "test")

# (min, max) per TV channel, in the order of TV_NAMES
TV_RANGES = (
    (0.0, 20.0),    # LA, mm
    (5.0, 15.0),    # LP, mm
    (60.0, 140.0),  # TBCL, degrees
    (0.0, 20.0),    # TBCD, mm
    (20.0, 90.0),   # TTCL, degrees
    (0.0, 15.0),    # TTCD, mm
)


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError("audio samples must be one-dimensional")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise DataError(f"invalid sample rate {self.sample_rate!r}")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True, eq=False)
class TvTrajectory:
    """Six tract-variable channels sampled every 10 ms.

    Rows are frames, columns follow ``TV_NAMES``. An empty trajectory
    (zero rows) is allowed in memory; files always hold at least one row.
    """

    values: np.ndarray
    frame_period: float = FRAME_PERIOD
    channels: tuple = TV_NAMES

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(TV_NAMES):
            raise DataError(f"TV values must be (frames, 6), got {values.shape}")
        if tuple(self.channels) != TV_NAMES:
            raise DataError(f"TV channels must be {TV_NAMES}")
        if not np.all(np.isfinite(values)):
            raise DataError("TV values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n_frames(self):
        return self.values.shape[0]

    def __len__(self):
        return self.n_frames

    def truncate(self, n_frames):
        return replace(self, values=self.values[:n_frames])

    def channel(self, name):
        return self.values[:, TV_NAMES.index(name)]


# --------------------------------------------------------------------------
# audio


def load_wav(path):
    """Read a mono linear-PCM WAV file (16-bit integer or 32-bit float)."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        raise DataError(f"unsupported WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError("multichannel unsupported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"unsupported encoding {data.dtype} in {path}")
    utt_id = os.path.splitext(os.path.basename(path))[0]
    return AudioBuffer(samples, rate, utt_id)


def write_wav(path, audio, encoding="pcm16"):
    """Write ``audio`` as mono WAV, either ``pcm16`` or ``float32``."""
    x = np.clip(audio.samples, -1.0, 1.0)
    if encoding == "pcm16":
        data = np.round(x * 32767.0).astype(np.int16)
    elif encoding == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    scipy.io.wavfile.write(path, audio.sample_rate, data)


def resample(a, target_rate):
    """Polyphase windowed-sinc resampling to ``target_rate``.

    The output length is ``round(len(a) * target_rate / a.sample_rate)``.
    """
    if int(target_rate) != target_rate or target_rate <= 0:
        raise ValueError(f"invalid target rate {target_rate!r}")
    target_rate = int(target_rate)
    if target_rate == a.sample_rate:
        return a
    ratio = Fraction(target_rate, a.sample_rate)
    y = scipy.signal.resample_poly(a.samples, ratio.numerator, ratio.denominator)
    n_out = int(round(len(a) * target_rate / a.sample_rate))
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)))
    return AudioBuffer(y[:n_out], target_rate, a.id)


# --------------------------------------------------------------------------
# tract variables


def load_tv_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != TV_CSV_HEADER:
        raise DataError(f"schema mismatch in {path}: expected {','.join(TV_CSV_HEADER)}")
    body = rows[1:]
    if not body:
        raise DataError(f"no frames in {path}")
    try:
        table = np.array([[float(c) for c in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"non-numeric cell in {path}: {exc}") from exc
    if table.shape[1] != len(TV_CSV_HEADER):
        raise DataError(f"schema mismatch in {path}: ragged rows")
    if np.isnan(table).any():
        raise DataError(f"NaN cell in {path}")
    times = table[:, 0]
    if len(times) > 1:
        steps = np.diff(times)
        if np.any(np.abs(steps - FRAME_PERIOD) > 1e-6):
            raise DataError(f"frame period mismatch in {path}: expected {FRAME_PERIOD} s steps")
    return TvTrajectory(table[:, 1:])


def write_tv_csv(path, tv):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TV_CSV_HEADER)
        for i, row in enumerate(tv.values):
            writer.writerow([f"{i * tv.frame_period:.3f}"] + [repr(float(v)) for v in row])


def align_frames(spectrogram_frames, tv):
    """Common frame count of a feature sequence and a TV trajectory.

    Callers truncate both sides to the returned count. A mismatch of more
    than 3 frames is logged as a warning.
    """
    n = min(int(spectrogram_frames), tv.n_frames)
    if n <= 0:
        raise DataError("no overlapping frames between features and trajectory")
    if abs(int(spectrogram_frames) - tv.n_frames) > 3:
        logger.warning(
            "frame count mismatch: %d feature frames vs %d TV frames", spectrogram_frames, tv.n_frames
        )
    return n


# --------------------------------------------------------------------------
# manifests and splits


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker_id: str
    audio_path: str
    tv_path: str
    split: str = "train"


@dataclass
class DatasetManifest:
    entries: list
    root: str = "."

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.utt_id in seen:
                raise DataError(f"duplicate utterance id {e.utt_id!r}")
            seen.add(e.utt_id)
            if e.split not in SPLITS:
                raise DataError(f"unknown split {e.split!r} for {e.utt_id!r}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def subset(self, split):
        return [e for e in self.entries if e.split == split]

    def speakers(self, split=None):
        return sorted({e.speaker_id for e in self.entries if split is None or e.split == split})

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.root, path)

    def check_files(self):
        for e in self.entries:
            for p in (e.audio_path, e.tv_path):
                if not os.path.exists(self.resolve(p)):
                    raise DataError(f"missing file {p!r} for {e.utt_id!r}")

    def is_speaker_disjoint(self):
        sets = [set(self.speakers(s)) for s in SPLITS]
        return not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])


def read_manifest(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_HEADER:
            raise DataError(f"schema mismatch in manifest {path}")
        entries = [ManifestEntry(*row) for row in reader if row]
    return DatasetManifest(entries, root=os.path.dirname(os.path.abspath(path)))


def write_manifest(path, manifest):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            writer.writerow([e.utt_id, e.speaker_id, e.audio_path, e.tv_path, e.split])


def _split_counts(n, fractions):
    n_dev = max(1, int(round(fractions[1] * n)))
    n_test = max(1, int(round(fractions[2] * n)))
    n_train = n - n_dev - n_test
    if n_train < 1:
        raise DataError(f"cannot split {n} units into {fractions}")
    return n_train, n_dev, n_test


def make_splits(manifest, mode="by_speaker", fractions=(0.8, 0.1, 0.1), seed=0):
    """Assign train/dev/test labels.

    ``by_speaker`` keeps every speaker inside a single split; ``by_utterance``
    shuffles utterances freely. The assignment depends only on the entries
    and ``seed``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    if mode == "by_speaker":
        units = sorted({e.speaker_id for e in manifest.entries})
        if len(units) < 3:
            raise DataError(f"by_speaker split needs at least 3 speakers, got {len(units)}")
        key = lambda e: e.speaker_id  # noqa: E731
    elif mode == "by_utterance":
        units = sorted(e.utt_id for e in manifest.entries)
        if len(units) < 3:
            raise DataError(f"by_utterance split needs at least 3 utterances, got {len(units)}")
        key = lambda e: e.utt_id  # noqa: E731
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    n_train, n_dev, _ = _split_counts(len(units), fractions)
    order = rng.permutation(len(units))
    label = {}
    for rank, idx in enumerate(order):
        label[units[idx]] = "train" if rank < n_train else "dev" if rank < n_train + n_dev else "test"
    entries = [replace(e, split=label[key(e)]) for e in manifest.entries]
    return DatasetManifest(entries, root=manifest.root)


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SynthSpec:
    n_speakers: int = 12
    utterances_per_speaker: int = 16
    duration: float = 3.0
    seed: int = 7
    trajectory_bandwidth: float = 8.0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.n_speakers < 1 or self.utterances_per_speaker < 1:
            raise ValueError("speaker and utterance counts must be positive")
        if self.duration < FRAME_PERIOD:
            raise ValueError("duration must cover at least one frame")
        if not 0 < self.trajectory_bandwidth < 0.5 / FRAME_PERIOD:
            raise ValueError("trajectory bandwidth must lie in (0, 50) Hz")


@dataclass(frozen=True, eq=False)
class SynthUtterance:
    audio: AudioBuffer
    tv: TvTrajectory
    speaker_id: str


@dataclass(frozen=True)
class _Speaker:
    f0: float
    tract_scale: float
    breathiness: float


def _speaker_params(seed, s):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(s,)))
    return _Speaker(
        f0=float(rng.uniform(100.0, 180.0)),
        tract_scale=float(rng.uniform(0.97, 1.03)),
        breathiness=float(rng.uniform(0.02, 0.08)),
    )


def _lowpass_noise(rng, n_frames, bandwidth):
    """Unit-variance white noise low-passed (zero phase) at ``bandwidth`` Hz."""
    fs = 1.0 / FRAME_PERIOD
    sos = scipy.signal.butter(4, bandwidth, fs=fs, output="sos")
    # variance gain of the forward-backward filter, |H|^4 averaged over the band
    _, h = scipy.signal.sosfreqz(sos, worN=8192)
    gain = math.sqrt(np.mean(np.abs(h) ** 4))
    pad = int(2 * fs)
    w = rng.standard_normal((n_frames + 2 * pad, len(TV_NAMES)))
    y = scipy.signal.sosfiltfilt(sos, w, axis=0)[pad:pad + n_frames]
    return y / gain


def synth_trajectory(rng, n_frames, bandwidth):
    """Band-limited Gaussian TV trajectories clamped to ``TV_RANGES``."""
    z = _lowpass_noise(rng, n_frames, bandwidth)
    lo = np.array([r[0] for r in TV_RANGES])
    hi = np.array([r[1] for r in TV_RANGES])
    values = (lo + hi) / 2 + z * (hi - lo) / 5.0
    return TvTrajectory(np.clip(values, lo, hi))


def _resonate(x, fc, bw, fs, block):
    """Two-pole resonator with unit white-noise power gain, coefficients per block.

    With the power fixed, bandwidth trades peak height against spread and
    does not change overall loudness, which stays with LA alone.
    """
    y = np.empty_like(x)
    y1 = y2 = 0.0
    for start in range(0, len(x), block):
        b = start // block
        r = math.exp(-math.pi * bw[b] / fs)
        theta = 2 * math.pi * fc[b] / fs
        a1, a2 = -2 * r * math.cos(theta), r * r
        b0 = math.sqrt((1 - a2) * ((1 + a2) ** 2 - a1 * a1) / (1 + a2))
        zi = np.array([-a1 * y1 - a2 * y2, -a2 * y1])
        seg, _ = scipy.signal.lfilter([b0, 0.0, 0.0], [1.0, a1, a2], x[start:start + block], zi=zi)
        y[start:start + block] = seg
        y1 = seg[-1]
        y2 = seg[-2] if len(seg) > 1 else y1
    return y


def synth_audio(tv, speaker, rng, sample_rate=SAMPLE_RATE):
    """Render audio from a TV trajectory with a two-resonator source-filter model."""
    fs = sample_rate
    n = int(round(tv.n_frames * tv.frame_period * fs))
    t = np.arange(n) / fs
    frame_t = np.arange(tv.n_frames) * tv.frame_period
    lo = np.array([r[0] for r in TV_RANGES])
    hi = np.array([r[1] for r in TV_RANGES])
    unit = (tv.values - lo) / (hi - lo)
    la, lp, tbcl, tbcd, ttcl, ttcd = (np.interp(t, frame_t, unit[:, i]) for i in range(6))

    # source: aspiration noise plus a pulse train whose pitch follows a slow
    # intonation contour around the speaker's mean f0
    contour = 0.2 * np.interp(t, frame_t, _lowpass_noise(rng, tv.n_frames, 3.0)[:, 0])
    phase = np.cumsum(speaker.f0 * np.exp(contour) / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    glottal = scipy.signal.lfilter([1.0], [1.0, -1.8, 0.81], pulses)
    glottal /= np.sqrt(speaker.f0 / fs * 1000.0)
    source = glottal + 8.0 * speaker.breathiness * rng.standard_normal(n)

    # lip protrusion sets the spectral tilt of the source
    tilt = -0.6 + 1.5 * lp
    source = source - tilt * np.concatenate(([0.0], source[:-1]))

    block = 32
    centers = t[::block] + 0.5 * block / fs
    at = lambda v: np.interp(centers, t, v)  # noqa: E731
    k = speaker.tract_scale
    fc_a = k * (300.0 + 1200.0 * at(tbcl))
    bw_a = 50.0 + 950.0 * at(tbcd)
    fc_b = k * (1700.0 + 2600.0 * at(ttcl))
    bw_b = 80.0 + 1400.0 * at(ttcd)
    voiced = _resonate(source, fc_a, bw_a, fs, block) + 0.7 * _resonate(source, fc_b, bw_b, fs, block)

    # LA sets the level over a 20 dB range
    gain = 10.0 ** (la - 1.0)
    return np.clip(0.25 * gain * voiced, -1.0, 1.0)


def synth_dataset(spec=SynthSpec()):
    """Generate paired (audio, TV) utterances with speaker ids.

    Utterances are ordered by speaker then index and named
    ``spkSS_uttUU``. Output depends only on ``spec``.
    """
    n_frames = int(round(spec.duration / FRAME_PERIOD))
    out = []
    for s in range(spec.n_speakers):
        speaker = _speaker_params(spec.seed, s)
        for u in range(spec.utterances_per_speaker):
            rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(s, u)))
            tv = synth_trajectory(rng, n_frames, spec.trajectory_bandwidth)
            samples = synth_audio(tv, speaker, rng, spec.sample_rate)
            utt = f"spk{s:02d}_utt{u:02d}"
            out.append(SynthUtterance(AudioBuffer(samples, spec.sample_rate, utt), tv, f"spk{s:02d}"))
    return out
