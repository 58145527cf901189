"""Auditory spectrogram: cochlear filterbank, hair cells, lateral inhibition.

Each cochlear channel is an analog two-pole bandpass resonator shaped by a
zero-phase exponential skirt above its center frequency,

    H_k(f) = exp(-max(log2(f / cf_k) - onset, 0) / skirt) / (1 + j Qr (f / cf_k - cf_k / f)),

evaluated on the FFT grid of the whole utterance. The response depends on
f / cf_k only, so every channel has the same -3 dB quality factor; ``Qr``
is solved so that this overall Q equals the requested one. Every channel
gets a linear-phase advance of ``t* / cf_k`` seconds, where ``t*`` is the
envelope-peak delay of the normalized impulse response in cycles, so all
impulse responses peak at t = 0. The steep high-frequency side mimics
cochlear tuning and keeps the difference between adjacent channels largest
at the channel tuned to a tone. The skirt starts a quarter channel above
``cf_k`` so the response is smooth at its peak; with a cusp there, the
spectral smear of a finite tone would favour the channel one step up.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.optimize
import scipy.signal

from .errors import DataError
from .signal_io import FRAME_PERIOD, SAMPLE_RATE


@dataclass(frozen=True)
class CochlearFilterbank:
    sample_rate: int = SAMPLE_RATE
    n_channels: int = 128
    channels_per_octave: int = 24
    min_center_freq: float = 180.0
    q: float = 4.0
    skirt: float = 0.03
    skirt_onset: float = 0.25 / 24  # octaves above cf

    @property
    def resonator_q(self):
        return _resonator_q(self.q, self.skirt, self.skirt_onset)

    @property
    def center_freqs(self):
        k = np.arange(self.n_channels)
        return self.min_center_freq * 2.0 ** (k / self.channels_per_octave)

    @property
    def octave_span(self):
        return self.n_channels / self.channels_per_octave

    def response(self, freqs):
        """Complex response, shape (n_channels, len(freqs)); zero at DC."""
        f = np.asarray(freqs, dtype=np.float64)
        rho = f / self.center_freqs[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            h = _shape(rho, self.resonator_q, self.skirt, self.skirt_onset)
        h *= np.exp(2j * np.pi * rho * _envelope_peak_cycles(self.resonator_q, self.skirt,
                                                             self.skirt_onset))
        h[:, f <= 0] = 0.0
        return h


def _shape(rho, resonator_q, skirt, onset=0.0):
    skirt_gain = np.exp(-np.maximum(np.log2(rho) - onset, 0.0) / skirt)
    return skirt_gain / (1.0 + 1j * resonator_q * (rho - 1.0 / rho))


def half_power_band(resonator_q, skirt, onset=0.0):
    """Frequency ratios (low, high) where the channel gain is -3 dB."""
    low = (np.sqrt(1.0 + 4.0 * resonator_q ** 2) - 1.0) / (2.0 * resonator_q)
    high = scipy.optimize.brentq(
        lambda r: abs(_shape(r, resonator_q, skirt, onset)) - 2 ** -0.5, 1.0, 2.0, xtol=1e-15
    )
    return low, high


@lru_cache(maxsize=None)
def _resonator_q(q, skirt, onset):
    return scipy.optimize.brentq(
        lambda qr: np.subtract(*half_power_band(qr, skirt, onset)[::-1]) - 1.0 / q, 0.05, 1e3,
        xtol=1e-14,
    )


@lru_cache(maxsize=None)
def _envelope_peak_cycles(resonator_q, skirt, onset, n=1 << 18, step=1.0 / 1024):
    # analytic impulse response of the cf = 1 channel, time axis in cycles
    rho = np.arange(1, n) * step
    g = np.concatenate(([0.0], _shape(rho, resonator_q, skirt, onset)))
    env = np.abs(scipy.fft.ifft(g))[: n // 2]
    i = int(np.argmax(env))
    if 0 < i < len(env) - 1:
        a, b, c = env[i - 1], env[i], env[i + 1]
        i += 0.5 * (a - c) / (a - 2 * b + c)
    return i / (n * step)


def design_cochlear_filterbank(sample_rate=SAMPLE_RATE, n_channels=128, channels_per_octave=24,
                               min_center_freq=180.0, q=4.0, skirt=0.03, skirt_onset=0.25 / 24):
    """Constant-Q filterbank with geometrically spaced center frequencies.

    Raises ValueError if the top center frequency reaches Nyquist.
    """
    if n_channels < 1 or channels_per_octave < 1 or min_center_freq <= 0 or q <= 0 or skirt <= 0 \
            or skirt_onset < 0:
        raise ValueError("filterbank parameters must be positive")
    top = min_center_freq * 2.0 ** ((n_channels - 1) / channels_per_octave)
    if top >= sample_rate / 2:
        raise ValueError(
            f"top center frequency {top:.1f} Hz exceeds Nyquist ({sample_rate / 2:.0f} Hz)"
        )
    return CochlearFilterbank(int(sample_rate), int(n_channels), int(channels_per_octave),
                              float(min_center_freq), float(q), float(skirt), float(skirt_onset))


@dataclass(frozen=True, eq=False)
class AuditorySpectrogram:
    frames: np.ndarray
    frame_period: float = FRAME_PERIOD
    center_freqs: np.ndarray = None

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def n_channels(self):
        return self.frames.shape[1]


def cochlear_filter(a, fb, pad_seconds=0.1):
    """Filter ``a`` through every channel; returns (time, n_channels)."""
    if a.sample_rate != fb.sample_rate:
        raise DataError(f"sample rate mismatch: audio {a.sample_rate} Hz, filterbank {fb.sample_rate} Hz")
    n = len(a.samples)
    n_fft = scipy.fft.next_fast_len(n + int(pad_seconds * fb.sample_rate), real=True)
    spectrum = scipy.fft.rfft(a.samples, n_fft)
    freqs = scipy.fft.rfftfreq(n_fft, 1.0 / fb.sample_rate)
    h = fb.response(freqs)
    y = scipy.fft.irfft(h * spectrum[None, :], n_fft, axis=1)[:, :n]
    return np.ascontiguousarray(y.T)


def haircell_stage(x, sample_rate=SAMPLE_RATE, gain=8.0, cutoff=4000.0):
    """Temporal first difference, tanh compression, first-order membrane low-pass."""
    x = np.asarray(x, dtype=np.float64)
    d = np.diff(x, axis=0, prepend=0.0)
    u = np.tanh(gain * d)
    beta = np.exp(-2 * np.pi * cutoff / sample_rate)
    return scipy.signal.lfilter([1 - beta], [1.0, -beta], u, axis=0)


def lateral_inhibition(x):
    """Difference between adjacent channels (k minus k-1), half-wave rectified."""
    x = np.asarray(x, dtype=np.float64)
    y = np.diff(x, axis=1, prepend=0.0)
    return np.maximum(y, 0.0)


def frame_integrate(x, sample_rate=SAMPLE_RATE, frame_period=FRAME_PERIOD, time_constant=0.008,
                    center_freqs=None):
    """Leaky integration (unit DC gain) sampled at the end of every frame."""
    hop = sample_rate * frame_period
    if abs(hop - round(hop)) > 1e-9:
        raise ValueError("frame period must be a whole number of samples")
    hop = int(round(hop))
    n_frames = len(x) // hop
    if n_frames < 1:
        raise DataError("signal shorter than one frame")
    beta = np.exp(-1.0 / (time_constant * sample_rate))
    y = scipy.signal.lfilter([1 - beta], [1.0, -beta], x[: n_frames * hop], axis=0)
    frames = y[hop - 1::hop]
    return AuditorySpectrogram(np.maximum(frames, 0.0), frame_period, center_freqs)


def audspec(a, fb=None, haircell_gain=8.0, membrane_cutoff=4000.0, time_constant=0.008,
            frame_period=FRAME_PERIOD):
    """Audio to auditory spectrogram (frames x channels)."""
    if fb is None:
        fb = design_cochlear_filterbank(a.sample_rate)
    y = cochlear_filter(a, fb)
    y = haircell_stage(y, fb.sample_rate, haircell_gain, membrane_cutoff)
    y = lateral_inhibition(y)
    return frame_integrate(y, fb.sample_rate, frame_period, time_constant, fb.center_freqs)
