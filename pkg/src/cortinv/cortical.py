"""Spectro-temporal modulation (cortical) features and the MFCC baseline.

The STRF bank works in the 2-D Fourier domain of the auditory spectrogram,
with temporal modulation ``w`` in Hz and spectral modulation ``W`` in
cycles/octave. Each filter is separable in magnitude:

* spectral seed, a Mexican hat: ``(W/s)^2 exp(1 - (W/s)^2)``, peak 1 at ``W = s``
* temporal seed, gamma shaped: ``(w/r)^n exp(n (1 - w/r))``, peak 1 at ``w = r``

Direction comes from keeping one quadrant of the transform: positive
temporal frequencies together with positive spectral frequencies respond to
downward-drifting ripples, with negative spectral frequencies to upward
ones. Keeping a single quadrant makes the output analytic, so its magnitude
is the modulation envelope.

Signed rates follow the convention ``+r`` = upward, ``-r`` = downward. The
rate axis lists upward rates first, then downward, each ascending in
``|r|``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import DataError
from .frontend import AuditorySpectrogram
from .signal_io import FRAME_PERIOD, SAMPLE_RATE

DIRECTIONS = ("up", "down")


@dataclass(frozen=True)
class StrfBank:
    scales: tuple = (1.0, 2.0, 4.0, 8.0)
    rates: tuple = (2.0, 4.0, 8.0, 16.0, 32.0)
    frame_period: float = FRAME_PERIOD
    n_freq_channels: int = 128
    channels_per_octave: int = 24
    temporal_order: float = 2.0

    @property
    def signed_rates(self):
        return tuple(self.rates) + tuple(-r for r in self.rates)

    @property
    def shape(self):
        return (len(self.scales), 2 * len(self.rates), self.n_freq_channels)

    def rate_index(self, rate, direction):
        signed = rate if direction == "up" else -rate
        return self.signed_rates.index(signed)

    def temporal_response(self, w, rate):
        """Gamma-shaped magnitude at temporal modulation ``w`` (Hz, >= 0)."""
        x = np.maximum(np.asarray(w, dtype=np.float64), 0.0) / rate
        n = self.temporal_order
        return x ** n * np.exp(n * (1.0 - x))

    @staticmethod
    def spectral_response(omega, scale):
        """Mexican-hat magnitude at spectral modulation ``omega`` (cyc/oct)."""
        x = np.abs(np.asarray(omega, dtype=np.float64)) / scale
        return x ** 2 * np.exp(1.0 - x ** 2)


def design_strf_bank(scales=(1, 2, 4, 8), rates=(2, 4, 8, 16, 32), frame_period=FRAME_PERIOD,
                     n_freq_channels=128, channels_per_octave=24, temporal_order=2.0):
    scales = tuple(float(s) for s in scales)
    rates = tuple(float(r) for r in rates)
    for name, vals in (("scales", scales), ("rates", rates)):
        if not vals or min(vals) <= 0 or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"{name} must be positive and strictly increasing")
    nyquist = 0.5 / frame_period
    if max(rates) >= nyquist:
        raise ValueError(f"rate {max(rates)} Hz is above the frame Nyquist ({nyquist:g} Hz)")
    if max(scales) >= 0.5 * channels_per_octave:
        raise ValueError("scale above the spectral Nyquist")
    return StrfBank(scales, rates, frame_period, int(n_freq_channels), int(channels_per_octave),
                    float(temporal_order))


@dataclass(frozen=True, eq=False)
class CorticalSequence:
    """Per-frame (scale, signed rate, frequency) magnitude tensors."""

    frames: np.ndarray
    scales: tuple
    signed_rates: tuple
    center_freqs: np.ndarray = None
    frame_period: float = FRAME_PERIOD

    @property
    def n_frames(self):
        return self.frames.shape[0]


def cortical_transform(sp, bank):
    """Magnitude of every STRF output, sampled at each spectrogram frame."""
    s = np.asarray(sp.frames, dtype=np.float64)
    n_t, n_f = s.shape
    if n_f != bank.n_freq_channels:
        raise DataError(f"spectrogram has {n_f} channels, STRF bank expects {bank.n_freq_channels}")
    # zero padding to twice the size keeps the circular convolution from wrapping
    nt2 = scipy.fft.next_fast_len(2 * n_t)
    nf2 = scipy.fft.next_fast_len(2 * n_f)
    spec2 = scipy.fft.fft2(s, (nt2, nf2))
    w = scipy.fft.fftfreq(nt2, bank.frame_period)
    omega = scipy.fft.fftfreq(nf2, 1.0 / bank.channels_per_octave)
    pos_w = w > 0
    quadrant = {
        "down": np.outer(pos_w, omega > 0),
        "up": np.outer(pos_w, omega < 0),
    }
    out = np.empty((n_t,) + bank.shape)
    for i, scale in enumerate(bank.scales):
        spectral = bank.spectral_response(omega, scale)
        for j, signed in enumerate(bank.signed_rates):
            direction = "up" if signed > 0 else "down"
            h = np.outer(bank.temporal_response(w, abs(signed)), spectral)
            h = np.where(quadrant[direction], 2.0 * h, 0.0)
            z = scipy.fft.ifft2(spec2 * h)[:n_t, :n_f]
            out[:, i, j, :] = np.abs(z)
    return CorticalSequence(out, bank.scales, bank.signed_rates, sp.center_freqs, bank.frame_period)


def ripple_stimulus(rate, scale, direction="down", duration=2.0, depth=0.9, n_channels=128,
                    channels_per_octave=24, frame_period=FRAME_PERIOD):
    """Moving ripple ``1 + depth cos(2 pi (rate t +/- scale x))`` on a log-frequency axis.

    ``x`` is channel position in octaves. The ``+`` sign (``down``) drifts
    toward low frequencies over time.
    """
    if abs(rate) >= 0.5 / frame_period:
        raise ValueError("ripple rate must be below the frame Nyquist")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    n_t = int(round(duration / frame_period))
    t = np.arange(n_t)[:, None] * frame_period
    x = np.arange(n_channels)[None, :] / channels_per_octave
    sign = 1.0 if direction == "down" else -1.0
    frames = 1.0 + depth * np.cos(2 * np.pi * (rate * t + sign * scale * x))
    cfs = 180.0 * 2.0 ** (np.arange(n_channels) / channels_per_octave)
    return AuditorySpectrogram(frames, frame_period, cfs)


# --------------------------------------------------------------------------
# MFCC baseline


def mel_filterbank(n_mels, n_fft, sample_rate, fmin=0.0, fmax=None):
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)  # noqa: E731
    edges_mel = np.linspace(mel(fmin), mel(fmax), n_mels + 2)
    edges = 700.0 * (10.0 ** (edges_mel / 2595.0) - 1.0)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs - lower) / (center - lower)
    fall = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rise, fall))


def mfcc_baseline(a, n_coeffs=13, frame_period=FRAME_PERIOD, window=0.025, n_mels=26,
                  floor=1e-10):
    """Log mel-energy cepstra, one row per 10 ms frame.

    Frame ``i`` is the window ending at sample ``(i + 1) * hop`` (zero padded
    at the start), matching the sampling instants of the auditory
    spectrogram, so both pipelines yield ``len(a) // hop`` frames. The DCT is
    scaled so that ``c0`` is the mean log energy over bands.
    """
    if a.sample_rate != SAMPLE_RATE:
        raise DataError(f"MFCC baseline expects {SAMPLE_RATE} Hz audio, got {a.sample_rate}")
    hop = int(round(frame_period * a.sample_rate))
    win = int(round(window * a.sample_rate))
    n_frames = len(a.samples) // hop
    if n_frames < 1:
        raise DataError("audio shorter than one frame")
    x = np.concatenate((np.zeros(win), a.samples))
    ends = (np.arange(n_frames) + 1) * hop + win
    idx = ends[:, None] - win + np.arange(win)[None, :]
    frames = x[idx] * np.hamming(win)
    n_fft = 1 << (win - 1).bit_length()
    power = np.abs(np.fft.rfft(frames, n_fft, axis=1)) ** 2
    energy = power @ mel_filterbank(n_mels, n_fft, a.sample_rate).T
    log_e = np.log(np.maximum(energy, floor))
    ceps = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1) / np.sqrt(n_mels)
    return ceps[:, :n_coeffs]
