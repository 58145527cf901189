"""Higher-order SVD reduction of per-frame (scale, rate, frequency) tensors.

The mode-m left singular vectors of the training tensor (all frames stacked
along an untouched time mode) are the eigenvectors of

    C_m = sum over frames of unfold_m(T) @ unfold_m(T).T

so the basis is fitted from three small Gram matrices accumulated frame by
frame instead of from the concatenated tensor. The eigenvalues are the
squared singular values, i.e. the energy carried by each component.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ProvenanceError

MODE_NAMES = ("scale", "rate", "frequency")
_EINSUM_GRAM = ("nijk,nljk->il", "nijk,nilk->jl", "nijk,nijl->kl")


def unfold(tensor, mode):
    """Mode-``mode`` unfolding: rows index that axis, columns the rest (C order)."""
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1)


def _as_frames(seq):
    frames = getattr(seq, "frames", seq)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 3:
        frames = frames[None]
    if frames.ndim != 4:
        raise DataError(f"expected (frames, scale, rate, frequency) data, got shape {frames.shape}")
    return frames


@dataclass(frozen=True, eq=False)
class ModeCovariances:
    """Running per-mode Gram matrices of the accumulated tensors."""

    matrices: tuple
    frame_count: int = 0

    @classmethod
    def empty(cls, shape=(4, 10, 128)):
        return cls(tuple(np.zeros((d, d)) for d in shape), 0)

    @property
    def shape(self):
        return tuple(m.shape[0] for m in self.matrices)

    def __add__(self, other):
        if self.shape != other.shape:
            raise DataError(f"cannot merge accumulators of shapes {self.shape} and {other.shape}")
        mats = tuple(a + b for a, b in zip(self.matrices, other.matrices))
        return ModeCovariances(mats, self.frame_count + other.frame_count)


def accumulate_mode_covariances(seq, acc=None):
    """Add every frame of ``seq`` into ``acc`` (a new accumulator is returned)."""
    frames = _as_frames(seq)
    if acc is None:
        acc = ModeCovariances.empty(frames.shape[1:])
    if frames.shape[1:] != acc.shape:
        raise DataError(f"frame shape {frames.shape[1:]} does not match accumulator {acc.shape}")
    mats = tuple(m + np.einsum(spec, frames, frames, optimize=True)
                 for m, spec in zip(acc.matrices, _EINSUM_GRAM))
    return ModeCovariances(mats, acc.frame_count + frames.shape[0])


@dataclass(frozen=True, eq=False)
class HosvdBasis:
    """Per-mode orthonormal factors (columns by descending eigenvalue)."""

    factors: tuple
    eigenvalues: tuple
    frame_count: int = 0
    config_hash: str = ""
    mode_names: tuple = MODE_NAMES

    @property
    def shape(self):
        return tuple(u.shape[0] for u in self.factors)

    @property
    def hash(self):
        h = hashlib.sha256()
        for u, lam in zip(self.factors, self.eigenvalues):
            h.update(np.ascontiguousarray(u, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(lam, dtype="<f8").tobytes())
        h.update(self.config_hash.encode())
        return h.hexdigest()[:16]

    def mode_index(self, mode):
        if isinstance(mode, str):
            if mode not in self.mode_names:
                raise ValueError(f"unknown mode {mode!r}")
            return self.mode_names.index(mode)
        if not 0 <= mode < len(self.factors):
            raise ValueError(f"mode index {mode} out of range")
        return int(mode)


def _fix_signs(u):
    # largest-magnitude entry of each column positive (first one on ties)
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def fit_hosvd(acc, config_hash=""):
    if acc.frame_count < 1:
        raise DataError("cannot fit a basis from an empty accumulator")
    factors, eigenvalues = [], []
    for c in acc.matrices:
        c = 0.5 * (c + c.T)
        lam, vec = np.linalg.eigh(c)
        order = np.argsort(-lam, kind="stable")
        factors.append(_fix_signs(vec[:, order]))
        eigenvalues.append(lam[order])
    return HosvdBasis(tuple(factors), tuple(eigenvalues), acc.frame_count, config_hash)


@dataclass(frozen=True)
class ModeSpectrum:
    mode: str
    dim: int
    alpha: np.ndarray = field(compare=False)


def pc_energy(basis, mode):
    """Fraction of mode energy carried by each principal component."""
    m = basis.mode_index(mode)
    lam = np.maximum(basis.eigenvalues[m], 0.0)
    total = lam.sum()
    if total <= 0:
        raise DataError(f"{basis.mode_names[m]} mode has no energy")
    return ModeSpectrum(basis.mode_names[m], len(lam), lam / total)


@dataclass(frozen=True, eq=False)
class ReducedSequence:
    frames: np.ndarray
    truncation: tuple
    basis_hash: str

    @property
    def n_frames(self):
        return self.frames.shape[0]


def _check_truncation(basis, trunc):
    trunc = tuple(int(k) for k in trunc)
    if len(trunc) != len(basis.factors) or any(not 1 <= k <= d for k, d in zip(trunc, basis.shape)):
        raise ValueError(f"truncation {trunc} outside the basis shape {basis.shape}")
    return trunc


def _multiply_modes(frames, matrices):
    # frames (n, a, b, c); contract axis m+1 with matrices[m] over its first index
    out = frames
    for m, mat in enumerate(matrices):
        out = np.moveaxis(np.tensordot(out, mat, axes=([m + 1], [0])), -1, m + 1)
    return out


def project(seq, basis, trunc=(4, 5, 7)):
    """Core tensors ``T x1 Us.T x2 Ur.T x3 Uf.T`` with the leading columns only."""
    trunc = _check_truncation(basis, trunc)
    frames = _as_frames(seq)
    if frames.shape[1:] != basis.shape:
        raise ProvenanceError(f"frames of shape {frames.shape[1:]} do not match basis {basis.shape}")
    cores = _multiply_modes(frames, [u[:, :k] for u, k in zip(basis.factors, trunc)])
    return ReducedSequence(cores, trunc, basis.hash)


def reconstruct(red, basis):
    """Back to the full tensor space: ``core x1 Us x2 Ur x3 Uf``."""
    if red.basis_hash != basis.hash:
        raise ProvenanceError("reduced sequence was projected with a different basis")
    mats = [u[:, :k].T for u, k in zip(basis.factors, red.truncation)]
    return _multiply_modes(red.frames, mats)


def vectorize_with_context(red, context=7):
    """Stack each frame with its neighbours (edges replicated) into one row.

    Row ``t`` holds frames ``t - c//2 .. t + c//2`` in time order, each core
    flattened in (scale, rate, frequency) order.
    """
    frames = getattr(red, "frames", red)
    frames = np.asarray(frames)
    if context < 1 or context % 2 == 0:
        raise ValueError(f"context must be a positive odd count, got {context}")
    n = frames.shape[0]
    if n == 0:
        raise DataError("cannot vectorize an empty sequence")
    flat = frames.reshape(n, -1)
    half = context // 2
    idx = np.clip(np.arange(n)[:, None] + np.arange(-half, half + 1)[None, :], 0, n - 1)
    return flat[idx].reshape(n, -1)
