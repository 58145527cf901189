"""FTC1 binary container for feature tensors, and basis / energy-report files.

Record layout, all little-endian::

    b"FTC1"  u16 version  u16 type (1 = f32, 2 = f64)  u16 rank
    u64 dims[rank]
    u32 metadata length, UTF-8 "key=value" lines
    row-major data

A basis file is a run of records, two per mode (factor matrix and
eigenvalues), each tagged with ``section`` and ``field`` metadata.
"""

import csv
import struct

import numpy as np

from .cortical import CorticalSequence
from .errors import DataError, ProvenanceError
from .frontend import AuditorySpectrogram
from .signal_io import FRAME_PERIOD
from .tensor_reduce import MODE_NAMES, HosvdBasis, pc_energy

MAGIC = b"FTC1"
VERSION = 1
_TYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}
ENERGY_HEADER = ("mode", "index", "eigenvalue", "alpha")


def _encode_meta(meta):
    lines = []
    for k, v in meta.items():
        k, v = str(k), str(v)
        if not k or "=" in k or "\n" in k or "\n" in v:
            raise ValueError(f"metadata entry {k!r} cannot be encoded")
        lines.append(f"{k}={v}\n")
    return "".join(lines).encode("utf-8")


def _decode_meta(raw):
    meta = {}
    for line in raw.decode("utf-8").splitlines():
        k, sep, v = line.partition("=")
        if not sep:
            raise DataError(f"malformed metadata line {line!r}")
        meta[k] = v
    return meta


def ftc_to_bytes(array, meta=None, dtype=None):
    array = np.asarray(array)
    dtype = np.dtype(dtype or (array.dtype if array.dtype in _CODES else np.float64))
    if dtype not in _CODES:
        raise ValueError(f"unsupported element type {dtype}")
    body = np.ascontiguousarray(array, dtype=dtype.newbyteorder("<")).tobytes()
    m = _encode_meta(meta or {})
    head = MAGIC + struct.pack("<HHH", VERSION, _CODES[dtype], array.ndim)
    head += struct.pack(f"<{array.ndim}Q", *array.shape) + struct.pack("<I", len(m)) + m
    return head + body


def ftc_from_bytes(data, offset=0):
    """Parse one record at ``offset``; returns (array, metadata, next offset)."""
    try:
        if data[offset:offset + 4] != MAGIC:
            raise DataError("not an FTC1 record")
        version, code, rank = struct.unpack_from("<HHH", data, offset + 4)
        if version != VERSION:
            raise DataError(f"unsupported FTC version {version}")
        if code not in _TYPES:
            raise DataError(f"unknown FTC element type {code}")
        pos = offset + 10
        dims = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        (mlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        meta = _decode_meta(bytes(data[pos:pos + mlen]))
        pos += mlen
    except struct.error as exc:
        raise DataError(f"truncated FTC header: {exc}") from None
    dt = _TYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if pos + nbytes > len(data):
        raise DataError("truncated FTC data block")
    arr = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims)
    return arr.astype(dt.newbyteorder("=")), meta, pos + nbytes


def write_ftc(path, array, meta=None, dtype=None):
    with open(path, "wb") as fh:
        fh.write(ftc_to_bytes(array, meta, dtype))


def read_ftc(path):
    with open(path, "rb") as fh:
        data = fh.read()
    arr, meta, end = ftc_from_bytes(data)
    if end != len(data):
        raise DataError(f"{path}: trailing bytes after FTC record")
    return arr, meta


def _join(vals):
    return ",".join(f"{float(v):g}" for v in vals)


def _split(text):
    return tuple(float(v) for v in text.split(",")) if text else ()


def save_cortical(path, seq, provenance=""):
    meta = {
        "kind": "cortical",
        "frame_period_ms": f"{seq.frame_period * 1000:g}",
        "axes": "time,scale,rate,frequency",
        "scales": _join(seq.scales),
        "rates": _join(seq.signed_rates),
        "provenance": provenance,
    }
    if seq.center_freqs is not None:
        meta["center_freqs"] = ",".join(repr(float(f)) for f in seq.center_freqs)
    write_ftc(path, seq.frames, meta, np.float32)


def load_cortical(path, provenance=None):
    arr, meta = read_ftc(path)
    if meta.get("kind") != "cortical" or arr.ndim != 4:
        raise DataError(f"{path}: not a cortical feature file")
    if provenance is not None and meta.get("provenance") != provenance:
        raise ProvenanceError(f"{path}: features were extracted under a different configuration")
    cfs = meta.get("center_freqs")
    return CorticalSequence(arr, _split(meta["scales"]), _split(meta["rates"]),
                            np.array(_split(cfs)) if cfs else None,
                            float(meta.get("frame_period_ms", FRAME_PERIOD * 1000)) / 1000)


def save_audspec(path, sp, provenance=""):
    meta = {"kind": "audspec", "frame_period_ms": f"{sp.frame_period * 1000:g}",
            "axes": "time,frequency", "provenance": provenance}
    if sp.center_freqs is not None:
        meta["center_freqs"] = ",".join(repr(float(f)) for f in sp.center_freqs)
    write_ftc(path, sp.frames, meta, np.float32)


def load_audspec(path, provenance=None):
    arr, meta = read_ftc(path)
    if meta.get("kind") != "audspec" or arr.ndim != 2:
        raise DataError(f"{path}: not an auditory spectrogram file")
    if provenance is not None and meta.get("provenance") != provenance:
        raise ProvenanceError(f"{path}: spectrogram was computed under a different configuration")
    cfs = meta.get("center_freqs")
    return AuditorySpectrogram(arr, float(meta["frame_period_ms"]) / 1000,
                               np.array(_split(cfs)) if cfs else None)


def basis_to_bytes(basis):
    parts = []
    for name, u, lam in zip(basis.mode_names, basis.factors, basis.eigenvalues):
        common = {"section": name, "frame_count": basis.frame_count,
                  "config_hash": basis.config_hash}
        parts.append(ftc_to_bytes(u, dict(common, field="U"), np.float64))
        parts.append(ftc_to_bytes(lam, dict(common, field="eigenvalues"), np.float64))
    return b"".join(parts)


def basis_from_bytes(data):
    found, pos = {}, 0
    meta = {}
    while pos < len(data):
        arr, meta, pos = ftc_from_bytes(data, pos)
        found[(meta.get("section"), meta.get("field"))] = arr
    try:
        factors = tuple(found[(m, "U")] for m in MODE_NAMES)
        eig = tuple(found[(m, "eigenvalues")] for m in MODE_NAMES)
    except KeyError as exc:
        raise DataError(f"basis file lacks section {exc.args[0]}") from None
    return HosvdBasis(factors, eig, int(meta.get("frame_count", 0)), meta.get("config_hash", ""))


def save_basis(path, basis):
    with open(path, "wb") as fh:
        fh.write(basis_to_bytes(basis))


def load_basis(path):
    with open(path, "rb") as fh:
        return basis_from_bytes(fh.read())


def write_energy_csv(path, basis):
    """One row per eigenvalue of every mode; ``index`` counts from 1."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENERGY_HEADER)
        for m, name in enumerate(basis.mode_names):
            spec = pc_energy(basis, m)
            for j, (lam, a) in enumerate(zip(basis.eigenvalues[m], spec.alpha)):
                w.writerow([name, j + 1, repr(float(lam)), repr(float(a))])


def read_energy_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ENERGY_HEADER:
        raise DataError(f"{path}: energy report header mismatch")
    return [(r[0], int(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]
