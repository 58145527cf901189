import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from cortinv.cortical import CorticalSequence
from cortinv.errors import DataError, ProvenanceError
from cortinv.frontend import AuditorySpectrogram
from cortinv.ftc import (
    ENERGY_HEADER, basis_from_bytes, basis_to_bytes, ftc_from_bytes, ftc_to_bytes, load_audspec,
    load_basis, load_cortical, read_energy_csv, read_ftc, save_audspec, save_basis, save_cortical,
    write_energy_csv, write_ftc,
)
from cortinv.tensor_reduce import accumulate_mode_covariances, fit_hosvd


@settings(max_examples=40, deadline=None)
@given(arrays(st.sampled_from([np.float32, np.float64]), array_shapes(min_dims=0, max_dims=4,
                                                                     min_side=0, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)),
       st.dictionaries(st.text("abcxyz_", min_size=1, max_size=5), st.text("0123 ,.abc", max_size=8),
                       max_size=3))
def test_round_trip(array, meta):
    arr, back_meta, end = ftc_from_bytes(ftc_to_bytes(array, meta))
    assert arr.dtype == array.dtype and arr.shape == array.shape
    np.testing.assert_array_equal(arr, array)
    assert back_meta == meta
    assert end == len(ftc_to_bytes(array, meta))


def test_header_layout():
    b = ftc_to_bytes(np.zeros((2, 3), np.float32), {"k": "v"})
    assert b[:4] == b"FTC1"
    assert b[4:10] == bytes([1, 0, 1, 0, 2, 0])
    assert b[10:26] == (2).to_bytes(8, "little") + (3).to_bytes(8, "little")
    assert b[26:30] == (4).to_bytes(4, "little") and b[30:34] == b"k=v\n"
    assert len(b) == 34 + 24


def test_bad_records():
    good = ftc_to_bytes(np.ones(4), {})
    with pytest.raises(DataError):
        ftc_from_bytes(b"XXXX" + good[4:])
    with pytest.raises(DataError):
        ftc_from_bytes(good[:-1])
    with pytest.raises(DataError):
        ftc_from_bytes(good[:12])
    with pytest.raises(DataError):
        ftc_from_bytes(good[:4] + (2).to_bytes(2, "little") + good[6:])
    with pytest.raises(DataError):
        ftc_from_bytes(good[:6] + (9).to_bytes(2, "little") + good[8:])
    with pytest.raises(ValueError):
        ftc_to_bytes(np.ones(2), {"a=b": "c"})
    with pytest.raises(ValueError):
        ftc_to_bytes(np.ones(2, dtype=np.int16), dtype=np.int16)


def test_trailing_bytes_rejected(tmp_path):
    p = tmp_path / "x.ftc"
    write_ftc(p, np.ones(3))
    read_ftc(p)
    p.write_bytes(p.read_bytes() + b"\0")
    with pytest.raises(DataError):
        read_ftc(p)


def test_cortical_file_round_trip(tmp_path):
    frames = np.random.default_rng(0).random((7, 4, 10, 128)).astype(np.float32)
    cfs = 180 * 2 ** (np.arange(128) / 24)
    seq = CorticalSequence(frames, (1.0, 2.0, 4.0, 8.0),
                           (2.0, 4.0, 8.0, 16.0, 32.0, -2.0, -4.0, -8.0, -16.0, -32.0), cfs)
    p = tmp_path / "c.ftc"
    save_cortical(p, seq, "abc")
    back = load_cortical(p, "abc")
    np.testing.assert_array_equal(back.frames, frames)
    assert back.scales == seq.scales and back.signed_rates == seq.signed_rates
    np.testing.assert_array_equal(back.center_freqs, cfs)
    assert back.frame_period == pytest.approx(0.01)
    with pytest.raises(ProvenanceError):
        load_cortical(p, "other")
    with pytest.raises(DataError):
        load_audspec(p)


def test_audspec_file_round_trip(tmp_path):
    sp = AuditorySpectrogram(np.random.default_rng(1).random((9, 128)))
    p = tmp_path / "a.ftc"
    save_audspec(p, sp, "h")
    back = load_audspec(p, "h")
    np.testing.assert_allclose(back.frames, sp.frames, rtol=1e-7)
    with pytest.raises(ProvenanceError):
        load_audspec(p, "x")
    with pytest.raises(DataError):
        load_cortical(p)


@pytest.fixture(scope="module")
def basis():
    frames = np.abs(np.random.default_rng(2).standard_normal((30, 4, 10, 128)))
    return fit_hosvd(accumulate_mode_covariances(frames), "cfg123")


def test_basis_round_trip(tmp_path, basis):
    p = tmp_path / "b.ftc"
    save_basis(p, basis)
    back = load_basis(p)
    assert back.frame_count == 30 and back.config_hash == "cfg123"
    for a, b in zip(basis.factors + basis.eigenvalues, back.factors + back.eigenvalues):
        assert a.tobytes() == b.tobytes()
    assert basis_to_bytes(back) == basis_to_bytes(basis)


def test_basis_missing_section(basis):
    data = basis_to_bytes(basis)
    _, _, end = ftc_from_bytes(data)
    with pytest.raises(DataError):
        basis_from_bytes(data[end:])


def test_energy_csv(tmp_path, basis):
    p = tmp_path / "e.csv"
    write_energy_csv(p, basis)
    rows = read_energy_csv(p)
    assert p.read_text().splitlines()[0] == ",".join(ENERGY_HEADER)
    assert len(rows) == 4 + 10 + 128
    for mode, n in (("scale", 4), ("rate", 10), ("frequency", 128)):
        sub = [r for r in rows if r[0] == mode]
        assert [r[1] for r in sub] == list(range(1, n + 1))
        assert sum(r[3] for r in sub) == pytest.approx(1.0, abs=1e-12)
