import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppgmorph.waveform_io import (PpgRecord, WaveformError, load_record, read_store, resample,
                                  resample_to_length, synth_ppg, write_record, write_store)


def test_csv_ten_values(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("\n".join(str(v) for v in range(10)))
    rec = load_record(p, "csv", 125)
    assert rec.samples.size == 10 and rec.sampling_rate_hz == 125


def test_csv_rate_from_header_and_explicit_override(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("# fs=250\n1\n2\n3\n")
    assert load_record(p).sampling_rate_hz == 250
    assert load_record(p, sampling_rate_hz=100).sampling_rate_hz == 100


def test_csv_nan_rejected(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1\nNaN\n3\n")
    with pytest.raises(WaveformError, match="non-finite sample"):
        load_record(p, "csv", 125)


def test_missing_rate_and_malformed(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1\n2\n")
    with pytest.raises(WaveformError, match="missing sampling rate"):
        load_record(p)
    p.write_text("1\nabc\n")
    with pytest.raises(WaveformError, match="malformed"):
        load_record(p, sampling_rate_hz=1)
    with pytest.raises(WaveformError, match="no such file"):
        load_record(tmp_path / "nope.csv", sampling_rate_hz=1)


def test_binary_duration(tmp_path):
    p = tmp_path / "r.bin"
    p.write_bytes(np.arange(5000, dtype="<f4").tobytes())
    rec = load_record(p, "binary", 500)
    assert rec.duration_s == 10.0


def test_record_roundtrip(tmp_path):
    rec = PpgRecord("abc", 125.0, np.random.default_rng(0).normal(size=50))
    write_record(rec, tmp_path / "abc.csv")
    back = load_record(tmp_path / "abc.csv")
    assert back.subject_id == "abc" and back.sampling_rate_hz == 125.0
    np.testing.assert_array_equal(back.samples, rec.samples)


def test_record_invariants():
    with pytest.raises(WaveformError):
        PpgRecord("a", 0.0, [1.0])
    with pytest.raises(WaveformError):
        PpgRecord("a", 1.0, [])


def test_resample_500_to_125_length():
    assert resample(np.random.default_rng(0).normal(size=5000), 500, 125).size == 1250


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50), st.sampled_from([1.0, 125.0, 500.0]))
def test_resample_identity(values, fs):
    x = np.asarray(values)
    np.testing.assert_array_equal(resample(x, fs, fs), x)


def test_resample_sine_fft_oracle():
    # 10 s of a unit 1 Hz sine: the FFT peak sits in bin 10 with amplitude n/2
    t = np.arange(5000) / 500
    y = resample(np.sin(2 * np.pi * t), 500, 125)
    spec = np.abs(np.fft.rfft(y))
    assert np.argmax(spec) == 10
    assert abs(spec[10] / (y.size / 2) - 1) < 0.01


def test_resample_to_length_exact():
    x = np.sin(np.linspace(0, 6, 937))
    assert resample_to_length(x, 1250).size == 1250


def test_synth_60bpm_markers():
    rec, mk = synth_ppg(60, 125, 10, 0.5, 0.0, seed=0)
    assert rec.samples.size == 1250
    assert mk.systolic_peaks.size == 10
    np.testing.assert_array_equal(np.diff(mk.systolic_peaks), 125)


def test_synth_no_notch_and_determinism():
    _, mk = synth_ppg(60, 125, 10, 0.0, 0.1, seed=3)
    assert mk.notches is None
    a, _ = synth_ppg(75, 125, 10, 0.4, 0.2, seed=9)
    b, _ = synth_ppg(75, 125, 10, 0.4, 0.2, seed=9)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_synth_validation():
    with pytest.raises(WaveformError):
        synth_ppg(10)
    with pytest.raises(WaveformError):
        synth_ppg(60, notch_depth=1.5)


def test_store_roundtrip(tmp_path):
    segs = np.random.default_rng(1).normal(size=(3, 1250)).astype(np.float32)
    meta = [{"subject_id": f"s{i}", "index": i, "source_tag": "t"} for i in range(3)]
    write_store(segs, meta, tmp_path / "s.ppgs")
    back, m, fs = read_store(tmp_path / "s.ppgs")
    assert back.tobytes() == segs.tobytes() and fs == 125.0
    assert [r["subject_id"] for r in m] == ["s0", "s1", "s2"]


def test_store_layout(tmp_path):
    # header <4sHfII> then count*len little-endian f32
    write_store([np.array([1.0, 2.0])], [{"subject_id": "a", "index": 0}], tmp_path / "x.ppgs", 125.0)
    raw = (tmp_path / "x.ppgs").read_bytes()
    assert raw[:4] == b"PPGS"
    assert struct.unpack_from("<HfII", raw, 4) == (1, 125.0, 2, 1)
    assert len(raw) == 18 + 8
    assert np.frombuffer(raw[18:], "<f4").tolist() == [1.0, 2.0]


def test_store_truncated_and_bad_magic(tmp_path):
    p = tmp_path / "s.ppgs"
    write_store(np.zeros((2, 10)), [{"subject_id": "a", "index": i} for i in range(2)], p)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(WaveformError, match="truncated payload"):
        read_store(p)
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(WaveformError, match="header mismatch"):
        read_store(p)


def test_empty_store(tmp_path):
    write_store([], [], tmp_path / "e.ppgs")
    segs, meta, _ = read_store(tmp_path / "e.ppgs")
    assert segs.shape[0] == 0 and meta == []


def test_sidecar_count_mismatch(tmp_path):
    p = tmp_path / "s.ppgs"
    write_store(np.zeros((2, 4)), [{"subject_id": "a", "index": i} for i in range(2)], p)
    (tmp_path / "s.ppgs.meta").write_text('{"subject_id": "a", "index": 0}\n')
    with pytest.raises(WaveformError, match="sidecar"):
        read_store(p)
