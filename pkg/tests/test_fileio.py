import json
import wave

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pairseld.calibration import CalibrationTable, DoaGrid
from pairseld.doa import DoaOutput, TdoaTensor
from pairseld.fileio import (
    FormatError,
    LabelRecord,
    rasterize_labels,
    read_calibration,
    read_labels,
    read_results,
    read_tensor,
    read_wav,
    write_calibration,
    write_labels,
    write_results,
    write_tensor,
    write_wav,
)
from pairseld.sed import ScoreTensor

tmp_settings = settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


def write_pcm(path, frames: bytes, channels, width, rate=48000):
    # the stdlib writer is the independent encoder here
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(frames)


# --- audio -------------------------------------------------------------------


def test_float_zeros(tmp_path):
    write_wav(tmp_path / "z.wav", np.zeros((4, 100)), 48000)
    x, fs = read_wav(tmp_path / "z.wav")
    assert fs == 48000 and x.shape == (4, 100) and not x.any()


def test_float_round_trip_bit_identical(tmp_path, rng):
    sig = rng.uniform(-1, 1, (3, 777)).astype(np.float32)
    write_wav(tmp_path / "r.wav", sig, 44100)
    x, fs = read_wav(tmp_path / "r.wav")
    assert fs == 44100
    assert np.array_equal(x, sig)


def test_pcm16_scaling(tmp_path):
    write_pcm(tmp_path / "a.wav", np.array([[32767, -32768], [0, 1]], "<i2").tobytes(), 2, 2)
    x, _ = read_wav(tmp_path / "a.wav")
    assert x[0, 0] == pytest.approx(32767 / 32768, abs=1e-9)
    assert x[1, 0] == -1.0
    assert x[1, 1] == pytest.approx(1 / 32768, abs=1e-12)


def test_pcm24_scaling(tmp_path):
    vals = [8388607, -8388608, 1, 0]
    raw = b"".join(v.to_bytes(3, "little", signed=True) for v in vals)
    write_pcm(tmp_path / "b.wav", raw, 1, 3)
    x, _ = read_wav(tmp_path / "b.wav")
    np.testing.assert_allclose(x[0], np.array(vals) / 8388608, atol=1e-12)


def test_malformed_wav(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00\x00\x00JUNKJUNK")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "bad.wav")


# --- labels / rasterization ---------------------------------------------------


def test_label_round_trip(tmp_path):
    recs = [LabelRecord("dog", 0.5, 1.25, -180.0, -40.0), LabelRecord("bell", 1.0, 2.0, 170.0, 30.0)]
    write_labels(recs, tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "class,onset_sec,offset_sec,azimuth_deg,elevation_deg"
    assert read_labels(tmp_path / "l.csv") == recs


def test_label_missing_column(tmp_path):
    (tmp_path / "l.csv").write_text("class,onset_sec\nx,1\n")
    with pytest.raises(FormatError, match="offset_sec"):
        read_labels(tmp_path / "l.csv")


def test_rasterize_short_record_spans_two_segments(stft, grid):
    tl, doas = rasterize_labels([LabelRecord("0", 0.95, 1.05, 0, 0)], stft, grid, 150, ["0"])
    assert tl.segment_activity[:, 0].tolist() == [1, 1, 0]
    assert np.flatnonzero(tl.frame_activity[:, 0]).tolist() == [47, 48, 49, 50, 51]
    assert len(doas) == 5


def test_rasterize_segment_two(stft, grid):
    # frame centers of segment 2 run from 2.0213 s to 3.0013 s
    tl, _ = rasterize_labels([LabelRecord("0", 2.01, 3.01, 0, 0)], stft, grid, 250, ["0"])
    assert tl.segment_activity[:, 0].tolist() == [0, 0, 1, 0, 0]


def test_rasterize_adjacent_records(stft, grid):
    recs = [LabelRecord("0", 0.5, 1.0, 0, 0), LabelRecord("0", 1.0, 1.5, 90, 10)]
    tl, doas = rasterize_labels(recs, stft, grid, 100, ["0"])
    centers = stft.frame_center_sec(doas.frame)
    assert np.all(doas.azimuth[centers < 1.0] == 0)
    assert np.all(doas.azimuth[centers >= 1.0] == 90)
    assert doas.counts().max() == 1


def test_rasterize_rejects_overlap_and_off_grid(stft, grid):
    with pytest.raises(ValueError, match="overlapping"):
        rasterize_labels([LabelRecord("0", 0.5, 1.1, 0, 0), LabelRecord("0", 1.0, 1.5, 0, 0)], stft, grid, 100, ["0"])
    with pytest.raises(ValueError):
        rasterize_labels([LabelRecord("0", 0.5, 1.0, 5, 0)], stft, grid, 100, ["0"])
    with pytest.raises(ValueError, match="unknown class"):
        rasterize_labels([LabelRecord("cat", 0.5, 1.0, 0, 0)], stft, grid, 100, ["0"])
    tl, _ = rasterize_labels([LabelRecord("0", 0.5, 1.0, 5, 0)], stft, grid, 100, ["0"], grid_constrained=False)
    assert tl.frame_activity.any()


# --- tensors ------------------------------------------------------------------


@tmp_settings
@given(arrays(np.float32, st.tuples(st.integers(0, 20), st.just(6), st.integers(1, 3)), elements=st.floats(0, 1, width=32)))
def test_score_tensor_round_trip(tmp_path, data):
    write_tensor(tmp_path / "s", ScoreTensor(data), tau_max=20.0)
    back = read_tensor(tmp_path / "s.json")
    assert isinstance(back, ScoreTensor)
    assert np.array_equal(back.scores, data.astype(float))


def test_tdoa_tensor_keeps_nan_mask(tmp_path, rng):
    t = rng.uniform(-20, 20, (7, 6, 2)).astype(np.float32)
    t[2, :, 1] = np.nan
    write_tensor(tmp_path / "t", TdoaTensor(t), tau_max=20.0)
    header = json.loads((tmp_path / "t.json").read_text())
    assert header["kind"] == "tdoas" and header["dims"] == [7, 6, 2] and header["dtype"] == "f32le"
    assert header["pair_order"][0] == [0, 1] and header["version"] == 1
    back = read_tensor(tmp_path / "t")
    np.testing.assert_array_equal(back.tdoas, t.astype(float))
    assert back.valid.tolist()[2] == [True, False]


def test_truncated_tensor_names_field(tmp_path):
    write_tensor(tmp_path / "s", ScoreTensor(np.zeros((10, 6, 1))))
    body = tmp_path / "s.f32"
    body.write_bytes(body.read_bytes()[:-4])
    with pytest.raises(FormatError, match="dims"):
        read_tensor(tmp_path / "s")


def test_tensor_header_mismatch(tmp_path):
    write_tensor(tmp_path / "s", ScoreTensor(np.zeros((2, 6, 1))))
    h = json.loads((tmp_path / "s.json").read_text())
    h["pair_order"] = h["pair_order"][:3]
    (tmp_path / "s.json").write_text(json.dumps(h))
    with pytest.raises(FormatError, match="pair_order"):
        read_tensor(tmp_path / "s")


# --- calibration ----------------------------------------------------------------


def test_calibration_round_trip(tmp_path, table):
    write_calibration(table, tmp_path / "c.json")
    back = read_calibration(tmp_path / "c.json")
    assert np.array_equal(back.tdoa, table.tdoa)
    assert back.grid == table.grid and back.provenance == "analytic"
    assert back.num_mics == 4 and back.tau_max == 20.0


def test_calibration_bad_shape(tmp_path, table):
    write_calibration(table, tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["tdoa"] = doc["tdoa"][:-1]
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="tdoa"):
        read_calibration(tmp_path / "c.json")


def test_fitted_calibration_keeps_coefficients(tmp_path):
    grid = DoaGrid(azimuths=(0, 10), elevations=(0,))
    coef = np.arange(6.0).reshape(1, 1, 6)
    t = CalibrationTable(np.array([[1.0], [2.0]]), grid, 2, 20.0, order=5, coefficients=coef)
    write_calibration(t, tmp_path / "c.json")
    back = read_calibration(tmp_path / "c.json")
    assert back.order == 5
    np.testing.assert_array_equal(back.coefficients, coef)


# --- results ----------------------------------------------------------------


def test_empty_results_header_only(tmp_path):
    write_results(DoaOutput(10), tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == "frame_index,class,azimuth_deg,elevation_deg\n"
    assert len(read_results(tmp_path / "r.csv", 10)) == 0


def test_results_row_format(tmp_path, grid):
    az, el = grid.lookup(0)
    write_results(DoaOutput(5, [3], [1], [az], [el]), tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[1] == "3,1,-180,-40"


@tmp_settings
@given(st.integers(0, 2**31 - 1))
def test_results_round_trip(tmp_path, seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 30))
    keys = sorted({(int(t), int(c)) for t, c in zip(rng.integers(0, T, 20), rng.integers(0, 3, 20))})
    frames, classes = zip(*keys)
    out = DoaOutput(T, frames, classes, rng.uniform(-180, 180, len(keys)), rng.uniform(-40, 40, len(keys)))
    write_results(out, tmp_path / "r.csv")
    assert read_results(tmp_path / "r.csv", T) == out


def test_results_bad_header(tmp_path):
    (tmp_path / "r.csv").write_text("frame,class,az,el\n")
    with pytest.raises(FormatError, match="header"):
        read_results(tmp_path / "r.csv")
    (tmp_path / "r.csv").write_text("frame_index,class,azimuth_deg,elevation_deg\n12,0,0,0\n")
    with pytest.raises(FormatError, match="frame_index"):
        read_results(tmp_path / "r.csv", 5)
