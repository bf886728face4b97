"""On-disk formats: WAV audio, label/result CSVs, tensor files, calibration tables.

Every JSON document carries ``"version": 1``. CSVs are UTF-8, comma
separated, ``\\n`` line endings.

Tensor files are a JSON header plus a raw little-endian float32 body laid
out row-major as ``[frame][pair][class]``::

    scores.json  {"version": 1, "kind": "scores", "dims": [T, P, C],
                  "pair_order": [[0, 1], ...], "tau_max": 20.0,
                  "dtype": "f32le", "body": "scores.f32"}
    scores.f32   4 * T * P * C bytes

For ``kind == "tdoas"`` a NaN marks an invalid (frame, class) entry.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .calibration import CalibrationTable, DoaGrid
from .doa import DoaOutput, TdoaTensor
from .dsp import StftConfig, pair_list
from .sed import EventTimeline, ScoreTensor

FORMAT_VERSION = 1

__all__ = [
    "FormatError",
    "LabelRecord",
    "read_wav",
    "write_wav",
    "read_labels",
    "write_labels",
    "rasterize_labels",
    "write_tensor",
    "read_tensor",
    "write_calibration",
    "read_calibration",
    "write_results",
    "read_results",
    "write_timeline",
    "write_thresholds",
    "read_thresholds",
]


class FormatError(ValueError):
    """A file does not match its declared format."""


# --- audio -----------------------------------------------------------------


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read PCM16/24/32 or float32 WAV as ``(channels, samples)`` floats in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        # 24-bit PCM is returned left-justified in int32
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(float) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data
    else:
        raise FormatError(f"{path}: unsupported sample type {data.dtype}")
    x = np.atleast_2d(np.asarray(x).T) if data.ndim == 2 else np.asarray(x)[None, :]
    return x, int(rate)


def write_wav(path, signals, sample_rate) -> None:
    """Write ``(channels, samples)`` as 32-bit float WAV."""
    data = np.asarray(signals, dtype=np.float32)
    wavfile.write(path, int(round(sample_rate)), np.ascontiguousarray(data.T))


# --- labels ----------------------------------------------------------------

LABEL_FIELDS = ["class", "onset_sec", "offset_sec", "azimuth_deg", "elevation_deg"]


@dataclass(frozen=True)
class LabelRecord:
    cls: str
    onset: float
    offset: float
    azimuth: float
    elevation: float

    def __post_init__(self):
        if not self.onset < self.offset:
            raise ValueError(f"label {self.cls!r}: onset {self.onset} must precede offset {self.offset}")


def _fmt_num(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def read_labels(path) -> list[LabelRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(LABEL_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"{path}: missing label columns {sorted(missing)}")
        out = []
        for line, row in enumerate(reader, start=2):
            try:
                out.append(
                    LabelRecord(
                        row["class"],
                        float(row["onset_sec"]),
                        float(row["offset_sec"]),
                        float(row["azimuth_deg"]),
                        float(row["elevation_deg"]),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"{path}:{line}: {exc}") from exc
    return out


def write_labels(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_FIELDS)
        for r in records:
            w.writerow([r.cls, _fmt_num(r.onset), _fmt_num(r.offset), _fmt_num(r.azimuth), _fmt_num(r.elevation)])


def rasterize_labels(
    records,
    stft: StftConfig,
    grid: DoaGrid,
    num_frames: int,
    class_names,
    segment_length: int = 50,
    grid_constrained: bool = True,
) -> tuple[EventTimeline, DoaOutput]:
    """Reference frame activity and per-frame DOA sets from label records.

    Frame ``t`` is active for a record when its center time
    ``(t * hop + N / 2) / fs`` falls in ``[onset, offset)``.
    """
    class_index = {name: c for c, name in enumerate(class_names)}
    by_class: dict[int, list] = {}
    for r in records:
        if r.cls not in class_index:
            raise ValueError(f"unknown class {r.cls!r}; known: {list(class_names)}")
        if grid_constrained:
            grid.index(r.azimuth, r.elevation)
        by_class.setdefault(class_index[r.cls], []).append(r)
    for c, recs in by_class.items():
        recs.sort(key=lambda r: r.onset)
        for a, b in zip(recs, recs[1:]):
            if b.onset < a.offset:
                raise ValueError(
                    f"overlapping records for class {class_names[c]!r}: "
                    f"[{a.onset}, {a.offset}) and [{b.onset}, {b.offset})"
                )

    centers = stft.frame_center_sec(np.arange(num_frames))
    activity = np.zeros((num_frames, len(class_names)), dtype=np.int8)
    frames, classes, az, el = [], [], [], []
    for c, recs in by_class.items():
        for r in recs:
            hit = np.flatnonzero((centers >= r.onset) & (centers < r.offset))
            activity[hit, c] = 1
            frames.append(hit)
            classes.append(np.full(hit.size, c))
            az.append(np.full(hit.size, r.azimuth))
            el.append(np.full(hit.size, r.elevation))
    if frames:
        doas = DoaOutput(num_frames, np.concatenate(frames), np.concatenate(classes), np.concatenate(az), np.concatenate(el))
    else:
        doas = DoaOutput(num_frames)
    return EventTimeline(activity, segment_length), doas


# --- tensors ---------------------------------------------------------------


def _tensor_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".f32"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".f32")


def write_tensor(path, tensor, tau_max: float | None = None, num_mics: int | None = None) -> Path:
    """Write a :class:`ScoreTensor` or :class:`TdoaTensor`; returns the header path."""
    if isinstance(tensor, ScoreTensor):
        kind, data = "scores", tensor.scores
    elif isinstance(tensor, TdoaTensor):
        kind, data = "tdoas", tensor.tdoas
    else:
        raise TypeError(f"cannot write {type(tensor).__name__} as a tensor file")
    T, P, C = data.shape
    if num_mics is None:
        num_mics = int(round((1 + np.sqrt(1 + 8 * P)) / 2))
    header_path, body_path = _tensor_paths(path)
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "dims": [T, P, C],
        "pair_order": [list(p) for p in pair_list(num_mics)],
        "tau_max": tau_max,
        "dtype": "f32le",
        "body": body_path.name,
    }
    np.ascontiguousarray(data, dtype="<f4").tofile(body_path)
    header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return header_path


def read_tensor(path):
    header_path, _ = _tensor_paths(path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{header_path}: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{header_path}: field 'version' must be {FORMAT_VERSION}, got {header.get('version')!r}")
    if header.get("dtype") != "f32le":
        raise FormatError(f"{header_path}: field 'dtype' must be 'f32le', got {header.get('dtype')!r}")
    kind = header.get("kind")
    if kind not in ("scores", "tdoas"):
        raise FormatError(f"{header_path}: field 'kind' must be 'scores' or 'tdoas', got {kind!r}")
    dims = header.get("dims")
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) and d >= 0 for d in dims)):
        raise FormatError(f"{header_path}: field 'dims' must be three non-negative integers, got {dims!r}")
    pairs = header.get("pair_order")
    if not isinstance(pairs, list) or len(pairs) != dims[1]:
        raise FormatError(f"{header_path}: field 'pair_order' lists {len(pairs or [])} pairs, dims say {dims[1]}")
    body_path = header_path.parent / header.get("body", header_path.with_suffix(".f32").name)
    raw = np.fromfile(body_path, dtype="<f4")
    if raw.size != dims[0] * dims[1] * dims[2]:
        raise FormatError(
            f"{body_path}: body holds {raw.size} values but field 'dims' {dims} needs {dims[0] * dims[1] * dims[2]}"
        )
    data = raw.reshape(dims).astype(float)
    try:
        return ScoreTensor(data) if kind == "scores" else TdoaTensor(data)
    except ValueError as exc:
        raise FormatError(f"{body_path}: {exc}") from exc


# --- calibration -----------------------------------------------------------


def write_calibration(table: CalibrationTable, path) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "M": table.num_mics,
        "pair_order": [list(p) for p in table.pair_order],
        "grid": table.grid.to_dict(),
        "tau_max": table.tau_max,
        "G": table.num_lattice_points,
        "provenance": table.provenance,
        "tdoa": table.tdoa.tolist(),
        "fit": None,
    }
    if table.coefficients is not None:
        doc["fit"] = {
            "order": table.order,
            "basis": "chebyshev",
            "azimuth_scale_deg": 540.0,
            "coefficients": table.coefficients.tolist(),
            "first_fit_coefficients": None
            if table.first_fit_coefficients is None
            else table.first_fit_coefficients.tolist(),
            "rms": None if table.fit_rms is None else table.fit_rms.tolist(),
        }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def read_calibration(path) -> CalibrationTable:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    for key in ("version", "M", "pair_order", "grid", "tau_max", "G", "provenance", "tdoa"):
        if key not in doc:
            raise FormatError(f"{path}: missing field {key!r}")
    if doc["version"] != FORMAT_VERSION:
        raise FormatError(f"{path}: field 'version' must be {FORMAT_VERSION}, got {doc['version']!r}")
    M = doc["M"]
    if [tuple(p) for p in doc["pair_order"]] != pair_list(M):
        raise FormatError(f"{path}: field 'pair_order' is not the canonical order for M={M}")
    grid = DoaGrid.from_dict(doc["grid"])
    tdoa = np.asarray(doc["tdoa"], dtype=float)
    if tdoa.shape != (grid.size, M * (M - 1) // 2):
        raise FormatError(f"{path}: field 'tdoa' has shape {tdoa.shape}, expected {(grid.size, M * (M - 1) // 2)}")
    fit = doc.get("fit") or {}

    def arr(key):
        return None if fit.get(key) is None else np.asarray(fit[key], dtype=float)

    try:
        return CalibrationTable(
            tdoa,
            grid,
            M,
            float(doc["tau_max"]),
            int(doc["G"]),
            doc["provenance"],
            fit.get("order"),
            arr("coefficients"),
            arr("first_fit_coefficients"),
            None,
            arr("rms"),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# --- results ---------------------------------------------------------------

RESULT_FIELDS = ["frame_index", "class", "azimuth_deg", "elevation_deg"]


def write_results(doas: DoaOutput, path) -> None:
    """One row per estimated (frame, class), ordered by frame then class."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for t, c, az, el in zip(doas.frame, doas.cls, doas.azimuth, doas.elevation):
            w.writerow([int(t), int(c), _fmt_num(az), _fmt_num(el)])


def read_results(path, num_frames: int | None = None) -> DoaOutput:
    """Inverse of :func:`write_results`.

    ``num_frames`` defaults to one past the last frame listed.
    """
    cols = {k: [] for k in RESULT_FIELDS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_FIELDS:
            raise FormatError(f"{path}: header must be {','.join(RESULT_FIELDS)}, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                cols["frame_index"].append(int(row["frame_index"]))
                cols["class"].append(int(row["class"]))
                cols["azimuth_deg"].append(float(row["azimuth_deg"]))
                cols["elevation_deg"].append(float(row["elevation_deg"]))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line}: {exc}") from exc
    frames = cols["frame_index"]
    if num_frames is None:
        num_frames = max(frames) + 1 if frames else 0
    elif frames and max(frames) >= num_frames:
        raise FormatError(f"{path}: frame_index {max(frames)} outside [0, {num_frames})")
    return DoaOutput(num_frames, frames, cols["class"], cols["azimuth_deg"], cols["elevation_deg"])


def write_timeline(timeline: EventTimeline, path) -> None:
    """Frame activity as CSV: ``frame_index`` then one ``active_<c>`` column per class."""
    act = timeline.frame_activity
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index"] + [f"active_{c}" for c in range(act.shape[1])])
        for t, row in enumerate(act):
            w.writerow([t] + [int(v) for v in row])


def write_thresholds(thresholds, path, extra: dict | None = None) -> None:
    doc = {"version": FORMAT_VERSION, "thresholds": [float(x) for x in thresholds]}
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_thresholds(path) -> np.ndarray:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if "thresholds" not in doc:
        raise FormatError(f"{path}: missing field 'thresholds'")
    return np.asarray(doc["thresholds"], dtype=float)


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
