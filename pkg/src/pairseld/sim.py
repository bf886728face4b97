"""Synthetic free-field scenes with scripted events at grid DOAs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import ArrayGeometry, DoaGrid, predict_freefield, unit_vector
from .doa import DoaOutput, TdoaTensor
from .dsp import StftConfig
from .fileio import LabelRecord, rasterize_labels
from .sed import EventTimeline, ScoreTensor

__all__ = ["ScriptEvent", "SceneScript", "SimulatedScene", "synthesize", "fractional_delay"]

SOURCE_KINDS = ("white_noise", "tone", "impulse_train")


@dataclass(frozen=True)
class ScriptEvent:
    cls: int
    onset: float
    offset: float
    doa_index: int
    source: str = "white_noise"
    snr_db: float = 20.0
    frequency_hz: float = 1000.0
    period_sec: float = 0.05


@dataclass(frozen=True)
class SceneScript:
    """A scene description.

    ``noise_rms`` sets the per-channel white noise level; each event is
    rendered with RMS ``noise_rms * 10 ** (snr_db / 20)``. With
    ``noise_rms == 0`` events are clean and their SNR only sets their level
    relative to a unit reference.
    """

    duration: float
    events: tuple = ()
    num_classes: int = 1
    seed: int = 0
    noise_rms: float = 0.01
    class_names: tuple | None = None
    grid: DoaGrid = field(default_factory=DoaGrid)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.noise_rms < 0:
            raise ValueError("noise_rms must be non-negative")
        names = self.class_names or tuple(str(c) for c in range(self.num_classes))
        if len(names) != self.num_classes:
            raise ValueError(f"{len(names)} class names for {self.num_classes} classes")
        object.__setattr__(self, "class_names", tuple(names))
        for n, ev in enumerate(self.events):
            where = f"event {n} (class {ev.cls}, {ev.onset}-{ev.offset} s)"
            if not 0 <= ev.cls < self.num_classes:
                raise ValueError(f"{where}: class index outside [0, {self.num_classes})")
            if not 0 <= ev.onset < ev.offset <= self.duration:
                raise ValueError(f"{where}: need 0 <= onset < offset <= duration")
            if not 0 <= ev.doa_index < self.grid.size:
                raise ValueError(f"{where}: DOA index {ev.doa_index} not on the grid")
            if ev.source not in SOURCE_KINDS:
                raise ValueError(f"{where}: unknown source kind {ev.source!r}")
        for c in range(self.num_classes):
            spans = sorted((e.onset, e.offset) for e in self.events if e.cls == c)
            for (_, off), (on, _) in zip(spans, spans[1:]):
                if on < off:
                    raise ValueError(f"overlapping events for class {c} at {on} s")

    @classmethod
    def from_dict(cls, d: dict, grid: DoaGrid | None = None, seed: int | None = None) -> "SceneScript":
        grid = grid or DoaGrid()
        names = d.get("class_names")
        num_classes = int(d.get("num_classes", len(names) if names else 1))
        events = []
        for n, e in enumerate(d.get("events", [])):
            label = e.get("class", 0)
            if isinstance(label, str) and names and label in names:
                c = names.index(label)
            else:
                c = int(label)
            if "doa_index" in e:
                q = int(e["doa_index"])
            else:
                try:
                    q = grid.index(e["azimuth_deg"], e["elevation_deg"])
                except (KeyError, ValueError) as exc:
                    raise ValueError(f"event {n}: {exc}") from None
            events.append(
                ScriptEvent(
                    c,
                    float(e["onset_sec"]),
                    float(e["offset_sec"]),
                    q,
                    e.get("source", "white_noise"),
                    float(e.get("snr_db", 20.0)),
                    float(e.get("frequency_hz", 1000.0)),
                    float(e.get("period_sec", 0.05)),
                )
            )
        return cls(
            float(d["duration_sec"]),
            tuple(events),
            num_classes,
            int(d.get("seed", 0) if seed is None else seed),
            float(d.get("noise_rms", 0.01)),
            tuple(names) if names else None,
            grid,
        )

    @classmethod
    def load(cls, path, grid: DoaGrid | None = None, seed: int | None = None) -> "SceneScript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), grid, seed)

    def noise_rms_or_unit(self) -> float:
        """Reference level that event SNRs are measured against."""
        return self.noise_rms if self.noise_rms > 0 else 1.0

    def label_records(self) -> list[LabelRecord]:
        out = []
        for ev in self.events:
            az, el = self.grid.lookup(ev.doa_index)
            out.append(LabelRecord(self.class_names[ev.cls], ev.onset, ev.offset, az, el))
        return out


@dataclass
class SimulatedScene:
    signals: np.ndarray
    sample_rate: float
    timeline: EventTimeline
    reference_doas: DoaOutput
    oracle_scores: ScoreTensor
    oracle_tdoas: TdoaTensor
    labels: list
    event_signals: list = field(default_factory=list, repr=False)


def fractional_delay(x: np.ndarray, delay: float) -> np.ndarray:
    """Circularly delay ``x`` by ``delay`` samples with a linear phase ramp.

    An odd transform length is used so there is no Nyquist bin and the
    shift is exactly energy preserving.
    """
    n = x.shape[-1]
    m = n if n % 2 else n + 1
    spec = np.fft.rfft(x, m)
    k = np.arange(spec.shape[-1])
    y = np.fft.irfft(spec * np.exp(-2j * np.pi * k * delay / m), m)
    return y[..., :n] if m == n else y


def _render_source(ev: ScriptEvent, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    if ev.source == "white_noise":
        s = rng.standard_normal(n)
    elif ev.source == "tone":
        t = np.arange(n) / fs
        s = np.sin(2 * np.pi * ev.frequency_hz * t + rng.uniform(0, 2 * np.pi))
    else:
        s = np.zeros(n)
        step = max(1, int(round(ev.period_sec * fs)))
        s[rng.integers(0, step) :: step] = 1.0
    rms = np.sqrt(np.mean(s * s))
    return s / rms if rms > 0 else s


def synthesize(
    script: SceneScript,
    geometry: ArrayGeometry,
    stft: StftConfig | None = None,
    tau_max: float = 20.0,
) -> SimulatedScene:
    """Render a scene and its ground truth.

    Each event is rendered once, padded by one frame on both sides, delayed
    per microphone by its far-field arrival offset and mixed in. Oracle
    scores are 1 on reference-active frames; oracle TDOAs are the analytic
    far-field values there and NaN elsewhere.
    """
    stft = stft or StftConfig()
    fs = stft.sample_rate
    grid = script.grid
    rng = np.random.default_rng(script.seed)
    n_total = int(round(script.duration * fs))
    M = geometry.num_mics
    P = M * (M - 1) // 2
    signals = np.zeros((M, n_total))
    pad = stft.frame_size

    # arrival offset of each mic relative to the array origin, in samples
    pos = geometry.mic_positions
    event_signals = []
    for n, ev in enumerate(script.events):
        az, el = grid.lookup(ev.doa_index)
        tdoa = predict_freefield(geometry, (az, el), fs)
        if np.abs(tdoa).max() > tau_max:
            raise ValueError(
                f"event {n}: TDOA {np.abs(tdoa).max():.2f} samples exceeds tau_max={tau_max}"
            )
        arrival = -fs * (pos @ unit_vector(az, el)) / geometry.speed_of_sound

        start = int(round(ev.onset * fs))
        stop = int(round(ev.offset * fs))
        src = _render_source(ev, stop - start, fs, rng) * script.noise_rms_or_unit() * 10 ** (ev.snr_db / 20)
        padded = np.concatenate([np.zeros(pad), src, np.zeros(pad)])
        delayed = np.stack([fractional_delay(padded, d) for d in arrival])
        event_signals.append(delayed)
        lo, hi = start - pad, stop + pad
        a, b = max(lo, 0), min(hi, n_total)
        signals[:, a:b] += delayed[:, a - lo : b - lo]

    if script.noise_rms > 0:
        signals += script.noise_rms * rng.standard_normal(signals.shape)

    num_frames = stft.num_frames(n_total)
    labels = script.label_records()
    timeline, ref_doas = rasterize_labels(labels, stft, grid, num_frames, script.class_names)

    scores = np.repeat(timeline.frame_activity[:, None, :].astype(float), P, axis=1)
    tdoas = np.full((num_frames, P, script.num_classes), np.nan)
    if len(ref_doas):
        vectors = predict_freefield(geometry, (ref_doas.azimuth, ref_doas.elevation), fs)
        tdoas[ref_doas.frame, :, ref_doas.cls] = vectors

    return SimulatedScene(
        signals,
        fs,
        timeline,
        ref_doas,
        ScoreTensor(scores),
        TdoaTensor(tdoas),
        labels,
        event_signals,
    )
