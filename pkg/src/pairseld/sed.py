"""Event detection from per-pair scores: fusion, thresholds, post-filter, segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScoreTensor",
    "EventTimeline",
    "fuse_scores",
    "threshold",
    "postfilter",
    "to_segments",
    "detect_events",
    "tune_thresholds",
]


@dataclass(frozen=True)
class ScoreTensor:
    """Per-pair event probabilities, shape ``(T, P, C)``."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.array(self.scores, dtype=float)
        if s.ndim != 3:
            raise ValueError(f"scores must be (frames, pairs, classes), got shape {s.shape}")
        if s.size and (np.any(~np.isfinite(s)) or s.min() < 0 or s.max() > 1):
            raise ValueError("scores must lie in [0, 1]")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def num_frames(self) -> int:
        return self.scores.shape[0]

    @property
    def num_pairs(self) -> int:
        return self.scores.shape[1]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[2]


@dataclass(frozen=True)
class EventTimeline:
    frame_activity: np.ndarray
    segment_length: int = 50
    fused_scores: np.ndarray | None = None

    @property
    def segment_activity(self) -> np.ndarray:
        return to_segments(self.frame_activity, self.segment_length)

    @property
    def num_frames(self) -> int:
        return self.frame_activity.shape[0]

    @property
    def num_classes(self) -> int:
        return self.frame_activity.shape[1]


def fuse_scores(tensor: ScoreTensor) -> np.ndarray:
    """Mean over pairs, shape ``(T, C)``."""
    return tensor.scores.mean(axis=1)


def threshold(fused: np.ndarray, thresholds) -> np.ndarray:
    """Frame activity: 1 where the fused score reaches the class threshold."""
    fused = np.asarray(fused, dtype=float)
    eps = np.asarray(thresholds, dtype=float)
    if eps.shape != (fused.shape[-1],):
        raise ValueError(f"{eps.size} thresholds for {fused.shape[-1]} classes")
    return (fused >= eps).astype(np.int8)


def _run_bounds(active: np.ndarray):
    # start/stop (exclusive) of runs of ones along axis 0, per column
    padded = np.zeros((active.shape[0] + 2,) + active.shape[1:], dtype=np.int8)
    padded[1:-1] = active != 0
    diff = np.diff(padded, axis=0)
    starts = np.argwhere(diff == 1)
    stops = np.argwhere(diff == -1)
    return starts, stops


def postfilter(activity: np.ndarray, gamma: int = 5) -> np.ndarray:
    """Drop every run of active frames shorter than ``gamma``; gaps are left alone."""
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    act = np.asarray(activity)
    out = (act != 0).astype(np.int8)
    if gamma == 1 or out.size == 0:
        return out
    flat = out.reshape(out.shape[0], -1)
    starts, stops = _run_bounds(flat)
    # argwhere is row-major, so sort by column to pair starts with stops
    starts = starts[np.lexsort((starts[:, 0], starts[:, 1]))]
    stops = stops[np.lexsort((stops[:, 0], stops[:, 1]))]
    for (t0, c), (t1, _) in zip(starts, stops):
        if t1 - t0 < gamma:
            flat[t0:t1, c] = 0
    return out


def to_segments(activity: np.ndarray, segment_length: int = 50) -> np.ndarray:
    """OR-reduce frames into segments of ``segment_length``; a partial last segment counts."""
    if segment_length < 1:
        raise ValueError(f"segment_length must be >= 1, got {segment_length}")
    act = np.asarray(activity) != 0
    nframes = act.shape[0]
    nseg = -(-nframes // segment_length)
    padded = np.zeros((nseg * segment_length,) + act.shape[1:], dtype=bool)
    padded[:nframes] = act
    return padded.reshape((nseg, segment_length) + act.shape[1:]).any(axis=1).astype(np.int8)


def detect_events(tensor: ScoreTensor, thresholds, gamma: int = 5, segment_length: int = 50) -> EventTimeline:
    """Full detection chain: fuse, threshold, post-filter."""
    fused = fuse_scores(tensor)
    activity = postfilter(threshold(fused, thresholds), gamma)
    return EventTimeline(activity, segment_length, fused)


def _f_score(tp, fn, fp):
    denom = 2 * tp + fn + fp
    return np.where(denom == 0, 1.0, 2 * tp / np.where(denom == 0, 1, denom))


def tune_thresholds(validation, grid_step: float = 0.01, gamma: int = 5, segment_length: int = 50) -> np.ndarray:
    """Pick per-class thresholds maximizing segment F-score on validation data.

    Parameters
    ----------
    validation : list of (ScoreTensor, ndarray)
        Score tensors paired with reference segment activity ``(n_segments, C)``.
    grid_step : float
        Candidate thresholds are ``0, grid_step, ..., 1``.

    Returns
    -------
    ndarray, shape (C,)
        Ties resolve to the smallest threshold. An F-score with nothing to
        count (no reference, no estimate) is 1.
    """
    if not validation:
        raise ValueError("validation set is empty")
    n_steps = int(round(1.0 / grid_step))
    candidates = np.arange(n_steps + 1) / n_steps
    num_classes = validation[0][0].num_classes

    tp = np.zeros((candidates.size, num_classes))
    fn = np.zeros_like(tp)
    fp = np.zeros_like(tp)
    for tensor, ref in validation:
        if tensor.num_classes != num_classes:
            raise ValueError("validation tensors disagree on the number of classes")
        ref = np.asarray(ref) != 0
        fused = fuse_scores(tensor)
        for n, eps in enumerate(candidates):
            act = postfilter((fused >= eps).astype(np.int8), gamma)
            est = to_segments(act, segment_length) != 0
            if est.shape != ref.shape:
                raise ValueError(f"reference segments {ref.shape} do not match estimates {est.shape}")
            tp[n] += (est & ref).sum(axis=0)
            fn[n] += (~est & ref).sum(axis=0)
            fp[n] += (est & ~ref).sum(axis=0)

    f = _f_score(tp, fn, fp)
    # argmax returns the first maximum, i.e. the smallest threshold
    return candidates[np.argmax(f, axis=0)]
