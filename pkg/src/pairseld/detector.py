"""Heuristic per-pair detector producing score and TDOA tensors from a spectrogram.

It takes the place of learned per-pair models: the activity score is the
log band energy of each pair's instantaneous cross-spectrum, smoothed and
normalized per recording; the TDOA is the per-frame GCC-PHAT peak.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from .doa import TdoaTensor
from .dsp import Spectrogram, TdoaLattice, estimate_tdoa_batch, gcc_phat_frames
from .sed import ScoreTensor

__all__ = ["DetectorConfig", "detect", "pair_activity"]


@dataclass(frozen=True)
class DetectorConfig:
    """Baseline detector settings.

    ``min_dynamic_range_db`` is the smallest energy span mapped onto
    [0, 1]; it keeps stationary noise from being stretched to full scale.
    """

    noise_floor_percentile: float = 20.0
    smoothing_frames: int = 5
    single_class_mode: bool = True
    num_classes: int = 1
    min_dynamic_range_db: float = 10.0

    def __post_init__(self):
        if not 0 < self.noise_floor_percentile < 100:
            raise ValueError("noise_floor_percentile must be in (0, 100)")
        if self.smoothing_frames < 1:
            raise ValueError("smoothing_frames must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.min_dynamic_range_db <= 0:
            raise ValueError("min_dynamic_range_db must be positive")

    @property
    def output_classes(self) -> int:
        return 1 if self.single_class_mode else self.num_classes


def pair_activity(cross: np.ndarray, config: DetectorConfig) -> np.ndarray:
    """Scores in [0, 1] from per-frame cross-spectra ``(P, T, K)``; returns ``(T, P)``."""
    energy = np.abs(cross).sum(axis=-1)
    # band energy in dB; the tiny floor only guards digital silence
    level = 10.0 * np.log10(energy + np.finfo(float).tiny)
    if config.smoothing_frames > 1:
        level = uniform_filter1d(level, config.smoothing_frames, axis=-1, mode="nearest")
    floor = np.percentile(level, config.noise_floor_percentile, axis=-1, keepdims=True)
    top = level.max(axis=-1, keepdims=True)
    span = np.maximum(top - floor, config.min_dynamic_range_db)
    return np.clip((level - floor) / span, 0.0, 1.0).T


def detect(spec: Spectrogram, lattice: TdoaLattice | None = None, config: DetectorConfig | None = None):
    """Score and TDOA tensors for every frame and canonical pair.

    Returns
    -------
    scores : ScoreTensor, shape (T, P, C)
    tdoas : TdoaTensor, shape (T, P, C)
        The same per-pair values are replicated over classes.
    """
    lattice = lattice or TdoaLattice()
    config = config or DetectorConfig()
    C = config.output_classes
    coeffs = spec.coefficients
    pairs = spec.pairs
    T = spec.num_frames

    scores = np.empty((T, len(pairs)))
    tdoas = np.empty((T, len(pairs)))
    bins = spec.config.bins
    for p, (i, j) in enumerate(pairs):
        cross = coeffs[i] * np.conj(coeffs[j])
        scores[:, p] = pair_activity(cross[None], config)[:, 0]
        gcc = gcc_phat_frames(cross, bins, spec.config.frame_size, lattice)
        tdoas[:, p] = estimate_tdoa_batch(gcc, lattice)

    return (
        ScoreTensor(np.repeat(scores[:, :, None], C, axis=2)),
        TdoaTensor(np.repeat(tdoas[:, :, None], C, axis=2)),
    )
