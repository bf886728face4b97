"""DOA estimation by Gaussian-kernel scoring of per-pair TDOAs against a calibration table."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationTable, DoaGrid

__all__ = ["TdoaTensor", "DoaOutput", "scan_doa", "scan_doa_batch", "estimate_doas"]


@dataclass(frozen=True)
class TdoaTensor:
    """Per-pair TDOA estimates (samples), shape ``(T, P, C)``; NaN marks an invalid (t, c)."""

    tdoas: np.ndarray

    def __post_init__(self):
        x = np.array(self.tdoas, dtype=float)
        if x.ndim != 3:
            raise ValueError(f"tdoas must be (frames, pairs, classes), got shape {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "tdoas", x)

    @property
    def valid(self) -> np.ndarray:
        """``(T, C)`` mask, true where every pair carries a finite TDOA."""
        return np.isfinite(self.tdoas).all(axis=1)

    @property
    def shape(self):
        return self.tdoas.shape


@dataclass
class DoaOutput:
    """Flat list of (frame, class, azimuth, elevation) estimates sorted by (frame, class)."""

    num_frames: int
    frame: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    cls: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    azimuth: np.ndarray = field(default_factory=lambda: np.zeros(0))
    elevation: np.ndarray = field(default_factory=lambda: np.zeros(0))
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frame = np.asarray(self.frame, dtype=int)
        self.cls = np.asarray(self.cls, dtype=int)
        self.azimuth = np.asarray(self.azimuth, dtype=float)
        self.elevation = np.asarray(self.elevation, dtype=float)
        n = self.frame.size
        if not (self.cls.size == self.azimuth.size == self.elevation.size == n):
            raise ValueError("DoaOutput columns differ in length")
        if n and (self.frame.min() < 0 or self.frame.max() >= self.num_frames):
            raise ValueError("frame index outside [0, num_frames)")
        order = np.lexsort((self.cls, self.frame))
        self.frame, self.cls = self.frame[order], self.cls[order]
        self.azimuth, self.elevation = self.azimuth[order], self.elevation[order]
        if n > 1:
            dup = (np.diff(self.frame) == 0) & (np.diff(self.cls) == 0)
            if dup.any():
                raise ValueError("more than one DOA for the same (frame, class)")

    def __len__(self):
        return self.frame.size

    def per_frame(self) -> list[np.ndarray]:
        """List of ``(n_t, 2)`` arrays of (azimuth, elevation) in degrees, one per frame."""
        bounds = np.searchsorted(self.frame, np.arange(self.num_frames + 1))
        pts = np.stack([self.azimuth, self.elevation], axis=1)
        return [pts[bounds[t] : bounds[t + 1]] for t in range(self.num_frames)]

    def counts(self) -> np.ndarray:
        return np.bincount(self.frame, minlength=self.num_frames)

    def __eq__(self, other):
        if not isinstance(other, DoaOutput):
            return NotImplemented
        return (
            self.num_frames == other.num_frames
            and np.array_equal(self.frame, other.frame)
            and np.array_equal(self.cls, other.cls)
            and np.array_equal(self.azimuth, other.azimuth)
            and np.array_equal(self.elevation, other.elevation)
        )


def _kernel_scores(tdoa_vectors: np.ndarray, table: np.ndarray, sigma: float) -> np.ndarray:
    # (n, P) x (Q, P) -> (n, Q)
    d = tdoa_vectors[:, None, :] - table[None, :, :]
    return np.exp(-(d * d) / (2.0 * sigma * sigma)).sum(axis=-1)


def scan_doa(tdoa_vector, table: CalibrationTable, sigma: float = 2.0) -> int:
    """Grid index whose calibrated TDOAs best match ``tdoa_vector``.

    Score of grid point ``q`` is ``sum_p exp(-(tau_p - table[q, p])**2 / (2 sigma**2))``;
    ties go to the smallest ``q``.
    """
    v = np.asarray(tdoa_vector, dtype=float)
    if v.shape != (table.num_pairs,):
        raise ValueError(f"expected {table.num_pairs} TDOAs, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("TDOA vector contains invalid entries")
    return int(scan_doa_batch(v[None, :], table, sigma)[0])


def scan_doa_batch(tdoa_vectors: np.ndarray, table: CalibrationTable, sigma: float = 2.0, chunk: int = 2048) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    v = np.asarray(tdoa_vectors, dtype=float).reshape(-1, table.num_pairs)
    out = np.empty(v.shape[0], dtype=int)
    for start in range(0, v.shape[0], chunk):
        block = v[start : start + chunk]
        out[start : start + chunk] = np.argmax(_kernel_scores(block, table.tdoa, sigma), axis=1)
    return out


def estimate_doas(
    tensor: TdoaTensor,
    activity: np.ndarray,
    table: CalibrationTable,
    sigma: float = 2.0,
    grid: DoaGrid | None = None,
) -> DoaOutput:
    """One DOA per active (frame, class) with a valid TDOA vector.

    Active entries without a valid TDOA are skipped and counted in
    ``diagnostics["missing_tdoa"]``.
    """
    grid = grid or table.grid
    activity = np.asarray(activity) != 0
    T, P, C = tensor.shape
    if activity.shape != (T, C):
        raise ValueError(f"activity shape {activity.shape} does not match tensor frames/classes {(T, C)}")
    if P != table.num_pairs:
        raise ValueError(f"tensor has {P} pairs, calibration table has {table.num_pairs}")
    valid = tensor.valid
    use = activity & valid
    t_idx, c_idx = np.nonzero(use)
    vectors = tensor.tdoas[t_idx, :, c_idx]
    q = scan_doa_batch(vectors, table, sigma) if t_idx.size else np.zeros(0, dtype=int)
    az, el = grid.angles()
    return DoaOutput(
        T,
        t_idx,
        c_idx,
        az[q],
        el[q],
        diagnostics={"missing_tdoa": int(np.count_nonzero(activity & ~valid))},
    )
