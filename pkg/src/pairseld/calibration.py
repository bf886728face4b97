"""TDOA-versus-DOA calibration tables.

A table maps every point of the azimuth/elevation grid to the vector of
expected per-pair TDOAs. It is either measured (GCC-PHAT on single-source
frames, smoothed by a periodic polynomial fit per elevation row) or
predicted analytically from the array geometry under a far-field model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .dsp import CrossSpectrum, Spectrogram, TdoaLattice, accumulate_cross_spectrum, estimate_tdoa, gcc_phat, pair_list

__all__ = [
    "DoaGrid",
    "ArrayGeometry",
    "CalibrationTable",
    "CalibrationObservations",
    "InsufficientDataError",
    "collect_observations",
    "fit_calibration",
    "fit_row",
    "predict_freefield",
    "analytic_table",
    "lookup",
    "tetrahedral_geometry",
]

# azimuths are tiled over three periods and mapped onto [-1, 1] by this span
TILED_HALF_SPAN_DEG = 540.0


class InsufficientDataError(ValueError):
    """Raised when a (pair, elevation) row lacks the observations needed for a fit."""

    def __init__(self, message, missing=None):
        super().__init__(message)
        self.missing = missing or {}


@dataclass(frozen=True)
class DoaGrid:
    """Discrete DOA grid; index ``q = elevation_index * n_azimuth + azimuth_index``."""

    azimuths: tuple = tuple(range(-180, 180, 10))
    elevations: tuple = tuple(range(-40, 50, 10))

    @property
    def num_azimuths(self) -> int:
        return len(self.azimuths)

    @property
    def num_elevations(self) -> int:
        return len(self.elevations)

    @property
    def size(self) -> int:
        return self.num_azimuths * self.num_elevations

    def lookup(self, q) -> tuple[float, float]:
        q = int(q)
        if not 0 <= q < self.size:
            raise IndexError(f"DOA index {q} outside [0, {self.size})")
        e, a = divmod(q, self.num_azimuths)
        return float(self.azimuths[a]), float(self.elevations[e])

    def index(self, azimuth: float, elevation: float) -> int:
        """Grid index of an on-grid DOA; raises ``ValueError`` for off-grid angles."""
        az = ((float(azimuth) + 180.0) % 360.0) - 180.0
        try:
            a = [float(v) for v in self.azimuths].index(az)
            e = [float(v) for v in self.elevations].index(float(elevation))
        except ValueError:
            raise ValueError(f"DOA (azimuth={azimuth}, elevation={elevation}) is not on the grid") from None
        return e * self.num_azimuths + a

    def angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth and elevation arrays (degrees) for all ``size`` grid points."""
        az = np.tile(np.asarray(self.azimuths, dtype=float), self.num_elevations)
        el = np.repeat(np.asarray(self.elevations, dtype=float), self.num_azimuths)
        return az, el

    def to_dict(self) -> dict:
        return {
            "azimuths_deg": list(self.azimuths),
            "elevations_deg": list(self.elevations),
            "index_order": "elevation-major",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DoaGrid":
        return cls(tuple(d["azimuths_deg"]), tuple(d["elevations_deg"]))


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = np.array(self.mic_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise ValueError("mic_positions must be an (M, 3) array with M >= 2")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")
        for i, j in pair_list(pos.shape[0]):
            if np.allclose(pos[i], pos[j]):
                raise ValueError(f"microphones {i} and {j} are coincident")
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    def max_tdoa(self, sample_rate: float) -> float:
        pos = self.mic_positions
        d = max(np.linalg.norm(pos[i] - pos[j]) for i, j in pair_list(self.num_mics))
        return sample_rate * d / self.speed_of_sound

    def to_dict(self) -> dict:
        return {"mic_positions": self.mic_positions.tolist(), "speed_of_sound": self.speed_of_sound}

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        return cls(np.asarray(d["mic_positions"], dtype=float), float(d.get("speed_of_sound", 343.0)))


def tetrahedral_geometry(radius: float = 0.042, speed_of_sound: float = 343.0) -> ArrayGeometry:
    """Regular tetrahedron inscribed in a sphere of ``radius`` metres.

    Capsules point at azimuths 45, -45, 135 and -135 degrees with elevations
    of +/- arcsin(1/sqrt(3)) (about 35.26 degrees), alternating in sign.
    """
    az = np.radians([45.0, -45.0, 135.0, -135.0])
    el = np.arcsin(1 / np.sqrt(3)) * np.array([1.0, -1.0, -1.0, 1.0])
    pos = radius * np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    return ArrayGeometry(pos, speed_of_sound)


def unit_vector(azimuth_deg, elevation_deg) -> np.ndarray:
    phi = np.radians(azimuth_deg)
    theta = np.radians(elevation_deg)
    return np.stack(
        [np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)], axis=-1
    )


def predict_freefield(geometry: ArrayGeometry, doa, sample_rate: float) -> np.ndarray:
    """Far-field TDOAs (samples) for every canonical pair.

    ``doa`` is ``(azimuth_deg, elevation_deg)``; both may be arrays, in which
    case the result has shape ``(..., P)``. A microphone further along the
    source direction hears the wavefront first, so
    ``tau_ij = fs * u . (p_j - p_i) / c``.
    """
    u = unit_vector(*doa)
    pos = geometry.mic_positions
    diffs = np.stack([pos[j] - pos[i] for i, j in pair_list(geometry.num_mics)])
    return sample_rate * (u @ diffs.T) / geometry.speed_of_sound


@dataclass(frozen=True)
class CalibrationTable:
    """Per-pair TDOA (samples) for every grid point, shape ``(Q, P)``.

    ``coefficients`` holds, for measured tables, the Chebyshev coefficients
    of the final fit for each (pair, elevation) row in the normalized
    azimuth domain ``phi / 540``; shape ``(P, n_elevations, order + 1)``.
    """

    tdoa: np.ndarray
    grid: DoaGrid
    num_mics: int
    tau_max: float
    num_lattice_points: int = 101
    provenance: str = "measured"
    order: int | None = None
    coefficients: np.ndarray | None = None
    first_fit_coefficients: np.ndarray | None = field(default=None, repr=False)
    outliers: np.ndarray | None = field(default=None, repr=False)
    fit_rms: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        tdoa = np.array(self.tdoa, dtype=float)
        npairs = self.num_mics * (self.num_mics - 1) // 2
        if tdoa.shape != (self.grid.size, npairs):
            raise ValueError(f"tdoa table shape {tdoa.shape}, expected {(self.grid.size, npairs)}")
        if not np.all(np.isfinite(tdoa)):
            raise ValueError("calibration table has non-finite entries")
        if np.any(np.abs(tdoa) > self.tau_max + 1e-9):
            raise ValueError("calibration table entries exceed tau_max")
        if self.provenance not in ("measured", "analytic"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        tdoa.setflags(write=False)
        object.__setattr__(self, "tdoa", tdoa)

    @property
    def num_pairs(self) -> int:
        return self.tdoa.shape[1]

    @property
    def pair_order(self) -> list[tuple[int, int]]:
        return pair_list(self.num_mics)

    def rows_distinct(self) -> bool:
        return np.unique(self.tdoa, axis=0).shape[0] == self.tdoa.shape[0]


def lookup(table: CalibrationTable, q) -> np.ndarray:
    """Per-pair TDOA vector of grid point ``q`` in canonical pair order."""
    q = int(q)
    if not 0 <= q < table.grid.size:
        raise IndexError(f"DOA index {q} outside [0, {table.grid.size})")
    return table.tdoa[q].copy()


def analytic_table(geometry: ArrayGeometry, grid: DoaGrid, sample_rate: float, lattice: TdoaLattice) -> CalibrationTable:
    az, el = grid.angles()
    tdoa = predict_freefield(geometry, (az, el), sample_rate)
    if np.any(np.abs(tdoa) > lattice.tau_max):
        raise ValueError(
            f"geometry produces TDOAs up to {np.abs(tdoa).max():.2f} samples, beyond tau_max={lattice.tau_max}"
        )
    return CalibrationTable(
        tdoa, grid, geometry.num_mics, lattice.tau_max, lattice.num_points, provenance="analytic"
    )


@dataclass
class CalibrationObservations:
    """Raw per-(q, pair) TDOA estimates; NaN where a DOA was never observed."""

    tdoa: np.ndarray
    weight: np.ndarray
    grid: DoaGrid
    num_mics: int
    tau_max: float
    num_lattice_points: int

    @classmethod
    def empty(cls, grid: DoaGrid, num_mics: int, lattice: TdoaLattice) -> "CalibrationObservations":
        npairs = num_mics * (num_mics - 1) // 2
        return cls(
            np.full((grid.size, npairs), np.nan),
            np.zeros((grid.size, npairs)),
            grid,
            num_mics,
            lattice.tau_max,
            lattice.num_points,
        )

    def observed(self) -> list[tuple[int, int]]:
        """(q, pair index) entries that carry an estimate."""
        qs, ps = np.nonzero(np.isfinite(self.tdoa))
        return list(zip(qs.tolist(), ps.tolist()))


def collect_observations(recordings, grid: DoaGrid, lattice: TdoaLattice, num_mics: int | None = None) -> CalibrationObservations:
    """Estimate one raw TDOA per observed (DOA, pair).

    Parameters
    ----------
    recordings : list of (Spectrogram, array of int)
        Each annotation gives, per frame, the grid index of the single
        active source, or -1 for frames to ignore.
    grid : DoaGrid
    lattice : TdoaLattice
    num_mics : int, optional
        Only needed when ``recordings`` is empty.
    """
    if num_mics is None:
        if not recordings:
            raise ValueError("num_mics is required when there are no recordings")
        num_mics = recordings[0][0].num_mics
    obs = CalibrationObservations.empty(grid, num_mics, lattice)

    # cross-spectra for the same DOA are pooled over every recording
    pooled: dict[int, list] = {}
    for spec, ann in recordings:
        ann = np.asarray(ann, dtype=int)
        if ann.shape != (spec.num_frames,):
            raise ValueError(f"annotation has {ann.size} frames, spectrogram has {spec.num_frames}")
        if spec.num_mics != num_mics:
            raise ValueError("recordings disagree on the number of microphones")
        bad = ann[(ann != -1) & ((ann < 0) | (ann >= grid.size))]
        if bad.size:
            raise ValueError(f"annotation references DOA index {int(bad[0])} not on the grid")
        for q in np.unique(ann[ann >= 0]):
            frames = np.flatnonzero(ann == q)
            entry = pooled.setdefault(int(q), [None, 0])
            spectra = [accumulate_cross_spectrum(spec, p, frames) for p in spec.pairs]
            if entry[0] is None:
                entry[0] = spectra
            else:
                entry[0] = [
                    CrossSpectrum(a.pair, a.values + b.values, a.bins, a.frame_size) for a, b in zip(entry[0], spectra)
                ]
            entry[1] += frames.size

    for q, (spectra, count) in pooled.items():
        for p, cs in enumerate(spectra):
            obs.tdoa[q, p] = estimate_tdoa(gcc_phat(cs, lattice), lattice)
            obs.weight[q, p] = count
    return obs


def _tile(az_deg: np.ndarray, values: np.ndarray, weights: np.ndarray):
    x = np.concatenate([az_deg - 360.0, az_deg, az_deg + 360.0]) / TILED_HALF_SPAN_DEG
    return x, np.tile(values, 3), np.tile(weights, 3)


def _chebfit(x, y, w, order):
    with warnings.catch_warnings():
        warnings.simplefilter("error", np.exceptions.RankWarning)
        try:
            coef, (_, rank, _, _) = cheb.chebfit(x, y, order, w=np.sqrt(w), full=True)
        except np.exceptions.RankWarning:
            raise np.linalg.LinAlgError("rank-deficient calibration fit") from None
    if rank < order + 1:
        raise np.linalg.LinAlgError("rank-deficient calibration fit")
    return coef


def fit_row(
    az_deg,
    values,
    weights,
    order: int = 27,
    min_threshold: float = 0.5,
    mad_factor: float = 3.0,
    max_iter: int = 20,
):
    """Fit one (pair, elevation) row with outlier rejection.

    The observations are tiled over three azimuth periods and fitted with a
    weighted least-squares polynomial of degree ``order`` in normalized
    azimuth. Observations whose residual in the central period exceeds
    ``max(mad_factor * median|residual|, min_threshold)`` are dropped and the
    row is refitted. A degree-27 fit on 36 azimuths can absorb several
    outliers in one pass, so the rejection is repeated against each refit
    (every observation re-judged) until the inlier set stops changing or
    ``max_iter`` refits have run. ``max_iter=1`` gives a single
    remove-and-refit pass.

    Returns
    -------
    first, final : ndarray
        Chebyshev coefficients of the initial and the final fit.
    outliers : ndarray of bool
        Mask over the input observations.
    """
    az_deg = np.asarray(az_deg, dtype=float)
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    x0 = az_deg / TILED_HALF_SPAN_DEG

    def enough(mask):
        return 3 * np.unique(np.round(az_deg[mask], 9)).size >= order + 1

    if not enough(np.ones(az_deg.size, dtype=bool)):
        raise InsufficientDataError(
            f"{np.unique(np.round(az_deg, 9)).size} distinct azimuths cannot support a degree-{order} fit"
        )

    def reject(coef):
        resid = np.abs(values - cheb.chebval(x0, coef))
        return resid > max(mad_factor * np.median(resid), min_threshold)

    first = _chebfit(*_tile(az_deg, values, weights), order)
    current, outliers = first, np.zeros(az_deg.size, dtype=bool)
    for _ in range(max_iter):
        mask = reject(current)
        if np.array_equal(mask, outliers) or not enough(~mask):
            break
        outliers = mask
        keep = ~outliers
        current = _chebfit(*_tile(az_deg[keep], values[keep], weights[keep]), order)
    return first, current.copy(), outliers


def fit_calibration(obs: CalibrationObservations, grid: DoaGrid | None = None, order: int = 27) -> CalibrationTable:
    """Smooth raw observations into a complete calibration table.

    Each (pair, elevation) row is fitted independently with :func:`fit_row`;
    the final fit is evaluated on the grid azimuths and clamped to
    ``[-tau_max, tau_max]``.

    Raises
    ------
    InsufficientDataError
        If any row has fewer than ``ceil((order + 1) / 3)`` distinct observed
        azimuths. ``exc.missing`` maps ``(pair, elevation_deg)`` to the list of
        unobserved azimuths.
    """
    grid = grid or obs.grid
    n_az, n_el = grid.num_azimuths, grid.num_elevations
    npairs = obs.tdoa.shape[1]
    az = np.asarray(grid.azimuths, dtype=float)
    need = -(-(order + 1) // 3)

    missing = {}
    for p in range(npairs):
        for e in range(n_el):
            row = obs.tdoa[e * n_az : (e + 1) * n_az, p]
            seen = np.isfinite(row)
            if seen.sum() < need:
                missing[(p, float(grid.elevations[e]))] = az[~seen].tolist()
    if missing:
        raise InsufficientDataError(
            f"{len(missing)} (pair, elevation) rows have fewer than {need} observed azimuths", missing
        )

    table = np.empty((grid.size, npairs))
    second_coef = np.empty((npairs, n_el, order + 1))
    first_coef = np.empty_like(second_coef)
    outlier_mask = np.zeros((grid.size, npairs), dtype=bool)
    rms = np.empty((npairs, n_el))
    for p in range(npairs):
        for e in range(n_el):
            rows = slice(e * n_az, (e + 1) * n_az)
            vals = obs.tdoa[rows, p]
            seen = np.isfinite(vals)
            w = obs.weight[rows, p][seen]
            w = np.where(w > 0, w, 1.0)
            first, second, out = fit_row(az[seen], vals[seen], w, order)
            first_coef[p, e] = first
            second_coef[p, e] = second
            outlier_mask[np.arange(grid.size)[rows][seen], p] = out
            fitted = cheb.chebval(az / TILED_HALF_SPAN_DEG, second)
            inl = ~out
            rms[p, e] = np.sqrt(np.mean((vals[seen][inl] - fitted[seen][inl]) ** 2))
            table[rows, p] = np.clip(fitted, -obs.tau_max, obs.tau_max)

    return CalibrationTable(
        table,
        grid,
        obs.num_mics,
        obs.tau_max,
        obs.num_lattice_points,
        provenance="measured",
        order=order,
        coefficients=second_coef,
        first_fit_coefficients=first_coef,
        outliers=outlier_mask,
        fit_rms=rms,
    )


def evaluate_fit(coefficients: np.ndarray, azimuth_deg) -> np.ndarray:
    """Evaluate stored row coefficients ``(..., order + 1)`` at arbitrary azimuths."""
    x = np.asarray(azimuth_deg, dtype=float) / TILED_HALF_SPAN_DEG
    return cheb.chebval(x, np.moveaxis(np.asarray(coefficients), -1, 0))
