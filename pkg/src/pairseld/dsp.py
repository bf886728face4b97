"""Framing, STFT, pairwise cross-spectra and GCC-PHAT on a fractional-lag lattice.

Sign convention used throughout the package: a TDOA ``tau`` for the pair
``(i, j)`` is positive when channel ``i`` lags channel ``j`` by ``tau``
samples. This is what the kernel ``exp(+2j*pi*tau*k/N)`` applied to
``X_i * conj(X_j)`` peaks at.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

__all__ = [
    "StftConfig",
    "Spectrogram",
    "TdoaLattice",
    "CrossSpectrum",
    "pair_list",
    "compute_stft",
    "accumulate_cross_spectrum",
    "instantaneous_cross_spectra",
    "gcc_phat",
    "gcc_phat_frames",
    "estimate_tdoa",
    "estimate_tdoa_batch",
]

# bins below this fraction of the mean magnitude are dropped before PHAT
ZERO_BIN_RTOL = 1e-12


@dataclass(frozen=True)
class StftConfig:
    sample_rate: float = 48000.0
    frame_size: int = 2048
    hop_size: int = 960
    bin_lo: int = 1
    bin_hi: int = 513
    window: str = "hann"

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.frame_size <= 0 or self.hop_size <= 0:
            raise ValueError("frame_size and hop_size must be positive")
        if self.hop_size > self.frame_size:
            raise ValueError(
                f"hop_size ({self.hop_size}) exceeds frame_size ({self.frame_size})"
            )
        if not 0 <= self.bin_lo < self.bin_hi <= self.frame_size // 2 + 1:
            raise ValueError(
                f"need 0 <= bin_lo < bin_hi <= {self.frame_size // 2 + 1}, "
                f"got bin_lo={self.bin_lo}, bin_hi={self.bin_hi}"
            )
        if self.window not in ("hann", "rectangular"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.bin_hi - self.bin_lo

    @property
    def bins(self) -> np.ndarray:
        return np.arange(self.bin_lo, self.bin_hi)

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.frame_size:
            return 0
        return (num_samples - self.frame_size) // self.hop_size + 1

    def frame_center_sec(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t * self.hop_size + self.frame_size / 2) / self.sample_rate

    def window_array(self) -> np.ndarray:
        if self.window == "rectangular":
            return np.ones(self.frame_size)
        return get_window("hann", self.frame_size)


@dataclass(frozen=True)
class Spectrogram:
    """STFT coefficients, shape ``(num_mics, num_frames, num_bins)``.

    Only bins ``config.bin_lo .. config.bin_hi - 1`` are stored.
    """

    coefficients: np.ndarray
    config: StftConfig

    def __post_init__(self):
        if self.coefficients.ndim != 3:
            raise ValueError("coefficients must be (mics, frames, bins)")
        if self.coefficients.shape[0] < 2:
            raise ValueError("a spectrogram needs at least two microphones")
        if self.coefficients.shape[2] != self.config.num_bins:
            raise ValueError(
                f"bin axis has {self.coefficients.shape[2]} entries, "
                f"config expects {self.config.num_bins}"
            )

    @property
    def num_mics(self) -> int:
        return self.coefficients.shape[0]

    @property
    def num_frames(self) -> int:
        return self.coefficients.shape[1]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return pair_list(self.num_mics)


@dataclass(frozen=True)
class TdoaLattice:
    tau_max: float = 20.0
    num_points: int = 101
    values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tau_max <= 0:
            raise ValueError(f"tau_max must be positive, got {self.tau_max}")
        if self.num_points < 1 or self.num_points % 2 == 0:
            raise ValueError(f"num_points must be odd and positive, got {self.num_points}")
        half = self.num_points // 2
        if half == 0:
            values = np.zeros(1)
        else:
            # integer grid scaled once keeps the lattice exactly symmetric with an exact 0
            values = self.tau_max * np.arange(-half, half + 1) / half
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def spacing(self) -> float:
        return 2 * self.tau_max / (self.num_points - 1) if self.num_points > 1 else 0.0

    def priority_order(self) -> np.ndarray:
        """Lattice indices sorted by tie-break priority: smallest |tau|, then negative first."""
        return np.lexsort((self.values, np.abs(self.values)))


@dataclass(frozen=True)
class CrossSpectrum:
    pair: tuple[int, int]
    values: np.ndarray
    bins: np.ndarray
    frame_size: int

    def conjugate(self) -> "CrossSpectrum":
        """Cross-spectrum of the swapped pair ``(j, i)``."""
        return CrossSpectrum((self.pair[1], self.pair[0]), np.conj(self.values), self.bins, self.frame_size)


def pair_list(num_mics: int) -> list[tuple[int, int]]:
    """Canonical pair order (0,1), (0,2), ..., (M-2, M-1)."""
    return list(combinations(range(num_mics), 2))


def compute_stft(signal, config: StftConfig) -> Spectrogram:
    """Frame, window and transform every channel.

    Parameters
    ----------
    signal : array-like, shape (num_mics, num_samples) or sequence of 1-D arrays
        Real samples per microphone.
    config : StftConfig

    Returns
    -------
    Spectrogram
        Frame ``t`` covers samples ``[t * hop, t * hop + frame_size)``.
    """
    channels = [np.asarray(ch, dtype=float) for ch in signal]
    if len(channels) < 2:
        raise ValueError("need at least two channels")
    lengths = {ch.shape for ch in channels}
    if len(lengths) != 1 or channels[0].ndim != 1:
        raise ValueError(f"channel length mismatch: {sorted(ch.size for ch in channels)}")
    x = np.stack(channels)
    if x.shape[1] < config.frame_size:
        raise ValueError(
            f"signal has {x.shape[1]} samples, shorter than one frame ({config.frame_size})"
        )
    frames = sliding_window_view(x, config.frame_size, axis=1)[:, :: config.hop_size]
    spectrum = np.fft.rfft(frames * config.window_array(), axis=-1)
    coeffs = np.ascontiguousarray(spectrum[..., config.bin_lo : config.bin_hi])
    return Spectrogram(coeffs, config)


def _check_pair(spec: Spectrogram, pair) -> tuple[int, int]:
    i, j = pair
    if not (0 <= i < spec.num_mics and 0 <= j < spec.num_mics) or i == j:
        raise IndexError(f"invalid microphone pair {pair} for {spec.num_mics} microphones")
    return int(i), int(j)


def accumulate_cross_spectrum(spec: Spectrogram, pair, frames) -> CrossSpectrum:
    """Sum ``X_i * conj(X_j)`` over the given frame indices."""
    i, j = _check_pair(spec, pair)
    idx = np.unique(np.asarray(list(frames) if not isinstance(frames, np.ndarray) else frames, dtype=int))
    if idx.size == 0:
        raise ValueError("frame set is empty")
    if idx[0] < 0 or idx[-1] >= spec.num_frames:
        raise IndexError(f"frame index out of range [0, {spec.num_frames})")
    xi = spec.coefficients[i, idx]
    xj = spec.coefficients[j, idx]
    values = np.sum(xi * np.conj(xj), axis=0)
    return CrossSpectrum((i, j), values, spec.config.bins, spec.config.frame_size)


def instantaneous_cross_spectra(spec: Spectrogram) -> np.ndarray:
    """Per-frame cross-spectra for every canonical pair, shape ``(P, T, K)``."""
    c = spec.coefficients
    return np.stack([c[i] * np.conj(c[j]) for i, j in spec.pairs])


def _kernel(bins: np.ndarray, frame_size: int, lattice: TdoaLattice) -> np.ndarray:
    # (G, K) phase of exp(2j*pi*tau*k/N)
    return 2 * np.pi * np.outer(lattice.values, bins) / frame_size


def _phase_normalize(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mag = np.abs(values)
    mean = mag.mean(axis=-1, keepdims=True)
    keep = mag >= ZERO_BIN_RTOL * mean
    keep &= mag > 0
    safe = np.where(keep, mag, 1.0)
    return np.where(keep, values / safe, 0.0), keep


def gcc_phat(cs: CrossSpectrum, lattice: TdoaLattice, return_skipped: bool = False):
    """GCC-PHAT evaluated directly at each lattice lag.

    ``out[g] = Re(sum_k exp(2j*pi*tau_g*k/N) * X[k] / |X[k]|)``. Bins whose
    magnitude is below ``1e-12`` times the mean magnitude are skipped; with
    ``return_skipped=True`` their count is returned alongside the output.
    """
    phasors, keep = _phase_normalize(np.asarray(cs.values))
    arg = _kernel(np.asarray(cs.bins), cs.frame_size, lattice)
    out = np.cos(arg) @ phasors.real - np.sin(arg) @ phasors.imag
    if return_skipped:
        return out, int(keep.size - np.count_nonzero(keep))
    return out


def gcc_phat_frames(cross: np.ndarray, bins: np.ndarray, frame_size: int, lattice: TdoaLattice) -> np.ndarray:
    """Batched :func:`gcc_phat` over leading axes; ``cross[..., K] -> out[..., G]``."""
    phasors, _ = _phase_normalize(cross)
    arg = _kernel(bins, frame_size, lattice)
    return phasors.real @ np.cos(arg).T - phasors.imag @ np.sin(arg).T


def estimate_tdoa(gcc, lattice: TdoaLattice) -> float:
    """Lattice value at the GCC maximum.

    Ties go to the smallest ``|tau|``, then to the negative value.
    """
    gcc = np.asarray(gcc, dtype=float)
    if gcc.shape != (lattice.num_points,):
        raise ValueError(f"gcc has shape {gcc.shape}, lattice has {lattice.num_points} points")
    return float(estimate_tdoa_batch(gcc, lattice))


def estimate_tdoa_batch(gcc: np.ndarray, lattice: TdoaLattice) -> np.ndarray:
    """Vectorized :func:`estimate_tdoa` over all leading axes."""
    order = lattice.priority_order()
    best = np.argmax(gcc[..., order], axis=-1)
    return lattice.values[order[best]]

