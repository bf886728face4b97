"""Segment-based detection metrics (ER, F) and localization metrics (DOAE, FR)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .doa import DoaOutput

__all__ = [
    "SegmentCounts",
    "MetricsReport",
    "UndefinedMetricError",
    "segment_counts",
    "compute_er_f",
    "angular_distance",
    "assignment_cost",
    "compute_doae",
    "compute_fr",
    "evaluate",
]


ARCCOS_TOL = 1e-12


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentCounts:
    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    n: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return np.minimum(self.fn, self.fp)

    @property
    def d(self) -> np.ndarray:
        return np.maximum(0, self.fn - self.fp)

    @property
    def i(self) -> np.ndarray:
        return np.maximum(0, self.fp - self.fn)

    def totals(self) -> dict:
        return {k: int(getattr(self, k).sum()) for k in ("tp", "fn", "fp", "n", "s", "d", "i")}


def segment_counts(est, ref) -> SegmentCounts:
    """Per-segment counts from ``(n_segments, C)`` binary activity arrays.

    FN counts missed reference events and FP spurious estimates.
    """
    est = np.asarray(est) != 0
    ref = np.asarray(ref) != 0
    if est.shape != ref.shape:
        raise ValueError(f"estimate shape {est.shape} != reference shape {ref.shape}")
    return SegmentCounts(
        tp=(est & ref).sum(axis=-1),
        fn=(~est & ref).sum(axis=-1),
        fp=(est & ~ref).sum(axis=-1),
        n=ref.sum(axis=-1),
    )


def compute_er_f(counts: SegmentCounts) -> tuple[float, float]:
    total = counts.totals()
    if total["n"] == 0:
        raise UndefinedMetricError("error rate undefined: reference has no active events")
    er = (total["s"] + total["d"] + total["i"]) / total["n"]
    denom = 2 * total["tp"] + total["fn"] + total["fp"]
    f = 1.0 if denom == 0 else 2 * total["tp"] / denom
    return er, f


def angular_distance(doa_a, doa_b) -> np.ndarray:
    """Great-circle angle in degrees between ``(azimuth, elevation)`` pairs given in degrees.

    Broadcasts over leading axes of the azimuth/elevation values.
    """
    az_a, el_a = np.radians(doa_a[0]), np.radians(doa_a[1])
    az_b, el_b = np.radians(doa_b[0]), np.radians(doa_b[1])
    cos_h = np.sin(el_a) * np.sin(el_b) + np.cos(el_a) * np.cos(el_b) * np.cos(az_a - az_b)
    # snap rounding noise at the poles of arccos so identical points give exactly 0
    cos_h = np.where(cos_h > 1.0 - ARCCOS_TOL, 1.0, np.where(cos_h < -1.0 + ARCCOS_TOL, -1.0, cos_h))
    return np.degrees(np.arccos(cos_h))


def _cost_matrix(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return angular_distance(
        (est[:, None, 0], est[:, None, 1]),
        (ref[None, :, 0], ref[None, :, 1]),
    )


def assignment_cost(est: np.ndarray, ref: np.ndarray) -> float:
    """Minimum summed angular distance over ``min(len(est), len(ref))`` matched pairs."""
    est = np.asarray(est, dtype=float).reshape(-1, 2)
    ref = np.asarray(ref, dtype=float).reshape(-1, 2)
    if len(est) == 0 or len(ref) == 0:
        return 0.0
    cost = _cost_matrix(est, ref)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def _as_frames(doas) -> list[np.ndarray]:
    if isinstance(doas, DoaOutput):
        return doas.per_frame()
    return [np.asarray(f, dtype=float).reshape(-1, 2) for f in doas]


def compute_doae(est, ref) -> float:
    """Mean matched angular error (degrees) normalized by the number of estimates.

    ``est`` and ``ref`` are :class:`DoaOutput` objects or per-frame lists of
    ``(n, 2)`` (azimuth, elevation) arrays.
    """
    est_frames, ref_frames = _as_frames(est), _as_frames(ref)
    if len(est_frames) != len(ref_frames):
        raise ValueError(f"{len(est_frames)} estimated frames vs {len(ref_frames)} reference frames")
    n_est = sum(len(f) for f in est_frames)
    if n_est == 0:
        raise UndefinedMetricError("DOA error undefined: no estimates")
    total = sum(assignment_cost(e, r) for e, r in zip(est_frames, ref_frames) if len(e))
    return total / n_est


def compute_fr(est, ref) -> float:
    est_frames, ref_frames = _as_frames(est), _as_frames(ref)
    if len(est_frames) != len(ref_frames):
        raise ValueError(f"{len(est_frames)} estimated frames vs {len(ref_frames)} reference frames")
    if not est_frames:
        raise UndefinedMetricError("frame recall undefined: no frames")
    hits = sum(len(e) == len(r) for e, r in zip(est_frames, ref_frames))
    return hits / len(est_frames)


@dataclass
class MetricsReport:
    er: float | None
    f: float
    doae: float | None
    fr: float
    counts: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        def fmt(v, spec):
            return "undefined" if v is None else format(v, spec)

        rows = [
            ("ER", fmt(self.er, ".4f")),
            ("F", fmt(self.f, ".4f")),
            ("DOAE (deg)", fmt(self.doae, ".2f")),
            ("FR", fmt(self.fr, ".4f")),
        ]
        rows += [(k.upper(), str(v)) for k, v in self.counts.items()]
        rows += [(k, str(v)) for k, v in self.diagnostics.items()]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value:>12}" for name, value in rows)


def evaluate(est_segments, ref_segments, est_doas, ref_doas) -> MetricsReport:
    """All four metrics; undefined ER/DOAE come back as ``None`` with a reason in diagnostics."""
    counts = segment_counts(est_segments, ref_segments)
    diagnostics = {}
    try:
        er, f = compute_er_f(counts)
    except UndefinedMetricError as exc:
        er, diagnostics["er"] = None, str(exc)
        total = counts.totals()
        denom = 2 * total["tp"] + total["fn"] + total["fp"]
        f = 1.0 if denom == 0 else 2 * total["tp"] / denom
    try:
        doae = compute_doae(est_doas, ref_doas)
    except UndefinedMetricError:
        doae, diagnostics["doae"] = None, "undefined (no estimates)"
    fr = compute_fr(est_doas, ref_doas)
    return MetricsReport(er, f, doae, fr, counts.totals(), diagnostics)
