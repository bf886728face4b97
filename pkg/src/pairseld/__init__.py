"""Pairwise-microphone sound event localization and detection."""

from .calibration import (
    ArrayGeometry,
    CalibrationObservations,
    CalibrationTable,
    DoaGrid,
    InsufficientDataError,
    analytic_table,
    collect_observations,
    fit_calibration,
    lookup,
    predict_freefield,
    tetrahedral_geometry,
)
from .detector import DetectorConfig, detect
from .doa import DoaOutput, TdoaTensor, estimate_doas, scan_doa
from .dsp import (
    CrossSpectrum,
    Spectrogram,
    StftConfig,
    TdoaLattice,
    accumulate_cross_spectrum,
    compute_stft,
    estimate_tdoa,
    gcc_phat,
)
from .metrics import (
    MetricsReport,
    UndefinedMetricError,
    angular_distance,
    compute_doae,
    compute_er_f,
    compute_fr,
    evaluate,
    segment_counts,
)
from .sed import EventTimeline, ScoreTensor, detect_events, fuse_scores, postfilter, threshold, to_segments, tune_thresholds
from .sim import SceneScript, ScriptEvent, SimulatedScene, synthesize

__version__ = "0.1.0"
