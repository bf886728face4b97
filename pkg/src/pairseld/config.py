"""Run configuration shared by every CLI command."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .calibration import ArrayGeometry, DoaGrid, tetrahedral_geometry
from .detector import DetectorConfig
from .dsp import StftConfig, TdoaLattice


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    sample_rate: float = 48000.0
    frame_size: int = 2048
    hop_size: int = 960
    bin_lo: int = 1
    bin_hi: int = 513
    window: str = "hann"
    tau_max: float = 20.0
    grid_g: int = 101
    sigma: float = 2.0
    gamma: int = 5
    segment_frames: int = 50
    polyfit_order: int = 27
    thresholds: list | None = None
    class_names: list = field(default_factory=lambda: ["0"])
    geometry: str | None = None
    calibration: str | None = None
    detector: str = "baseline"
    noise_floor_percentile: float = 20.0
    smoothing_frames: int = 5
    min_dynamic_range_db: float = 10.0
    seed: int | None = None

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        """Defaults, then the JSON file at ``path``, then non-None ``overrides``."""
        values = {}
        if path is not None:
            try:
                values.update(json.loads(Path(path).read_text(encoding="utf-8")))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.stft()
            self.lattice()
            self.detector_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.gamma < 1 or self.segment_frames < 1:
            raise ConfigError("gamma and segment_frames must be >= 1")
        if self.segment_frames < self.gamma:
            raise ConfigError(f"segment_frames ({self.segment_frames}) must be >= gamma ({self.gamma})")
        if self.detector not in ("baseline", "tensors"):
            raise ConfigError(f"detector must be 'baseline' or 'tensors', got {self.detector!r}")
        if not self.class_names:
            raise ConfigError("class_names must not be empty")
        if self.thresholds is not None and len(self.thresholds) != len(self.class_names):
            raise ConfigError(f"{len(self.thresholds)} thresholds for {len(self.class_names)} classes")

    def stft(self) -> StftConfig:
        return StftConfig(self.sample_rate, self.frame_size, self.hop_size, self.bin_lo, self.bin_hi, self.window)

    def lattice(self) -> TdoaLattice:
        return TdoaLattice(self.tau_max, self.grid_g)

    def grid(self) -> DoaGrid:
        return DoaGrid()

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            self.noise_floor_percentile,
            self.smoothing_frames,
            single_class_mode=len(self.class_names) == 1,
            num_classes=len(self.class_names),
            min_dynamic_range_db=self.min_dynamic_range_db,
        )

    def load_geometry(self) -> ArrayGeometry:
        if self.geometry is None:
            geom = tetrahedral_geometry()
        else:
            try:
                geom = ArrayGeometry.from_dict(json.loads(Path(self.geometry).read_text(encoding="utf-8")))
            except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ConfigError(f"cannot read geometry {self.geometry}: {exc}") from exc
        if geom.max_tdoa(self.sample_rate) > self.tau_max:
            raise ConfigError(
                f"array spans {geom.max_tdoa(self.sample_rate):.2f} samples, more than tau_max={self.tau_max}"
            )
        return geom

    def to_dict(self) -> dict:
        return asdict(self)
