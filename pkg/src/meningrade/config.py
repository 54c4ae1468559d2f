"""Engine configuration: detection thresholds, HPF geometry, window specs.

Defaults reproduce the published pipeline cutoffs; everything is overridable
from a JSON config file so labs can recalibrate.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .core import CriterionKind
from .errors import ContractError, SchemaViolationError


@dataclass(frozen=True)
class ThresholdTable:
    """Positivity cutoffs and rule constants for the eight criteria."""

    mitosis: float = 0.78
    necrosis: float = 0.74
    prominent_nucleoli: float = 0.90
    sheeting: float = 0.52
    small_cell_min_nuclei: int = 125
    small_cell_top_k: int = 10
    tumor_min_nuclei: int = 55
    brain_range: tuple[int, int] = (10, 55)

    def __post_init__(self):
        for name in ("mitosis", "necrosis", "prominent_nucleoli", "sheeting"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise SchemaViolationError(f"threshold {name}={v} outside (0,1)")
        if self.small_cell_min_nuclei < 0 or self.tumor_min_nuclei < 0:
            raise SchemaViolationError("integer thresholds must be >= 0")
        if self.small_cell_top_k < 0:
            raise SchemaViolationError("small_cell_top_k must be >= 0")

    def probability_threshold(self, criterion: CriterionKind) -> float:
        table = {
            CriterionKind.MITOTIC_COUNT: self.mitosis,
            CriterionKind.NECROSIS: self.necrosis,
            CriterionKind.PROMINENT_NUCLEOLI: self.prominent_nucleoli,
            CriterionKind.SHEETING: self.sheeting,
        }
        if criterion not in table:
            raise ContractError(f"criterion {criterion.value} has no probability threshold")
        return table[criterion]


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window geometry for one detector input stream.

    `scale_mpp` selects the resolution family the window is defined at;
    window/stride are in pixels of that family.
    """

    window_px: int
    stride_px: int
    scale_mpp: float
    resize_to: int | None = None

    def __post_init__(self):
        if self.stride_px < 1:
            raise SchemaViolationError("stride must be >= 1")
        if self.window_px < self.stride_px:
            raise SchemaViolationError("window must be >= stride for overlap specs")


#: Base H&E patch stream feeding nuclei counting, necrosis, and sub-tiling.
BASE_HE_SPEC = WindowSpec(window_px=512, stride_px=512, scale_mpp=0.25)
#: Mitosis sub-tiling within each base patch (half-stride overlap).
MITOSIS_SPEC = WindowSpec(window_px=240, stride_px=120, scale_mpp=0.25)
#: Prominent-nucleoli sub-tiling within each base patch.
NUCLEOLI_SPEC = WindowSpec(window_px=96, stride_px=96, scale_mpp=0.25)
#: Sheeting stream at the coarser resolution family, resized before scoring.
SHEETING_SPEC = WindowSpec(window_px=512, stride_px=512, scale_mpp=0.5, resize_to=224)
#: Ki-67 patch stream on the immunohistochemistry slide.
KI67_SPEC = WindowSpec(window_px=512, stride_px=512, scale_mpp=0.5)


@dataclass(frozen=True)
class EngineConfig:
    thresholds: ThresholdTable = field(default_factory=ThresholdTable)
    #: Side of one high-power field, micrometers (0.5 mm square by default).
    hpf_um: float = 500.0
    #: Count-grid cells per HPF side; cell size must divide the HPF exactly.
    cells_per_hpf: int = 5
    #: Highest-region window shape in HPFs (both orientations are searched).
    region_hpfs: tuple[int, int] = (2, 5)
    nms_iou: float = 0.25
    #: Probability at or above which a detection is High confidence.
    confidence_high: float = 0.90
    #: Minimum nuclei inside a window for a Ki-67 index to be reported.
    ki67_min_total: int = 200
    #: Whether declare-uncertain detections count toward the mitotic total.
    count_uncertain_mitoses: bool = False
    #: Hotspots returned by the hypercellularity recommender.
    hotspot_k: int = 10
    #: Evidence items listed per criterion.
    evidence_n: int = 10
    background_mean: float = 240.0

    def hpf_px(self, mpp: float) -> int:
        from .core import um_to_px

        return um_to_px(self.hpf_um, mpp)

    def cell_px(self, mpp: float) -> int:
        hpf = self.hpf_px(mpp)
        if hpf % self.cells_per_hpf != 0:
            raise SchemaViolationError(
                f"cells_per_hpf={self.cells_per_hpf} does not divide HPF side {hpf}px"
            )
        return hpf // self.cells_per_hpf

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["thresholds"]["brain_range"] = list(self.thresholds.brain_range)
        obj["region_hpfs"] = list(self.region_hpfs)
        return obj


def config_from_json(obj: dict) -> EngineConfig:
    if not isinstance(obj, dict):
        raise SchemaViolationError("config must be a JSON object")
    kwargs = dict(obj)
    if "thresholds" in kwargs:
        t = dict(kwargs["thresholds"])
        if "brain_range" in t:
            t["brain_range"] = tuple(t["brain_range"])
        kwargs["thresholds"] = ThresholdTable(**t)
    if "region_hpfs" in kwargs:
        kwargs["region_hpfs"] = tuple(kwargs["region_hpfs"])
    try:
        return EngineConfig(**kwargs)
    except TypeError as exc:
        raise SchemaViolationError(f"unknown config field: {exc}") from exc


def load_config(path: str | Path | None) -> EngineConfig:
    """Load a config file, or the defaults when no path is given."""
    if path is None:
        return EngineConfig()
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise SchemaViolationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolationError(f"config is not valid JSON: {exc}") from exc
    return config_from_json(obj)


def override_config(cfg: EngineConfig, **kwargs) -> EngineConfig:
    return replace(cfg, **kwargs)
