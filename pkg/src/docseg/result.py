from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .imaging import LabelMap


@dataclass
class SegmentationResult:
    """Block labels plus everything needed to audit how they were produced."""

    pipeline: str
    label_map: LabelMap
    features: Optional[np.ndarray] = None  # (rows, cols, 2), NaN where not computed
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def wall_time(self) -> float:
        return float(self.timings.get("total", sum(self.timings.values())))

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "pipeline": self.pipeline,
            "label_map": self.label_map.to_dict(),
            "config": self.config,
            "info": self.info,
        }
        if self.features is not None:
            # JSON has no NaN; background blocks carry null
            d["features"] = [
                None if np.isnan(f[0]) else [float(f[0]), float(f[1])]
                for f in self.features.reshape(-1, 2)
            ]
        if timings:
            d["timings"] = dict(self.timings)
        return d
