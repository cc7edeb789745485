"""Block-based document image segmentation and text extraction."""
from .errors import ConfigError, FormatError, GeometryError
from .imaging import (BlockGrid, BlockLabel, LabelMap, LumaImage, RasterImage, load_image,
                      render_overlay, save_image, tile_blocks, to_luminance)
from .config import Config, load_config, run_pipeline
from .ac import AcThresholds, run_ac_pipeline
from .hist import GradientThresholds, HistThresholds, run_hist_pipeline
from .result import SegmentationResult

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FormatError", "GeometryError",
    "BlockGrid", "BlockLabel", "LabelMap", "LumaImage", "RasterImage", "load_image",
    "render_overlay", "save_image", "tile_blocks", "to_luminance",
    "Config", "load_config", "run_pipeline",
    "AcThresholds", "run_ac_pipeline",
    "GradientThresholds", "HistThresholds", "run_hist_pipeline",
    "SegmentationResult",
]
