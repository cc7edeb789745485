"""Dotted-key configuration: defaults < JSON file < command-line overrides."""
from __future__ import annotations

import copy
import json
from typing import Any, Dict, Iterable, Mapping, Optional

from .errors import ConfigError

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "ac.t1": 20.0,
    "ac.t2": 70.0,
    "ac.gamma": 15.0,
    "ac.refine": False,
    "ac.jpeg_quant": False,
    "ac.jpeg_quality": 75,
    "ac.d2_gate": 1.0,
    "smap.enabled": True,
    "smap.components": 2,
    "smap.epsilon": 1e-3,
    "smap.theta_init": 0.5,
    "smap.estimate": True,
    "hist.block_size": 16,
    "hist.t1": 30.0,
    "hist.t2": 45.0,
    "hist.t3": 70.0,
    "hist.mode_t": 0.05,
    "hist.a_window": 4,
    "hist.use_gradient": True,
    "grad.t1": 50,
    "grad.t2": 45,
    "grad.t3": 10,
    "grad.t4": 4,
    "grad.g_lo": 8.0,
    "grad.g_hi": 64.0,
    "extract.include_graphics": False,
}

# keys whose value may also be null
NULLABLE = {"ac.d2_gate"}
# informational keys carried in snapshots and skipped on reload
IGNORED = {"pipeline"}


def flatten(tree: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for key, v in flat.items():
        node = tree
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = v
    return tree


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if value is None:
        if key in NULLABLE:
            return None
        raise ConfigError(f"{key} may not be null")
    if isinstance(value, str):
        text = value.strip()
        if key in NULLABLE and text.lower() in ("none", "null", "off"):
            return None
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(default, int):
        if float(value) != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


class Config:
    """Resolved configuration. Indexing uses dotted keys (``cfg["ac.t1"]``)."""

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self._values = dict(DEFAULTS)
        if values:
            self.update(values)

    def update(self, values: Mapping[str, Any]) -> "Config":
        for key, v in flatten(values).items():
            if key in IGNORED:
                continue
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            self._values[key] = _coerce(key, v)
        return self

    def set_pairs(self, pairs: Iterable[str]) -> "Config":
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"expected KEY=VALUE, got {pair!r}")
            k, v = pair.split("=", 1)
            self.update({k.strip(): v})
        return self

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def copy(self) -> "Config":
        c = Config()
        c._values = copy.deepcopy(self._values)
        return c

    def with_values(self, values: Mapping[str, Any]) -> "Config":
        return self.copy().update(values)

    def flat(self) -> Dict[str, Any]:
        return dict(self._values)

    def snapshot(self) -> Dict[str, Any]:
        return unflatten(self._values)

    def __eq__(self, other) -> bool:
        return isinstance(other, Config) and self._values == other._values

    def __repr__(self) -> str:
        return f"Config({self._values!r})"


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None,
                pairs: Iterable[str] = ()) -> Config:
    cfg = Config()
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        except OSError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg.update(data)
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    cfg.set_pairs(pairs)
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    """Build every threshold object once so bad values fail before any run."""
    ac_thresholds(cfg)
    hist_thresholds(cfg)
    gradient_thresholds(cfg)
    smap_params(cfg)
    if cfg["hist.block_size"] < 1:
        raise ConfigError("hist.block_size must be positive")


def ac_thresholds(cfg: Config):
    from .ac import AcThresholds

    return AcThresholds(cfg["ac.t1"], cfg["ac.t2"], cfg["ac.gamma"])


def hist_thresholds(cfg: Config):
    from .hist import HistThresholds

    return HistThresholds(cfg["hist.t1"], cfg["hist.t2"], cfg["hist.t3"],
                          cfg["hist.mode_t"], cfg["hist.a_window"])


def gradient_thresholds(cfg: Config):
    from .hist import GradientThresholds

    return GradientThresholds(cfg["grad.t1"], cfg["grad.t2"], cfg["grad.t3"],
                              cfg["grad.t4"], cfg["grad.g_lo"], cfg["grad.g_hi"])


def smap_params(cfg: Config):
    from .smap import SmapParams

    try:
        return SmapParams(theta_init=cfg["smap.theta_init"], epsilon=cfg["smap.epsilon"],
                          estimate=cfg["smap.estimate"])
    except ValueError as e:
        raise ConfigError(str(e)) from None


def run_pipeline(name: str, luma, cfg: Optional[Config] = None, workers=None):
    """Run ``"ac"`` or ``"hist"`` on a LumaImage with settings from ``cfg``."""
    from .ac import run_ac_pipeline
    from .hist import run_hist_pipeline

    cfg = cfg or Config()
    if name == "ac":
        res = run_ac_pipeline(
            luma, ac_thresholds(cfg),
            refine=cfg["ac.refine"] and cfg["smap.enabled"],
            seed=cfg["seed"], jpeg_quant=cfg["ac.jpeg_quant"],
            jpeg_quality=cfg["ac.jpeg_quality"], d2_gate=cfg["ac.d2_gate"],
            smap_params=smap_params(cfg), gmm_components=cfg["smap.components"],
            workers=workers,
        )
    elif name == "hist":
        res = run_hist_pipeline(
            luma, hist_thresholds(cfg), gradient_thresholds(cfg),
            use_gradient=cfg["hist.use_gradient"], block_size=cfg["hist.block_size"],
            workers=workers,
        )
    else:
        raise ConfigError(f"unknown pipeline {name!r}")
    res.config = cfg.snapshot()
    res.config["pipeline"] = name
    return res
