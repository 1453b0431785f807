"""Pipeline configuration: one JSON document with a section per stage.

Every field has a default, so ``{}`` is a valid config and
``hetradar --print-config`` dumps the full effective document.
"""

import hashlib
import json
from dataclasses import dataclass, fields, is_dataclass, replace
from pathlib import Path

from .errors import ConfigError
from .holmes import HolmesConfig
from .mining_loss import MiningConfig, SimilarityConfig
from .pipeline import Toggles
from .preprocess import DEFAULT_RCS_OFFSET, RemovalConfig
from .scan_model import PolarGrid
from .sync import CalibrationConfig


@dataclass(frozen=True)
class PreprocessSection:
    removal: RemovalConfig = RemovalConfig()
    K: int = 5
    rcs_offset: float = DEFAULT_RCS_OFFSET
    # consecutive 4D frames further apart than this start a new window
    max_gap: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("preprocess.K must be >= 1")
        if not self.rcs_offset > 0:
            raise ConfigError("preprocess.rcs_offset must be positive")


@dataclass(frozen=True)
class SyncSection:
    delta: int = 16
    calibration: CalibrationConfig = CalibrationConfig()

    def __post_init__(self):
        if self.delta < 1:
            raise ConfigError("sync.delta must be >= 1")


@dataclass(frozen=True)
class BackboneSection:
    channels: tuple = (8, 16, 32, 64, 128)
    high_channels: int = 128
    # SHBW file; None -> seeded random weights
    weights: str | None = None


@dataclass(frozen=True)
class MiningSection:
    mining: MiningConfig = MiningConfig()
    similarity: SimilarityConfig = SimilarityConfig()
    gamma: float = 1.0
    fixed_margin: float = 0.1


@dataclass(frozen=True)
class EvalSection:
    truth_radius: float = 5.0
    ks: tuple = ("1", "5", "10", "1%")
    curve_max: int = 25

    def __post_init__(self):
        if not self.truth_radius > 0:
            raise ConfigError("eval.truth_radius must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    grid: PolarGrid = PolarGrid()
    preprocess: PreprocessSection = PreprocessSection()
    sync: SyncSection = SyncSection()
    backbone: BackboneSection = BackboneSection()
    holmes: HolmesConfig = HolmesConfig()
    mining: MiningSection = MiningSection()
    eval: EvalSection = EvalSection()
    toggles: Toggles = Toggles()


def to_dict(obj):
    if is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _check_scalar(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")


def from_dict(cls, data, where="config", base=None):
    """Build ``cls`` from a (possibly partial) dict; unknown keys are errors.

    Missing keys keep the values of ``base`` (default: ``cls()``).
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    default = cls() if base is None else base
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {}
    for name, value in data.items():
        cur = getattr(default, name)
        path = f"{where}.{name}"
        if is_dataclass(cur):
            value = from_dict(type(cur), value, path, cur)
        elif isinstance(cur, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            value = tuple(value)
        elif cur is not None and value is not None:
            _check_scalar(value, cur, path)
        kw[name] = value
    try:
        return replace(default, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path=None):
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    return from_dict(PipelineConfig, data)


def dump_config(cfg):
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def config_hash(cfg):
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
