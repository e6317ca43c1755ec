"""Experiment configuration: a flat key = value text file.

Schema (defaults in brackets; lists are comma-separated):

    dataset       blobs | spirals                (required)
    out           output directory               (required, CLI --out overrides)
    classes       int >= 2                       [3]
    dims          int >= 1, blobs only           [2]
    train_points  int                            [2000]
    test_points   int                            [1000]
    spread        float, blobs cluster std       [0.45]
    noise         float, spirals arm noise       [0.15]
    seeds         list of ints                   [0]
    m_values      list of ints >= 1              [50,6]
    families      subset of the six families     [all six]
    trunks        subset of arch_A,arch_B        [arch_A,arch_B]
    target_sizes  subset of small,medium,large   [small,medium,large]
    epochs        int, all families but the BNN  [30]
    bnn_epochs    int                            [50]
    members       int, ensemble size             [6]
    lr            float                          [1e-3]
    batch_size    int                            [64]
    dropout_rate  float in [0,1)                 [0.5]
    temperature   float > 0                      [0.1]
    prior_std     float > 0                      [1.0]
    oracle        in_process | http://HOST:PORT  [in_process]

Unknown keys, missing required keys, and type errors all fail naming the key
(and line where applicable).
"""

from dataclasses import dataclass, field, fields

from .errors import ConfigError, DataFormatError
from .extraction import FAMILIES, TARGET_SIZES, TRUNK_NAMES

DATASETS = ("blobs", "spirals")


@dataclass
class ExperimentConfig:
    dataset: str
    out: str
    classes: int = 3
    dims: int = 2
    train_points: int = 2000
    test_points: int = 1000
    spread: float = 0.45
    noise: float = 0.15
    seeds: tuple = (0,)
    m_values: tuple = (50, 6)
    families: tuple = FAMILIES
    trunks: tuple = TRUNK_NAMES
    target_sizes: tuple = TARGET_SIZES
    epochs: int = 30
    bnn_epochs: int = 50
    members: int = 6
    lr: float = 1e-3
    batch_size: int = 64
    dropout_rate: float = 0.5
    temperature: float = 0.1
    prior_std: float = 1.0
    oracle: str = "in_process"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, "
                              f"got {self.dataset!r}")
        if not self.out:
            raise ConfigError("out: an output directory is required")
        if self.classes < 2:
            raise ConfigError("classes: need at least 2")
        if self.dataset == "spirals" and self.classes not in (2, 3):
            raise ConfigError("classes: spirals supports 2 or 3 classes")
        if not self.seeds:
            raise ConfigError("seeds: the seed list must be non-empty")
        if not self.m_values:
            raise ConfigError("m_values: need at least one forward-pass count")
        if any(m < 1 for m in self.m_values):
            raise ConfigError("m_values: every entry must be >= 1")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError(f"families: unknown family {fam!r}")
        for trunk in self.trunks:
            if trunk not in TRUNK_NAMES:
                raise ConfigError(f"trunks: unknown trunk {trunk!r}")
        for size in self.target_sizes:
            if size not in TARGET_SIZES:
                raise ConfigError(f"target_sizes: unknown size {size!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate: must lie in [0, 1)")
        if self.temperature <= 0 or self.prior_std <= 0 or self.lr <= 0:
            raise ConfigError("temperature, prior_std and lr must be positive")
        if self.oracle != "in_process" and not self.oracle.startswith("http"):
            raise ConfigError("oracle: must be 'in_process' or an http URL")
        return self


_INT_LIST_KEYS = {"seeds", "m_values"}
_STR_LIST_KEYS = {"families", "trunks", "target_sizes"}
_REQUIRED = ("dataset", "out")


def _parse_value(key, raw, kind, lineno):
    try:
        if key in _INT_LIST_KEYS:
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        if key in _STR_LIST_KEYS:
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise DataFormatError(f"key {key!r}: {exc}", line=lineno) from exc


def parse_config(path, overrides=None):
    """Parse and validate a config file, applying CLI overrides last."""
    kinds = {}
    type_map = {"int": int, "float": float, "str": str, "tuple": tuple}
    for f in fields(ExperimentConfig):
        kinds[f.name] = type_map[f.type] if isinstance(f.type, str) else f.type
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise DataFormatError("expected 'key = value'", line=lineno)
            key, _, raw = stripped.partition("=")
            key = key.strip()
            raw = raw.split("#", 1)[0].strip()
            if key not in kinds:
                raise DataFormatError(f"unknown config key {key!r}", line=lineno)
            if key in values:
                raise DataFormatError(f"duplicate key {key!r}", line=lineno)
            values[key] = _parse_value(key, raw, kinds[key], lineno)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required config key {key!r}")
    return ExperimentConfig(**values)
