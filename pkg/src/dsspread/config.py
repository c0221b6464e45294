"""Experiment configuration: flat YAML documents and named presets."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .waveform import WaveformKind

ESTIMATORS = ("none", "OMP", "VB", "FVB", "SVB")
DETECTORS = ("1tap", "MMSE", "VSSD")


class ConfigError(ValueError):
    pass


def _as_list(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


@dataclass
class ExperimentConfig:
    waveforms: list = field(default_factory=lambda: ["ODSS"])
    pilot_waveform: str | None = "ODSS"
    M: int = 64
    N: int = 2
    B: float = 10e3
    f_L: float = 10e3
    M_p: int = 32
    N_p: int = 2
    tau_max: float = 32e-3
    alpha_max: float = 1.001
    P: int = 5
    scale_model: str = "uniform"
    channel: str = "offgrid"
    N_tau: int = 50
    M_alpha: int = 5
    constellation: str = "BPSK"
    snr_db: list = field(default_factory=lambda: [0.0, 10.0, 20.0])
    trials: int = 200
    estimators: list = field(default_factory=lambda: ["VB"])
    detectors: list = field(default_factory=lambda: ["VSSD"])
    iced: bool = False
    iced_rounds: int = 3
    iced_detector: str = "VSSD"
    csi: str = "PCSIR"
    seed: int = 0
    out: str | None = None
    J_max: int = 100
    eps_conv: float = 1e-3
    threshold_frac: float = 0.05
    warmup: int = 3

    def __post_init__(self):
        self.waveforms = [WaveformKind(str(w).upper()).value for w in _as_list(self.waveforms)]
        self.estimators = [_canon(e, ESTIMATORS, "estimator") for e in _as_list(self.estimators)]
        self.detectors = [_canon(d, DETECTORS, "detector") for d in _as_list(self.detectors)]
        self.iced_detector = _canon(self.iced_detector, DETECTORS, "detector")
        self.snr_db = [float(s) for s in _as_list(self.snr_db)]
        self.csi = str(self.csi).upper()
        if self.pilot_waveform is not None:
            p = str(self.pilot_waveform).upper()
            self.pilot_waveform = "same" if p == "SAME" else WaveformKind(p).value

    def validate(self, campaign: str | None = None) -> "ExperimentConfig":
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_db:
            raise ConfigError("SNR list is empty")
        if any(s != s for s in self.snr_db):
            raise ConfigError("SNR list contains NaN")
        if not self.waveforms:
            raise ConfigError("no waveform configured")
        if self.channel not in ("ongrid", "offgrid"):
            raise ConfigError(f"channel must be 'ongrid' or 'offgrid', got {self.channel!r}")
        if self.csi not in ("PCSIR", "ECSIR"):
            raise ConfigError(f"csi must be PCSIR or ECSIR, got {self.csi!r}")
        if self.M_p % self.N_p:
            raise ConfigError("M_p must be a multiple of N_p")
        if self.M_alpha < 1 or self.M_alpha % 2 == 0:
            raise ConfigError("M_alpha must be a positive odd integer")
        if self.N_tau < 1 or self.P < 1 or self.M < 1 or self.N < 1:
            raise ConfigError("grid, path and frame sizes must be positive")
        if self.iced_rounds < 0:
            raise ConfigError("iced_rounds must be >= 0")
        if campaign == "ber" and self.csi == "PCSIR" and any(e != "none" for e in self.estimators):
            warnings.warn("PCSIR runs ignore the estimator setting", stacklevel=2)
        return self

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def _canon(value, allowed, what):
    key = str(value).strip()
    for a in allowed:
        if key.upper() == a.upper():
            return a
    raise ConfigError(f"unknown {what} {value!r}; expected one of {', '.join(allowed)}")


PRESETS: dict[str, dict] = {
    "fig-nmse-ongrid": {
        "channel": "ongrid",
        "waveforms": ["ODSS"],
        "estimators": ["OMP", "VB", "FVB", "SVB"],
        "snr_db": [0, 5, 10, 15, 20, 25, 30],
        "trials": 200,
    },
    "fig-nmse-offgrid": {
        "channel": "offgrid",
        "waveforms": ["ODSS"],
        "estimators": ["OMP", "VB", "FVB", "SVB"],
        "snr_db": [0, 5, 10, 15, 20, 25, 30],
        "trials": 200,
    },
    "fig-ber-pcsir": {
        "csi": "PCSIR",
        "waveforms": ["OTFS", "OFDM", "OCDM", "ODSS"],
        "estimators": ["none"],
        "detectors": ["1tap", "MMSE", "VSSD"],
        "snr_db": [0, 5, 10, 15, 20],
        "trials": 1563,
    },
    "fig-ber-ecsir": {
        "csi": "ECSIR",
        "pilot_waveform": "same",
        "waveforms": ["OTFS", "OFDM", "OCDM", "ODSS"],
        "estimators": ["SVB"],
        "detectors": ["MMSE", "VSSD"],
        "snr_db": [0, 5, 10, 15, 20],
        "trials": 200,
    },
    "fig-nmse-iced": {
        "channel": "offgrid",
        "waveforms": ["ODSS"],
        "estimators": ["FVB", "SVB"],
        "iced": True,
        "iced_rounds": 3,
        "iced_detector": "VSSD",
        "snr_db": [0, 4, 8, 12, 16, 20],
        "trials": 200,
    },
}

_FIELDS = {f.name for f in fields(ExperimentConfig)}


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping of keys to values")
    doc = dict(doc)
    preset = doc.pop("preset", None)
    base: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        base = dict(PRESETS[preset])
    for alias, name in (("waveform", "waveforms"), ("estimator", "estimators"), ("detector", "detectors")):
        if alias in doc:
            doc[name] = doc.pop(alias)
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    base.update(doc)
    try:
        return ExperimentConfig(**base)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(source: str | Path) -> ExperimentConfig:
    """Read a YAML file, or resolve a preset name when no such file exists."""
    path = Path(source)
    if not path.exists():
        if str(source) in PRESETS:
            return config_from_dict({"preset": str(source)})
        raise ConfigError(f"configuration file {source} not found")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return config_from_dict(doc or {})
