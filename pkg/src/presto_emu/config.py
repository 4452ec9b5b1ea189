"""Run configuration: one JSON document with a section per experiment.

Every section is optional and every key inside it too; unknown keys are
errors. A section may carry a ``device`` record that replaces the
experiment's default device:

    {"device": {"qubits": [{"base": 2, "T1": 30e-6}], "noise_sigma": 0.07,
                "coupler": null}}

``base`` picks qubit 1 or 2 of the sample; the remaining keys override
``QubitParams`` fields (SI units, angular frequencies in rad/s).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .device import CouplerParams, DeviceParams, QubitParams, sample_qubit


class ConfigError(ValueError):
    pass


@dataclass
class CharacterizeConfig:
    device: dict | None = None
    shots: int = 1000


@dataclass
class ReadoutConfig:
    device: dict | None = None
    target_overlap: float = 9.7e-4
    tune_noise: bool = True
    shots: int = 100_000


@dataclass
class ResetConfig:
    device: dict | None = None
    shots: int = 100_000
    latency: float = 250e-9
    delay_ticks: int = 700
    tune_noise: bool = True
    target_overlap: float = 9.7e-4


@dataclass
class RbConfig:
    device: dict | None = None
    lengths: list | None = None
    realizations: int = 20
    shots: int = 200


@dataclass
class IswapConfig:
    device: dict | None = None
    detunings: list = field(default_factory=lambda: [0.0, -1.5e6, -0.75e6, 0.5e6, 1.0e6, 2.0e6])
    max_duration: float = 600e-9
    shots: int = 512


@dataclass
class QutritConfig:
    device: dict | None = None
    shots: int = 30_000
    latency: float = 250e-9
    window_ticks: int = 100
    readout_amplitude: float = 0.8


@dataclass
class CwConfig:
    probe_frequency: float = 25e6
    pump_frequencies: list | None = None
    window: int = 10_000
    noise_sigma: float = 0.0


@dataclass
class RunConfig:
    characterize: CharacterizeConfig = field(default_factory=CharacterizeConfig)
    readout_calibrate: ReadoutConfig = field(default_factory=ReadoutConfig)
    reset: ResetConfig = field(default_factory=ResetConfig)
    rb: RbConfig = field(default_factory=RbConfig)
    iswap: IswapConfig = field(default_factory=IswapConfig)
    qutrit_reset: QutritConfig = field(default_factory=QutritConfig)
    cw_demo: CwConfig = field(default_factory=CwConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _strict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return cls(**data)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}")
    out = RunConfig()
    for name, value in data.items():
        cls = type(getattr(out, name))
        sec = _strict(cls, value, name)
        if getattr(sec, "device", None) is not None:
            build_device(sec.device, name)  # fail early
        setattr(out, name, sec)
    return out


_DEVICE_KEYS = {"qubits", "noise_sigma", "feedline_gain", "coupler"}


def build_device(d: dict, where: str = "config") -> DeviceParams:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}.device: expected an object")
    unknown = sorted(set(d) - _DEVICE_KEYS)
    if unknown:
        raise ConfigError(f"{where}.device: unknown key(s) {', '.join(unknown)}")
    qfields = {f.name for f in dataclasses.fields(QubitParams)}
    qubits = []
    for k, q in enumerate(d.get("qubits", [{"base": 2}])):
        if not isinstance(q, dict):
            raise ConfigError(f"{where}.device.qubits[{k}]: expected an object")
        q = dict(q)
        base = q.pop("base", 2)
        bad = sorted(set(q) - qfields)
        if bad:
            raise ConfigError(f"{where}.device.qubits[{k}]: unknown key(s) {', '.join(bad)}")
        try:
            qubits.append(sample_qubit(int(base), **q))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.device.qubits[{k}]: {exc}") from exc
    coupler = d.get("coupler")
    if coupler is not None:
        coupler = _strict(CouplerParams, coupler, f"{where}.device.coupler")
        coupler.pair = tuple(coupler.pair)
    try:
        return DeviceParams(qubits, float(d.get("noise_sigma", 0.0)), float(d.get("feedline_gain", 1.0)), coupler)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.device: {exc}") from exc
