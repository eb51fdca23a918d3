"""Scenario configuration and presets.

A scenario file is YAML whose keys mirror the dataclass fields below; any
unknown key is rejected. Nested sections: ``source``, ``rates``,
``tracker`` and ``aapt``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class SourceModel:
    eta: float = float(np.pi / 4)  # pi/4: balanced HV/VH
    mix_eps: float = 0.0


@dataclass(frozen=True)
class RateModel:
    pair_rate_total: float = 1600.0  # counts/s over a complete projector basis
    background_rate: float = 0.0  # counts/s per projector
    classical_power: float = 1.0
    power_noise_rel: float = 1e-4

    @property
    def k_true(self) -> float:
        return self.pair_rate_total / 4.0


@dataclass(frozen=True)
class TrackerSettings:
    f_th: float = 0.98
    tick_s: float = 0.1
    gain: float = 0.5
    v_max: float = 5.0
    step_max: float = 0.5
    step_min: float = 0.01
    kick_sigma: float | None = None
    step_grow: float = 2.0


@dataclass(frozen=True)
class AaptSettings:
    tau_s: float = 10.0
    dead_time_s: float = 3.0  # per 16-projector tomography
    mode: str = "both"  # segmented | sliding | both
    n_steps: int = 2**18
    burn_in: int | None = None
    thin: int | None = None
    beta0: float = 0.05
    likelihood: str = "exact"
    n_chains: int = 1

    @property
    def period_s(self) -> float:
        return self.tau_s + self.dead_time_s / 16.0


@dataclass(frozen=True)
class ScenarioConfig:
    duration_s: float = 163.0
    drift_sigma: float = 1e-3  # rad / sqrt(s)
    perturbation_events: tuple = ()  # ((time_s, magnitude_rad), ...)
    depol_p: float = 0.041
    source: SourceModel = field(default_factory=SourceModel)
    rates: RateModel = field(default_factory=RateModel)
    tracker: TrackerSettings = field(default_factory=TrackerSettings)
    aapt: AaptSettings = field(default_factory=AaptSettings)
    seed: int = 0
    initial: str = "identity"  # identity | random
    receiver_misalignment: tuple | None = None  # (theta, psi, lam) on the quantum arm
    choi_dump_times: tuple = ()

    def validate(self) -> "ScenarioConfig":
        bad = []
        if not self.duration_s > 0:
            bad.append("duration_s")
        if self.drift_sigma < 0:
            bad.append("drift_sigma")
        for i, ev in enumerate(self.perturbation_events):
            if len(ev) != 2 or not 0 <= ev[0] <= self.duration_s:
                bad.append(f"perturbation_events[{i}]")
        if not 0 <= self.depol_p <= 1:
            bad.append("depol_p")
        if not 0 <= self.source.mix_eps <= 1:
            bad.append("source.mix_eps")
        for name in ("pair_rate_total", "background_rate", "classical_power", "power_noise_rel"):
            if getattr(self.rates, name) < 0:
                bad.append(f"rates.{name}")
        t = self.tracker
        if not t.tick_s > 0:
            bad.append("tracker.tick_s")
        if not 0 < t.step_min <= t.step_max:
            bad.append("tracker.step_min")
        if not 0 < t.f_th <= 1:
            bad.append("tracker.f_th")
        a = self.aapt
        if not a.tau_s > 0:
            bad.append("aapt.tau_s")
        if a.dead_time_s < 0:
            bad.append("aapt.dead_time_s")
        if a.mode not in ("segmented", "sliding", "both"):
            bad.append("aapt.mode")
        if a.likelihood not in ("exact", "literal"):
            bad.append("aapt.likelihood")
        if a.n_steps < 1 or (a.burn_in is not None and not 0 <= a.burn_in <= a.n_steps):
            bad.append("aapt.n_steps")
        if a.n_chains < 1:
            bad.append("aapt.n_chains")
        if not 0 <= self.seed < 2**64:
            bad.append("seed")
        if self.initial not in ("identity", "random"):
            bad.append("initial")
        if self.receiver_misalignment is not None and len(self.receiver_misalignment) != 3:
            bad.append("receiver_misalignment")
        if bad:
            raise ConfigError(bad)
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


_SECTIONS = {"source": SourceModel, "rates": RateModel, "tracker": TrackerSettings, "aapt": AaptSettings}


def _build(cls, data: dict, prefix: str, bad: list):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        if k not in names:
            bad.append(prefix + k)
            continue
        if k in _SECTIONS and cls is ScenarioConfig:
            if not isinstance(v, dict):
                bad.append(prefix + k)
                continue
            v = _build(_SECTIONS[k], v, f"{k}.", bad)
        elif k in ("perturbation_events",):
            v = tuple(tuple(float(a) for a in ev) for ev in v)
        elif k in ("receiver_misalignment",) and v is not None:
            v = tuple(float(a) for a in v)
        elif k == "choi_dump_times":
            v = tuple(float(a) for a in v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        bad.append(f"{prefix}{exc}")
        return cls()


def config_from_dict(data: dict) -> ScenarioConfig:
    bad: list = []
    cfg = _build(ScenarioConfig, dict(data or {}), "", bad)
    try:
        cfg.validate()
    except ConfigError as exc:
        bad += [f for f in exc.fields if f not in bad]
    except TypeError:
        # wrongly typed values; the offending keys are not recoverable here
        bad.append("<types>")
    if bad:
        raise ConfigError(bad)
    return cfg


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(["<file>"], f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(["<file>"], f"{path} does not hold a mapping")
    return config_from_dict(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return dataclasses.replace(cfg, seed=int(seed)).validate()


def _preset(**kw) -> ScenarioConfig:
    return ScenarioConfig(**kw).validate()


AB_EVENTS = ((0.0, 2.5), (1695.0, 2.5), (3350.0, 2.5))
AC_EVENTS = ((0.0, 2.5), (1678.0, 2.5), (2981.0, 2.5))

PRESETS = {
    # perturbation schedule of the Alice-Bob link
    "alice-bob": lambda: _preset(
        duration_s=5000.0,
        perturbation_events=AB_EVENTS,
        depol_p=0.041,
        rates=RateModel(pair_rate_total=1600.0),
    ),
    "alice-charlie": lambda: _preset(
        duration_s=4600.0,
        perturbation_events=AC_EVENTS,
        depol_p=0.041,
        rates=RateModel(pair_rate_total=780.0),
    ),
    # feedback already converged: 25 consecutive segmented tomographies
    "alice-bob-converged": lambda: _preset(
        duration_s=25 * 163.0,
        depol_p=0.041,
        rates=RateModel(pair_rate_total=1600.0),
        aapt=AaptSettings(mode="segmented", n_steps=2**16),
    ),
    "alice-bob-perturbed": lambda: _preset(
        duration_s=5000.0,
        perturbation_events=AB_EVENTS,
        depol_p=0.041,
        rates=RateModel(pair_rate_total=1600.0),
        aapt=AaptSettings(mode="both", n_steps=2**16),
    ),
    # process-level integration-time sweep: one tomography per tau
    "integration-sweep": lambda: _preset(
        duration_s=16 * 10.1875,
        drift_sigma=0.0,
        depol_p=0.041,
        rates=RateModel(pair_rate_total=1600.0, power_noise_rel=0.0),
        aapt=AaptSettings(mode="segmented"),
    ),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(["preset"], f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
