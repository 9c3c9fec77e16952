"""JSON run configuration: defaults, strict parsing, canonical digest.

The on-disk format is a nested JSON object with sections experiment,
source, memory, repeater, and simulation.  Every key has a default;
unknown keys are rejected by dotted name.  The digest is the sha256 of
the canonical (sorted-keys) serialization of the fully populated config,
so it is stable under key reordering in the input file.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .engine import (
    REFERENCE_BACKGROUND_MEAN,
    REFERENCE_DELAY_LINE,
    REFERENCE_GENERATION_PHASE,
    REFERENCE_INPUT_LOSS_RATIO,
    REFERENCE_INTERFEROMETER_COUPLING,
    REFERENCE_RETRIEVAL_COUPLING,
    ExperimentConfig,
    RepeaterParams,
)
from .errors import ConfigError
from .fock import ClickDetector
from .memory import MemoryParams
from .source import SourceParams


@dataclass(frozen=True)
class SimulationSettings:
    n_trials: int = 1_200_000_000
    fringe_trials: int = 3_200_000_000
    phase_points: int = 16
    repeater_samples: int = 1000
    od_grid: tuple = tuple(range(50, 501, 50))

    def __post_init__(self):
        if self.n_trials < 0 or self.fringe_trials < 0:
            raise ValueError("trial counts must be nonnegative")
        if self.phase_points < 4:
            raise ValueError("phase_points must be at least 4")
        if self.repeater_samples <= 0:
            raise ValueError("repeater_samples must be positive")
        if not self.od_grid or any(od <= 0 for od in self.od_grid):
            raise ValueError("od_grid entries must be positive")


@dataclass(frozen=True)
class AppConfig:
    experiment: ExperimentConfig
    repeater: RepeaterParams
    simulation: SimulationSettings


def _defaults() -> dict:
    exp = ExperimentConfig()
    src = SourceParams()
    mem = MemoryParams()
    rep = RepeaterParams()
    sim = SimulationSettings()
    return {
        "experiment": {
            "mot_rate": exp.mot_rate,
            "trials_per_cycle": exp.trials_per_cycle,
            "generation_phase": exp.generation_phase,
            "delay_line_transmission": exp.delay_line_transmission,
            "interferometer_coupling": exp.interferometer_coupling,
            "input_loss_ratio": exp.input_loss_ratio,
            "retrieval_coupling": exp.retrieval_coupling,
            "filter_transmission": exp.filter_transmission,
            "detector_efficiency": exp.detector_efficiency,
            "storage_time": exp.storage_time,
            "seed": exp.seed,
        },
        "source": {
            "chi": src.chi,
            "field1_transmission": src.field1_transmission,
            "heralding_efficiency": src.heralding_efficiency,
            "herald_detector_efficiency": src.herald_detector.efficiency,
            "herald_dark_prob": src.herald_detector.dark_prob,
            "n_max": src.n_max,
        },
        "memory": {
            "od": mem.od,
            "gamma": mem.gamma,
            "gamma0": mem.gamma0,
            "lifetime_tau": mem.lifetime_tau,
            "background_mean": mem.background_mean,
            "od2_dephasing": mem.od2_dephasing,
        },
        "repeater": {
            "total_length_km": rep.total_length_km,
            "link_count": rep.link_count,
            "attenuation_length_km": rep.attenuation_length_km,
            "memory_efficiency": rep.memory_efficiency,
            "detector_efficiency": rep.detector_efficiency,
            "attempt_period": rep.attempt_period,
        },
        "simulation": {
            "n_trials": sim.n_trials,
            "fringe_trials": sim.fringe_trials,
            "phase_points": sim.phase_points,
            "repeater_samples": sim.repeater_samples,
            "od_grid": list(sim.od_grid),
        },
    }


def default_config() -> dict:
    return _defaults()


def calibrated_config() -> dict:
    """Defaults moved to the calibrated reference operating point."""
    data = _defaults()
    data["experiment"].update({
        "generation_phase": REFERENCE_GENERATION_PHASE,
        "delay_line_transmission": REFERENCE_DELAY_LINE,
        "interferometer_coupling": REFERENCE_INTERFEROMETER_COUPLING,
        "input_loss_ratio": REFERENCE_INPUT_LOSS_RATIO,
        "retrieval_coupling": REFERENCE_RETRIEVAL_COUPLING,
    })
    data["memory"]["background_mean"] = REFERENCE_BACKGROUND_MEAN
    return data


_INT_KEYS = {
    "experiment.trials_per_cycle", "experiment.seed", "source.n_max",
    "repeater.link_count", "simulation.n_trials", "simulation.fringe_trials",
    "simulation.phase_points", "simulation.repeater_samples",
}


def _coerce(path: str, value: Any) -> Any:
    if path == "simulation.od_grid":
        if not isinstance(value, Sequence) or isinstance(value, str):
            raise ConfigError(f"config key '{path}' must be a list")
        return [_coerce(path + "[]", v) for v in value]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config key '{path}' must be a number, "
                          f"got {value!r}")
    if path in _INT_KEYS:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"config key '{path}' must be an integer")
        return int(value)
    return float(value)


def _merge(data: Mapping) -> dict:
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")
    merged = _defaults()
    for section, body in data.items():
        if section not in merged:
            raise ConfigError(f"unknown config key '{section}'")
        if not isinstance(body, Mapping):
            raise ConfigError(f"config section '{section}' must be an object")
        for key, value in body.items():
            path = f"{section}.{key}"
            if key not in merged[section]:
                raise ConfigError(f"unknown config key '{path}'")
            merged[section][key] = value
    # normalize every value (defaults included) so the canonical form is
    # independent of int/float spelling in the input
    for section, body in merged.items():
        for key in body:
            body[key] = _coerce(f"{section}.{key}", body[key])
    return merged


def parse_config(data: Mapping) -> AppConfig:
    """Validate a config mapping against the schema and build the runtime
    parameter objects.  Raises ConfigError naming the offending key."""
    merged = _merge(data)
    e, s, m = merged["experiment"], merged["source"], merged["memory"]
    r, sim = merged["repeater"], merged["simulation"]
    try:
        source = SourceParams(
            chi=s["chi"],
            herald_detector=ClickDetector(
                efficiency=s["herald_detector_efficiency"],
                dark_prob=s["herald_dark_prob"]),
            field1_transmission=s["field1_transmission"],
            heralding_efficiency=s["heralding_efficiency"],
            n_max=s["n_max"])
        memory = MemoryParams(
            od=m["od"], gamma=m["gamma"], gamma0=m["gamma0"],
            storage_time=e["storage_time"], lifetime_tau=m["lifetime_tau"],
            background_mean=m["background_mean"],
            od2_dephasing=m["od2_dephasing"])
        experiment = ExperimentConfig(
            mot_rate=e["mot_rate"],
            trials_per_cycle=e["trials_per_cycle"],
            generation_phase=e["generation_phase"],
            source=source, memory=memory,
            delay_line_transmission=e["delay_line_transmission"],
            interferometer_coupling=e["interferometer_coupling"],
            input_loss_ratio=e["input_loss_ratio"],
            retrieval_coupling=e["retrieval_coupling"],
            filter_transmission=e["filter_transmission"],
            detector_efficiency=e["detector_efficiency"],
            storage_time=e["storage_time"], seed=e["seed"])
        repeater = RepeaterParams(
            total_length_km=r["total_length_km"],
            link_count=r["link_count"],
            attenuation_length_km=r["attenuation_length_km"],
            memory_efficiency=r["memory_efficiency"],
            detector_efficiency=r["detector_efficiency"],
            attempt_period=r["attempt_period"])
        simulation = SimulationSettings(
            n_trials=sim["n_trials"], fringe_trials=sim["fringe_trials"],
            phase_points=sim["phase_points"],
            repeater_samples=sim["repeater_samples"],
            od_grid=tuple(sim["od_grid"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return AppConfig(experiment=experiment, repeater=repeater,
                     simulation=simulation)


def emit_config(data: Mapping) -> dict:
    """Fully populated config dict (defaults merged in)."""
    return _merge(data)


def canonical_json(data: Mapping) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_digest(data: Mapping) -> str:
    """sha256 of the canonical serialization of the merged config."""
    return hashlib.sha256(
        canonical_json(_merge(data)).encode()).hexdigest()


def apply_overrides(data: Mapping, assignments: Sequence[str]) -> dict:
    """Apply --set key=value pairs (dotted paths, JSON literal values)."""
    out = copy.deepcopy(dict(data))
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form "
                              "section.key=value")
        section, dot, field = key.partition(".")
        if not dot:
            raise ConfigError(f"override key {key!r} needs a section prefix")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"override value {raw!r} is not valid JSON")
        out.setdefault(section, {})
        if not isinstance(out[section], dict):
            raise ConfigError(f"config section '{section}' must be an object")
        out[section][field] = value
    return out
