"""Declarative run configuration: one TOML file with a section per stage.

Every tunable constant of the pipeline appears here as a named key with its
default.  Validation errors name the offending key path, for example
``forecast.hidden: Input should be greater than or equal to 1``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .disaggregation import DisaggConfig
from .durations import MAX_DURATION, MIN_GROUP_EVENTS
from .errors import ConfigError
from .events import DEFAULT_THRESHOLD
from .extraction import ExtractionConfig
from .forecasting import ForecastConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticSection(_Section):
    scenario: Literal["default", "large-building"] = "default"
    days: float = Field(14.0, gt=0)
    devices: int = Field(8, ge=0)


class IngestSection(_Section):
    input: str = ""  # CSV to ingest; empty means the synth-gen output in the run directory


class ExtractionSection(_Section):
    threshold: float = Field(DEFAULT_THRESHOLD, gt=0)
    k_max: int = Field(50, ge=2)
    n_init: int = Field(10, ge=1)
    sigma_factor: float = Field(2.0, gt=0)
    k_outlier: int = Field(10, ge=1)
    rho_min: float = Field(0.9, ge=-1, le=1)
    ape_max: float = Field(0.1, ge=0)
    m_max: int = Field(5, ge=1)
    delta_bic: float = 2.0
    max_duration: int = Field(MAX_DURATION, ge=1)
    min_group_events: int = Field(MIN_GROUP_EVENTS, ge=1)


class DisaggregationSection(_Section):
    alpha: float = Field(0.5, ge=0, le=1)
    beta: float = Field(0.5, ge=0, le=1)
    window: int = Field(3600, ge=3)
    overlap: int = Field(300, ge=0)
    particles: int = Field(40, ge=1)
    iterations: int = Field(200, ge=0)
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    candidates: int = Field(5, ge=1)
    patience: int = Field(50, ge=1)
    v_max: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _weights_sum_to_one(self):
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError("alpha and beta must sum to 1")
        if self.overlap >= self.window:
            raise ValueError("overlap must be smaller than window")
        return self


class ForecastSection(_Section):
    hidden: int = Field(214, ge=1)
    layers: int = Field(3, ge=1)
    dropout: float = Field(0.05, ge=0, lt=1)
    lr: float = Field(0.01, gt=0)
    batch: int = Field(2048, ge=1)
    momentum: float = Field(0.0, ge=0, lt=1)
    epochs: int = Field(300, ge=1)
    patience: int = Field(5, ge=1)
    val_fraction: float = Field(0.05, gt=0, lt=1)
    loss: Literal["msle", "msle-ratio"] = "msle"
    optimizer: Literal["sgd", "adam"] = "adam"
    stride: int = Field(60, ge=1)
    out_bins: int = Field(60, ge=1)
    past_bins: int = Field(60, ge=1)
    week_bins: int = Field(15, ge=1)
    threshold: float = Field(0.1, ge=0)
    states: Literal["disaggregated", "truth"] = "disaggregated"
    test_days: float = Field(5.0, gt=0)


class EvaluateSection(_Section):
    baselines: list[Literal["persistence-15min", "persistence-7d"]] = ["persistence-15min", "persistence-7d"]
    stride: int = Field(900, ge=1)
    plots: bool = True


class RunConfig(_Section):
    seed: int = 0
    run_dir: str = "run"
    synthetic: SyntheticSection = SyntheticSection()
    ingest: IngestSection = IngestSection()
    extraction: ExtractionSection = ExtractionSection()
    disaggregation: DisaggregationSection = DisaggregationSection()
    forecast: ForecastSection = ForecastSection()
    evaluate: EvaluateSection = EvaluateSection()

    # -- views onto the library configs --------------------------------------

    def extraction_config(self) -> ExtractionConfig:
        return ExtractionConfig(**self.extraction.model_dump(), seed=self.seed)

    def disagg_config(self) -> DisaggConfig:
        return DisaggConfig(**self.disaggregation.model_dump(), seed=self.seed)

    def forecast_config(self) -> ForecastConfig:
        d = self.forecast.model_dump(exclude={"states", "test_days"})
        return ForecastConfig(**d, seed=self.seed)

    def canonical(self) -> str:
        """Sorted compact JSON of every setting except the run directory, which is a location."""
        return json.dumps(self.model_dump(mode="json", exclude={"run_dir"}), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """SHA-256 of :meth:`canonical`; identical for equivalent configs."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{where}: {err['msg']}")
    return "; ".join(lines)


def _parse_value(text: str):
    """Interpret an override value as a TOML literal, falling back to a plain string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``section.key=value`` to the raw config mapping in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, value = assignment.split("=", 1)
    parts = [p.strip() for p in key.strip().split(".")]
    if not all(parts):
        raise ConfigError(f"override {assignment!r} has an empty key")
    node = doc
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"{'.'.join(parts[:-1])}: not a section")
        node = nxt
    node[parts[-1]] = _parse_value(value.strip())


def load_config(path=None, overrides=()) -> RunConfig:
    """Read ``path`` (optional), apply ``overrides`` and validate."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        try:
            doc = tomllib.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"{p}: no such config file") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    for item in overrides:
        apply_override(doc, item)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def default_toml() -> str:
    """The full default configuration as TOML text."""
    cfg = RunConfig().model_dump(mode="json")
    lines = []
    for key, value in cfg.items():
        if not isinstance(value, dict):
            lines.append(f"{key} = {_toml_value(value)}")
    for key, value in cfg.items():
        if isinstance(value, dict):
            lines.append("")
            lines.append(f"[{key}]")
            lines.extend(f"{k} = {_toml_value(v)}" for k, v in value.items())
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(v)
