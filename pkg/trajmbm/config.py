import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional, Union

from .pmbm import FULL_WINDOW, FilterConfig
from .simulation import ScenarioConfig


@dataclass(frozen=True)
class RunConfig:
    name: str = "custom"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    trials: int = 1
    # master seed, scenario.seed is used when unset
    seed: Optional[int] = None
    output_dir: str = "results"
    debug_dual: bool = False
    record_timing: bool = False

    @property
    def effective_seed(self) -> int:
        return self.scenario.seed if self.seed is None else self.seed

    def validate(self):
        self.scenario.validate()
        self.filter.validate()
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.seed is not None and (isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0):
            raise ValueError(f"seed must be an integer >= 0, got {self.seed!r}")
        if not self.output_dir:
            raise ValueError("output_dir must not be empty")


def _table1_preset(name: str, pd: float, clutter_rate: float) -> RunConfig:
    return RunConfig(
        name=name,
        scenario=ScenarioConfig(pd=pd, clutter_rate=clutter_rate),
        filter=FilterConfig(n_scan=5),
        trials=100,
    )


PRESETS = {
    name: _table1_preset(name, pd, clutter_rate)
    for name, pd, clutter_rate in (
        ("table1-pd09-lc10", 0.9, 10.0),
        ("table1-pd09-lc30", 0.9, 30.0),
        ("table1-pd07-lc10", 0.7, 10.0),
        ("table1-pd07-lc30", 0.7, 30.0),
    )
}


def preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"Unknown preset '{name}', choose one of {', '.join(sorted(PRESETS))}")


def _to_tuple(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_to_tuple(item) for item in value)
    return value


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ValueError(f"'{prefix.rstrip('.') or 'config'}' must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown field '{prefix}{unknown[0]}'")
    return {key: _to_tuple(value) for key, value in data.items()}


def parse_window(value: Union[str, int]) -> Union[str, int]:
    if value == FULL_WINDOW:
        return FULL_WINDOW
    try:
        window = int(value)
    except (TypeError, ValueError):
        raise ValueError(f"window must be '{FULL_WINDOW}' or an integer >= 1, got {value!r}")
    if isinstance(value, float) and value != window:
        raise ValueError(f"window must be '{FULL_WINDOW}' or an integer >= 1, got {value!r}")
    return window


def run_config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """
    Build and validate a RunConfig from its JSON form. Missing fields take their defaults
    and unknown fields are rejected with their dotted path.
    """
    values = _build(RunConfig, data, "")
    if "scenario" in data:
        values["scenario"] = ScenarioConfig(**_build(ScenarioConfig, data["scenario"], "scenario."))
    if "filter" in data:
        filter_values = _build(FilterConfig, data["filter"], "filter.")
        if "window" in filter_values:
            filter_values["window"] = parse_window(filter_values["window"])
        values["filter"] = FilterConfig(**filter_values)
    try:
        config = RunConfig(**values)
        config.validate()
    except TypeError as e:
        raise ValueError(f"Invalid configuration: {e}")
    return config


def run_config_to_dict(config: RunConfig) -> Dict[str, Any]:
    return json.loads(json.dumps(asdict(config)))


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"Config file '{path}' does not exist")
    except json.JSONDecodeError as e:
        raise ValueError(f"Config file '{path}' is not valid JSON: {e}")
    return run_config_from_dict(data)


def apply_overrides(
    config: RunConfig,
    *,
    trials: Optional[int] = None,
    seed: Optional[int] = None,
    n_scan: Optional[int] = None,
    window: Optional[Union[str, int]] = None,
    output_dir: Optional[str] = None,
    debug_dual: Optional[bool] = None,
    record_timing: Optional[bool] = None,
) -> RunConfig:
    """Command line values win over the file or preset; None leaves a field unchanged."""
    filter_changes = {}
    if n_scan is not None:
        filter_changes["n_scan"] = n_scan
    if window is not None:
        filter_changes["window"] = parse_window(window)

    changes = dict(
        trials=trials,
        seed=seed,
        output_dir=output_dir,
        debug_dual=debug_dual,
        record_timing=record_timing,
    )
    changes = {key: value for key, value in changes.items() if value is not None}
    if filter_changes:
        changes["filter"] = replace(config.filter, **filter_changes)

    overridden = replace(config, **changes)
    overridden.validate()
    return overridden
