"""
Scenario files: flat `key = value` lines with `#` comments.

    graph = config/graphs/complete4.graph
    f = 1
    epsilon = 0.01
    inputs = split
    faults = 3
    strategy = constant-extreme

Command-line flags override scenario values field by field.
"""

import logging
from decimal import Decimal
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import ScenarioError
from .protocols import STRATEGIES, VICTIMS, ProtocolConfig

logger = logging.getLogger(__name__)

INPUT_PATTERNS = ("unanimous-L", "unanimous-U", "split")
DEFAULT_MAX_STEPS = 200_000


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    graph: Optional[Path] = None
    f: int = 1
    epsilon: Decimal = Decimal("0.01")
    lower: Decimal = Decimal(0)
    upper: Decimal = Decimal(1)
    inputs: str = "split"
    faults: List[int] = []
    strategy: str = "crash"
    victim: str = "approx"
    rounds: Optional[int] = None
    seed: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    out: Optional[Path] = None
    theorem: Optional[int] = None
    mirror_auto: bool = True

    @field_validator("faults", mode="before")
    @classmethod
    def _split_faults(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(part) for part in value.split(",") if part.strip()]
        return value

    @field_validator("inputs", mode="before")
    @classmethod
    def _normalise_inputs(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple)):
            return ",".join(str(v) for v in value)
        return value

    @field_validator("strategy")
    @classmethod
    def _known_strategy(cls, value: str) -> str:
        if value not in STRATEGIES:
            raise ValueError(f"unknown strategy {value!r}; choose from {', '.join(STRATEGIES)}")
        return value

    @field_validator("victim")
    @classmethod
    def _known_victim(cls, value: str) -> str:
        if value not in VICTIMS:
            raise ValueError(f"unknown victim {value!r}; choose from {', '.join(VICTIMS)}")
        return value

    @field_validator("theorem")
    @classmethod
    def _known_theorem(cls, value: Optional[int]) -> Optional[int]:
        if value not in (None, 1, 2):
            raise ValueError("theorem must be 1 or 2")
        return value

    @field_validator("max_steps", "rounds")
    @classmethod
    def _positive(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("must be at least 1")
        return value

    @model_validator(mode="after")
    def _check_bounds(self) -> "ScenarioConfig":
        if self.f < 1:
            raise ValueError("f must be at least 1")
        if not self.lower < self.upper:
            raise ValueError("lower must be below upper")
        if not self.upper - self.lower > self.epsilon > 0:
            raise ValueError("need upper - lower > epsilon > 0")
        if len(set(self.faults)) > self.f:
            raise ValueError(f"{len(set(self.faults))} faulty nodes exceed f = {self.f}")
        if self.inputs not in INPUT_PATTERNS:
            for value in self.explicit_inputs():
                if not self.lower <= value <= self.upper:
                    raise ValueError(f"input {value} outside [{self.lower}, {self.upper}]")
        return self

    def explicit_inputs(self) -> List[Decimal]:
        try:
            return [Decimal(part.strip()) for part in self.inputs.split(",")]
        except ArithmeticError:
            raise ValueError(f"inputs must be a pattern or a comma list, got {self.inputs!r}")

    def resolve_inputs(self, n: int) -> Dict[int, Decimal]:
        if self.inputs == "unanimous-L":
            return {u: self.lower for u in range(n)}
        if self.inputs == "unanimous-U":
            return {u: self.upper for u in range(n)}
        if self.inputs == "split":
            return {u: self.lower if u < n // 2 else self.upper for u in range(n)}
        values = self.explicit_inputs()
        if len(values) != n:
            raise ScenarioError(f"{len(values)} inputs given for {n} nodes")
        return dict(enumerate(values))

    def protocol_config(self, n: int) -> ProtocolConfig:
        return ProtocolConfig(self.epsilon, self.lower, self.upper, n, self.f)

    def check_faults(self, n: int) -> None:
        bad = [u for u in self.faults if not 0 <= u < n]
        if bad:
            raise ScenarioError(f"faulty node(s) {bad} not in 0..{n - 1}")


def _format_errors(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "scenario"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def build_scenario(
    base: Optional[ScenarioConfig] = None, overrides: Optional[Mapping[str, Any]] = None
) -> ScenarioConfig:
    """Apply non-None overrides on top of a base scenario and revalidate."""
    values = base.model_dump(exclude_unset=True) if base is not None else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ScenarioConfig.model_validate(values)
    except ValidationError as e:
        raise ScenarioError(_format_errors(e))


def parse_scenario(text: str, base_dir: Optional[Path] = None) -> ScenarioConfig:
    values: Dict[str, str] = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ScenarioError(f"line {line_number}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        if key in values:
            raise ScenarioError(f"line {line_number}: repeated key {key!r}")
        values[key] = value.strip()
    if "graph" in values and base_dir is not None and not Path(values["graph"]).is_absolute():
        candidate = base_dir / values["graph"]
        if candidate.exists():
            values["graph"] = str(candidate)
    try:
        return ScenarioConfig.model_validate(values)
    except ValidationError as e:
        raise ScenarioError(_format_errors(e))


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}")
    scenario = parse_scenario(text, base_dir=path.parent)
    logger.debug("Loaded scenario %s", path)
    return scenario
