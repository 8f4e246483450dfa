"""
Scenario documents: strict JSON parsing into ScenarioConfig, default echo
and serialization.
"""
import json
from pathlib import Path
from typing import List, Optional, Sequence, Union

from pydantic import BaseModel, ValidationError

from models.scenario_config import ScenarioConfig
from utils.logger import get_logger

logger = get_logger("scenario_loader")


class ConfigError(Exception):
    """Raised when a scenario document cannot be turned into a ScenarioConfig"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.key = key
        self.line = line

    def __str__(self) -> str:
        where = []
        if self.key:
            where.append(f"key '{self.key}'")
        if self.line is not None:
            where.append(f"line {self.line}")
        message = super().__str__()
        return f"{message} ({', '.join(where)})" if where else message


def locate_key(text: str, loc: Sequence[Union[str, int]]) -> Optional[int]:
    """1-based line of the innermost key of loc that appears in the document"""
    pos = None
    start = 0
    for part in loc:
        if isinstance(part, int):
            continue
        found = text.find(f'"{part}"', start)
        if found < 0:
            break
        pos = start = found
    return None if pos is None else text.count("\n", 0, pos) + 1


def applied_defaults(model: BaseModel, prefix: str = "") -> List[str]:
    """Dotted names of every field that was filled from its default"""
    names = []
    for name in type(model).model_fields:
        value = getattr(model, name)
        dotted = f"{prefix}{name}"
        if isinstance(value, BaseModel):
            names.extend(applied_defaults(value, f"{dotted}."))
        elif name not in model.model_fields_set:
            names.append(dotted)
    return names


def log_applied_defaults(cfg: ScenarioConfig) -> List[str]:
    """Log every default the scenario relies on; returns their dotted names"""
    names = applied_defaults(cfg)
    for name in names:
        value = cfg
        for part in name.split("."):
            value = getattr(value, part)
        logger.info(f"Default applied: {name} = {value!r}")
    return names


def parse_config(text: str, echo_defaults: bool = True) -> ScenarioConfig:
    """
    Parse a scenario document. An empty document gives the default scenario.
    :raises ConfigError: malformed JSON, unknown key, wrong type or violated constraint
    """
    if not text.strip():
        data = {}
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno) from e
        if not isinstance(data, dict):
            raise ConfigError("scenario document must be a JSON object", line=1)

    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = first.get("loc", ())
        key = ".".join(str(part) for part in loc) or None
        raise ConfigError(f"{first.get('msg', 'invalid value')} [{e.error_count()} error(s)]",
                          key=key, line=locate_key(text, loc)) from e

    if echo_defaults:
        log_applied_defaults(cfg)
    return cfg


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    logger.info(f"Loading scenario {path}")
    return parse_config(text)


def serialize_config(cfg: ScenarioConfig) -> str:
    """Complete JSON document for cfg; parse_config reads it back unchanged"""
    return json.dumps(cfg.model_dump(mode="json"), indent=2) + "\n"
