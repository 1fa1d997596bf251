"""Run configuration: a strict ``[section]`` / ``key = value`` format.

Example::

    # PERA, scenario S1
    [model]
    name = pera
    I1 = 0.02

    [gains]
    scenario = s1

    [region]
    qr = 0.3
    pr = 0.5

    [integrator]
    h = 1e-4
    horizon = 20

    [output]
    dir = out

Numbers are decimals with optional exponent; lists are comma separated.
Unknown sections or keys abort parsing with the line and column. Custom
models use ``name = custom`` with ``n``, optional ``m``, inertia entries
``Mij`` (upper triangle, expressions in q1..qn) and a potential ``U``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")

# section -> key -> kind ("num", "nums", "int", "str", "expr")
SCHEMA = {
    "model": {"name": "str", "n": "int", "m": "int", "U": "expr", "damping": "nums",
              "I1": "num", "I2": "num", "I3": "num", "m2": "num", "dc2": "num", "g": "num",
              "mass": "num", "l": "num", "stiffness": "num"},
    "gains": {"scenario": "str", "kp": "nums", "ki": "nums", "kd": "nums", "qstar": "nums"},
    "region": {"qr": "nums", "pr": "nums", "grid": "int", "extra": "int", "seed": "int", "phi": "str"},
    "integrator": {"h": "num", "horizon": "num", "every": "int"},
    "output": {"dir": "str"},
}
INERTIA_KEY = re.compile(r"M([1-9])([1-9])")
MODEL_PARAMS = {
    "pera": ("I1", "I2", "I3", "m2", "dc2", "g", "damping"),
    "pendulum": ("mass", "l", "g", "damping"),
    "msd1": ("mass", "stiffness", "damping"),
    "custom": ("n", "m", "U", "damping"),
}
PHI_NAMES = {"at": "A_transpose", "ainv": "A_inverse"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0, source: str = "<config>"):
        where = f"{source}:{line}:{column}: " if line else ""
        super().__init__(where + message)
        self.line, self.column = line, column


@dataclass
class RunConfig:
    """Everything a command needs; ``None`` means "use the model default"."""

    model: str = "pera"
    model_params: dict = field(default_factory=dict)
    inertia_exprs: dict = field(default_factory=dict)   # (i, j) -> expression (custom models)
    scenario: Optional[str] = None
    kp: Optional[np.ndarray] = None
    ki: Optional[np.ndarray] = None
    kd: Optional[np.ndarray] = None
    qstar: Optional[np.ndarray] = None
    qr: np.ndarray = field(default_factory=lambda: np.array([0.3]))
    pr: np.ndarray = field(default_factory=lambda: np.array([0.5]))
    grid: int = 7
    extra: int = 0
    seed: int = 0
    phi: str = "at"
    h: Optional[float] = None
    horizon: float = 20.0
    every: Optional[int] = None
    out: str = "."

    def validate(self) -> "RunConfig":
        for name in ("qr", "pr"):
            v = np.atleast_1d(getattr(self, name))
            if not np.all(v > 0):
                raise ConfigError(f"{name} must be positive")
        for name in ("h", "horizon"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.grid < 3:
            raise ConfigError("grid must be at least 3 points per axis")
        if self.extra < 0 or self.seed < 0:
            raise ConfigError("extra and seed must be non-negative")
        if self.every is not None and self.every < 1:
            raise ConfigError("every must be a positive integer")
        if self.phi not in PHI_NAMES:
            raise ConfigError(f"phi must be one of {sorted(PHI_NAMES)}, got {self.phi!r}")
        allowed = MODEL_PARAMS.get(self.model)
        if allowed is None:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(MODEL_PARAMS)}")
        bad = sorted(set(self.model_params) - set(allowed))
        if bad:
            raise ConfigError(f"model {self.model!r} does not accept parameters {bad}")
        if self.inertia_exprs and self.model != "custom":
            raise ConfigError("inertia entries Mij are only valid for custom models")
        if self.model == "custom" and ("n" not in self.model_params or "U" not in self.model_params):
            raise ConfigError("custom model needs n and U")
        return self

    @property
    def phi_choice(self) -> str:
        return PHI_NAMES[self.phi]


def _value(raw: str, kind: str, line: int, col: int, src: str):
    if kind in ("str", "expr"):
        if not raw:
            raise ConfigError("empty value", line, col, src)
        return raw
    parts = [s.strip() for s in raw.split(",")]
    vals = []
    offset = 0
    for part in parts:
        if not NUMBER.fullmatch(part):
            c = col + raw.find(part, offset) if part else col
            raise ConfigError(f"expected a number, found {part!r}", line, c, src)
        offset = raw.find(part, offset) + len(part)
        vals.append(float(part))
    if kind == "nums":
        return np.array(vals)
    if len(vals) != 1:
        raise ConfigError(f"expected a single number, found {len(vals)}", line, col, src)
    if kind == "int":
        if vals[0] != int(vals[0]):
            raise ConfigError(f"expected an integer, found {raw!r}", line, col, src)
        return int(vals[0])
    return vals[0]


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse configuration text; every problem raises :class:`ConfigError`."""
    cfg = RunConfig()
    section = None
    seen = set()
    param_pos = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        stripped = body.strip()
        if not stripped:
            continue
        indent = len(body) - len(body.lstrip()) + 1
        if stripped.startswith("["):
            m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", stripped)
            if not m:
                raise ConfigError("malformed section header", lineno, indent, source)
            section = m.group(1)
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, indent + 1, source)
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", lineno, indent, source)
        if section is None:
            raise ConfigError("key outside of any section", lineno, indent, source)
        key_raw, _, val_raw = body.partition("=")
        key = key_raw.strip()
        vcol = len(key_raw) + 2 + (len(val_raw) - len(val_raw.lstrip()))
        raw = val_raw.strip()
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno, indent, source)
        seen.add((section, key))
        if section == "model" and INERTIA_KEY.fullmatch(key):
            i, j = int(key[1]), int(key[2])
            if i > j:
                raise ConfigError(f"give the upper-triangle entry M{j}{i} instead of {key}", lineno, indent, source)
            cfg.inertia_exprs[(i, j)] = _value(raw, "expr", lineno, vcol, source)
            continue
        kind = SCHEMA[section].get(key)
        if kind is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, indent, source)
        val = _value(raw, kind, lineno, vcol, source)
        if section == "model":
            if key == "name":
                cfg.model = val
            else:
                cfg.model_params[key] = val
                param_pos[key] = (lineno, indent)
        elif section == "output":
            cfg.out = val
        else:
            setattr(cfg, key, val)
    allowed = MODEL_PARAMS.get(cfg.model, ())
    for key, (line, col) in param_pos.items():
        if cfg.model in MODEL_PARAMS and key not in allowed:
            raise ConfigError(f"key {key!r} not valid for model {cfg.model!r}", line, col, source)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


CONFIG_FIELDS = tuple(f.name for f in fields(RunConfig))
