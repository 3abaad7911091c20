"""Run configuration: a flat, sectioned key-value file parsed strictly.

Example::

    [run]
    experiment = filament
    seed = 7

    [grid]
    domain = 16
    grid = 128

    [filament]
    eps = 1e-3

Every field has a default; unknown sections or keys, duplicate keys and
unparsable values are rejected with :class:`ConfigError`.  Command-line
flags override file values (see :mod:`pksfil.cli`).
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "SECTIONS", "load_config", "parse_config", "config_hash"]


class ConfigError(ValueError):
    """Invalid configuration file or value."""


AUTO = None  # grid fields left to the experiment's reference resolution


@dataclass(frozen=True)
class RunConfig:
    """All parameters of one experiment run."""

    # [run]
    experiment: str = "profile"
    suite: str = "fokker-planck"
    out: str = "pks_out"
    seed: int = 0
    workers: int = 1
    # [grid] -- None selects the experiment's reference grid
    domain: float | None = AUTO
    grid: int | None = AUTO
    # [radial]
    radial_domain: float = 16.0
    radial_nodes: int | None = AUTO  # 2048 for planar runs, 32768 for filament runs
    # [weight]
    weight: float = 3.0
    # [profile]
    alphas: tuple[float, ...] = (4.0 * math.pi,)
    # [zeta]
    zeta_max: float = 4.0
    zeta_step: float = 0.25
    # [time]
    horizon: float = 1.0
    tau_end: float = 8.0
    # [constants]
    const_M: float = 4.0
    const_D: float = 16.0
    beta: float = 0.75
    eps0: float = 0.025
    # [filament]
    eps: float = 1e-3
    lipschitz_delta: float = 0.0
    # [estimates]
    p: tuple[float, ...] = ()
    # [tolerances]
    mass_tol: float = 1e-6
    exponent_tol: float = 0.05

    def __post_init__(self):
        if self.experiment not in ("profile", "estimates", "dichotomy", "filament"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.domain is not None and not self.domain > 0:
            raise ConfigError("domain must be positive")
        if self.grid is not None and (self.grid < 8 or self.grid % 2):
            raise ConfigError("grid must be an even integer >= 8")
        if not (self.zeta_max >= 0 and self.zeta_step > 0):
            raise ConfigError("zeta grid needs zeta_max >= 0 and zeta_step > 0")
        if not (self.horizon > 0 and self.eps >= 0 and self.weight >= 0):
            raise ConfigError("horizon must be positive, eps and weight nonnegative")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


SECTIONS: dict[str, tuple[str, ...]] = {
    "run": ("experiment", "suite", "out", "seed", "workers"),
    "grid": ("domain", "grid"),
    "radial": ("radial_domain", "radial_nodes"),
    "weight": ("weight",),
    "profile": ("alphas",),
    "zeta": ("zeta_max", "zeta_step"),
    "time": ("horizon", "tau_end"),
    "constants": ("const_M", "const_D", "beta", "eps0"),
    "filament": ("eps", "lipschitz_delta"),
    "estimates": ("p",),
    "tolerances": ("mass_tol", "exponent_tol"),
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(name: str, raw: str):
    kind = _TYPES[name]
    text = raw.strip()
    try:
        if kind.startswith("tuple"):
            return tuple(float(x) for x in text.split(",") if x.strip())
        if "None" in kind and text.lower() in ("auto", "none", ""):
            return None
        if kind.startswith("float"):
            return float(text)
        if kind.startswith("int"):
            return int(text, 0)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse configuration text on top of ``base`` (defaults when omitted)."""
    cp = configparser.ConfigParser(strict=True, interpolation=None, default_section="__none__")
    cp.optionxform = str  # keys are case-sensitive (const_M)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _convert(key, raw)
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), base)


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    blob = json.dumps(cfg.as_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
