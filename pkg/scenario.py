#!/usr/bin/env python3
"""
Scenario files and process settings.

A scenario is flat KEY=VALUE text with dotted keys:

  # unit square, constant pinning, uniform field
  domain.shape=square
  domain.size=1
  domain.cells=64
  pinning.family=constant
  pinning.value=1
  field.family=constant
  field.value=1
  params.kappa=10,20,40
  params.sigma=0.5

Process settings come from GL_* environment variables, seeded from gl.env next to
this file when present (values already in the environment win):

- GL_WORKERS (default 1)
- GL_SEED (default 1234)
- GL_OUTPUT_DIR (default out)
- GL_CACHE_DIR (default .gl-cache)
- GL_LOG_LEVEL (default INFO)
- GL_FHAT_TABLE (optional cached f-hat CSV)

Every error raised while reading a scenario is a ConfigError naming the dotted key.
"""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from coefficients import FIELD_FAMILIES, PINNING_FAMILIES, DomainSpec, FieldSpec, PinningSpec

logger = logging.getLogger(__name__)

REPO_DIR = Path(__file__).resolve().parent
ENV_FILE = REPO_DIR / "gl.env"
TRUE_VALUES = ("1", "true", "True", "yes", "on")

SECTIONS = ("domain", "pinning", "field", "params", "output")
_VECTOR_KEYS = ("center", "gradient")
_STRING_KEYS = ("family", "path", "shape")


class ConfigError(ValueError):
    """Invalid scenario; `key` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# --- KEY=VALUE text -------------------------------------------------------------------

def parse_kv_args(args: Iterable[str]) -> Dict[str, str]:
    parsed = {}
    for a in args:
        if "=" not in a:
            raise ConfigError(a, "expected KEY=VALUE")
        k, v = a.split("=", 1)
        k = k.strip()
        if not k:
            raise ConfigError(a, "empty key")
        parsed[k] = v.strip()
    return parsed


def load_kv_file(path: Path) -> Dict[str, str]:
    values = {}
    path = Path(path)
    if not path.exists():
        return values
    for line in path.read_text().splitlines():
        s = line.strip()
        if not s or s.startswith("#") or "=" not in s:
            continue
        k, v = s.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def load_env_file(path: Path = ENV_FILE) -> Dict[str, str]:
    """Seed os.environ from a KEY=VALUE file without overriding existing variables."""
    values = load_kv_file(path)
    for k, v in values.items():
        os.environ.setdefault(k, v)
    return values


def canonical_text(values: Mapping[str, str]) -> str:
    return "".join(f"{k}={values[k]}\n" for k in sorted(values))


def config_hash(values: Mapping[str, str]) -> str:
    return hashlib.sha256(canonical_text(values).encode("utf-8")).hexdigest()


# --- process settings -----------------------------------------------------------------

def env_flag(name: str, default: str = "0") -> bool:
    return os.getenv(name, default) in TRUE_VALUES


@dataclass
class Settings:
    workers: int = 1
    seed: int = 1234
    output_dir: Path = Path("out")
    cache_dir: Path = Path(".gl-cache")
    log_level: str = "INFO"
    fhat_table: Optional[Path] = None

    @classmethod
    def from_env(cls, env_file: Optional[Path] = ENV_FILE) -> "Settings":
        if env_file is not None:
            load_env_file(env_file)
        try:
            workers = int(os.getenv("GL_WORKERS", "1"))
            seed = int(os.getenv("GL_SEED", "1234"))
        except ValueError as exc:
            raise ConfigError("GL_WORKERS/GL_SEED", str(exc)) from None
        if workers < 1:
            raise ConfigError("GL_WORKERS", f"must be >= 1, got {workers}")
        table = os.getenv("GL_FHAT_TABLE")
        return cls(workers=workers, seed=seed,
                   output_dir=Path(os.getenv("GL_OUTPUT_DIR", "out")),
                   cache_dir=Path(os.getenv("GL_CACHE_DIR", ".gl-cache")),
                   log_level=os.getenv("GL_LOG_LEVEL", "INFO").upper(),
                   fhat_table=Path(table) if table else None)


# --- typed conversion -----------------------------------------------------------------

def _float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {text!r}") from None


def _int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {text!r}") from None


def _floats(key: str, text: str) -> Tuple[float, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(key, "empty list")
    return tuple(_float(key, p) for p in parts)


def _vector(key: str, text: str) -> Tuple[float, float]:
    v = _floats(key, text)
    if len(v) != 2:
        raise ConfigError(key, f"expected two comma separated numbers, got {text!r}")
    return v


def _section(values: Mapping[str, str], name: str) -> Dict[str, str]:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}


def _family_params(section: str, raw: Mapping[str, str]) -> Dict:
    params = {}
    for k, v in raw.items():
        if k == "family":
            continue
        key = f"{section}.{k}"
        if k in _VECTOR_KEYS:
            params[k] = _vector(key, v)
        elif k in _STRING_KEYS:
            params[k] = v
        else:
            params[k] = _float(key, v)
    return params


def _spec(cls, section: str, raw: Mapping[str, str], families: Sequence[str]):
    if not raw:
        return cls()
    family = raw.get("family", "constant")
    if family not in families:
        raise ConfigError(f"{section}.family", f"expected one of {', '.join(families)}, got {family!r}")
    params = _family_params(section, raw)
    if "path" in params:
        path = Path(params["path"])
        if not path.is_absolute():
            params["path"] = str(REPO_DIR / path) if not path.exists() else str(path)
    try:
        return cls(family, params)
    except ValueError as exc:
        raise ConfigError(section, str(exc)) from None


@dataclass
class Scenario:
    domain: DomainSpec = field(default_factory=DomainSpec)
    pinning: PinningSpec = field(default_factory=PinningSpec)
    field_spec: FieldSpec = field(default_factory=FieldSpec)
    kappas: Tuple[float, ...] = (10.0,)
    sigma: Optional[float] = None
    sigma_hat: Optional[float] = None
    H_grid: Tuple[float, ...] = ()
    seed: int = 1234
    output_dir: Optional[Path] = None
    params: Dict[str, str] = field(default_factory=dict)
    raw: Dict[str, str] = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def param(self, name: str, default=None, kind=float):
        """Typed access to params.<name>; kind is float, int, str or 'floats'."""
        if name not in self.params:
            return default
        key, text = f"params.{name}", self.params[name]
        if kind == "floats":
            return _floats(key, text)
        if kind is int:
            return _int(key, text)
        if kind is float:
            return _float(key, text)
        return text

    @classmethod
    def from_values(cls, values: Mapping[str, str], seed: int = 1234) -> "Scenario":
        values = dict(values)
        for k in values:
            if "." not in k or k.split(".", 1)[0] not in SECTIONS:
                raise ConfigError(k, f"unknown key; sections are {', '.join(SECTIONS)}")
        d = _section(values, "domain")
        try:
            domain = DomainSpec(
                shape=d.get("shape", "square"),
                size=_float("domain.size", d.get("size", "1")),
                center=_vector("domain.center", d.get("center", "0.5,0.5")),
                cells=_int("domain.cells", d.get("cells", "64")),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("domain", str(exc)) from None
        if domain.cells < 8:
            raise ConfigError("domain.cells", f"must be >= 8, got {domain.cells}")
        pinning = _spec(PinningSpec, "pinning", _section(values, "pinning"), PINNING_FAMILIES)
        field_spec = _spec(FieldSpec, "field", _section(values, "field"), FIELD_FAMILIES)
        p = _section(values, "params")
        kappas = _floats("params.kappa", p.get("kappa", "10"))
        if any(k <= 0 for k in kappas):
            raise ConfigError("params.kappa", "values must be positive")
        sigma = _float("params.sigma", p["sigma"]) if "sigma" in p else None
        sigma_hat = _float("params.sigma_hat", p["sigma_hat"]) if "sigma_hat" in p else None
        for key, v in (("params.sigma", sigma), ("params.sigma_hat", sigma_hat)):
            if v is not None and v < 0:
                raise ConfigError(key, f"must be >= 0, got {v}")
        H_grid = _floats("params.H", p["H"]) if "H" in p else ()
        if any(h2 <= h1 for h1, h2 in zip(H_grid, H_grid[1:])):
            raise ConfigError("params.H", "must be increasing")
        seed = _int("params.seed", p["seed"]) if "seed" in p else seed
        out = _section(values, "output").get("dir")
        extra = {k: v for k, v in p.items() if k not in ("kappa", "sigma", "sigma_hat", "H", "seed")}
        return cls(domain, pinning, field_spec, kappas, sigma, sigma_hat, H_grid, seed,
                   Path(out) if out else None, extra, values)


def load_scenario(path: Optional[Path] = None, overrides: Sequence[str] = (), seed: int = 1234) -> Scenario:
    """Read a scenario file (optional) and apply --set KEY=VALUE overrides on top."""
    values: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("scenario", f"file {path} does not exist")
        values.update(load_kv_file(path))
    values.update(parse_kv_args(overrides))
    scenario = Scenario.from_values(values, seed=seed)
    logger.debug("scenario %s: %d key(s), hash %s", path or "<defaults>", len(values), scenario.hash[:12])
    return scenario


def scenario_keys() -> List[str]:
    """Keys offered by the interactive writer, in prompt order."""
    return [
        "domain.shape", "domain.size", "domain.center", "domain.cells",
        "pinning.family", "pinning.value",
        "field.family", "field.value",
        "params.kappa", "params.sigma", "params.H",
    ]
