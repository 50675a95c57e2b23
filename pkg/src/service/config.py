# src/service/config.py — experiment configuration, environment settings, content hashes
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from ..errors import ConfigError

load_dotenv()  # 读取本地 .env（ROTORS_OUTPUT_DIR / ROTORS_DB_PATH / ROTORS_CACHE_DIR / ROTORS_LOG_LEVEL）

# fields that never change results
_UNHASHED = ("output_dir", "workers")


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    n: int = 6
    u: float = 300.0
    j_max: int = 20
    levels: int = 10
    sigma_V: float = 1.0
    L: int = 100
    master_seed: int = 2015
    E_tr: Optional[float] = 154.0
    polyad_cap: Optional[int] = None
    audit_E_tr: Optional[float] = 171.0
    potentials_file: Optional[str] = None     # replay a saved potentials.csv instead of drawing
    # state
    E_max: float = 139.0
    state_seed: Optional[int] = None
    populations: Optional[str] = None         # comma list pinning P_k; phases stay random
    # trajectory
    step: float = 0.01
    tau_end: float = 2000.0
    stride: int = 1
    # analysis
    subsystem: int = 0
    bins: int = 10_000
    max_lag: float = 50.0
    correlation_fraction: float = 0.2
    source_bins: int = 50
    target_bins: int = 200
    rdm_levels: int = 8
    beta: float = 0.0376
    snapshot_times: str = "0,0.25,0.5,1,2"
    # run
    output_dir: str = ""
    workers: int = 1

    def __post_init__(self):
        problems = []
        if self.n < 1:
            problems.append(f"n={self.n} must be >= 1")
        if self.u < 0:
            problems.append(f"u={self.u} must be >= 0")
        if self.j_max < 1:
            problems.append(f"j_max={self.j_max} must be >= 1")
        if not 1 <= self.levels <= 2 * self.j_max + 1:
            problems.append(f"levels={self.levels} outside [1, {2 * self.j_max + 1}]")
        if self.sigma_V < 0:
            problems.append(f"sigma_V={self.sigma_V} must be >= 0")
        if self.L < 1:
            problems.append(f"L={self.L} must be >= 1")
        if self.E_tr is None and self.polyad_cap is None:
            problems.append("need E_tr or polyad_cap")
        if self.step <= 0:
            problems.append(f"step={self.step} must be > 0")
        if self.tau_end < 0:
            problems.append(f"tau_end={self.tau_end} must be >= 0")
        if self.stride < 1:
            problems.append(f"stride={self.stride} must be >= 1")
        if not 0 <= self.subsystem < self.n:
            problems.append(f"subsystem={self.subsystem} outside [0, {self.n})")
        if self.bins < 1:
            problems.append(f"bins={self.bins} must be >= 1")
        if self.beta <= 0:
            problems.append(f"beta={self.beta} must be > 0")
        if self.populations is not None:
            try:
                P = self.pinned_populations
            except ValueError:
                P = None
            if P is None or not P or min(P) < 0 or sum(P) <= 0:
                problems.append(f"populations={self.populations!r} must be non-negative numbers with a positive sum")
        if self.workers < 1:
            problems.append(f"workers={self.workers} must be >= 1")
        if problems:
            raise ConfigError("invalid configuration: " + "; ".join(problems))

    @property
    def rpse_seed(self) -> int:
        return self.master_seed if self.state_seed is None else self.state_seed

    @property
    def pinned_populations(self) -> Optional[Tuple[float, ...]]:
        if self.populations is None:
            return None
        return tuple(float(x) for x in self.populations.split(",") if x.strip())

    @property
    def snapshots(self) -> Tuple[float, ...]:
        return tuple(float(x) for x in self.snapshot_times.split(",") if x.strip())

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **_coerce_all(kw)) if kw else self


# ---------- environment ----------
@dataclass(frozen=True)
class Settings:
    output_dir: str
    db_path: str
    cache_dir: str
    log_level: str

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            output_dir=os.getenv("ROTORS_OUTPUT_DIR", os.path.join("data", "runs")),
            db_path=os.getenv("ROTORS_DB_PATH", os.path.join("data", "sqlite", "rotors.db")),
            cache_dir=os.getenv("ROTORS_CACHE_DIR", os.path.join("data", "cache")),
            log_level=os.getenv("ROTORS_LOG_LEVEL", "INFO").upper(),
        )


# ---------- parsing ----------
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, value: Any) -> Any:
    kind = _TYPES[name]
    optional = kind.startswith("Optional[")
    base = kind[len("Optional["):-1] if optional else kind
    if isinstance(value, str):
        value = value.strip()
        if optional and value.lower() in ("", "none", "null"):
            return None
    elif value is None:
        if optional:
            return None
        raise ConfigError(f"{name} may not be empty")
    try:
        if base == "int":
            number = float(value) if isinstance(value, str) else value
            if isinstance(number, float) and not number.is_integer():
                raise ValueError(value)
            return int(number)
        if base == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}={value!r} is not a valid {base}") from e


def _coerce_all(raw: Dict[str, Any]) -> Dict[str, Any]:
    unknown = sorted(set(raw) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in raw.items()}


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    return ExperimentConfig(**_coerce_all(raw))


def load_config(path: Optional[str]) -> ExperimentConfig:
    """key=value text (dotenv syntax) or JSON when the name ends in .json; missing keys keep defaults."""
    if not path:
        return ExperimentConfig()
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    if path.endswith(".json"):
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    else:
        raw = dict(dotenv_values(path))
    return config_from_dict(raw)


def save_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, v in config.to_dict().items():
            f.write(f"{k}={'' if v is None else v}\n")


# ---------- hashes ----------
def _digest(payload: Dict[str, Any]) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def config_hash(config: ExperimentConfig) -> str:
    return _digest({k: v for k, v in config.to_dict().items() if k not in _UNHASHED})


SPECTRUM_FIELDS = ("n", "u", "j_max", "levels", "E_tr", "polyad_cap", "L", "sigma_V", "master_seed")


def spectrum_key(config: ExperimentConfig, E_tr: Optional[float] = None) -> str:
    payload = {k: getattr(config, k) for k in SPECTRUM_FIELDS}
    if E_tr is not None:
        payload["E_tr"] = E_tr
    if config.potentials_file:
        payload["potentials"] = file_digest(config.potentials_file)
    return _digest(payload)


def file_digest(path: str) -> str:
    if not os.path.isfile(path):
        raise ConfigError(f"potentials file not found: {path}")
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]
