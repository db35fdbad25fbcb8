"""Flat ``key = value`` configuration files."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


@dataclass
class Config:
    dataset_dir: str = ""
    embedding_size: int = 50
    hidden_size: int = 50
    batch_size: int = 128
    learning_rate: float = 0.01
    cluster_number: int = 75
    beam_size: int = 100
    alpha: float = 0.15
    delta: float = 0.20
    epsilon: float = 0.1
    path_length: int = 3
    rollouts_train: int = 20
    rollouts_test: int = 100
    epochs: int = 10
    seed: int = 0
    entropy_beta: float = 0.0
    baseline: bool = True
    guidance: bool = True
    transe_epochs: int = 1000
    valid_every: int = 1


_RANGES = {
    "embedding_size": (1, None), "hidden_size": (1, None), "batch_size": (1, None),
    "learning_rate": (0.0, None), "cluster_number": (1, None), "beam_size": (1, None),
    "alpha": (0.0, None), "delta": (0.0, None), "path_length": (1, None),
    "rollouts_train": (1, None), "rollouts_test": (1, None), "epochs": (0, None),
    "seed": (0, None), "entropy_beta": (0.0, None), "transe_epochs": (1, None),
    "valid_every": (0, None),
}
_FIELDS = {f.name: f for f in fields(Config)}


def _coerce(key: str, text: str, where: str):
    if key not in _FIELDS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    kind = _FIELDS[key].type
    try:
        if kind in (bool, "bool"):
            value = _bool(text)
        elif kind in (int, "int"):
            value = int(text)
        elif kind in (float, "float"):
            value = float(text)
        else:
            value = text.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    lo, hi = _RANGES.get(key, (None, None))
    if lo is not None and value < lo:
        raise ConfigError(f"{where}: {key!r} must be >= {lo}")
    if key == "epsilon" and value <= 0:
        raise ConfigError(f"{where}: 'epsilon' must be > 0")
    return value


def parse_config(text: str, source: str = "<config>", overrides: dict[str, str] | None = None) -> Config:
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        setattr(cfg, key, _coerce(key, value, f"{source}:{lineno}"))
    for key, value in (overrides or {}).items():
        setattr(cfg, key, _coerce(key, value, f"override {key}"))
    if cfg.hidden_size != cfg.embedding_size:
        raise ConfigError(f"{source}: hidden_size must equal embedding_size (LSTM width is 2*embedding_size)")
    return cfg


def load_config(path, overrides: dict[str, str] | None = None) -> Config:
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), str(p), overrides)


def dump_config(cfg: Config) -> str:
    out = []
    for f in fields(Config):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "on" if v else "off"
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"
