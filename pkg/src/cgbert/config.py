"""Run configuration: flat ``key = value`` files, profiles and CLI overrides.

File format: one ``key = value`` per line, ``#`` starts a comment, blank
lines are ignored.  Lists are comma-separated.  Booleans accept
true/false/1/0/yes/no.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .fixture import NOVEL_DEFAULT

PATH_KEYS = ("data", "checkpoint", "out", "generated", "split")


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    # model
    d_h: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    max_len: int = 32
    dropout: float = 0.1
    z_visible: bool = True
    min_freq: int = 1
    # generator training
    lr: float = 1e-3
    batch_size: int = 16
    n_steps: int = 2000
    kl_anneal_steps: int = 0
    recon_reduction: str = "mean"  # or "sum"
    # generation
    n_samples: int = 10
    top_k: int = 20
    beam_width: int = 20
    max_utterance_len: int = 0  # 0: fill the remaining max_len
    length_norm: bool = False
    # episode
    novel_intents: tuple = NOVEL_DEFAULT
    existing_intents: tuple = ()  # empty: every other intent in the data
    shots: int = 5
    train_fraction: float = 0.8
    balance_augmented: bool = True
    # classifier
    clf_lr: float = 5e-4
    clf_epochs: int = 4
    clf_batch_size: int = 32
    clf_init: str = "generator"  # or "random"
    # paths
    data: str = ""
    checkpoint: str = ""
    out: str = ""
    generated: str = ""
    split: str = ""

    def digest(self) -> str:
        """Short hash of every setting that can change an output (paths excluded)."""
        body = {k: v for k, v in asdict(self).items() if k not in PATH_KEYS}
        raw = json.dumps(body, sort_keys=True, default=list).encode("utf-8")
        return hashlib.sha256(raw).hexdigest()[:16]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["novel_intents"] = list(self.novel_intents)
        d["existing_intents"] = list(self.existing_intents)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known})


PROFILES = {
    "desk": {},
    # Full-size settings: 768-wide, 12 heads, 6 + 6 blocks, 100 epochs of 1000 steps.
    "full": {
        "d_h": 768,
        "n_heads": 12,
        "n_enc_layers": 6,
        "n_dec_layers": 6,
        "d_ff": 3072,
        "max_len": 64,
        "lr": 1e-5,
        "batch_size": 16,
        "n_steps": 100_000,
        "clf_lr": 2e-5,
        "clf_epochs": 3,
        "clf_batch_size": 32,
    },
}

PROFILES["paper"] = PROFILES["full"]  # accepted alias

FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise KeyError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "int" or kind == "int | None":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "tuple":
        return tuple(p.strip() for p in raw.split(",") if p.strip())
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, raw)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(v)
        elif isinstance(v, bool):
            v = str(v).lower()
        elif v is None:
            continue
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_run_config(profile: str = "desk", path=None, overrides: dict | None = None) -> RunConfig:
    """Profile defaults, then the config file, then explicit overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = replace(RunConfig(), **PROFILES[profile])
    if path:
        cfg = replace(cfg, **parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg
