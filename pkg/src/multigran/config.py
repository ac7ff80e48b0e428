"""Run configuration: documented key = value file plus CLI overrides.

Defaults mirror the standard dual-encoder training recipe (embedding 50,
hidden 150, Adam at 0.005 for 20 epochs, batch 32, clip 5.0, 5 granularity
levels) with desk-scale corpus defaults (2000/300/300 dialogs, k=10, 10
topics). Every key is listed in docs/formats.md.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError, ParseError


@dataclass
class RunConfig:
    seed: int = 0
    # model
    emb_dim: int = 50
    hidden: int = 150
    # training
    k: int = 10
    granularities: int = 5
    epochs: int = 20
    lr: float = 0.005
    batch_size: int = 32
    clip_norm: float = 5.0
    truncation: int = 160
    resample_per_epoch: bool = False
    # synthetic corpus
    dialogs: int = 2000
    valid_dialogs: int = 300
    test_dialogs: int = 300
    topics: int = 10
    vocab_size: int = 1261
    # evaluation
    rn_pairs: str = "10:1,2:1"
    bootstrap_iterations: int = 10000
    ensemble_mode: str = "both"  # mgt | vanilla | both
    # probing
    probe_task: str = "both"  # bow | abstract | both
    probe_lr: float = 0.01
    probe_epochs: int = 30
    probe_batch: int = 256
    finetune: bool = True
    finetune_epochs: int = 3

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigurationError("k must be at least 2")
        if self.granularities < 1:
            raise ConfigurationError("granularities must be at least 1")
        if self.topics < self.granularities:
            raise ConfigurationError(
                f"need topics >= granularities for bucket structure "
                f"({self.topics} < {self.granularities})"
            )
        if min(self.emb_dim, self.hidden, self.epochs, self.batch_size) < 1:
            raise ConfigurationError("model and training sizes must be positive")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("lr and clip_norm must be positive")
        if self.ensemble_mode not in ("mgt", "vanilla", "both"):
            raise ConfigurationError(
                f"ensemble_mode must be mgt, vanilla or both, got {self.ensemble_mode!r}"
            )
        if self.probe_task not in ("bow", "abstract", "both"):
            raise ConfigurationError(
                f"probe_task must be bow, abstract or both, got {self.probe_task!r}"
            )

    def parsed_rn_pairs(self) -> list:
        pairs = []
        for part in self.rn_pairs.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                n, k = part.split(":")
                pairs.append((int(n), int(k)))
            except ValueError:
                raise ConfigurationError(f"bad rn_pairs entry {part!r}, expected N:k")
        return pairs

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Parse `key = value` lines; '#' starts a comment; unknown keys fail."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}: expected 'key = value'", line=lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigurationError(f"{path} line {lineno}: unknown config key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError:
            raise ConfigurationError(f"{path} line {lineno}: bad value for {key}: {raw!r}")
    return values


def load_config(path=None, overrides=None) -> RunConfig:
    values = parse_config_file(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    config = RunConfig(**values)
    config.validate()
    return config
