"""Experiment configuration: file parsing, flag overrides, and hashing.

Config files use a TOML-like key/value syntax: ``key = value`` lines,
``#`` comments, optional ``[section]`` headers that prefix keys with
``section.`` (sections exist for readability only; keys are flat).
Values may be quoted strings, integers, floats, booleans, or flat
arrays like ``[10, 30, 50]``.

Every artifact an experiment writes records the hash of the config that
produced it, and the seed rides along inside reports and run names, so
any output file can be traced back to its exact inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import LexretError


class ConfigError(LexretError):
    """Raised for unparseable or inconsistent configuration."""


def _parse_scalar(raw: str, path: str, lineno: int):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if raw.startswith("'") and raw.endswith("'") and len(raw) >= 2:
        return raw[1:-1]
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    raise ConfigError(f"{path}: line {lineno}: cannot parse value {raw!r}")


def parse_config_file(path: str | Path) -> dict:
    """Parse a TOML-like key/value file into a flat dict."""
    path = Path(path)
    out: dict = {}
    section = ""
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if section:
            key = f"{section}.{key}"
        raw = raw.strip()
        if raw.startswith("[") and raw.endswith("]"):
            inner = raw[1:-1].strip()
            items = [s.strip() for s in inner.split(",")] if inner else []
            out[key] = [_parse_scalar(item, str(path), lineno) for item in items if item]
        else:
            out[key] = _parse_scalar(raw, str(path), lineno)
    return out


@dataclass
class ExperimentConfig:
    """Everything one end-to-end experiment needs.

    Paths are resolved relative to the process working directory. The
    single ``seed`` feeds every random decision, fanned out through
    labeled streams (split, per-trial sampling, example selection) so
    stages stay independent and reproducible.
    """

    passages: str = ""
    queries: str = ""
    train_queries: str = ""
    output_dir: str = "runs"
    retriever: str = "bm25"
    strategy: str = "identity"
    embeddings: str = ""
    query_embeddings: str = ""
    cache: str = ""
    examples_file: str = ""
    topk_examples: bool = False
    endpoint_base_url: str = ""
    endpoint_model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    endpoint_timeout: float = 60.0
    max_attempts: int = 4
    temperature: float = 0.0
    top_p: float = 0.9
    max_tokens: int = 256
    n: int = 10000
    trials: int = 3
    seed: int = 0
    sample_with_replacement: bool = False
    train_fraction: float = 0.9
    k1: float = 1.5
    b: float = 0.75
    top_k: int = 10
    thresholds: list = field(default_factory=lambda: [10, 30, 50, 70, 90, 100])
    lenient: bool = False
    max_workers: int = 1

    @classmethod
    def from_sources(cls, config_path: str | Path | None, overrides: dict) -> "ExperimentConfig":
        """Build a config from an optional file plus flag overrides."""
        values: dict = {}
        if config_path:
            parsed = parse_config_file(config_path)
            for key, value in parsed.items():
                values[key.split(".")[-1]] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        config = cls(**values)
        config.validate()
        return config

    def validate(self) -> None:
        if self.retriever not in ("bm25", "dense"):
            raise ConfigError(f"retriever must be 'bm25' or 'dense', got {self.retriever!r}")
        if self.strategy not in ("identity", "q2d", "q2d_cot", "gure"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.retriever == "dense" and not self.embeddings:
            raise ConfigError("dense retrieval requires an embeddings file")

    def config_hash(self) -> str:
        """Stable hash of the full configuration."""
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:8]

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(seed: int, label: str, index: int = 0) -> int:
    """Deterministic sub-seed for a named random stream."""
    digest = hashlib.sha256(f"{seed}/{label}/{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
