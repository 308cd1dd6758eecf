"""Pipeline configuration: one flat YAML mapping plus CLI overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .fetch import DEFAULT_BLOCK_MARKERS

API_KEY_ENV = "GREYSCREEN_API_KEY"

# Excluded from the config hash: secrets and where the run lives.
_UNHASHED = {"api_key", "output_dir", "page_delay_s", "fetch_parallelism"}
_PATH_FIELDS = ("prompt_template", "question")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # search
    api_key: str = ""
    engine_id: str = ""
    search_endpoint: str = "https://www.googleapis.com/customsearch/v1"
    population_terms: list[str] = field(default_factory=list)
    intervention_terms: list[str] = field(default_factory=list)
    anchor_term: str = "software"
    strategy: str = "or_merged"
    page_delay_s: float = 1.0
    # fetch
    fetch_timeout_s: float = 12.0
    fetch_parallelism: int = 4
    max_redirects: int = 5
    block_markers: list[str] = field(default_factory=lambda: list(DEFAULT_BLOCK_MARKERS))
    # textprep
    chunk_max_len: int = 1000
    chunk_overlap: int = 1
    # screening
    retrieval_k: int = 20
    prompt_template: str = ""
    question: str = ""
    inference_endpoint: str = "http://localhost:11434/api/chat"
    inference_model: str = "dolphin-llama3"
    temperature: float = 0.1
    embedding_endpoint: str = "http://localhost:11434/api/embeddings"
    embedding_model: str = "mxbai-embed-large"
    request_retries: int = 2
    request_timeout_s: float = 300.0
    # sampling
    sample_confidence: float = 0.95
    sample_margin: float = 0.05
    sample_proportion: float = 0.5
    seed: int = 0
    # output
    output_dir: str = "run"

    def __post_init__(self) -> None:
        checks = [
            (self.fetch_timeout_s > 0, "fetch_timeout_s must be > 0"),
            (self.fetch_parallelism >= 1, "fetch_parallelism must be >= 1"),
            (self.max_redirects >= 0, "max_redirects must be >= 0"),
            (self.chunk_max_len >= 1, "chunk_max_len must be >= 1"),
            (self.chunk_overlap >= 0, "chunk_overlap must be >= 0"),
            (self.retrieval_k >= 1, "retrieval_k must be >= 1"),
            (0.0 <= self.temperature <= 2.0, "temperature must lie in [0, 2]"),
            (self.request_retries >= 0, "request_retries must be >= 0"),
            (self.page_delay_s >= 0, "page_delay_s must be >= 0"),
            (0 < self.sample_confidence < 1, "sample_confidence must lie in (0, 1)"),
            (0 < self.sample_margin < 1, "sample_margin must lie in (0, 1)"),
            (0 < self.sample_proportion < 1, "sample_proportion must lie in (0, 1)"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        for name in _PATH_FIELDS:
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name}: file not found: {value}")

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "PipelineConfig":
        """Read YAML at ``path`` (relative paths resolve against its folder), apply overrides."""
        data: dict = {}
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: expected a key-value mapping")
            base = path.resolve().parent
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for name in (*_PATH_FIELDS, "output_dir"):
            if data.get(name):
                data[name] = str((base / str(data[name])).resolve()) if not Path(str(data[name])).is_absolute() else str(data[name])
        for key, value in (overrides or {}).items():
            if value is not None:
                data[key] = value
        env_key = os.environ.get(API_KEY_ENV)
        if env_key:
            data["api_key"] = env_key
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def hashed_fields(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name in _UNHASHED:
                continue
            value = getattr(self, f.name)
            if f.name in _PATH_FIELDS and value:
                value = hashlib.sha256(Path(value).read_bytes()).hexdigest()
            out[f.name] = value
        return out

    def config_hash(self) -> str:
        """Hash of everything that affects outputs; prompt and question files count by content."""
        blob = json.dumps(self.hashed_fields(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
