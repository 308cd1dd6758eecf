"""Embedding, context retrieval and LLM calls against a local inference server.

The HTTP shapes follow the Ollama API: ``POST /api/embeddings`` with
``{"model", "prompt"}`` returning ``{"embedding": [...]}``, and
``POST /api/chat`` with system/user messages returning
``{"message": {"content": ...}}`` (a top-level ``response`` is also accepted).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import requests

from .prompts import ScreeningQuestion
from .textprep import ChunkSet

log = logging.getLogger(__name__)


class EndpointError(RuntimeError):
    """An embedding or inference call failed after all retries."""


@dataclass
class EmbeddingConfig:
    endpoint: str = "http://localhost:11434/api/embeddings"
    model: str = "mxbai-embed-large"
    timeout_s: float = 60.0
    retries: int = 2


@dataclass
class InferenceConfig:
    endpoint: str = "http://localhost:11434/api/chat"
    model: str = "dolphin-llama3"
    temperature: float = 0.1
    timeout_s: float = 300.0
    retries: int = 2


@dataclass
class ChunkIndex:
    source_id: str
    chunks: list[str]
    vectors: np.ndarray  # shape (n_chunks, d)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.chunks)


@dataclass(frozen=True)
class RetrievedChunk:
    ordinal: int
    score: float
    text: str


def _post_json(session: requests.Session, url: str, body: dict, timeout: float, retries: int) -> dict:
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = session.post(url, json=body, timeout=timeout)
            if resp.status_code >= 500:
                raise requests.HTTPError(f"HTTP {resp.status_code}", response=resp)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last = exc
            log.warning("POST %s failed (attempt %d/%d): %s", url, attempt + 1, retries + 1, exc)
            if attempt < retries:
                time.sleep(min(0.5 * 2**attempt, 4.0))
    raise EndpointError(f"{url}: {last}") from last


def embed_text(text: str, config: EmbeddingConfig, session: requests.Session | None = None) -> np.ndarray:
    session = session or requests.Session()
    payload = _post_json(
        session, config.endpoint, {"model": config.model, "prompt": text}, config.timeout_s, config.retries
    )
    vector = payload.get("embedding") if isinstance(payload, dict) else None
    if not vector:
        raise EndpointError(f"{config.endpoint}: response has no embedding")
    return np.asarray(vector, dtype=float)


def embed_chunks(chunks: ChunkSet, config: EmbeddingConfig, session: requests.Session | None = None) -> ChunkIndex:
    if not chunks.chunks:
        raise ValueError("nothing to embed")
    session = session or requests.Session()
    vectors = [embed_text(c, config, session) for c in chunks.chunks]
    dims = {v.shape for v in vectors}
    if len(dims) != 1 or vectors[0].ndim != 1 or vectors[0].shape[0] == 0:
        raise EndpointError(f"inconsistent embedding dimensions {sorted(dims)}")
    return ChunkIndex(chunks.source_id, list(chunks.chunks), np.vstack(vectors))


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(query)
    dots = matrix @ query
    return np.divide(dots, norms, out=np.zeros_like(dots, dtype=float), where=norms > 0)


def retrieve_by_vector(index: ChunkIndex, query_vector: np.ndarray, k: int) -> list[RetrievedChunk]:
    """Top ``k`` chunks by cosine similarity; ties go to the earlier chunk."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if query_vector.shape[0] != index.dimension:
        raise ValueError(f"query has dimension {query_vector.shape[0]}, index has {index.dimension}")
    scores = cosine_scores(index.vectors, query_vector)
    # lexsort sorts by the last key first: descending score, then ascending ordinal
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    return [RetrievedChunk(int(i), float(scores[i]), index.chunks[i]) for i in order]


def retrieve_context(
    question: ScreeningQuestion,
    index: ChunkIndex,
    k: int,
    config: EmbeddingConfig,
    session: requests.Session | None = None,
) -> list[RetrievedChunk]:
    return retrieve_by_vector(index, embed_text(question.text, config, session), k)


def compose_user_message(question: ScreeningQuestion, context: list[RetrievedChunk] | list[str]) -> str:
    texts = [c.text if isinstance(c, RetrievedChunk) else c for c in context]
    return question.text + "\n\nDocument excerpts:\n" + "\n\n".join(texts)


def classify(
    prompt: str,
    question: ScreeningQuestion,
    context: list[RetrievedChunk] | list[str],
    llm: InferenceConfig,
    session: requests.Session | None = None,
) -> str:
    """Send the rendered prompt as system message and question plus context as user message."""
    session = session or requests.Session()
    body = {
        "model": llm.model,
        "messages": [
            {"role": "system", "content": prompt},
            {"role": "user", "content": compose_user_message(question, context)},
        ],
        "options": {"temperature": llm.temperature},
        "stream": False,
    }
    payload = _post_json(session, llm.endpoint, body, llm.timeout_s, llm.retries)
    if isinstance(payload, dict):
        message = payload.get("message")
        if isinstance(message, dict) and isinstance(message.get("content"), str):
            return message["content"]
        if isinstance(payload.get("response"), str):
            return payload["response"]
    raise EndpointError(f"{llm.endpoint}: response carries no generated text")
