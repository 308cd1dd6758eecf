"""PDF text extraction, sentence splitting and overlapping sentence chunks."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+")


class ExtractionError(Exception):
    def __init__(self, source_id: str, message: str):
        super().__init__(f"{source_id}: {message}")
        self.source_id = source_id


@dataclass
class DocumentText:
    source_id: str
    raw_text: str
    sentences: list[str] = field(default_factory=list)

    @classmethod
    def from_text(cls, source_id: str, text: str) -> "DocumentText":
        raw = normalize_whitespace(text)
        return cls(source_id, raw, split_sentences(raw))


@dataclass
class ChunkSet:
    source_id: str
    chunks: list[str]
    max_len: int = 1000
    overlap_sentences: int = 1


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def split_sentences(text: str) -> list[str]:
    """Split normalized text after ``.``, ``!`` or ``?`` followed by whitespace.

    A trailing fragment without terminal punctuation is kept as the last sentence.
    """
    if not text:
        return []
    return [s for s in _SENTENCE_BOUNDARY.split(text) if s]


def extract_text(pdf: str | Path, source_id: str | None = None) -> DocumentText:
    """Extract page text in order, skipping pages that yield nothing."""
    from pypdf import PdfReader
    from pypdf.errors import PdfReadError

    path = Path(pdf)
    sid = source_id if source_id is not None else path.stem
    try:
        reader = PdfReader(path)
        if reader.is_encrypted:
            # Many "encrypted" PDFs only carry an owner password.
            try:
                ok = reader.decrypt("")
            except Exception as exc:
                raise ExtractionError(sid, f"cannot decrypt: {exc}") from exc
            if not ok:
                raise ExtractionError(sid, "encrypted PDF")
        pages = []
        for page in reader.pages:
            extracted = page.extract_text() or ""
            if extracted.strip():
                pages.append(extracted)
    except ExtractionError:
        raise
    except (PdfReadError, OSError, ValueError, KeyError, TypeError) as exc:
        raise ExtractionError(sid, f"unreadable PDF: {exc}") from exc
    return DocumentText.from_text(sid, "\n".join(pages))


def chunk_sentences(doc: DocumentText, max_len: int = 1000, overlap_sentences: int = 1) -> ChunkSet:
    """Greedily pack sentences into chunks shorter than ``max_len`` characters.

    Length counts the single spaces that join sentences. When a chunk closes,
    the next one is seeded with the last ``overlap_sentences`` sentences of it;
    seed sentences are dropped from the front if they would keep the incoming
    sentence from fitting. A sentence that cannot fit on its own becomes a
    chunk by itself.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if overlap_sentences < 0:
        raise ValueError(f"overlap_sentences must be >= 0, got {overlap_sentences}")

    chunks: list[list[str]] = []
    current: list[str] = []
    current_len = 0
    fresh = 0  # sentences in `current` not carried over from the previous chunk

    def joined_len(parts: list[str]) -> int:
        return sum(len(p) for p in parts) + max(len(parts) - 1, 0)

    for sentence in doc.sentences:
        extra = len(sentence) + (1 if current else 0)
        if current_len + extra < max_len:
            current.append(sentence)
            current_len += extra
            fresh += 1
            continue

        if fresh:
            chunks.append(current)
        seed = current[-overlap_sentences:] if overlap_sentences and fresh else []
        while seed and joined_len(seed) + 1 + len(sentence) >= max_len:
            seed = seed[1:]
        current = seed + [sentence]
        current_len = joined_len(current)
        fresh = 1

    if fresh:
        chunks.append(current)
    return ChunkSet(doc.source_id, [" ".join(c) for c in chunks], max_len, overlap_sentences)


def write_vault(chunk_set: ChunkSet, vault_dir: str | Path) -> Path:
    """Write one chunk per line to ``<vault_dir>/<source_id>.txt``."""
    path = Path(vault_dir) / f"{chunk_set.source_id}.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [re.sub(r"[\r\n]+", " ", c) + "\n" for c in chunk_set.chunks]
    path.write_text("".join(lines), encoding="utf-8")
    return path


def read_vault(path: str | Path, max_len: int = 1000, overlap_sentences: int = 1) -> ChunkSet:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    chunks = text.split("\n")[:-1] if text else []
    return ChunkSet(path.stem, chunks, max_len, overlap_sentences)
