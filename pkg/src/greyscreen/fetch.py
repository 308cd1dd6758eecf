"""Downloading candidate PDFs and classifying what cannot be screened."""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import requests

log = logging.getLogger(__name__)

PDF_MAGIC = b"%PDF"
DEFAULT_TIMEOUT_S = 12.0
DEFAULT_MAX_REDIRECTS = 5
DEFAULT_BLOCK_MARKERS = ("enable javascript", "captcha", "access denied", "request blocked")

USER_AGENT = "greyscreen/0.1 (+literature screening)"


@dataclass(frozen=True)
class CandidateSource:
    id: str
    url: str


@dataclass
class FetchOutcome:
    source_id: str
    url: str
    status: str  # "downloaded" | "not_available"
    reason: str = ""
    local_path: Path | None = None
    content_type: str = ""
    bytes: int = 0
    sha256: str = ""

    @property
    def downloaded(self) -> bool:
        return self.status == "downloaded"

    def row(self) -> list[str]:
        return [self.source_id, self.url, self.status, self.reason, self.content_type, str(self.bytes), self.sha256]


FETCH_LOG_HEADER = ["id", "url", "status", "reason", "content_type", "bytes", "sha256"]


def _not_available(source: CandidateSource, reason: str, content_type: str = "", size: int = 0) -> FetchOutcome:
    return FetchOutcome(source.id, source.url, "not_available", reason, None, content_type, size)


def fetch_document(
    source: CandidateSource,
    cache_dir: str | Path,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    max_redirects: int = DEFAULT_MAX_REDIRECTS,
    session: requests.Session | None = None,
) -> FetchOutcome:
    """Download one PDF into ``cache_dir`` under its SHA-256 name.

    ``timeout_s`` bounds the whole exchange, not just each socket read.
    Validation order: HTTP status, content type, empty body, magic bytes.
    Nothing here raises for a bad source; failures come back as
    ``not_available`` outcomes with a single reason.
    """
    if timeout_s <= 0:
        raise ValueError("timeout_s must be positive")
    own_session = session is None
    session = session or requests.Session()
    session.max_redirects = max_redirects
    deadline = time.monotonic() + timeout_s
    try:
        with session.get(
            source.url,
            timeout=timeout_s,
            stream=True,
            allow_redirects=True,
            headers={"User-Agent": USER_AGENT, "Accept": "application/pdf,*/*;q=0.5"},
        ) as resp:
            content_type = resp.headers.get("Content-Type", "")
            if resp.status_code != 200:
                return _not_available(source, f"http_error:{resp.status_code}", content_type)
            if "application/pdf" not in content_type.lower():
                mime = content_type.split(";")[0].strip() or "missing"
                return _not_available(source, f"wrong_mime:{mime}", content_type)
            body = bytearray()
            for part in resp.iter_content(chunk_size=65536):
                body.extend(part)
                if time.monotonic() > deadline:
                    return _not_available(source, "timeout", content_type, len(body))
    except requests.TooManyRedirects:
        return _not_available(source, "http_error:too_many_redirects")
    except requests.Timeout:
        return _not_available(source, "timeout")
    except requests.RequestException as exc:
        return _not_available(source, f"http_error:{type(exc).__name__}")
    finally:
        if own_session:
            session.close()

    if not body:
        return _not_available(source, "empty_body", content_type)
    if not bytes(body[:4]) == PDF_MAGIC:
        return _not_available(source, "wrong_mime:not_pdf_bytes", content_type, len(body))

    digest = hashlib.sha256(body).hexdigest()
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{digest}.pdf"
    if not path.exists():
        # unique temp name: parallel fetches of identical content must not collide
        fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".part")
        with os.fdopen(fd, "wb") as fh:
            fh.write(body)
        os.replace(tmp, path)
    return FetchOutcome(source.id, source.url, "downloaded", "", path, content_type, len(body), digest)


def detect_block_page(text: str, markers=DEFAULT_BLOCK_MARKERS) -> bool:
    """True for empty extractions and text carrying any access-block marker."""
    if not text or not text.strip():
        return True
    lowered = text.casefold()
    return any(m.casefold() in lowered for m in markers)
