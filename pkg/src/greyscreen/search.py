"""Boolean query construction and paginated harvesting of PDF links."""

from __future__ import annotations

import csv
import enum
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlparse

import requests

log = logging.getLogger(__name__)

PAGE_SIZE = 10
MAX_RESULTS = 100
LAST_START = MAX_RESULTS - PAGE_SIZE + 1  # 91


class Strategy(str, enum.Enum):
    PAIRWISE_AND = "pairwise_and"
    OR_MERGED = "or_merged"

    @classmethod
    def parse(cls, value: "Strategy | str") -> "Strategy":
        if isinstance(value, cls):
            return value
        key = re.sub(r"[^a-z]", "", str(value).lower())
        for member in cls:
            if member.value.replace("_", "") == key:
                return member
        raise ValueError(f"unknown query strategy {value!r}")


class QuotaExceeded(RuntimeError):
    """The search API refused further requests for this key."""


@dataclass(frozen=True)
class TermSet:
    population: tuple[str, ...]
    intervention: tuple[str, ...]
    anchor: str = "software"

    def __init__(self, population, intervention, anchor: str = "software"):
        object.__setattr__(self, "population", tuple(population))
        object.__setattr__(self, "intervention", tuple(intervention))
        object.__setattr__(self, "anchor", anchor)
        for name in ("population", "intervention"):
            terms = getattr(self, name)
            if not terms:
                raise ValueError(f"{name} term list is empty")
            seen = set()
            for t in terms:
                if not isinstance(t, str) or not t.strip():
                    raise ValueError(f"{name} terms must be non-empty strings, got {t!r}")
                if '"' in t:
                    raise ValueError(f"{name} term {t!r} contains a double quote")
                if t.casefold() in seen:
                    raise ValueError(f"duplicate {name} term {t!r}")
                seen.add(t.casefold())


@dataclass(frozen=True)
class QuerySpec:
    id: str
    strategy: Strategy
    intervention_term: str
    rendered: str
    population_terms: tuple[str, ...] = ()


@dataclass(frozen=True)
class SearchHit:
    query_id: str
    rank: int
    url: str
    page_start_index: int

    @property
    def id(self) -> str:
        return f"{self.query_id}-{self.rank}"


@dataclass
class SearchApiConfig:
    endpoint: str
    api_key: str
    engine_id: str
    page_delay_s: float = 1.0
    timeout_s: float = 30.0


@dataclass
class SearchResult:
    query: QuerySpec
    hits: list[SearchHit] = field(default_factory=list)
    links: list[str] = field(default_factory=list)
    requests_made: list[int] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def _intext(phrase: str) -> str:
    return f'intext:"{phrase}"'


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def build_queries(terms: TermSet, strategy: Strategy | str) -> list[QuerySpec]:
    """Render one query per intervention (OR-merged) or per term pair (pairwise).

    >>> q = build_queries(TermSet(["A"], ["t"]), "pairwise_and")
    >>> q[0].rendered
    'intext:"A" AND intext:"t" AND intext:"software" filetype:pdf'
    """
    strategy = Strategy.parse(strategy)
    tail = f"AND {_intext(terms.anchor)} filetype:pdf"
    queries = []
    if strategy is Strategy.OR_MERGED:
        group = "(" + " OR ".join(_intext(p) for p in terms.population) + ")"
        for term in terms.intervention:
            queries.append(
                QuerySpec(
                    id=f"or-{_slug(term)}",
                    strategy=strategy,
                    intervention_term=term,
                    rendered=f"{group} AND {_intext(term)} {tail}",
                    population_terms=terms.population,
                )
            )
    else:
        for pop in terms.population:
            for term in terms.intervention:
                queries.append(
                    QuerySpec(
                        id=f"and-{_slug(pop)}-{_slug(term)}",
                        strategy=strategy,
                        intervention_term=term,
                        rendered=f"{_intext(pop)} AND {_intext(term)} {tail}",
                        population_terms=(pop,),
                    )
                )
    ids = [q.id for q in queries]
    if len(set(ids)) != len(ids):
        raise ValueError("terms collapse to duplicate query ids; rename them")
    return queries


def is_pdf_link(url: str) -> bool:
    """True when the URL path ends in ``.pdf``; query strings and fragments are ignored."""
    try:
        return urlparse(url).path.lower().endswith(".pdf")
    except ValueError:
        return False


def _is_quota_error(resp: requests.Response) -> bool:
    if resp.status_code == 429:
        return True
    if resp.status_code == 403:
        try:
            payload = resp.json()
        except ValueError:
            return False
        blob = str(payload).lower()
        return any(k in blob for k in ("quota", "ratelimit", "rate limit", "dailylimit"))
    return False


def run_search(
    query: QuerySpec,
    api: SearchApiConfig,
    session: requests.Session | None = None,
    sleep=time.sleep,
) -> SearchResult:
    """Page through the search API for one query.

    Requests ``start`` = 1, 11, ..., 91 and stops early when a page comes back
    without items or without a next page. Every returned link is recorded in
    ``links``; only ``.pdf`` links become hits. A failed page ends this query
    and is noted in ``errors``; a quota refusal raises QuotaExceeded.
    """
    session = session or requests.Session()
    result = SearchResult(query)
    start = 1
    while start <= LAST_START and len(result.hits) < MAX_RESULTS:
        if result.requests_made and api.page_delay_s > 0:
            sleep(api.page_delay_s)
        params = {"key": api.api_key, "cx": api.engine_id, "q": query.rendered, "start": start}
        result.requests_made.append(start)
        try:
            resp = session.get(api.endpoint, params=params, timeout=api.timeout_s)
        except requests.RequestException as exc:
            result.errors.append(f"start={start}: {type(exc).__name__}: {exc}")
            break
        if _is_quota_error(resp):
            raise QuotaExceeded(f"{query.id}: search quota exhausted (HTTP {resp.status_code})")
        if resp.status_code != 200:
            result.errors.append(f"start={start}: HTTP {resp.status_code}")
            break
        try:
            payload = resp.json()
            items = payload.get("items") or []
            links = [item["link"] for item in items]
        except (ValueError, AttributeError, TypeError, KeyError) as exc:
            result.errors.append(f"start={start}: malformed response: {exc!r}")
            break

        for link in links:
            result.links.append(link)
            if is_pdf_link(link) and len(result.hits) < MAX_RESULTS:
                result.hits.append(SearchHit(query.id, len(result.hits) + 1, link, start))

        queries_meta = payload.get("queries")
        has_next = len(items) >= PAGE_SIZE
        if isinstance(queries_meta, dict):
            has_next = has_next and bool(queries_meta.get("nextPage"))
        if not has_next:
            break
        start += PAGE_SIZE
    for err in result.errors:
        log.warning("search %s: %s", query.id, err)
    return result


def write_query_logs(result: SearchResult, log_dir: str | Path) -> tuple[Path, Path]:
    """Write the per-query TXT log (every link) and CSV log (``id,url,is_pdf_link``).

    Non-PDF rows carry an empty id since they never become candidates.
    """
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    qid = result.query.id
    txt = log_dir / f"{qid}.txt"
    txt.write_text("".join(f"{link}\n" for link in result.links), encoding="utf-8")

    csv_path = log_dir / f"{qid}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "url", "is_pdf_link"])
        rank = 0
        for link in result.links:
            pdf = is_pdf_link(link) and rank < MAX_RESULTS
            if pdf:
                rank += 1
            writer.writerow([f"{qid}-{rank}" if pdf else "", link, "true" if pdf else "false"])
    return txt, csv_path


def dedupe_hits(results: list[SearchResult]) -> list[SearchHit]:
    """First occurrence of each URL across queries, in query then rank order."""
    seen: set[str] = set()
    unique = []
    for result in results:
        for hit in result.hits:
            if hit.url not in seen:
                seen.add(hit.url)
                unique.append(hit)
    return unique
