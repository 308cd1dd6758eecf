"""End-to-end stages: search, screen, agree, sample, report."""

from __future__ import annotations

import logging
import shutil
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests

from . import agreement as ag
from .config import ConfigError, PipelineConfig
from .fetch import FETCH_LOG_HEADER, CandidateSource, FetchOutcome, detect_block_page, fetch_document
from .prompts import (
    Choice,
    Disposition,
    PromptTemplate,
    ScreeningQuestion,
    Verdict,
    decide_disposition,
    parse_response,
    render_prompt,
)
from .rag import EmbeddingConfig, EndpointError, InferenceConfig, classify, embed_chunks, retrieve_context
from .runio import CsvAppender, RunDir, read_comments, read_csv, safe_name, timestamp, write_csv
from .search import (
    QuotaExceeded,
    SearchApiConfig,
    TermSet,
    build_queries,
    dedupe_hits,
    run_search,
    write_query_logs,
)
from .textprep import ExtractionError, chunk_sentences, extract_text, write_vault

log = logging.getLogger(__name__)

EVAL_LOG_HEADER = [
    "id",
    "url",
    "choice",
    "confidence",
    "prompt_version",
    "question_version",
    "model_id",
    "temperature",
    "explanation",
    "timestamp",
]

BLOCK_REASON = "block_page_suspected"


class StageError(RuntimeError):
    """A stage stopped before processing every row; partial output is kept."""


@dataclass
class SearchSummary:
    queries: int
    raw_hits: int
    unique_hits: int
    csv_path: Path
    errors: list[str] = field(default_factory=list)


@dataclass
class ScreenSummary:
    input_rows: int
    processed: int
    skipped: int
    dispositions: Counter
    log_path: Path


def _comments(config: PipelineConfig) -> dict[str, str]:
    return {"config_hash": config.config_hash()}


# --------------------------------------------------------------------------- search


def cmd_search(config: PipelineConfig) -> SearchSummary:
    if not config.api_key:
        raise ConfigError("search needs an API key (config api_key or GREYSCREEN_API_KEY)")
    if not config.engine_id:
        raise ConfigError("search needs engine_id")
    terms = TermSet(config.population_terms, config.intervention_terms, config.anchor_term)
    queries = build_queries(terms, config.strategy)

    run = RunDir(config.output_dir).create()
    api = SearchApiConfig(config.search_endpoint, config.api_key, config.engine_id, config.page_delay_s)
    session = requests.Session()
    results, errors, quota_error = [], [], None
    for query in queries:
        log.info("search %s", query.id)
        try:
            result = run_search(query, api, session)
        except QuotaExceeded as exc:
            quota_error = str(exc)
            errors.append(quota_error)
            break
        write_query_logs(result, run.logs / "search")
        errors.extend(f"{query.id} {e}" for e in result.errors)
        results.append(result)

    (run.logs / "search" / "errors.txt").write_text("".join(f"{e}\n" for e in errors), encoding="utf-8")
    unique = dedupe_hits(results)
    raw_hits = sum(len(r.hits) for r in results)
    write_csv(run.screening_csv, ["id", "url"], [[h.id, h.url] for h in unique], _comments(config))
    run.update_manifest(
        config.config_hash(),
        "search",
        input_rows=len(queries),
        output_rows=len(results),
        raw_hits=raw_hits,
        unique_hits=len(unique),
        error=quota_error or "",
    )
    summary = SearchSummary(len(queries), raw_hits, len(unique), run.screening_csv, errors)
    if quota_error:
        raise StageError(f"{quota_error}; {len(results)}/{len(queries)} queries kept in {run.screening_csv}")
    return summary


# --------------------------------------------------------------------------- screen


def _rotate_if_stale(path: Path, config_hash: str) -> None:
    """Move a log written under another config aside so rows never mix."""
    if not path.exists():
        return
    old = read_comments(path).get("config_hash", "unknown")
    if old != config_hash:
        target = path.with_name(f"{path.stem}.{old}{path.suffix}")
        log.warning("config changed (%s -> %s); archiving %s as %s", old, config_hash, path.name, target.name)
        path.replace(target)


def disposition_of_choice(choice: str) -> Disposition:
    c = Choice(choice)
    if c is Choice.NO:
        return Disposition.DISCARD
    if c is Choice.NOT_AVAILABLE:
        return Disposition.UNAVAILABLE
    return Disposition.KEEP


def _fetch_all(
    sources: list[CandidateSource], run: RunDir, config: PipelineConfig
) -> dict[str, FetchOutcome]:
    """Fetch with bounded parallelism, reusing rows already in the fetch log."""
    _rotate_if_stale(run.fetch_log, config.config_hash())
    known: dict[str, FetchOutcome] = {}
    if run.fetch_log.exists():
        for row in read_csv(run.fetch_log, tuple(FETCH_LOG_HEADER)):
            path = run.cache / f"{row['sha256']}.pdf" if row["sha256"] else None
            if row["status"] == "downloaded" and (path is None or not path.exists()):
                continue
            known[row["id"]] = FetchOutcome(
                row["id"], row["url"], row["status"], row["reason"], path,
                row["content_type"], int(row["bytes"] or 0), row["sha256"],
            )
    todo = [s for s in sources if s.id not in known]

    def one(source: CandidateSource) -> FetchOutcome:
        return fetch_document(source, run.cache, config.fetch_timeout_s, config.max_redirects)

    with CsvAppender(run.fetch_log, FETCH_LOG_HEADER, _comments(config)) as out:
        with ThreadPoolExecutor(max_workers=config.fetch_parallelism) as pool:
            # map yields in input order, so log rows are written in a stable order
            for outcome in pool.map(one, todo):
                out.write(outcome.row())
                known[outcome.source_id] = outcome
    return known


def _not_available(source: CandidateSource, reason: str, config: PipelineConfig, prompt_version: str) -> Verdict:
    return Verdict(
        source.id, Choice.NOT_AVAILABLE, None, reason, "",
        model_id=config.inference_model, temperature=config.temperature, prompt_version=prompt_version,
    )


def screen_document(
    source: CandidateSource,
    outcome: FetchOutcome,
    prompt: str,
    template: PromptTemplate,
    question: ScreeningQuestion,
    config: PipelineConfig,
    run: RunDir,
) -> Verdict:
    """Screen one fetched document; every failure becomes a NOT AVAILABLE verdict.

    All per-document state (text, chunks, index, HTTP session) lives in this
    call and is dropped afterwards.
    """
    pv = template.version_id
    if not outcome.downloaded:
        return _not_available(source, outcome.reason, config, pv)
    try:
        doc = extract_text(outcome.local_path, source.id)
    except ExtractionError as exc:
        log.warning("extraction failed: %s", exc)
        return _not_available(source, "extraction_error", config, pv)
    if detect_block_page(doc.raw_text, config.block_markers):
        return _not_available(source, BLOCK_REASON, config, pv)

    chunks = chunk_sentences(doc, config.chunk_max_len, config.chunk_overlap)
    chunks.source_id = safe_name(source.id)
    write_vault(chunks, run.vault)

    session = requests.Session()
    emb = EmbeddingConfig(config.embedding_endpoint, config.embedding_model, config.request_timeout_s, config.request_retries)
    llm = InferenceConfig(
        config.inference_endpoint, config.inference_model, config.temperature, config.request_timeout_s, config.request_retries
    )
    try:
        index = embed_chunks(chunks, emb, session)
        context = retrieve_context(question, index, config.retrieval_k, emb, session)
    except EndpointError as exc:
        log.warning("%s: embedding failed: %s", source.id, exc)
        return _not_available(source, "embedding_error", config, pv)
    try:
        raw = classify(prompt, question, context, llm, session)
    except EndpointError as exc:
        log.warning("%s: inference failed: %s", source.id, exc)
        return _not_available(source, "inference_error", config, pv)
    finally:
        session.close()
    return parse_response(raw, source.id, model_id=llm.model, temperature=llm.temperature, prompt_version=pv)


def _load_sources(csv_path: Path) -> list[CandidateSource]:
    rows = read_csv(csv_path, ("id", "url"))
    sources, seen = [], set()
    for i, row in enumerate(rows, 1):
        sid, url = (row.get("id") or "").strip(), (row.get("url") or "").strip()
        if not sid or not url:
            raise ValueError(f"{csv_path}: row {i} lacks id or url")
        if sid in seen:
            raise ValueError(f"{csv_path}: duplicate id {sid!r}")
        seen.add(sid)
        sources.append(CandidateSource(sid, url))
    return sources


def cmd_screen(config: PipelineConfig, csv_path: str | Path | None = None) -> ScreenSummary:
    if not config.prompt_template:
        raise ConfigError("screen needs prompt_template")
    if not config.question:
        raise ConfigError("screen needs question")
    template = PromptTemplate.load(config.prompt_template)
    question = ScreeningQuestion.load(config.question)
    prompt = render_prompt(template)

    run = RunDir(config.output_dir).create()
    csv_path = Path(csv_path) if csv_path else run.screening_csv
    sources = _load_sources(csv_path)
    chash = config.config_hash()

    _rotate_if_stale(run.evaluation_log, chash)
    done = set()
    if run.evaluation_log.exists():
        done = {r["id"] for r in read_csv(run.evaluation_log, tuple(EVAL_LOG_HEADER))}
    pending = [s for s in sources if s.id not in done]
    log.info("screen: %d rows, %d already logged, %d to do", len(sources), len(sources) - len(pending), len(pending))

    outcomes = _fetch_all(pending, run, config) if pending else {}
    with CsvAppender(run.evaluation_log, EVAL_LOG_HEADER, _comments(config)) as out:
        for source in pending:
            verdict = screen_document(source, outcomes[source.id], prompt, template, question, config, run)
            disposition = decide_disposition(verdict)
            if disposition is Disposition.KEEP:
                shutil.copyfile(outcomes[source.id].local_path, run.pdf / f"{safe_name(source.id)}.pdf")
            out.write([
                source.id,
                source.url,
                verdict.choice.value,
                "" if verdict.confidence is None else verdict.confidence,
                verdict.prompt_version,
                question.version_id,
                verdict.model_id,
                verdict.temperature,
                verdict.explanation,
                timestamp(),
            ])
            log.info("%s -> %s (%s)", source.id, verdict.choice.value, disposition.value)

    logged = read_csv(run.evaluation_log, tuple(EVAL_LOG_HEADER))
    wanted = {s.id for s in sources}
    counts = Counter(disposition_of_choice(r["choice"]).value for r in logged if r["id"] in wanted)
    output_rows = sum(counts.values())
    run.update_manifest(
        chash,
        "screen",
        input_rows=len(sources),
        output_rows=output_rows,
        keep=counts.get("Keep", 0),
        discard=counts.get("Discard", 0),
        unavailable=counts.get("Unavailable", 0),
    )
    if output_rows != len(sources):
        raise StageError(f"disposition counts {dict(counts)} do not cover {len(sources)} input rows")
    return ScreenSummary(len(sources), len(pending), len(sources) - len(pending), counts, run.evaluation_log)


# --------------------------------------------------------------------------- agree

_LLM_TO_VOTE = {
    "YES": ag.Vote.YES,
    "NO": ag.Vote.NO,
    "DOUBT": ag.Vote.DOUBT,
    "PARSE FAILED": ag.Vote.DOUBT,
    "NOT AVAILABLE": ag.Vote.NOT_AVAILABLE,
}
_VOTE_TO_CATEGORY = {
    ag.Vote.YES: ag.Consensus.INCLUDE,
    ag.Vote.NO: ag.Consensus.NO,
    ag.Vote.DOUBT: ag.Consensus.DOUBT,
}
NA_CATEGORY = "NotAvailable"


@dataclass
class AgreementReport:
    ppa_by_category: dict[str, object]
    ppa_pooled: float | None
    cohen_kappa: float | None
    fleiss_kappa: float | None
    counts: dict[str, dict[str, int]]
    n_items: int
    n_excluded_na: int
    n_fleiss_items: int
    consensus: dict[str, str]

    def key_values(self) -> dict[str, str]:
        def fmt(v):
            if v is None or v is ag.NO_REFERENCE_CASES:
                return "n/a"
            return f"{v:.6f}"

        return {
            "ppa_yes": fmt(self.ppa_by_category["Include"]),
            "ppa_no": fmt(self.ppa_by_category["No"]),
            "ppa_doubt": fmt(self.ppa_by_category["Doubt"]),
            "ppa_pooled": fmt(self.ppa_pooled),
            "ppa_direction": "reference=human_consensus,test=llm",
            "cohen_kappa": fmt(self.cohen_kappa),
            "fleiss_kappa": fmt(self.fleiss_kappa),
            "n_items": str(self.n_items),
            "n_excluded_na": str(self.n_excluded_na),
            "n_fleiss_items": str(self.n_fleiss_items),
        }


def consensus_from_votes(votes: list[dict[str, str]]) -> tuple[dict[str, str], list[list[ag.Vote]]]:
    """Per-item consensus category plus the raw triples usable for Fleiss' kappa.

    Three raters are aggregated; a single rater's vote stands as is; any
    NotAvailable vote makes the item NotAvailable.
    """
    by_item: dict[str, dict[str, ag.Vote]] = defaultdict(dict)
    for i, row in enumerate(votes, 1):
        item, rater = row["item_id"].strip(), row["rater_id"].strip()
        if rater in by_item[item]:
            raise ValueError(f"duplicate vote for item {item!r} by rater {rater!r}")
        by_item[item][rater] = ag.Vote.parse(row["vote"])

    consensus, triples = {}, []
    bad = []
    for item, raters in by_item.items():
        cast = [raters[r] for r in sorted(raters)]
        if ag.Vote.NOT_AVAILABLE in cast:
            consensus[item] = NA_CATEGORY
        elif len(cast) == 3:
            consensus[item] = ag.aggregate_votes(cast).value
            triples.append(cast)
        elif len(cast) == 1:
            consensus[item] = _VOTE_TO_CATEGORY[cast[0]].value
        else:
            bad.append(f"{item} ({len(cast)} raters)")
    if bad:
        raise ValueError("items need 1 or 3 raters: " + ", ".join(bad))
    return consensus, triples


def compute_agreement(llm_choices: dict[str, str], votes: list[dict[str, str]]) -> AgreementReport:
    consensus, triples = consensus_from_votes(votes)
    missing = sorted(set(consensus) - set(llm_choices))
    if missing:
        extra = sorted(set(llm_choices) - set(consensus))
        msg = "human-voted ids missing from the LLM log: " + ", ".join(missing)
        if extra and len(missing) == len(consensus):
            msg += "; LLM-only ids: " + ", ".join(extra)
        raise ValueError(msg)

    reference, test, excluded = [], [], 0
    for item in sorted(consensus):
        llm_vote = _LLM_TO_VOTE[llm_choices[item]]
        if consensus[item] == NA_CATEGORY or llm_vote is ag.Vote.NOT_AVAILABLE:
            excluded += 1
            continue
        reference.append(consensus[item])
        test.append(_VOTE_TO_CATEGORY[llm_vote].value)

    categories = [c.value for c in ag.Consensus]
    ppa_by_category = {c: ag.ppa(reference, test, c) if reference else ag.NO_REFERENCE_CASES for c in categories}
    counts = {r: {t: 0 for t in categories} for r in categories}
    for r, t in zip(reference, test):
        counts[r][t] += 1

    fleiss = None
    if triples:
        matrix, _ = ag.fleiss_matrix(triples, [ag.Vote.YES, ag.Vote.NO, ag.Vote.DOUBT])
        fleiss = ag.fleiss_kappa(matrix, 3)
    return AgreementReport(
        ppa_by_category=ppa_by_category,
        ppa_pooled=ag.pooled_agreement(reference, test),
        cohen_kappa=ag.cohen_kappa(reference, test) if reference else None,
        fleiss_kappa=fleiss,
        counts=counts,
        n_items=len(reference),
        n_excluded_na=excluded,
        n_fleiss_items=len(triples),
        consensus=consensus,
    )


def format_agreement(report: AgreementReport) -> str:
    kv = report.key_values()
    lines = [
        "Agreement: LLM (test) against human consensus (reference)",
        "",
        f"{'category':<10} {'PPA':>10} {'ref n':>7}",
    ]
    for cat, key in (("Include", "ppa_yes"), ("No", "ppa_no"), ("Doubt", "ppa_doubt")):
        lines.append(f"{cat:<10} {kv[key]:>10} {sum(report.counts[cat].values()):>7}")
    lines += [
        f"{'pooled':<10} {kv['ppa_pooled']:>10} {report.n_items:>7}",
        "",
        f"Cohen's kappa (LLM vs consensus): {kv['cohen_kappa']}",
        f"Fleiss' kappa (humans, {report.n_fleiss_items} items): {kv['fleiss_kappa']}",
        f"items compared: {report.n_items}; excluded as not available: {report.n_excluded_na}",
        "",
        "contingency (rows = consensus, columns = LLM)",
        f"{'':<10}" + "".join(f"{c:>9}" for c in report.counts),
    ]
    for r, row in report.counts.items():
        lines.append(f"{r:<10}" + "".join(f"{v:>9}" for v in row.values()))
    return "\n".join(lines) + "\n"


def cmd_agree(
    config: PipelineConfig, votes_csv: str | Path, llm_log: str | Path | None = None, figures: bool = True
) -> AgreementReport:
    run = RunDir(config.output_dir).create()
    llm_log = Path(llm_log) if llm_log else run.evaluation_log
    choices = {r["id"]: r["choice"] for r in read_csv(llm_log, ("id", "choice"))}
    votes = read_csv(votes_csv, ("item_id", "rater_id", "vote"))
    report = compute_agreement(choices, votes)

    write_csv(run.reports / "consensus.csv", ["item_id", "category"], sorted(report.consensus.items()))
    (run.reports / "agreement.txt").write_text(format_agreement(report), encoding="utf-8")
    (run.reports / "agreement.kv").write_text(
        "".join(f"{k}={v}\n" for k, v in report.key_values().items()), encoding="utf-8"
    )
    if figures:
        from .plotting import plot_ppa

        plot_ppa(report, run.reports / "agreement_ppa.png")
    return report


# --------------------------------------------------------------------------- sample


def cmd_sample(config: PipelineConfig, population_csv: str | Path, out: str | Path | None = None) -> Path:
    rows = read_csv(population_csv, ("id",))
    if not rows:
        raise ValueError(f"{population_csv}: empty population")
    ids = [r["id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{population_csv}: duplicate ids")
    plan = ag.SamplePlan(len(rows), config.sample_confidence, config.sample_margin, config.sample_proportion, config.seed)
    if plan.required_n > len(rows):
        raise ValueError(f"population of {len(rows)} is smaller than the required {plan.required_n}")
    chosen = ag.draw_sample(list(range(len(rows))), plan.required_n, config.seed)
    header = list(rows[0].keys())
    out = Path(out) if out else RunDir(config.output_dir).create().reports / "sample.csv"
    comments = {k: str(v) for k, v in plan.describe().items()}
    write_csv(out, header, ([rows[i][h] for h in header] for i in chosen), comments)
    return out


# --------------------------------------------------------------------------- report

VOTE_COLUMNS = ["DOUBT", "YES", "NOT AVAILABLE", "NO", "PARSE FAILED"]


@dataclass
class RunReport:
    votes: dict[str, int]
    dispositions: dict[str, int]
    na_reasons: dict[str, int]
    total: int

    @property
    def block_suspected(self) -> int:
        return self.na_reasons.get(BLOCK_REASON, 0)


def summarize_log(rows: list[dict[str, str]]) -> RunReport:
    votes = Counter(r["choice"] for r in rows)
    dispositions = Counter(disposition_of_choice(r["choice"]).value for r in rows)
    na = Counter(r["explanation"] or "unspecified" for r in rows if r["choice"] == Choice.NOT_AVAILABLE.value)
    return RunReport(
        votes={c: votes.get(c, 0) for c in VOTE_COLUMNS},
        dispositions={d.value: dispositions.get(d.value, 0) for d in Disposition},
        na_reasons=dict(sorted(na.items())),
        total=len(rows),
    )


def cmd_report(config: PipelineConfig, figures: bool = True) -> RunReport:
    run = RunDir(config.output_dir).create()
    if not run.evaluation_log.exists():
        raise ValueError(f"no evaluation log at {run.evaluation_log}; run `screen` first")
    report = summarize_log(read_csv(run.evaluation_log, tuple(EVAL_LOG_HEADER)))

    def share(n: int) -> str:
        return f"{n / report.total:.4f}" if report.total else "n/a"

    rows = [["vote", k, v, share(v)] for k, v in report.votes.items()]
    rows += [["disposition", k, v, share(v)] for k, v in report.dispositions.items()]
    rows += [["na_reason", k, v, share(v)] for k, v in report.na_reasons.items()]
    rows.append(["total", "rows", report.total, share(report.total)])
    write_csv(run.reports / "summary.csv", ["section", "category", "count", "share"], rows, _comments(config))

    width = max([len(k) for k in (*report.votes, *report.na_reasons)] + [12])
    lines = ["LLM votes", " ".join(f"{k:>{len(k) + 2}}" for k in report.votes)]
    lines.append(" ".join(f"{v:>{len(k) + 2}}" for k, v in report.votes.items()))
    lines += ["", "Dispositions"] + [f"  {k:<{width}} {v:>7}" for k, v in report.dispositions.items()]
    lines += ["", "Not available, by reason"] + [f"  {k:<{width}} {v:>7}" for k, v in report.na_reasons.items()]
    na_total = report.votes["NOT AVAILABLE"]
    lines += [
        "",
        f"block-page suspected: {report.block_suspected} ({share(report.block_suspected)} of rows)",
        f"all not available:    {na_total} ({share(na_total)} of rows)",
        f"total rows:           {report.total}",
    ]
    (run.reports / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if figures:
        from .plotting import plot_na_reasons, plot_vote_distribution

        plot_vote_distribution(report, run.reports / "vote_distribution.png")
        plot_na_reasons(report, run.reports / "na_reasons.png")
    return report
