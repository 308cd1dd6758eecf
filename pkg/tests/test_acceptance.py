"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import filecmp
import itertools
import random
import time
from pathlib import Path

import pytest

from greyscreen.agreement import (
    NO_REFERENCE_CASES,
    Vote,
    aggregate_votes,
    cohen_kappa,
    fleiss_kappa,
    ppa,
    sample_size,
)
from greyscreen.pipeline import EVAL_LOG_HEADER, cmd_screen, cmd_search
from greyscreen.prompts import V4_1, Choice, parse_response, render_prompt
from greyscreen.runio import read_csv
from greyscreen.search import MAX_RESULTS, SearchApiConfig, Strategy, TermSet, build_queries, run_search
from greyscreen.textprep import DocumentText, chunk_sentences

from mockworld import INTERVENTION, KEEP, POPULATION, make_config, name_of, setup_world
from oracles import cohen_oracle, fleiss_oracle, footnote_oracle

TESTING_QUERY = (
    '(intext:"Aviation" OR intext:"Aeronautics" OR intext:"Aerospace" OR intext:"Flight Science" OR '
    'intext:"Air Transportation" OR intext:"Aeromechanics" OR intext:"Air Navigation" OR intext:"Avionics" OR '
    'intext:"Airspace Management") AND intext:"testing" AND intext:"software" filetype:pdf'
)


def test_01_sample_size(criterion):
    with criterion(1, "sample_size(8482, 0.95, 0.05, 0.5) == 368"):
        start = time.perf_counter()
        assert sample_size(8482, 0.95, 0.05, 0.5) == 368
        assert time.perf_counter() - start < 0.1


def test_02_aggregation_truth_table(criterion):
    with criterion(2, "aggregate_votes matches the footnote oracle on all 27 triples, permutation-invariant"):
        triples = list(itertools.product([Vote.YES, Vote.NO, Vote.DOUBT], repeat=3))
        assert len(triples) == 27
        for triple in triples:
            got = aggregate_votes(triple).value
            assert got == footnote_oracle(triple), triple
            for perm in itertools.permutations(triple):
                assert aggregate_votes(perm).value == got


def test_03_query_reproduction(criterion):
    with criterion(3, "OrMerged over the reported terms gives 5 queries; 'testing' query byte-exact"):
        queries = build_queries(TermSet(POPULATION, INTERVENTION), Strategy.OR_MERGED)
        assert len(queries) == 5
        testing = [q for q in queries if q.intervention_term == "testing"]
        assert len(testing) == 1
        assert testing[0].rendered.encode() == TESTING_QUERY.encode()


def test_04_parser_round_trip(criterion):
    with criterion(4, "the three published example outputs parse to (Yes,94) (Doubt,91) (No,82)"):
        block = render_prompt(V4_1).split("**Examples of Output**:\n", 1)[1]
        examples = [line.removeprefix("- ") for line in block.splitlines()]
        assert len(examples) == 3
        expected = [(Choice.YES, 94), (Choice.DOUBT, 91), (Choice.NO, 82)]
        for raw, (choice, conf) in zip(examples, expected):
            v = parse_response(raw)
            assert (v.choice, v.confidence) == (choice, conf)
            assert v.explanation == raw.split("; ", 2)[2]
            assert v.explanation.startswith("The document")


def random_sentences(rng, max_len):
    """Unique sentences; roughly one in twenty is longer than max_len."""
    out = []
    for i in range(rng.randint(0, 40)):
        if rng.random() < 0.05:
            length = rng.randint(max_len, 2 * max_len)
        else:
            length = rng.randint(8, max(9, max_len // 2))
        body = f"s{i}" + "".join(rng.choice("abcdefgh  ") for _ in range(length))
        words = " ".join(body.split())
        out.append(words + rng.choice(".!?"))
    return out


def boundary_indices(chunks, sentences):
    """Index of the last sentence in each chunk, found by walking the sentence list."""
    ends, j = [], 0
    for chunk in chunks:
        while not chunk.endswith(sentences[j]):
            j += 1
        ends.append(j)
    return ends


def test_05_chunking_properties(criterion):
    with criterion(5, "chunking on 1000 random sentence lists: size bound, exact rejoin, shared boundary"):
        rng = random.Random(2024)
        start = time.perf_counter()
        shared = 0
        for _ in range(1000):
            max_len = rng.randint(40, 400)
            sents = random_sentences(rng, max_len)
            doc = DocumentText("d", " ".join(sents), sents)

            plain = chunk_sentences(doc, max_len, 0).chunks
            for c in plain:
                assert len(c) < max_len or c in sents
            assert " ".join(plain) == " ".join(" ".join(sents).split())

            lapped = chunk_sentences(doc, max_len, 1).chunks
            for c in lapped:
                assert len(c) < max_len or c in sents
            ends = boundary_indices(lapped, sents)
            for i in range(len(lapped) - 1):
                j = ends[i]
                nxt = sents[j + 1]
                if len(sents[j]) + 1 + len(nxt) < max_len:
                    assert lapped[i + 1].startswith(sents[j] + " "), (i, max_len)
                    shared += 1
                else:
                    # the boundary sentence cannot share a chunk with its successor
                    assert lapped[i + 1].startswith(nxt)
        assert shared > 1000  # the shared-boundary branch is well exercised
        assert time.perf_counter() - start < 10


def test_06_statistics_oracles(criterion):
    with criterion(6, "kappas match brute-force oracles to 1e-12 on 100 instances, relabel-invariant"):
        rng = random.Random(6)
        for _ in range(100):
            cats = ["Include", "Doubt", "No", "Other"][: rng.randint(2, 4)]
            relabel = dict(zip(cats, rng.sample(cats, len(cats))))
            n = rng.randint(2, 50)
            a = [rng.choice(cats) for _ in range(n)]
            b = [rng.choice(cats) for _ in range(n)]
            k = cohen_kappa(a, b)
            assert abs(k - cohen_oracle(a, b)) <= 1e-12
            assert abs(cohen_kappa([relabel[x] for x in a], [relabel[x] for x in b]) - k) <= 1e-12
            assert cohen_kappa(a, a) == 1.0

            raters, ncat, items = rng.randint(2, 6), rng.randint(2, 4), rng.randint(1, 40)
            matrix = []
            for _ in range(items):
                row = [0] * ncat
                for _ in range(raters):
                    row[rng.randrange(ncat)] += 1
                matrix.append(row)
            f = fleiss_kappa(matrix, raters)
            assert abs(f - fleiss_oracle(matrix, raters)) <= 1e-12
            perm = rng.sample(range(ncat), ncat)
            assert abs(fleiss_kappa([[row[j] for j in perm] for row in matrix], raters) - f) <= 1e-12
        assert abs(fleiss_kappa([[2, 1], [1, 2]], 3) - (-1 / 3)) <= 1e-12


def test_07_ppa_contract(criterion):
    with criterion(7, "PPA self-agreement 1, 4-item example 2/3 and 1, zero denominator sentinel"):
        rng = random.Random(7)
        for _ in range(100):
            ref = [rng.choice(["Include", "Doubt", "No"]) for _ in range(rng.randint(1, 30))]
            for c in set(ref):
                assert ppa(ref, ref, c) == 1.0
        ref, test = ["No", "No", "No", "Yes"], ["No", "No", "Yes", "Yes"]
        assert ppa(ref, test, "No") == pytest.approx(2 / 3, abs=1e-15)
        assert ppa(ref, test, "Yes") == 1.0
        assert ppa(ref, test, "Doubt") is NO_REFERENCE_CASES
        assert ppa([], [], "No") is NO_REFERENCE_CASES


def run_world(server, folder: Path, out: Path):
    config = make_config(server, folder, out)
    cmd_search(config)
    summary = cmd_screen(config)
    return config, summary


def snapshot(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_08_end_to_end_mock_run(criterion, server, tmp_path, monkeypatch):
    with criterion(8, "mock search (23 links) + 5 fixture PDFs: log, kept set, NA row, rerun identical"):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        start = time.perf_counter()
        links = setup_world(server, tmp_path)
        assert len(links) == 23

        out = tmp_path / "run"
        config, summary = run_world(server, tmp_path, out)
        inputs = read_csv(out / "logs" / "screening.csv", ("id", "url"))
        rows = read_csv(out / "logs" / "evaluation_log.csv", tuple(EVAL_LOG_HEADER))
        assert len(inputs) == 5
        assert sorted(r["id"] for r in rows) == sorted(r["id"] for r in inputs)
        kept = {p.stem for p in (out / "PDF").iterdir()}
        assert kept == {r["id"] for r in rows if name_of(r["url"]) in KEEP}
        assert len(kept) == 3
        na = [r for r in rows if r["choice"] == "NOT AVAILABLE"]
        assert [name_of(r["url"]) for r in na] == ["blocked"]
        garbage = next(r for r in rows if name_of(r["url"]) == "garbage")
        assert garbage["choice"] == "PARSE FAILED"

        # rerun in place: nothing changes
        first = snapshot(out)
        run_world(server, tmp_path, out)
        assert snapshot(out) == first

        # rerun from scratch into a fresh directory: same outputs byte for byte
        again = tmp_path / "run2"
        run_world(server, tmp_path, again)
        cmp = filecmp.dircmp(out, again)
        for name in ("logs/screening.csv", "logs/evaluation_log.csv", "logs/fetch_log.csv", "manifest"):
            assert (out / name).read_bytes() == (again / name).read_bytes(), name
        assert snapshot(out / "PDF") == snapshot(again / "PDF")
        assert snapshot(out / "vault") == snapshot(again / "vault")
        assert not cmp.left_only and not cmp.right_only
        assert time.perf_counter() - start < 30


def test_09_disposition_conservation(criterion, server, tmp_path, monkeypatch):
    with criterion(9, "Keep + Discard + Unavailable equals input rows on varied input CSVs"):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        setup_world(server, tmp_path)
        server.route("/missing.pdf", lambda req: (404, {}, b""))
        kinds = ["yes", "no", "doubt", "blocked", "garbage", "missing", "html"]
        url = {"missing": server.url("/missing.pdf"), "html": server.url("/pages/p1.html")}
        rng = random.Random(9)
        for n in range(12):
            picked = [rng.choice(kinds) for _ in range(rng.randint(0, 10))]
            csv_path = tmp_path / f"in{n}.csv"
            csv_path.write_text(
                "id,url\n" + "".join(
                    f"r{i},{url.get(k) or server.url(f'/docs/{k}.pdf')}\n" for i, k in enumerate(picked)
                )
            )
            config = make_config(server, tmp_path, tmp_path / f"run{n}")
            summary = cmd_screen(config, csv_path)
            d = summary.dispositions
            assert d.get("Keep", 0) + d.get("Discard", 0) + d.get("Unavailable", 0) == len(picked)
            logged = read_csv(tmp_path / f"run{n}" / "logs" / "evaluation_log.csv", ("id",))
            assert len(logged) == len(picked)


def test_10_pagination_discipline(criterion, server):
    with criterion(10, "against a 15-page mock API: no start > 91, at most 100 hits per query"):
        links = [f"https://ex.org/doc{i}.pdf" for i in range(150)]

        def endless(req):
            start = int(req["query"]["start"])
            body = {"items": [{"link": link} for link in links[start - 1 : start + 9]]}
            body["queries"] = {"nextPage": [{"startIndex": start + 10}]}
            return 200, {}, body

        server.route("/customsearch/v1", endless)
        api = SearchApiConfig(server.url("/customsearch/v1"), "K", "C", page_delay_s=0)
        for query in build_queries(TermSet(["A", "B"], ["t", "u"]), Strategy.PAIRWISE_AND):
            before = len(server.requests)
            result = run_search(query, api)
            sent = server.requests[before:]
            assert all(int(r["query"]["start"]) <= 91 for r in sent)
            assert len(result.hits) <= MAX_RESULTS
            assert len(result.hits) == 100
