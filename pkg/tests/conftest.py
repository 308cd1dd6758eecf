import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import pytest


class MockServer:
    """Tiny HTTP server; ``route(path, fn)`` where fn(request) -> (status, headers, body)."""

    def __init__(self):
        self.routes = {}
        self.requests = []
        self._lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _handle(self, method):
                parsed = urlparse(self.path)
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                req = {
                    "method": method,
                    "path": parsed.path,
                    "query": {k: v[0] for k, v in parse_qs(parsed.query).items()},
                    "body": raw,
                    "json": json.loads(raw) if raw and self.headers.get("Content-Type", "").startswith("application/json") else None,
                }
                with server._lock:
                    server.requests.append(req)
                fn = server.routes.get(parsed.path)
                if fn is None:
                    status, headers, body = 404, {"Content-Type": "text/plain"}, b"not found"
                else:
                    status, headers, body = fn(req)
                if isinstance(body, (dict, list)):
                    body = json.dumps(body).encode()
                    headers = {"Content-Type": "application/json", **headers}
                self.send_response(status)
                for k, v in headers.items():
                    self.send_header(k, v)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                self._handle("GET")

            def do_POST(self):
                self._handle("POST")

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base(self):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}"

    def url(self, path):
        return self.base + path

    def route(self, path, fn):
        self.routes[path] = fn

    def requests_to(self, path):
        return [r for r in self.requests if r["path"] == path]

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def server():
    srv = MockServer()
    yield srv
    srv.close()


def make_pdf(path, pages, image_only=False):
    """Write a PDF whose pages carry the given strings ('' makes a blank page)."""
    from reportlab.lib.pagesizes import A4
    from reportlab.pdfgen import canvas

    path = Path(path)
    c = canvas.Canvas(str(path), pagesize=A4, invariant=1)
    for text in pages:
        if image_only:
            c.setFillGray(0.3)
            c.rect(72, 600, 300, 120, fill=1, stroke=0)
        else:
            y = 780
            for line in text.split("\n"):
                c.drawString(72, y, line)
                y -= 14
        c.showPage()
    c.save()
    return path


@pytest.fixture
def pdf_factory(tmp_path):
    counter = {"n": 0}

    def factory(pages, image_only=False, name=None):
        counter["n"] += 1
        return make_pdf(tmp_path / (name or f"doc{counter['n']}.pdf"), pages, image_only)

    return factory


def fake_embedding(text, dim=8):
    """Deterministic bag-of-words style vector so related texts land close together."""
    vec = [0.0] * dim
    for word in text.lower().split():
        h = int(hashlib.sha256(word.strip(".,;:!?").encode()).hexdigest(), 16)
        vec[h % dim] += 1.0
    if not any(vec):
        vec[0] = 1.0
    return vec


def embedding_route(dim=8):
    def fn(req):
        return 200, {}, {"embedding": fake_embedding(req["json"]["prompt"], dim)}

    return fn


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""
    import contextlib
    import time

    results = request.config.stash[ACCEPTANCE]

    @contextlib.contextmanager
    def check(number, title):
        start = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            elapsed = time.perf_counter() - start
            line = f"criterion {number:>2}: FAIL  {title} ({elapsed:.2f}s) {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            results[number] = line
            print(line)
            raise
        elapsed = time.perf_counter() - start
        line = f"criterion {number:>2}: PASS  {title} ({elapsed:.2f}s)"
        results[number] = line
        print(line)

    return check
