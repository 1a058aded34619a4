import json
import threading
import time
from functools import lru_cache
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from flagcheck.backend import ScriptedMock
from flagcheck.srcmodel import load_source

FIXTURES = Path(__file__).parent / "fixtures"
SUITE_BUDGET_SECONDS = 180
_suite_start = time.perf_counter()
C1_10 = FIXTURES / "c1_10.c"
C1_10_SCRIPT = FIXTURES / "c1_10_script.json"


def brute_levenshtein(a: str, b: str) -> int:
    """Textbook recursive definition, memoised; independent of the library."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


@pytest.fixture
def c1_10():
    return load_source(str(C1_10))


@pytest.fixture
def c1_10_mock():
    return ScriptedMock.from_json(C1_10_SCRIPT)


def worked_example_generations():
    """line_no -> generated text as scripted from the worked example."""
    data = json.loads(C1_10_SCRIPT.read_text())
    return {int(k): v for k, v in data["script"].items()}


def synthetic_run(case_id, features, codes=None, language="c", start_no=1):
    """RunRecord with hand-set features; line numbers start at ``start_no``."""
    from flagcheck.classifier import LineResult
    from flagcheck.evalharness import RunRecord

    codes = codes or {}
    lines = []
    for i, f in enumerate(features):
        code = codes.get(i, f"stmt_{i}();")
        lines.append(LineResult(i, start_no + i, code, code, code if f.ld == 0 else "other();", f))
    return RunRecord(case_id, "fp-test", language, lines)


def synthetic_case(case_id, defects, **kw):
    from flagcheck.evalharness import BenchmarkCase

    return BenchmarkCase(case_id, f"/nowhere/{case_id}.c", kw.pop("language_id", "c"), frozenset(defects), **kw)


class StubCompletionServer:
    """Local OpenAI-style completions endpoint counting the requests it serves.

    Replies depend only on the prompt, so runs are deterministic: the
    completion is ``"/* n */ value;"`` where n is the prompt's line count.
    """

    def __init__(self, status: int = 200):
        self.requests = []
        self.status = status
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append((self.path, body))
                if stub.status != 200:
                    self.send_response(stub.status)
                    self.end_headers()
                    return
                n = body["prompt"].count("\n")
                text = f"value_{n};\n"
                payload = {"choices": [{"text": text, "logprobs": {
                    "tokens": [f"value_{n}", ";", "\n"], "token_logprobs": [-0.1, -0.2, -0.9]}}]}
                data = json.dumps(payload).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_server():
    with StubCompletionServer() as server:
        yield server


def write_synthetic_benchmark(root: Path) -> Path:
    """Three small cases plus a mock script; returns the manifest path.

    Scripted generations (everything else echoes):
      a.c   line 3 differs by 2 edits (the defect); line 5 ``}`` becomes ``} else {``
      b.py  line 4 differs by 39 edits two lines below a comment; defect on 2-3
      c.v   nothing differs; defect on 2 is missed
    """
    (root / "a.c").write_text("int f(int x) {\nint y = x;\nreturn y + 1;\nif (y) {\n}\n}\n")
    (root / "b.py").write_text("def g(a):\n    # scale the input\n    b = a * 2\n    return b\n")
    (root / "c.v").write_text("module m(input a, output b);\nassign b = a;\nendmodule\n")
    manifest = [
        {"id": "A", "path": "a.c", "language_id": "c", "defect_lines": [3], "source_group": "C1"},
        {"id": "B", "path": "b.py", "language_id": "python", "defect_lines": [2, 3],
         "category": "security", "source_group": "P1"},
        {"id": "C", "path": "c.v", "language_id": "verilog", "defect_lines": [2], "source_group": "V1"},
    ]
    script = {
        "default": {"type": "echo"},
        "script": {
            "a.c:3": "return x - 1;",
            "a.c:5": "} else {",
            "b.py:4": "    raise ValueError('unreachable state reached')",
        },
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    (root / "script.json").write_text(json.dumps(script, indent=1))
    return root / "manifest.json"


def pytest_sessionstart(session):
    global _suite_start
    _suite_start = time.perf_counter()


def pytest_sessionfinish(session, exitstatus):
    session.config._suite_elapsed = time.perf_counter() - _suite_start
    if session.config._suite_elapsed >= SUITE_BUDGET_SECONDS and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = getattr(config, "_suite_elapsed", time.perf_counter() - _suite_start)
    verdict = "PASS" if elapsed < SUITE_BUDGET_SECONDS else "FAIL"
    terminalreporter.write_line(
        f"[acceptance 10] {verdict}  whole test suite in {elapsed:.1f}s (budget {SUITE_BUDGET_SECONDS}s)")
