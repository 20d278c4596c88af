from __future__ import annotations

import http.server
import json
import threading

import numpy as np
import pytest

from semshot.feature_store import FeatureCache, FeatureCacheHeader


def make_cache(
    class_sizes: dict[int, int],
    dim: int = 4,
    splits: dict[str, tuple[int, ...]] | None = None,
    seed: int = 0,
    scale: float = 1.0,
) -> FeatureCache:
    """Small in-memory cache with gaussian vectors, classes in id order."""
    rng = np.random.default_rng(seed)
    ids, rows = [], []
    for cid, count in class_sizes.items():
        for _ in range(count):
            ids.append(cid)
            rows.append(rng.normal(0.0, scale, dim).astype(np.float32))
    if splits is None:
        splits = {"base": tuple(class_sizes)}
    header = FeatureCacheHeader(
        visual_dim=dim,
        record_count=len(ids),
        dataset_name="test",
        split_table=splits,
    )
    return FeatureCache(
        header=header,
        class_ids=np.asarray(ids, dtype=np.int64),
        vectors=np.stack(rows),
    )


class _ScriptedLlmHandler(http.server.BaseHTTPRequestHandler):
    """Replays the server's scripted (status, content) list, one per request."""

    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        server = self.server
        server.requests.append(json.loads(body) if body else None)
        if server.script:
            status, content = server.script.pop(0)
        else:
            status, content = 200, "fallback paraphrase"
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if status == 200:
            payload = {"choices": [{"message": {"content": content}}]}
            self.wfile.write(json.dumps(payload).encode("utf-8"))
        else:
            self.wfile.write(b'{"error": "scripted failure"}')

    def log_message(self, *args):  # quiet
        pass


class ScriptedLlmServer:
    def __init__(self):
        self.httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedLlmHandler)
        self.httpd.requests = []
        self.httpd.script = []
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.httpd.server_address[1]}"

    @property
    def request_count(self) -> int:
        return len(self.httpd.requests)

    @property
    def requests(self) -> list:
        return self.httpd.requests

    def set_script(self, script: list[tuple[int, str]]) -> None:
        self.httpd.script = list(script)
        self.httpd.requests = []

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def llm_server(monkeypatch):
    monkeypatch.setenv("no_proxy", "127.0.0.1,localhost")
    monkeypatch.setenv("NO_PROXY", "127.0.0.1,localhost")
    monkeypatch.setenv("SEMSHOT_API_KEY", "test-key")
    server = ScriptedLlmServer()
    yield server
    server.close()
