import json
import shutil
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from webshock.config import load_config
from webshock.pipeline import run_pipeline

FIXTURE_CORPUS = Path(__file__).parent / "fixtures" / "corpus"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def corpus_run(tmp_path_factory):
    """One full pipeline run on a scratch copy of the checked-in corpus."""
    root = tmp_path_factory.mktemp("corpus") / "run"
    shutil.copytree(FIXTURE_CORPUS, root)
    cfg = load_config(root / "config.yaml")
    manifest = run_pipeline(cfg)
    return cfg, manifest


class _ScriptedHandler(BaseHTTPRequestHandler):
    """Replays a per-server list of (status, body) responses, then repeats
    the last one. Records every request for assertions."""

    def _serve(self):
        server = self.server
        with server.lock:
            idx = min(server.hits, len(server.script) - 1)
            server.hits += 1
            length = int(self.headers.get("Content-Length") or 0)
            server.requests.append({
                "method": self.command, "path": self.path,
                "headers": dict(self.headers),
                "body": self.rfile.read(length) if length else b"",
            })
        status, body = server.script[idx]
        self.send_response(status)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    do_GET = _serve
    do_POST = _serve

    def log_message(self, *args):
        pass


@pytest.fixture
def scripted_server():
    """Start a local HTTP server that replays a scripted response list."""
    servers = []

    def start(script):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
        server.script = [(s, b if isinstance(b, bytes) else json.dumps(b).encode())
                         for s, b in script]
        server.hits = 0
        server.requests = []
        server.lock = threading.Lock()
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        server.url = f"http://127.0.0.1:{server.server_address[1]}"
        return server

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()
