from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from PIL import Image

from adzero.errors import (
    ContractError,
    ProtocolError,
    StubScriptError,
    TransportError,
)
from adzero.gateway import (
    ChatMessage,
    EndpointConfig,
    HttpGateway,
    ScriptedGateway,
    build_request_body,
    encode_frame,
)


def endpoint(**overrides) -> EndpointConfig:
    defaults = dict(base_url="http://example.invalid/v1", model_name="m",
                    max_tokens=64, temperature=0.0, timeout=5.0,
                    max_in_flight=4, retry_limit=2)
    defaults.update(overrides)
    return EndpointConfig(**defaults)


def test_message_role_validation():
    with pytest.raises(ContractError):
        ChatMessage(role="narrator", text="x")
    with pytest.raises(ContractError):
        ChatMessage(role="system", text="x", images=(b"jpeg",))


def test_endpoint_invariants():
    with pytest.raises(ContractError):
        endpoint(max_in_flight=0)
    with pytest.raises(ContractError):
        endpoint(temperature=-0.1)


def test_request_body_is_deterministic():
    messages = [
        ChatMessage(role="system", text="sys"),
        ChatMessage(role="user", text="hello", images=(b"\xff\xd8frame",)),
    ]
    first = build_request_body(endpoint(), messages)
    second = build_request_body(endpoint(), list(messages))
    assert first == second
    payload = json.loads(first)
    assert payload["model"] == "m"
    assert payload["messages"][1]["content"][1]["image_url"]["url"].startswith(
        "data:image/jpeg;base64,"
    )


def test_encode_frame_caps_longest_side():
    big = Image.new("RGB", (2000, 1000), (10, 20, 30))
    blob = encode_frame(big)
    with Image.open(__import__("io").BytesIO(blob)) as decoded:
        assert max(decoded.size) == 768


def test_empty_messages_rejected():
    with pytest.raises(ContractError):
        ScriptedGateway([]).complete(endpoint(), [])


def test_scripted_echo():
    gw = ScriptedGateway([{"match": "ping", "reply": "OK"}])
    outcome = gw.complete(endpoint(), [ChatMessage(role="user", text="ping")])
    assert outcome.text == "OK"
    assert outcome.finish_reason == "complete"


def test_scripted_fail_twice_then_succeed_counts_attempts():
    gw = ScriptedGateway(
        [
            {"match": "go", "fail": "transport"},
            {"match": "go", "fail": "transport"},
            {"match": "go", "reply": "done"},
        ]
    )
    outcome = gw.complete(
        endpoint(retry_limit=3), [ChatMessage(role="user", text="go")]
    )
    assert outcome.text == "done"
    assert len(gw.calls) == 3


def test_scripted_exhausted_retries_raise():
    gw = ScriptedGateway(
        [{"match": "go", "fail": "transport"}] * 3
    )
    with pytest.raises(TransportError):
        gw.complete(endpoint(retry_limit=1), [ChatMessage(role="user", text="go")])
    assert len(gw.calls) == 2


def test_scripted_unmatched_prompt():
    gw = ScriptedGateway([{"match": "alpha", "reply": "x"}])
    with pytest.raises(StubScriptError):
        gw.complete(endpoint(retry_limit=0),
                    [ChatMessage(role="user", text="beta")])


def test_scripted_from_file(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps([{"match": "q", "reply": "a"}]))
    gw = ScriptedGateway.from_file(path)
    assert gw.complete(endpoint(), [ChatMessage(role="user", text="q")]).text == "a"


def test_in_flight_never_exceeds_max():
    script = [{"match": "work", "reply": f"r{i}"} for i in range(12)]
    gw = ScriptedGateway(script, latency=0.02)
    ep = endpoint(max_in_flight=2)

    def call(_):
        return gw.complete(ep, [ChatMessage(role="user", text="work")])

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(call, range(12)))
    assert gw.max_in_flight_seen <= 2
    assert len(gw.calls) == 12


# --------------------------------------------------------------------------
# HTTP client against a local server


class _Handler(BaseHTTPRequestHandler):
    responses: list[tuple[int, dict | str]] = []
    seen: list[dict] = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        _Handler.seen.append(
            {"body": body, "auth": self.headers.get("Authorization")}
        )
        status, payload = (
            _Handler.responses.pop(0) if _Handler.responses else (200, {})
        )
        blob = (
            json.dumps(payload) if isinstance(payload, dict) else payload
        ).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.responses = []
    _Handler.seen = []
    yield f"http://127.0.0.1:{server.server_port}/v1"
    server.shutdown()


def _reply(text, reason="stop"):
    return {
        "choices": [{"message": {"content": text}, "finish_reason": reason}]
    }


def test_http_roundtrip(http_server, monkeypatch):
    monkeypatch.setenv("ADZERO_API_KEY", "sekrit")
    _Handler.responses = [(200, _reply("hi there"))]
    gw = HttpGateway(backoff_base=0.0)
    outcome = gw.complete(
        endpoint(base_url=http_server), [ChatMessage(role="user", text="hello")]
    )
    assert outcome.text == "hi there"
    assert outcome.finish_reason == "complete"
    assert outcome.latency >= 0.0
    assert _Handler.seen[0]["auth"] == "Bearer sekrit"
    assert _Handler.seen[0]["body"]["model"] == "m"


def test_http_retries_transient_5xx(http_server):
    _Handler.responses = [(503, "boom"), (200, _reply("recovered"))]
    gw = HttpGateway(backoff_base=0.0)
    outcome = gw.complete(
        endpoint(base_url=http_server, retry_limit=2),
        [ChatMessage(role="user", text="x")],
    )
    assert outcome.text == "recovered"
    assert len(_Handler.seen) == 2


def test_http_protocol_error_carries_body(http_server):
    _Handler.responses = [(404, "no such model")]
    gw = HttpGateway(backoff_base=0.0)
    with pytest.raises(ProtocolError) as err:
        gw.complete(endpoint(base_url=http_server),
                    [ChatMessage(role="user", text="x")])
    assert err.value.status == 404
    assert "no such model" in err.value.body


def test_http_truncated_finish_reason(http_server):
    _Handler.responses = [(200, _reply("partial", reason="length"))]
    gw = HttpGateway(backoff_base=0.0)
    outcome = gw.complete(endpoint(base_url=http_server),
                          [ChatMessage(role="user", text="x")])
    assert outcome.finish_reason == "truncated"


def test_http_transport_error_after_retries():
    gw = HttpGateway(backoff_base=0.0)
    bad = endpoint(base_url="http://127.0.0.1:1/v1", retry_limit=1, timeout=0.5)
    with pytest.raises(TransportError):
        gw.complete(bad, [ChatMessage(role="user", text="x")])
