import json

import httpx
import pytest

from evacsim.agents import AgentCategory, Persona
from evacsim.backend import (
    ChatClient, RemoteCommBackend, RemoteDecisionPolicy, RemotePersonaBackend, decision_prompt, load_backend_config,
)
from evacsim.decisions import BackendConfig, BackendError, DecisionFailure, DecisionRequest, Protocol, decide_batch


def transport(reply, seen=None, status=200):
    def handler(req: httpx.Request):
        body = json.loads(req.content)
        if seen is not None:
            seen.append((req, body))
        content = reply(body) if callable(reply) else reply
        return httpx.Response(status, json={"choices": [{"message": {"content": content}}]})
    return httpx.MockTransport(handler)


@pytest.fixture
def key(monkeypatch):
    monkeypatch.setenv("EVACSIM_TEST_KEY", "sk-test")
    return BackendConfig(api_key_env="EVACSIM_TEST_KEY", endpoint="https://llm.invalid/v1", max_retries=0)


def req(aid=0, category=AgentCategory.WITH_FAMILY):
    proto = Protocol.ALONE if category is AgentCategory.ALONE else Protocol.GROUP
    return DecisionRequest(aid, Persona("Ana", "likes maps", "Art"), category, "You are somewhere.",
                           ("Bo: hello",), proto)


def test_config_file(tmp_path):
    f = tmp_path / "b.toml"
    f.write_text('[backend]\nmax_in_flight = 50\nmodel = "m"\n')
    cfg = load_backend_config(f)
    assert (cfg.max_in_flight, cfg.model) == (50, "m")
    f.write_text('[backend]\napi_key = "x"\n')
    with pytest.raises(ValueError):
        load_backend_config(f)


def test_missing_key(monkeypatch):
    monkeypatch.delenv("EVACSIM_NOPE", raising=False)
    client = ChatClient(BackendConfig(api_key_env="EVACSIM_NOPE"), transport('{}'))
    with pytest.raises(BackendError):
        client.complete_sync("s", "u")


def test_remote_decision_policy(key):
    seen = []
    pol = RemoteDecisionPolicy(key, transport('{"decided": true, "destination": "exit 2", "message": "go"}', seen))
    res = decide_batch(pol, [req(0), req(1)], key)
    assert res.results[0].destination == "Exit2" and res.results[1].message == "go"
    request, body = seen[0]
    assert request.headers["authorization"] == "Bearer sk-test"
    assert request.url.path == "/v1/chat/completions"
    assert body["response_format"] == {"type": "json_object"}


def test_http_error_is_per_request_failure(key):
    pol = RemoteDecisionPolicy(key, transport("x", status=500))
    res = decide_batch(pol, [req(0)], key)
    assert isinstance(res.results[0], DecisionFailure)


def test_prompt_protocols():
    sys_g, user = decision_prompt(req())
    sys_a, _ = decision_prompt(req(category=AgentCategory.ALONE))
    assert "group" in sys_g and "on your own" in sys_a
    assert "Bo: hello" in user and "Exit1" in sys_g


def test_persona_backend(key):
    reply = lambda body: json.dumps({"personas": [{"name": f"N{i}", "background": "b"} for i in range(3)]})
    pb = RemotePersonaBackend(key, transport(reply))
    out = pb.student_personas("Art", 3, False, "Art:3")
    assert [p.name for p in out] == ["N0", "N1", "N2"] and out[0].major == "Art"
    with pytest.raises(BackendError):
        pb.student_personas("Art", 4, False, "Art:4")


def test_comm_backend(key):
    def reply(body):
        sysmsg = body["messages"][0]["content"]
        if "score" in sysmsg:
            return '{"score": 72}'
        if "interpretation" in sysmsg:
            return '{"interpretation": "i", "reaction": "r"}'
        if "action" in sysmsg:
            return '{"action": "spread"}'
        return '{"reaction": "x", "post": "p", "lesson": "l"}'
    cb = RemoteCommBackend(key, transport(reply))
    from evacsim.commsim import Action, CommAgent, CommPersona
    p = CommPersona("Sam", "student", 0.5)
    assert cb.interpret(p, "m") == ("i", "r")
    assert cb.assess("m", "i", "r") == 72
    assert cb.choose_action(CommAgent(0, p), ["hello"]) is Action.SPREAD
