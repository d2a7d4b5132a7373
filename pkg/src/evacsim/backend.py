"""Remote language-model backend over an OpenAI-compatible chat-completions API.

Credentials are read from the environment variable named in the config,
never from flags or files.
"""

from __future__ import annotations

import asyncio
import json
import os
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import httpx

from ._toml import load_toml
from .agents import Persona, destination_label
from .decisions import BackendConfig, BackendError, DecisionPolicy, DecisionRequest, Protocol, parse_response


def load_backend_config(path: str | Path) -> BackendConfig:
    data = load_toml(path)
    section = data.get("backend", data)
    known = {f.name for f in fields(BackendConfig)}
    unknown = sorted(set(section) - known - {"schema_version"})
    if unknown:
        raise ValueError(f"unknown backend config keys: {', '.join(unknown)}")
    return BackendConfig(**{k: v for k, v in section.items() if k in known})


class ChatClient:
    """Minimal chat-completions client; one instance per event loop."""

    def __init__(self, config: BackendConfig, transport: Optional[httpx.AsyncBaseTransport] = None):
        self.config = config
        self.transport = transport
        self._client: Optional[httpx.AsyncClient] = None

    def _headers(self) -> dict:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise BackendError(f"environment variable {self.config.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}"}

    async def open(self) -> None:
        if self._client is None:
            self._client = httpx.AsyncClient(base_url=self.config.endpoint.rstrip("/"),
                                             headers=self._headers(), timeout=self.config.timeout,
                                             transport=self.transport)

    async def close(self) -> None:
        if self._client is not None:
            await self._client.aclose()
            self._client = None

    async def complete(self, system: str, user: str, json_mode: bool = True) -> str:
        await self.open()
        body = {"model": self.config.model, "temperature": self.config.temperature,
                "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}]}
        if json_mode:
            body["response_format"] = {"type": "json_object"}
        try:
            resp = await self._client.post("/chat/completions", json=body)
        except httpx.HTTPError as exc:
            raise BackendError(f"request failed: {exc!r}") from exc
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed completion: {resp.text[:200]}") from exc

    def complete_sync(self, system: str, user: str, json_mode: bool = True) -> str:
        async def go():
            try:
                return await self.complete(system, user, json_mode)
            finally:
                await self.close()
        return asyncio.run(go())


# wire format requested from the model
RESPONSE_SCHEMA = ('Reply with a single JSON object: {"decided": true or false, '
                   '"destination": one of the destination ids or null, "message": text or null}.')


def decision_prompt(request: DecisionRequest) -> tuple[str, str]:
    p = request.persona
    dests = "\n".join(f"- {d}: {destination_label(d)}" for d in request.allowed_destinations)
    if request.protocol is Protocol.ALONE:
        task = ("You are on your own. Choose where to go now. "
                "Set message to null, you are not talking to anyone.")
    else:
        task = ("You are talking with your group. Either agree on where to go now, or keep discussing. "
                "Write a short message to your group either way.")
    system = (f"You are {p.name}. {p.background}\n"
              f"An emergency is under way at a stadium event.\n{task}\n"
              f"Possible destinations:\n{dests}\n{RESPONSE_SCHEMA}")
    chat = "\n".join(request.group_chat_history) or "(no messages yet)"
    user = f"{request.context_text}\nGroup chat so far:\n{chat}\n"
    return system, user


class RemoteDecisionPolicy(DecisionPolicy):
    name = "remote"
    is_async = True

    def __init__(self, config: BackendConfig, transport: Optional[httpx.AsyncBaseTransport] = None):
        self.config = config
        self.transport = transport
        self.client: Optional[ChatClient] = None

    async def astart(self) -> None:
        self.client = ChatClient(self.config, self.transport)
        await self.client.open()

    async def astop(self) -> None:
        if self.client is not None:
            await self.client.close()
            self.client = None

    async def adecide(self, request):
        if self.client is None:
            await self.astart()
        system, user = decision_prompt(request)
        raw = await self.client.complete(system, user)
        return parse_response(raw, request.protocol, request.allowed_destinations)

    def decide(self, request):
        raise BackendError("the remote policy is asynchronous; use decide_batch")


class RemotePersonaBackend:
    """Persona generation through the chat API (population module protocol)."""

    def __init__(self, config: BackendConfig, transport=None):
        self.client = ChatClient(config, transport)

    def _ask(self, prompt: str) -> list[dict]:
        raw = self.client.complete_sync(
            "You write short, varied persona sketches. Reply with JSON: {\"personas\": [{\"name\": str, "
            "\"background\": str}]}", prompt)
        try:
            items = json.loads(raw)["personas"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError(f"malformed persona batch: {raw[:200]}") from exc
        return items

    def student_personas(self, major: str, count: int, accessibility: bool, batch: str) -> list[Persona]:
        extra = " Each uses a wheelchair or has limited mobility." if accessibility else ""
        items = self._ask(f"Write {count} university students majoring in {major} attending "
                          f"their graduation ceremony.{extra}")
        if len(items) != count:
            raise BackendError(f"batch {batch}: asked for {count} personas, got {len(items)}")
        return [Persona(i["name"], i["background"], major) for i in items]

    def companion_personas(self, requests: Sequence[tuple[Persona, int]]) -> list[list[Persona]]:
        out = []
        for student, k in requests:
            if k == 0:
                out.append([])
                continue
            items = self._ask(f"Write {k} family members or friends attending the graduation of "
                              f"{student.name} ({student.background}). Include a relationship field.")
            if len(items) != k:
                raise BackendError(f"companions of {student.name}: asked for {k}, got {len(items)}")
            out.append([Persona(i["name"], i["background"], None, i.get("relationship", "family"))
                        for i in items])
        return out


class RemoteCommBackend:
    """Communication-experiment backend (commsim protocol) over the chat API."""

    def __init__(self, config: BackendConfig, transport=None):
        self.client = ChatClient(config, transport)

    def _json(self, system: str, user: str) -> dict:
        raw = self.client.complete_sync(system, user)
        try:
            data = json.loads(raw)
        except ValueError as exc:
            raise BackendError(f"malformed reply: {raw[:200]}") from exc
        if not isinstance(data, dict):
            raise BackendError(f"expected a JSON object, got: {raw[:200]}")
        return data

    def generate_agents(self, n: int):
        from .commsim import CommPersona
        data = self._json("You write short persona sketches of people on a university campus. Reply with JSON "
                          "{\"personas\": [{\"name\": str, \"background\": str, \"propensity\": number in 0..1}]}",
                          f"Write {n} personas; propensity is how loosely each reads official messages.")
        items = data.get("personas", [])
        if len(items) != n:
            raise BackendError(f"asked for {n} personas, got {len(items)}")
        return [CommPersona(i["name"], i["background"], float(i.get("propensity", 0.5))) for i in items]

    def interpret(self, persona, message):
        data = self._json(f"You are {persona.name}. {persona.background} Reply with JSON "
                          "{\"interpretation\": str, \"reaction\": str}.",
                          f"You just received this message:\n{message}\nWhat do you think it means, "
                          "and how do you react?")
        return str(data["interpretation"]), str(data["reaction"])

    def assess(self, message, interpretation, reaction):
        data = self._json("You grade how far a reader's interpretation drifts from a message's intent. "
                          "Reply with JSON {\"score\": integer 0..100}; 0 means faithful.",
                          f"Message:\n{message}\nInterpretation:\n{interpretation}\nReaction:\n{reaction}")
        return int(data["score"])

    def extreme(self, persona, message, interpretation):
        data = self._json(f"You are {persona.name}. {persona.background} Reply with JSON {{\"reaction\": str}}.",
                          f"You are convinced that '{message}' means: {interpretation}. "
                          "Describe what you do next.")
        return str(data["reaction"])

    def choose_action(self, agent, inputs):
        from .commsim import Action
        history = "\n".join(agent.decision_history[-10:]) or "(none)"
        data = self._json(f"You are {agent.name}. {agent.persona.background} Reply with JSON "
                          "{\"action\": \"IDLE\" | \"SPREAD\" | \"EVACUATE\"}.",
                          "You received:\n" + "\n".join(inputs) + f"\nYour earlier choices:\n{history}")
        return Action(str(data["action"]).upper())

    def compose(self, agent, inputs):
        data = self._json(f"You are {agent.name}. {agent.persona.background} Reply with JSON {{\"post\": str}}.",
                          "Write what you share with others about:\n" + "\n".join(inputs))
        return str(data["post"])

    def update(self, agent, feedback):
        data = self._json(f"You are {agent.name}. {agent.persona.background} Reply with JSON {{\"lesson\": str}}.",
                          f"Afterwards you learn: {feedback}\nWhat do you take away from it?")
        return str(data["lesson"])
