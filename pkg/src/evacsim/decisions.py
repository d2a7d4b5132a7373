"""Decision policies, response parsing, and the bounded-concurrency batch executor."""

from __future__ import annotations

import asyncio
import json
import logging
import re
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .agents import DESTINATIONS, AgentCategory, Persona, destination_label, is_exit
from .context import EnvContext

logger = logging.getLogger(__name__)

MAX_IN_FLIGHT = 2000


class Protocol(str, Enum):
    GROUP = "GroupDiscussion"
    ALONE = "AloneDecision"


def protocol_for(category: AgentCategory) -> Protocol:
    return Protocol.ALONE if category is AgentCategory.ALONE else Protocol.GROUP


@dataclass(frozen=True)
class DecisionRequest:
    agent_id: int
    persona: Persona
    category: AgentCategory
    context_text: str
    group_chat_history: tuple[str, ...] = ()
    protocol: Protocol = Protocol.GROUP
    allowed_destinations: tuple[str, ...] = DESTINATIONS
    context: Optional[EnvContext] = None
    round_index: int = 0

    def __post_init__(self) -> None:
        if (self.protocol is Protocol.ALONE) != (self.category is AgentCategory.ALONE):
            raise ValueError(f"agent {self.agent_id}: protocol {self.protocol.value} "
                             f"does not match category {self.category.value}")


@dataclass(frozen=True)
class DecisionResponse:
    decided: bool
    destination: Optional[str] = None
    message: Optional[str] = None
    raw: Optional[str] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.decided and not self.destination:
            raise ValueError("a decided response needs a destination")


@dataclass(frozen=True)
class DecisionFailure:
    agent_id: int
    error: str
    attempts: int


NOT_DECIDED = DecisionResponse(False)


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text.casefold()).strip()


def _aliases(dest: str) -> set[str]:
    out = {normalize(dest), normalize(destination_label(dest))}
    out.add(normalize(re.sub(r"(?<=[a-z])(?=[A-Z0-9])", " ", dest)))
    return out


def match_destination(text: str, catalog: Sequence[str] = DESTINATIONS) -> Optional[str]:
    """Exact alias match after normalization, else a unique substring match."""
    t = normalize(text).strip(" .!\"'")
    if not t:
        return None
    table = {d: _aliases(d) for d in catalog}
    exact = [d for d, al in table.items() if t in al]
    if len(exact) == 1:
        return exact[0]
    hits = [d for d, al in table.items() if any(a in t or t in a for a in al)]
    if len(hits) == 1:
        return hits[0]
    return None


def _truthy(v) -> Optional[bool]:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)):
        return bool(v)
    if isinstance(v, str):
        s = normalize(v)
        if s in ("true", "yes", "y", "1", "decided"):
            return True
        if s in ("false", "no", "n", "0", "undecided"):
            return False
    return None


def _fields(raw: str) -> Optional[dict]:
    start, end = raw.find("{"), raw.rfind("}")
    if 0 <= start < end:
        try:
            data = json.loads(raw[start:end + 1])
            if isinstance(data, dict):
                return {str(k).casefold(): v for k, v in data.items()}
        except json.JSONDecodeError:
            pass
    out = {}
    for line in raw.splitlines():
        m = re.match(r"\s*(decided|decision|destination|message)\s*[:=]\s*(.*)$", line, re.IGNORECASE)
        if m:
            out[m.group(1).casefold()] = m.group(2).strip()
    return out or None


def parse_response(raw: str, protocol: Protocol = Protocol.GROUP,
                   allowed: Sequence[str] = DESTINATIONS) -> DecisionResponse:
    """Total parser: anything it cannot resolve becomes a not-decided response."""
    fields = _fields(raw)
    if fields is None:
        fields = {"destination": raw}
    message = fields.get("message")
    message = None if message in (None, "") or protocol is Protocol.ALONE else str(message)
    decided = _truthy(fields.get("decided", fields.get("decision")))
    dest_text = fields.get("destination")
    if decided is False or not dest_text:
        return DecisionResponse(False, None, message, raw)
    dest = match_destination(str(dest_text), allowed)
    if dest is None:
        logger.info("unresolved destination %r", dest_text)
        return DecisionResponse(False, None, message, raw)
    return DecisionResponse(True, dest, message, raw)


def render_response(resp: DecisionResponse) -> str:
    return json.dumps({"decided": resp.decided, "destination": resp.destination, "message": resp.message},
                      sort_keys=True)


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------

class DecisionPolicy:
    name = "policy"
    serial = False
    is_async = False

    def decide(self, request: DecisionRequest) -> DecisionResponse:
        raise NotImplementedError

    async def adecide(self, request: DecisionRequest) -> DecisionResponse:
        return self.decide(request)

    async def astart(self) -> None:
        pass

    async def astop(self) -> None:
        pass


def _allowed_exits(request: DecisionRequest):
    if request.context is None:
        raise ValueError(f"agent {request.agent_id}: stub policies need the structured context")
    for r in request.context.exit_rankings:
        if r.exit.id in request.allowed_destinations:
            yield r.exit.id


class NearestExit(DecisionPolicy):
    name = "nearest-exit"

    def decide(self, request):
        dest = next(_allowed_exits(request), None)
        if dest is None:
            return NOT_DECIDED
        msg = None if request.protocol is Protocol.ALONE else \
            f"Let's go to {destination_label(dest)}, it is the closest way out."
        return DecisionResponse(True, dest, msg)


class ObedientToCoordinator(NearestExit):
    name = "obedient"

    def decide(self, request):
        ctx = request.context
        hint = None if ctx is None else (ctx.coordinator_hint or ctx.prior_hint)
        if hint is not None and hint[1] in request.allowed_destinations:
            msg = None if request.protocol is Protocol.ALONE else \
                f"The coordinator says {destination_label(hint[1])}, let's follow them."
            return DecisionResponse(True, hint[1], msg)
        return super().decide(request)


class DelayK(NearestExit):
    """Stays in discussion for ``k`` calls per agent, then picks the nearest exit."""

    name = "delay-k"

    def __init__(self, k: int = 3):
        if k < 0:
            raise ValueError("k must be non-negative")
        self.k = k
        self.calls: Counter = Counter()

    def decide(self, request):
        self.calls[request.agent_id] += 1
        if self.calls[request.agent_id] <= self.k:
            msg = None if request.protocol is Protocol.ALONE else "We should talk this over a bit more."
            return DecisionResponse(False, None, msg)
        return super().decide(request)

    def state_dict(self) -> dict:
        return {"k": self.k, "calls": {str(k): v for k, v in sorted(self.calls.items())}}

    def load_state_dict(self, state: dict) -> None:
        self.k = state["k"]
        self.calls = Counter({int(k): v for k, v in state["calls"].items()})


class ScriptedReplay(DecisionPolicy):
    """Replays fixed responses keyed by (round, agent id); missing keys are not-decided."""

    name = "scripted"
    serial = True

    def __init__(self, entries: Mapping[tuple[int, int], Union[DecisionResponse, str]]):
        self.entries = dict(entries)

    def decide(self, request):
        entry = self.entries.get((request.round_index, request.agent_id))
        if entry is None:
            return NOT_DECIDED
        if isinstance(entry, str):
            return parse_response(entry, request.protocol, request.allowed_destinations)
        return entry

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedReplay":
        data = json.loads(Path(path).read_text())
        entries = {}
        for e in data["responses"]:
            key = (int(e["round"]), int(e["agent"]))
            if "raw" in e:
                entries[key] = e["raw"]
            else:
                entries[key] = DecisionResponse(bool(e["decided"]), e.get("destination"), e.get("message"))
        return cls(entries)


STUB_POLICIES = {
    "nearest-exit": NearestExit,
    "obedient": ObedientToCoordinator,
    "delay-k": DelayK,
    "scripted": ScriptedReplay.from_file,
}


def make_stub(spec: str) -> DecisionPolicy:
    """``nearest-exit``, ``obedient``, ``delay-k[:K]`` or ``scripted:PATH``."""
    name, _, arg = spec.partition(":")
    if name == "delay-k":
        return DelayK(int(arg) if arg else 3)
    if name == "scripted":
        if not arg:
            raise ValueError("scripted policy needs a transcript path: scripted:PATH")
        return ScriptedReplay.from_file(arg)
    if name in ("nearest-exit", "obedient") and not arg:
        return STUB_POLICIES[name]()
    raise ValueError(f"unknown stub policy {spec!r}; choose from {', '.join(STUB_POLICIES)}")


class BackendError(RuntimeError):
    pass


class MockBackend(DecisionPolicy):
    """In-process stand-in for a remote model: wire round trip plus programmable latency.

    ``latency`` is seconds, a (lo, hi) range drawn per request from ``seed``,
    or a callable of (request, attempt).  ``failure_rate`` draws are keyed by
    (seed, round, agent, attempt), so they do not depend on completion order.
    """

    is_async = True

    def __init__(self, inner: DecisionPolicy, latency: Union[float, tuple, Callable] = 0.0,
                 failure_rate: float = 0.0, seed: int = 0):
        self.inner = inner
        self.name = f"mock({inner.name})"
        self.serial = inner.serial
        self.latency = latency
        self.failure_rate = failure_rate
        self.seed = seed
        self.attempts: Counter = Counter()

    def _rng(self, request, attempt):
        key = zlib.crc32(f"{request.round_index}:{request.agent_id}:{attempt}".encode())
        return np.random.default_rng([self.seed, key])

    def _delay(self, request, attempt) -> float:
        if callable(self.latency):
            return float(self.latency(request, attempt))
        if isinstance(self.latency, tuple):
            lo, hi = self.latency
            return float(self._rng(request, attempt).uniform(lo, hi))
        return float(self.latency)

    def decide(self, request):
        return parse_response(render_response(self.inner.decide(request)), request.protocol,
                              request.allowed_destinations)

    async def adecide(self, request):
        key = (request.round_index, request.agent_id)
        attempt = self.attempts[key]
        self.attempts[key] += 1
        delay = self._delay(request, attempt)
        if delay > 0:
            await asyncio.sleep(delay)
        if self.failure_rate and self._rng(request, attempt).random() < self.failure_rate:
            raise BackendError(f"mock failure for agent {request.agent_id} attempt {attempt}")
        return self.decide(request)


# --------------------------------------------------------------------------
# executor
# --------------------------------------------------------------------------

@dataclass
class BackendConfig:
    max_in_flight: int = MAX_IN_FLIGHT
    requests_per_second: Optional[float] = None
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_max: float = 30.0
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.7

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.requests_per_second is not None and self.requests_per_second <= 0:
            raise ValueError("requests_per_second must be positive")


class InFlightMonitor:
    def __init__(self) -> None:
        self.current = 0
        self.peak = 0

    def enter(self) -> None:
        self.current += 1
        self.peak = max(self.peak, self.current)

    def exit(self) -> None:
        self.current -= 1


class RateLimiter:
    """Spaces request starts at least 1/rps seconds apart."""

    def __init__(self, rps: Optional[float]):
        self.interval = 1.0 / rps if rps else 0.0
        self._next = 0.0
        self._lock: Optional[asyncio.Lock] = None

    async def acquire(self) -> None:
        if not self.interval:
            return
        if self._lock is None:
            self._lock = asyncio.Lock()
        async with self._lock:
            now = time.monotonic()
            if self._next > now:
                await asyncio.sleep(self._next - now)
                now = time.monotonic()
            self._next = max(now, self._next) + self.interval


@dataclass
class RequestStats:
    issued: int = 0
    failed: int = 0
    retried: int = 0
    latencies: list = field(default_factory=list)
    peak_in_flight: int = 0

    def counts(self) -> dict:
        return {"issued": self.issued, "failed": self.failed, "retried": self.retried}

    def latency_summary(self) -> dict:
        if not self.latencies:
            return {"n": 0}
        lat = np.array(self.latencies)
        return {"n": int(lat.size), "mean": float(lat.mean()), "p50": float(np.percentile(lat, 50)),
                "p95": float(np.percentile(lat, 95)), "max": float(lat.max())}


Result = Union[DecisionResponse, DecisionFailure]


@dataclass
class BatchResult:
    results: dict[int, Result]
    stats: RequestStats


def _check_requests(requests: Sequence[DecisionRequest]) -> None:
    if not requests:
        raise ValueError("decide_batch needs at least one request")
    ids = [r.agent_id for r in requests]
    if len(set(ids)) != len(ids):
        raise ValueError("request agent ids must be unique")


def _decide_serially(policy, requests, config: BackendConfig) -> BatchResult:
    stats = RequestStats()
    results: dict[int, Result] = {}
    for req in requests:
        attempts = 0
        while True:
            attempts += 1
            stats.issued += 1
            t0 = time.perf_counter()
            try:
                results[req.agent_id] = policy.decide(req)
                break
            except Exception as exc:  # a failing request must not abort the round
                if attempts > config.max_retries:
                    stats.failed += 1
                    results[req.agent_id] = DecisionFailure(req.agent_id, repr(exc), attempts)
                    break
                stats.retried += 1
            finally:
                stats.latencies.append(time.perf_counter() - t0)
    stats.peak_in_flight = 1
    return BatchResult(dict(sorted(results.items())), stats)


async def adecide_batch(policy: DecisionPolicy, requests: Sequence[DecisionRequest],
                        config: Optional[BackendConfig] = None,
                        monitor: Optional[InFlightMonitor] = None) -> BatchResult:
    config = config or BackendConfig()
    _check_requests(requests)
    monitor = monitor or InFlightMonitor()
    stats = RequestStats()
    sem = asyncio.Semaphore(1 if policy.serial else config.max_in_flight)
    limiter = RateLimiter(config.requests_per_second)

    async def one(req: DecisionRequest):
        attempts = 0
        while True:
            attempts += 1
            async with sem:
                await limiter.acquire()
                monitor.enter()
                stats.issued += 1
                t0 = time.perf_counter()
                try:
                    return req.agent_id, await asyncio.wait_for(policy.adecide(req), config.timeout)
                except Exception as exc:
                    err = exc
                finally:
                    monitor.exit()
                    stats.latencies.append(time.perf_counter() - t0)
            if attempts > config.max_retries:
                stats.failed += 1
                logger.warning("agent %s: giving up after %d attempts: %r", req.agent_id, attempts, err)
                return req.agent_id, DecisionFailure(req.agent_id, repr(err), attempts)
            stats.retried += 1
            await asyncio.sleep(min(config.backoff_max, config.backoff_base * 2 ** (attempts - 1)))

    await policy.astart()
    try:
        pairs = await asyncio.gather(*(one(r) for r in requests))
    finally:
        await policy.astop()
    stats.peak_in_flight = monitor.peak
    return BatchResult(dict(sorted(pairs)), stats)


def decide_batch(policy: DecisionPolicy, requests: Sequence[DecisionRequest],
                 config: Optional[BackendConfig] = None,
                 monitor: Optional[InFlightMonitor] = None) -> BatchResult:
    """Run every request through ``policy``; results keyed and ordered by agent id."""
    config = config or BackendConfig()
    _check_requests(requests)
    if not policy.is_async:
        return _decide_serially(policy, requests, config)
    return asyncio.run(adecide_batch(policy, requests, config, monitor))
