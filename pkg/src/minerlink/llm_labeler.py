"""Match/non-match labels for record pairs from a chat-completion endpoint.

Each pair is rendered with the four-line Yes/No prompt and POSTed to
``{base_url}/v1/chat/completions``. Responses are parsed leniently ("Yes",
"no.", '"Yes"' all count); anything else is an abstention, retried with the
answer-format constraint re-appended, and finally defaulted to non-match
with an audit trail. Completed responses are cached on disk keyed by
(model, temperature, prompt), so a warm re-run issues zero requests and
reproduces its output byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import string
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .errors import DataError, LLMTransportError
from .pairing import LabeledPair, PairKey, Provenance
from .records import Record, record_index
from .serialize import PROMPT_CONSTRAINT_LINE, build_pair_prompt

ENV_API_KEY = "MINERLINK_LLM_API_KEY"
ENV_BASE_URL = "MINERLINK_LLM_BASE_URL"

COMPLETIONS_PATH = "/v1/chat/completions"
MAX_COMPLETION_TOKENS = 8

_STRIP_CHARS = string.punctuation + string.whitespace + "‘’“”"


@dataclass(frozen=True)
class LabelerConfig:
    base_url: str
    model: str
    temperature: float = 0.0
    max_retries: int = 2
    max_in_flight: int = 4
    cache_path: str | Path | None = None
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.temperature < 0:
            raise DataError(f"temperature must be >= 0: {self.temperature}")
        if self.max_in_flight < 1:
            raise DataError(f"max_in_flight must be >= 1: {self.max_in_flight}")
        if self.max_retries < 0:
            raise DataError(f"max_retries must be >= 0: {self.max_retries}")


class LabelStatus(Enum):
    OK = "ok"
    ABSTAIN = "abstain"
    TRANSPORT_ERROR = "transport_error"


@dataclass(frozen=True)
class LabelOutcome:
    key: PairKey
    label: int | None
    raw_response: str
    status: LabelStatus
    error: str | None = None


@dataclass(frozen=True)
class LabelSummary:
    total: int
    matches: int
    nonmatches: int
    abstain_defaulted: int
    requests_issued: int


def parse_yes_no(text: str) -> int | None:
    """1 for a leading "yes", 0 for a leading "no", None (abstain) otherwise."""
    tokens = text.split()
    if not tokens:
        return None
    first = tokens[0].strip(_STRIP_CHARS).casefold()
    if first == "yes":
        return 1
    if first == "no":
        return 0
    return None


def prompt_hash(model: str, temperature: float, prompt: str) -> str:
    payload = json.dumps([model, temperature, prompt]).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


class LabelCache:
    """Append-only JSON Lines cache of endpoint responses.

    Entries become visible to readers only after the line is written, and a
    single lock serializes writers, so concurrent labeling threads can share
    one cache. ``path=None`` keeps the cache in memory only.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self._path is not None and self._path.exists():
            with self._path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        doc = json.loads(line)
                        self._entries[doc["hash"]] = doc["response"]

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, response: str) -> None:
        with self._lock:
            if key in self._entries:
                return
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"hash": key, "response": response, "status": "ok"}) + "\n")
                    fh.flush()
            self._entries[key] = response

    def __len__(self) -> int:
        return len(self._entries)


class _TransportFailure(Exception):
    pass


class _Client:
    """One labeling run's view of the endpoint: session pool, cache, counters."""

    def __init__(self, cfg: LabelerConfig, cache: LabelCache):
        self.cfg = cfg
        self.cache = cache
        self.base_url = (os.environ.get(ENV_BASE_URL) or cfg.base_url).rstrip("/")
        self.api_key = os.environ.get(ENV_API_KEY)
        self.requests_issued = 0
        self._counter_lock = threading.Lock()
        self._local = threading.local()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            session.trust_env = False  # never route labeling through ambient proxies
            self._local.session = session
        return session

    def complete(self, prompt: str) -> str:
        key = prompt_hash(self.cfg.model, self.cfg.temperature, prompt)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        response = self._post(prompt)
        self.cache.put(key, response)
        return response

    def _post(self, prompt: str) -> str:
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": MAX_COMPLETION_TOKENS,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        with self._counter_lock:
            self.requests_issued += 1
        try:
            resp = self._session().post(
                self.base_url + COMPLETIONS_PATH,
                json=body,
                headers=headers,
                timeout=self.cfg.timeout_s,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, ValueError, KeyError, IndexError) as exc:
            raise _TransportFailure(f"{type(exc).__name__}: {exc}") from exc

    def label(self, a: Record, b: Record) -> LabelOutcome:
        """Label one pair with the shared retry budget of max_retries + 1 attempts.

        An abstention escalates to the prompt with the constraint line
        re-appended; a transport failure retries the same prompt. Each
        attempt's response is cached under its own prompt hash, so replays
        walk the identical chain without network traffic.
        """
        key = PairKey.of(a.uri, b.uri)
        base_prompt = build_pair_prompt(a, b)
        retry_prompt = base_prompt + "\n" + PROMPT_CONSTRAINT_LINE
        prompt = base_prompt
        last_response = ""
        last_error: str | None = None
        for _ in range(self.cfg.max_retries + 1):
            try:
                response = self.complete(prompt)
            except _TransportFailure as exc:
                last_error = str(exc)
                continue
            last_error = None
            last_response = response
            label = parse_yes_no(response)
            if label is not None:
                return LabelOutcome(key=key, label=label, raw_response=response, status=LabelStatus.OK)
            prompt = retry_prompt
        if last_error is not None:
            return LabelOutcome(
                key=key, label=None, raw_response=last_response,
                status=LabelStatus.TRANSPORT_ERROR, error=last_error,
            )
        return LabelOutcome(key=key, label=None, raw_response=last_response, status=LabelStatus.ABSTAIN)


def label_pair(a: Record, b: Record, cfg: LabelerConfig, cache: LabelCache | None = None) -> LabelOutcome:
    """Label a single record pair; see _Client.label for retry semantics."""
    client = _Client(cfg, cache if cache is not None else LabelCache(cfg.cache_path))
    return client.label(a, b)


def label_dataset(
    pairs: Sequence[PairKey],
    records: Mapping[str, Record] | Sequence[Record],
    cfg: LabelerConfig,
    cache: LabelCache | None = None,
) -> tuple[list[LabeledPair], LabelSummary]:
    """Label every pair, one output row per input pair in input order.

    All uris are resolved before any network call. At most
    ``cfg.max_in_flight`` requests are outstanding at any moment. Abstaining
    pairs are defaulted to non-match with provenance marking the default;
    any transport failure aborts the run with LLMTransportError.
    """
    index = records if isinstance(records, Mapping) else record_index(records)
    unresolved = {u for k in pairs for u in (k.uri_1, k.uri_2) if u not in index}
    if unresolved:
        raise DataError(f"unresolved uris in pairs: {sorted(unresolved)[:5]}")

    client = _Client(cfg, cache if cache is not None else LabelCache(cfg.cache_path))
    if pairs:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            outcomes = list(
                pool.map(lambda k: client.label(index[k.uri_1], index[k.uri_2]), pairs)
            )
    else:
        outcomes = []

    labeled: list[LabeledPair] = []
    abstained = 0
    for outcome in outcomes:
        if outcome.status is LabelStatus.TRANSPORT_ERROR:
            raise LLMTransportError(
                f"labeling failed for pair ({outcome.key.uri_1}, {outcome.key.uri_2}): {outcome.error}"
            )
        if outcome.status is LabelStatus.ABSTAIN:
            abstained += 1
            labeled.append(
                LabeledPair(
                    key=outcome.key, label=0,
                    provenance=Provenance.LLM_ABSTAIN_DEFAULT,
                    raw_response=outcome.raw_response,
                )
            )
        else:
            labeled.append(
                LabeledPair(
                    key=outcome.key, label=outcome.label,
                    provenance=Provenance.LLM, raw_response=outcome.raw_response,
                )
            )
    summary = LabelSummary(
        total=len(labeled),
        matches=sum(p.label == 1 for p in labeled),
        nonmatches=sum(p.label == 0 for p in labeled),
        abstain_defaulted=abstained,
        requests_issued=client.requests_issued,
    )
    return labeled, summary
