"""Narrative backends: a deterministic template writer and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import httpx
import numpy as np

from ..schema import SeverityLabel
from .lexicon import Lexicon, default_lexicon
from .prompts import SYSTEM_TEXT, EventPrompt, parse_prediction

ENV_URL = "RAX_NARRATIVE_URL"


class BackendError(RuntimeError):
    """Transport failure or malformed response after all retries."""


@dataclass
class NarrativeResult:
    collision_id: int
    predicted_class: SeverityLabel | None
    explanation: str
    policy_suggestion: str
    latency: float
    backend_id: str
    error: str | None = None
    raw_text: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["predicted_class"] = None if self.predicted_class is None else self.predicted_class.name
        return d


@dataclass
class NarrativeRequest:
    """Everything a backend may use: the prompt plus the tabular context."""

    collision_id: int
    prompt: EventPrompt
    proba: np.ndarray
    shap_top: Sequence[str] = ()


_POLICY_RE = re.compile(r"policy(?:\s+suggestion)?\s*:\s*(.*)", re.IGNORECASE | re.DOTALL)
_EXPL_RE = re.compile(r"explanation\s*:\s*", re.IGNORECASE)


def split_response(text: str) -> tuple[str, str]:
    """(explanation, policy) from a free-text answer. Without a "Policy:" marker the whole
    text is the explanation."""
    m = _POLICY_RE.search(text)
    body, policy = (text[: m.start()], m.group(1).strip()) if m else (text, "")
    e = _EXPL_RE.search(body)
    if e:
        body = body[e.end():]
    return body.strip(), policy


POLICY_TEXT = "Prioritise targeted enforcement and street-design review at comparable sites."


class TemplateBackend:
    """Deterministic, offline narratives naming exactly the SHAP top features."""

    backend_id = "template"

    def __init__(self, lexicon: Lexicon | None = None):
        self.lexicon = lexicon or default_lexicon()

    def generate(self, req: NarrativeRequest) -> NarrativeResult:
        t0 = time.perf_counter()
        p = np.asarray(req.proba, float)
        cls = SeverityLabel(int(np.argmax(p)))
        phrases = [self.lexicon.phrase(f) for f in req.shap_top]
        if len(phrases) > 1:
            listed = ", ".join(phrases[:-1]) + " and " + phrases[-1]
        else:
            listed = "".join(phrases)
        explanation = (
            f"The estimate is driven mainly by {listed}. "
            f"Estimated fatal probability {p[2]:.2f}."
        )
        return NarrativeResult(
            req.collision_id, cls, explanation, POLICY_TEXT, time.perf_counter() - t0, self.backend_id,
            raw_text=f"Severity: {cls.name}. Explanation: {explanation} Policy: {POLICY_TEXT}",
        )


@dataclass
class HttpConfig:
    base_url: str | None = None
    model: str = "local-slm"
    timeout: float = 30.0
    max_retries: int = 2
    backoff: float = 0.5
    max_tokens: int = 256

    def resolved_url(self) -> str:
        url = self.base_url or os.environ.get(ENV_URL)
        if not url:
            raise BackendError(f"no backend URL configured (set base_url or {ENV_URL})")
        return url.rstrip("/")


class HttpBackend:
    """POST {base_url}/v1/chat/completions with temperature 0 and a capped response length."""

    def __init__(self, config: HttpConfig | None = None, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config or HttpConfig()
        self.url = self.config.resolved_url() + "/v1/chat/completions"
        self.client = client or httpx.Client(timeout=self.config.timeout)
        self.sleep = sleep

    @property
    def backend_id(self) -> str:
        return f"http:{self.config.model}"

    def request_body(self, prompt: EventPrompt) -> dict:
        return {
            "model": self.config.model,
            "temperature": 0,
            "max_tokens": self.config.max_tokens,
            "messages": [
                {"role": "system", "content": SYSTEM_TEXT},
                {"role": "user", "content": prompt.render()},
            ],
        }

    def _post(self, body: dict) -> str:
        last = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                r = self.client.post(self.url, json=body)
            except httpx.HTTPError as exc:
                last = f"transport: {type(exc).__name__}: {exc}"
                continue
            if r.status_code >= 500:
                last = f"server status {r.status_code}"
                continue
            if r.status_code != 200:
                raise BackendError(f"backend returned status {r.status_code}")
            try:
                return r.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed response: {exc}") from exc
        raise BackendError(f"backend unreachable after {self.config.max_retries + 1} attempts ({last})")

    def generate(self, req: NarrativeRequest) -> NarrativeResult:
        t0 = time.perf_counter()
        text = self._post(self.request_body(req.prompt))
        latency = time.perf_counter() - t0
        explanation, policy = split_response(text)
        label = parse_prediction(text)
        return NarrativeResult(
            req.collision_id, label, explanation, policy, latency, self.backend_id,
            error=None if label is not None else "unparseable_label", raw_text=text,
        )

    def close(self) -> None:
        self.client.close()


def generate_all(backend, requests: Sequence[NarrativeRequest], max_in_flight: int = 4) -> list[NarrativeResult]:
    """Run a backend over many requests with at most ``max_in_flight`` concurrent calls.
    Results come back in request order; the first backend error is re-raised."""
    if max_in_flight <= 1 or isinstance(backend, TemplateBackend):
        return [backend.generate(r) for r in requests]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(backend.generate, requests))


def write_jsonl(results: Sequence[NarrativeResult], fh) -> None:
    for r in results:
        fh.write(json.dumps(r.to_dict()) + "\n")


def read_jsonl(fh) -> list[dict]:
    return [json.loads(line) for line in fh if line.strip()]
