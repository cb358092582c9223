"""Minimal HTTP client for the optional text-rewriting and judging backends.

One endpoint shape serves both: POST a JSON object {"system", "user",
"temperature"} and get back {"text": "..."}. Transport failures are retried
with exponential backoff and then surface as NetworkError; a well-delivered
but malformed reply is a ResponseFormatError and is not retried.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request

from .augment import Rewriter, RewriterRequest
from .errors import NetworkError, ResponseFormatError
from .metrics import JudgeTransport


class RemoteTextClient:
    def __init__(self, url: str, *, temperature: float = 0.0,
                 timeout: float = 10.0, retries: int = 2,
                 backoff: float = 0.25,
                 sleep=time.sleep) -> None:
        self.url = url
        self.temperature = temperature
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep

    def complete(self, system: str, user: str) -> str:
        payload = json.dumps(
            {"system": system, "user": user, "temperature": self.temperature},
            ensure_ascii=False).encode("utf-8")
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            request = urllib.request.Request(
                self.url, data=payload,
                headers={"Content-Type": "application/json"}, method="POST")
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    body = resp.read()
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last = exc
                if attempt < self.retries:
                    self._sleep(self.backoff * (2 ** attempt))
                continue
            return _extract_text(body)
        raise NetworkError(f"POST {self.url} failed after "
                           f"{self.retries + 1} attempts: {last}")

    def as_rewriter(self) -> Rewriter:
        def call(request: RewriterRequest) -> str:
            return self.complete(request.system_text, request.user_text)
        return call

    def as_judge_transport(self) -> JudgeTransport:
        return self.complete


def _extract_text(body: bytes) -> str:
    try:
        data = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ResponseFormatError(f"reply is not JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("text"), str):
        raise ResponseFormatError(
            "reply must be a JSON object with a string 'text' field")
    return data["text"]
