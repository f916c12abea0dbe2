"""HTTP plumbing: bounded retries with jittered backoff and a token-bucket
rate limit per endpoint.

Endpoints may also be plain directories on disk (or file:// URLs); callers
use :func:`is_remote` to decide which path to take. Local endpoints make the
whole pipeline runnable offline against checked-in fixture files.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional
from urllib.parse import urlparse

import requests

from .errors import FetchError

MAX_ATTEMPTS = 5
BACKOFF_BASE = 0.5  # seconds
BACKOFF_CAP = 30.0


def is_remote(endpoint: str) -> bool:
    return endpoint.startswith("http://") or endpoint.startswith("https://")


def local_path(endpoint: str) -> str:
    """Strip an optional file:// scheme from a local endpoint."""
    if endpoint.startswith("file://"):
        return urlparse(endpoint).path
    return endpoint


class TokenBucket:
    """Classic token bucket; ``acquire`` blocks until a token is available."""

    def __init__(self, rate: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._last = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity,
                                   self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass
class HttpClient:
    """Requests wrapper with retry, backoff, and per-endpoint rate limiting."""

    rate_per_sec: float = 10.0
    max_attempts: int = MAX_ATTEMPTS
    timeout: float = 30.0
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=random.Random)
    session: requests.Session = field(default_factory=requests.Session)
    _buckets: dict = field(default_factory=dict)

    def _bucket(self, endpoint: str) -> TokenBucket:
        host = urlparse(endpoint).netloc or endpoint
        if host not in self._buckets:
            self._buckets[host] = TokenBucket(self.rate_per_sec, sleep=self.sleep)
        return self._buckets[host]

    def get(self, url: str, *, params: Optional[dict] = None,
            headers: Optional[dict] = None) -> requests.Response:
        return self._request("GET", url, params=params, headers=headers)

    def post_json(self, url: str, payload: dict) -> requests.Response:
        return self._request("POST", url, json=payload)

    def _request(self, method: str, url: str, **kwargs) -> requests.Response:
        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            self._bucket(url).acquire()
            try:
                resp = self.session.request(method, url, timeout=self.timeout, **kwargs)
                if resp.status_code < 500 and resp.status_code != 429:
                    resp.raise_for_status()
                    return resp
                last_exc = FetchError(f"HTTP {resp.status_code} from {url}")
            except requests.RequestException as exc:
                last_exc = exc
            if attempt < self.max_attempts - 1:
                delay = min(BACKOFF_CAP, BACKOFF_BASE * 2 ** attempt)
                self.sleep(delay * (0.5 + self.rng.random()))
        raise FetchError(
            f"{method} {url} failed after {self.max_attempts} attempts: {last_exc}"
        ) from last_exc
