"""JSON-over-HTTP POST and retry with exponential backoff, shared by remote clients."""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request

log = logging.getLogger(__name__)


def post_json(url: str, payload: dict, api_key: str | None = None, timeout: float = 30.0) -> dict:
    req = urllib.request.Request(url, data=json.dumps(payload).encode("utf-8"), method="POST",
                                 headers={"Content-Type": "application/json"})
    if api_key:
        req.add_header("Authorization", f"Bearer {api_key}")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode("utf-8"))


def with_retries(fn, retries: int = 2, base_delay: float = 0.5, sleep=time.sleep,
                 retry_on: tuple[type[BaseException], ...] = (Exception,)):
    """Call ``fn()``; on failure retry up to `retries` times, doubling the delay each time."""
    delay = base_delay
    for attempt in range(retries + 1):
        try:
            return fn()
        except retry_on as exc:
            if attempt == retries:
                raise
            log.warning("attempt %d failed (%s); retrying in %.2fs", attempt + 1, exc, delay)
            if delay > 0:
                sleep(delay)
            delay *= 2


HTTP_ERRORS = (urllib.error.URLError, TimeoutError, ConnectionError, ValueError, KeyError)
