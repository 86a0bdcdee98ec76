"""HTTP client for the external proposer/researcher endpoint.

One POST per request, JSON in and out. Endpoint, model, timeout and retry
count come from a ``key = value`` file and/or ``BILEVEL_*`` environment
variables (environment wins). The bearer token is read from the variable named
by ``api_key_env`` at call time and never written to logs.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import httpx

from .errors import EndpointUnavailable
from .space import iter_key_values

log = logging.getLogger(__name__)

ENV_PREFIX = "BILEVEL_"


@dataclass(frozen=True)
class WireConfig:
    endpoint: str | None = None
    model: str = "default"
    timeout: float = 60.0
    retries: int = 2
    api_key_env: str = "BILEVEL_API_KEY"


def load_wire_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> WireConfig:
    env = os.environ if env is None else env
    values: dict[str, str] = {}
    if path is not None:
        for _, key, value in iter_key_values(Path(path).read_text()):
            values[key] = value
    for key in ("endpoint", "model", "timeout", "retries", "api_key_env"):
        if ENV_PREFIX + key.upper() in env:
            values[key] = env[ENV_PREFIX + key.upper()]
    cfg = WireConfig()
    if "endpoint" in values:
        cfg = replace(cfg, endpoint=values["endpoint"])
    if "model" in values:
        cfg = replace(cfg, model=values["model"])
    if "timeout" in values:
        cfg = replace(cfg, timeout=float(values["timeout"]))
    if "retries" in values:
        cfg = replace(cfg, retries=int(values["retries"]))
    if "api_key_env" in values:
        cfg = replace(cfg, api_key_env=values["api_key_env"])
    return cfg


class WireClient:
    def __init__(self, config: WireConfig, transport: httpx.BaseTransport | None = None):
        if not config.endpoint:
            raise ValueError("no endpoint configured (set BILEVEL_ENDPOINT or 'endpoint' in the config file)")
        self.config = config
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def post(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        """POST ``payload``; retry transport errors, non-2xx and non-JSON bodies."""
        body = {"model": self.config.model, **payload}
        last: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                resp = self._client.post(self.config.endpoint, json=body, headers=self._headers())
                resp.raise_for_status()
                data = resp.json()
                if not isinstance(data, dict):
                    raise ValueError("reply is not a JSON object")
                return data
            except (httpx.HTTPError, ValueError, json.JSONDecodeError) as exc:
                last = exc
                log.warning("endpoint request failed (attempt %d/%d): %s", attempt + 1,
                            self.config.retries + 1, exc)
        raise EndpointUnavailable(f"{self.config.endpoint} unavailable: {last}")
