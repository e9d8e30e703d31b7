"""Optional adapter for running the questioner/roleplayer/oracle/judge
roles against a remote chat-completions HTTP API.

Nothing in the training or evaluation path touches this module; the rest of
the package is fully synthetic and offline. Templates are plain text files
with {name} placeholders so the prompts are data, not code. The API key is
read from an environment variable and never written to logs.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, TemplateError, TransportError

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "TOGATE_API_KEY"
TEMPLATE_ROLES = ("questioner", "roleplayer", "oracle", "judge")

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class RemoteConfig:
    base_url: str
    model: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 30.0
    max_retries: int = 2
    backoff_seconds: float = 0.5
    temperature: float = 0.7
    templates: Mapping[str, str] = field(default_factory=dict)  # role -> file path

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.backoff_seconds < 0:
            raise ConfigError(f"backoff_seconds must be >= 0, got {self.backoff_seconds}")
        for role in self.templates:
            if role not in TEMPLATE_ROLES:
                raise ConfigError(f"unknown template role {role!r}; valid roles: {', '.join(TEMPLATE_ROLES)}")


def render_template(template: str, bindings: Mapping[str, str]) -> str:
    """Substitute every {name} placeholder; an unbound placeholder is an
    error naming it, extra bindings are ignored."""
    placeholders = set(_PLACEHOLDER.findall(template))
    missing = sorted(placeholders - set(bindings))
    if missing:
        raise TemplateError(f"unbound placeholder {{{missing[0]}}}")
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template)


def load_template(config: RemoteConfig, role: str) -> str:
    """The configured template file for a role, falling back to the packaged
    default."""
    if role not in TEMPLATE_ROLES:
        raise ConfigError(f"unknown template role {role!r}")
    path = config.templates.get(role)
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    return resources.files("togate").joinpath(f"templates/{role}.txt").read_text(encoding="utf-8")


def render_role_prompt(config: RemoteConfig, role: str, bindings: Mapping[str, str]) -> str:
    return render_template(load_template(config, role), bindings)


def chat(config: RemoteConfig, messages: Sequence[tuple[str, str]]) -> str:
    """POST the messages to the chat-completions endpoint and return the
    first completion text.

    Transient failures (timeouts, rate limiting, 5xx) are retried with
    exponential backoff up to max_retries extra attempts; exhausting them
    raises TransportError carrying the last status. A missing API key fails
    before any network activity.
    """
    api_key = os.environ.get(config.api_key_env, "")
    if not api_key:
        raise ConfigError(
            f"no API key: set the {config.api_key_env} environment variable"
        )
    body = json.dumps(
        {
            "model": config.model,
            "messages": [{"role": role, "content": text} for role, text in messages],
            "temperature": config.temperature,
        }
    ).encode()

    last_error = "no attempt made"
    for attempt in range(config.max_retries + 1):
        if attempt:
            time.sleep(config.backoff_seconds * (2 ** (attempt - 1)))
        request = urllib.request.Request(
            config.base_url,
            data=body,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {api_key}",  # never logged
            },
            method="POST",
        )
        logger.info(
            "chat request attempt %d/%d to %s model=%s (authorization redacted)",
            attempt + 1, config.max_retries + 1, config.base_url, config.model,
        )
        try:
            with urllib.request.urlopen(request, timeout=config.timeout) as response:
                payload = json.loads(response.read().decode("utf-8"))
            try:
                text = payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from exc
            logger.info("chat response received (%d characters)", len(text))
            return text
        except urllib.error.HTTPError as exc:
            last_error = f"HTTP {exc.code}"
            logger.warning("chat attempt %d failed: %s", attempt + 1, last_error)
            if exc.code not in _RETRYABLE_STATUS:
                raise TransportError(f"non-retryable failure: {last_error}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            last_error = f"transport error: {getattr(exc, 'reason', exc)}"
            logger.warning("chat attempt %d failed: %s", attempt + 1, last_error)
    raise TransportError(
        f"chat failed after {config.max_retries + 1} attempts; last failure: {last_error}"
    )
