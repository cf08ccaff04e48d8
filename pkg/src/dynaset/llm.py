"""Text-in/text-out LLM backends used by the prompt generator."""

from __future__ import annotations

import json
import os
import threading
import urllib.error
import urllib.request
from typing import Mapping, Protocol

from dynaset.core import Label, PromptSet
from dynaset.prompt import LlmQuery, build_llm_query, parse_llm_response


class LlmError(RuntimeError):
    pass


class LlmBackend(Protocol):
    def complete(self, query: str) -> str: ...


class FixtureLlm:
    """Replays recorded responses keyed by exact query text."""

    name = "fixture"

    def __init__(self, responses: Mapping[str, str]):
        self.responses = dict(responses)

    @classmethod
    def from_file(cls, path) -> "FixtureLlm":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise LlmError(f"{path}: fixture must be a JSON object of query -> response strings")
        return cls(data)

    def complete(self, query: str) -> str:
        try:
            return self.responses[query]
        except KeyError:
            raise LlmError(f"no recorded response for query {query!r}") from None


class HttpChatLlm:
    """OpenAI-style chat-completions client.

    The bearer token is read from ``token_env`` at call time. At most
    ``max_in_flight`` requests are outstanding across threads.
    """

    name = "http"

    def __init__(
        self,
        endpoint: str,
        model: str = "gpt-3.5-turbo",
        token_env: str = "DYNASET_LLM_TOKEN",
        timeout: float = 60.0,
        max_in_flight: int = 2,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be ≥ 1")
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def format_request(self, query: str) -> bytes:
        body = {"model": self.model, "messages": [{"role": "user", "content": query}]}
        return json.dumps(body).encode("utf-8")

    def parse_response(self, payload: bytes) -> str:
        try:
            data = json.loads(payload)
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmError(f"malformed chat-completion payload: {exc}") from exc
        if not isinstance(content, str):
            raise LlmError("chat-completion content is not a string")
        return content

    def complete(self, query: str) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(self.endpoint, data=self.format_request(query), headers=headers)
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = resp.read()
            except urllib.error.HTTPError as exc:
                raise LlmError(f"LLM endpoint returned HTTP {exc.code}") from exc
            except (urllib.error.URLError, OSError) as exc:
                raise LlmError(f"LLM endpoint unreachable: {exc}") from exc
        return self.parse_response(payload)


def llm_prompts(backend: LlmBackend, label: Label, query: LlmQuery | None = None) -> PromptSet:
    query = query or LlmQuery()
    raw = backend.complete(build_llm_query(label, query))
    return parse_llm_response(raw, label, query.count)
