"""Text-completion ports: live HTTP adapter, replay log, and replayer.

Every pipeline call runs at temperature 0. The replay log captures each
call/response pair as JSONL so a full run can be re-executed offline.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Protocol

import requests


class LlmPort(Protocol):
    model_name: str

    def complete(self, prompt: str, temperature: float = 0.0) -> str: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class HttpLlm:
    """Chat-completion-style JSON client; credential read from the environment."""

    def __init__(self, base_url: str, model_name: str,
                 api_key_env: str = "OODREC_LLM_API_KEY",
                 timeout: float = 120.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._session = session or requests.Session()

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise RuntimeError(f"environment variable {self.api_key_env} is not set")
        resp = self._session.post(
            f"{self.base_url}/chat/completions",
            json={
                "model": self.model_name,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": temperature,
            },
            headers={"Authorization": f"Bearer {key}"},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        payload = resp.json()
        return payload["choices"][0]["message"]["content"]


class ReplayLogger:
    """Wraps a port and appends {round, step, prompt_hash, prompt, reply} rows."""

    def __init__(self, inner: LlmPort, path):
        self.inner = inner
        self.model_name = inner.model_name
        self.path = Path(path)
        self._round = 0
        self._step = "init"

    def set_context(self, round_idx: int, step: str) -> None:
        self._round = round_idx
        self._step = step

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        reply = self.inner.complete(prompt, temperature)
        row = {
            "round": self._round,
            "step": self._step,
            "prompt_hash": prompt_hash(prompt),
            "prompt": prompt,
            "reply": reply,
        }
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row) + "\n")
        return reply


class ReplayLlm:
    """Replays a recorded log; unknown prompts are an error."""

    def __init__(self, path):
        self.model_name = "replay"
        self.path = Path(path)
        self._replies: dict[str, str] = {}
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    self._replies[row["prompt_hash"]] = row["reply"]

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        key = prompt_hash(prompt)
        if key not in self._replies:
            raise KeyError(f"prompt {key[:12]}... not present in replay log {self.path}")
        return self._replies[key]
