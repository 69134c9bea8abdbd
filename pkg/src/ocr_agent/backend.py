"""Model backends: an OpenAI-compatible vision chat client and a scripted mock."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol

import httpx

from .errors import BackendError, FixtureMissError, ImageReadError, UnsupportedMediaType

logger = logging.getLogger(__name__)

CALL_KINDS = ("initial", "reflect", "refine")

_MAGIC = (
    (b"\x89PNG\r\n\x1a\n", "image/png"),
    (b"\xff\xd8\xff", "image/jpeg"),
    (b"GIF87a", "image/gif"),
    (b"GIF89a", "image/gif"),
    (b"BM", "image/bmp"),
    (b"II*\x00", "image/tiff"),
    (b"MM\x00*", "image/tiff"),
)


@dataclass(frozen=True)
class ImagePayload:
    data: bytes
    media_type: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def to_base64(self) -> str:
        return base64.b64encode(self.data).decode("ascii")

    def to_data_url(self) -> str:
        return f"data:{self.media_type};base64,{self.to_base64()}"


def sniff_media_type(data: bytes) -> str | None:
    for magic, media_type in _MAGIC:
        if data.startswith(magic):
            return media_type
    if len(data) >= 12 and data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "image/webp"
    return None


def encode_image(source: str | Path | bytes) -> ImagePayload:
    """Read an image and identify its media type from its leading bytes.

    The file extension is not trusted; a text file named ``x.png`` is
    rejected with UnsupportedMediaType.
    """
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
        label = "<bytes>"
    else:
        path = Path(source)
        label = str(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ImageReadError(f"cannot read image {label}: {exc}") from exc
    media_type = sniff_media_type(data)
    if media_type is None:
        raise UnsupportedMediaType(f"{label} is not a recognised image format")
    return ImagePayload(data, media_type)


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = 0

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens, "seed": self.seed}


@dataclass(frozen=True)
class ModelRequest:
    image: ImagePayload
    messages: tuple[tuple[str, str], ...]
    params: GenerationParams = field(default_factory=GenerationParams)
    # routing metadata; never sent over the wire
    sample_id: str = ""
    kind: str = "initial"
    iteration: int = 0

    def validate(self) -> None:
        if not self.messages:
            raise ValueError("request has no messages")
        for role, text in self.messages:
            if role not in ("system", "user"):
                raise ValueError(f"unsupported message role {role!r}")
            if not isinstance(text, str):
                raise ValueError("message text must be a string")
        if not isinstance(self.image, ImagePayload):
            raise ValueError("request must carry exactly one image")
        if self.kind not in CALL_KINDS:
            raise ValueError(f"unknown call kind {self.kind!r}")

    @property
    def digest(self) -> str:
        blob = json.dumps(
            {
                "image": self.image.sha256,
                "media_type": self.image.media_type,
                "messages": [list(m) for m in self.messages],
                "params": self.params.to_dict(),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def text(self) -> str:
        return "\n\n".join(t for _, t in self.messages)


@dataclass(frozen=True)
class ModelResponse:
    text: str
    retries: int = 0
    latency_s: float = 0.0


class ModelBackend(Protocol):
    def generate(self, request: ModelRequest) -> ModelResponse: ...


def to_chat_payload(request: ModelRequest, model: str) -> dict:
    """Build an OpenAI-style chat-completions body; the image rides on the last user turn."""
    user_turns = [i for i, (role, _) in enumerate(request.messages) if role == "user"]
    last_user = user_turns[-1] if user_turns else len(request.messages) - 1
    messages = []
    for i, (role, text) in enumerate(request.messages):
        if i == last_user:
            content = [
                {"type": "image_url", "image_url": {"url": request.image.to_data_url()}},
                {"type": "text", "text": text},
            ]
            messages.append({"role": role, "content": content})
        else:
            messages.append({"role": role, "content": text})
    body = {
        "model": model,
        "messages": messages,
        "temperature": request.params.temperature,
        "max_tokens": request.params.max_tokens,
    }
    if request.params.seed is not None:
        body["seed"] = request.params.seed
    return body


class HttpBackend:
    """Client for ``POST {base_url}/chat/completions``.

    Timeouts, connection errors, 429 and 5xx responses are retried with
    jittered, capped exponential backoff. Other 4xx responses and
    unparseable bodies fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = client or httpx.Client(timeout=timeout, headers=headers)
        self._rng = random.Random()

    def close(self) -> None:
        self._client.close()

    def _backoff(self, attempt: int) -> float:
        delay = min(self.backoff_cap, self.backoff_base * (2 ** attempt))
        return delay * (0.5 + 0.5 * self._rng.random())

    def generate(self, request: ModelRequest) -> ModelResponse:
        request.validate()
        body = to_chat_payload(request, self.model)
        url = f"{self.base_url}/chat/completions"
        start = time.monotonic()
        last_error = "no attempt made"
        with self._slots:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    self._sleep(self._backoff(attempt - 1))
                try:
                    resp = self._client.post(url, json=body, timeout=self.timeout)
                except (httpx.TimeoutException, httpx.TransportError) as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                    logger.warning("attempt %d to %s failed: %s", attempt + 1, url, last_error)
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                    logger.warning("attempt %d to %s failed: %s", attempt + 1, url, last_error)
                    continue
                if resp.status_code >= 400:
                    raise BackendError(
                        f"HTTP {resp.status_code} from {url}: {resp.text[:200]}",
                        retries=attempt,
                        status=resp.status_code,
                    )
                text = _parse_completion(resp)
                return ModelResponse(text, retries=attempt, latency_s=time.monotonic() - start)
        raise BackendError(
            f"{url}: giving up after {self.max_retries} retries ({last_error})",
            retries=self.max_retries,
        )


def _parse_completion(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"malformed completion body: {exc!r}", status=resp.status_code) from exc
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str) or not content.strip():
        raise BackendError("completion body has empty content", status=resp.status_code)
    return content


@dataclass(frozen=True)
class CapturedRequest:
    sample_id: str
    kind: str
    iteration: int
    messages: tuple[tuple[str, str], ...]
    digest: str

    @property
    def text(self) -> str:
        return "\n\n".join(t for _, t in self.messages)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "kind": self.kind,
            "iteration": self.iteration,
            "messages": [list(m) for m in self.messages],
            "digest": self.digest,
        }


FixtureKey = tuple[str, str, int]


class ScriptedBackend:
    """Deterministic mock that answers from a ``(sample_id, kind, iteration)`` table.

    Every request is captured before lookup. A missing key raises
    FixtureMissError unless a ``fallback`` responder was given.
    """

    def __init__(
        self,
        responses: Mapping[FixtureKey, str] | None = None,
        fallback: Callable[[ModelRequest], str] | None = None,
    ):
        self.responses = dict(responses or {})
        self.fallback = fallback
        self.captured: list[CapturedRequest] = []
        self._lock = threading.Lock()

    def generate(self, request: ModelRequest) -> ModelResponse:
        request.validate()
        entry = CapturedRequest(
            request.sample_id, request.kind, request.iteration, request.messages, request.digest
        )
        with self._lock:
            self.captured.append(entry)
        key = (request.sample_id, request.kind, request.iteration)
        if key in self.responses:
            text = self.responses[key]
        elif self.fallback is not None:
            text = self.fallback(request)
        else:
            raise FixtureMissError(f"no scripted response for {key}")
        if not text or not text.strip():
            raise BackendError(f"scripted response for {key} is empty")
        return ModelResponse(text)

    def captured_for(self, sample_id: str) -> list[CapturedRequest]:
        with self._lock:
            return [c for c in self.captured if c.sample_id == sample_id]

    @classmethod
    def from_file(cls, path: str | Path, fallback: Callable[[ModelRequest], str] | None = None) -> ScriptedBackend:
        """Load a line-delimited fixture: ``{"sample_id", "kind", "iteration", "response"}`` per line."""
        responses: dict[FixtureKey, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    key = (str(obj["sample_id"]), obj["kind"], int(obj["iteration"]))
                    responses[key] = obj["response"]
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad fixture entry ({exc})") from exc
        return cls(responses, fallback=fallback)


def echo_responder(request: ModelRequest) -> str:
    """Fallback mock policy: plausible, deterministic replies with no model behind them."""
    if request.kind == "reflect":
        return (
            f"The previous answer may have misread part of the image (round {request.iteration}).\n"
            "STEP: re-read the region referenced by the question\n"
            "STEP: compare the answer against the visible text"
        )
    return "ANSWER: unknown"

