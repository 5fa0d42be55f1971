"""Chat/embedding gateway shared by every agent.

Two backends ship:

* :class:`LiveBackend` talks to any OpenAI-compatible REST endpoint
  (``LLM_BASE_URL``, ``LLM_API_KEY``, ``LLM_CHAT_MODEL``, ``LLM_EMBED_MODEL``).
* :class:`ScriptedBackend` replays a JSON-lines transcript, matching
  requests by fingerprint or by strict order.  Its embeddings come from
  :class:`HashEmbedder`, a seeded feature-hashing embedder that is a pure
  function of ``(seed, text)``.

Wrapping any backend in a :class:`Gateway` with ``record_path`` set
writes every exchange to a transcript that the scripted backend can
replay later.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 2048
CHARS_PER_TOKEN = 4


class GatewayError(RuntimeError):
    pass


class NetworkError(GatewayError):
    pass


class TranscriptMiss(GatewayError):
    def __init__(self, fingerprint: str, detail: str = ""):
        super().__init__(f"no transcript entry for request {fingerprint}{': ' + detail if detail else ''}")
        self.fingerprint = fingerprint


class TranscriptExhausted(TranscriptMiss):
    pass


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    model: str = "default"
    params: tuple = ()  # sorted (name, value) pairs, e.g. (("temperature", 0.0),)
    agent: str = ""

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "model": self.model,
            "params": dict(self.params),
            "system": self.system,
            "user": self.user,
        }

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(_canonical(self.to_dict()).encode("utf-8")).hexdigest()[:24]

    @classmethod
    def from_dict(cls, d: dict) -> "ChatRequest":
        return cls(
            system=d["system"],
            user=d["user"],
            model=d.get("model", "default"),
            params=tuple(sorted(d.get("params", {}).items())),
            agent=d.get("agent", ""),
        )


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatExchange:
    request: ChatRequest
    response: ChatResponse

    @property
    def fingerprint(self) -> str:
        return self.request.fingerprint

    def to_record(self) -> dict:
        return {
            "kind": "chat",
            "fingerprint": self.fingerprint,
            "request": self.request.to_dict(),
            "response": {
                "text": self.response.text,
                "prompt_tokens": self.response.prompt_tokens,
                "completion_tokens": self.response.completion_tokens,
            },
        }


def embed_fingerprint(texts: Sequence[str], dim: int) -> str:
    return hashlib.sha256(_canonical({"dim": dim, "texts": list(texts)}).encode("utf-8")).hexdigest()[:24]


def estimate_tokens(text: str) -> int:
    """Token estimate used for chunking and accounting: ceil(chars / 4)."""
    return math.ceil(len(text) / CHARS_PER_TOKEN)


def normalize(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


_WORD_RE = re.compile(r"[^\W_]+")


class HashEmbedder:
    """Signed feature hashing of word unigrams and bigrams, keyed by seed.

    Texts sharing words land close together, which is enough for the
    retrieval paths to behave sensibly offline.
    """

    def __init__(self, seed: int = 0, dim: int = DEFAULT_EMBED_DIM):
        self.seed = seed
        self.dim = dim
        self._key = f"xdlforge-embed-{seed}".encode()[:64]

    def _bucket(self, feature: str) -> tuple[int, float]:
        h = hashlib.blake2b(feature.encode("utf-8"), key=self._key, digest_size=8).digest()
        x = int.from_bytes(h, "little")
        return x % self.dim, (1.0 if (x >> 63) & 1 else -1.0)

    def __call__(self, text: str, dim: Optional[int] = None) -> np.ndarray:
        dim = dim or self.dim
        if dim != self.dim:
            return HashEmbedder(self.seed, dim)(text)
        words = _WORD_RE.findall(text.casefold())
        features = words + [f"{a} {b}" for a, b in zip(words, words[1:])]
        if not features:
            features = ["\x00empty"]
        vec = np.zeros(dim, dtype=np.float64)
        for f in features:
            idx, sign = self._bucket(f)
            vec[idx] += sign
        if not vec.any():
            idx, sign = self._bucket("\x00cancelled")
            vec[idx] = sign
        return normalize(vec)


class ScriptedBackend:
    """Replays a transcript.

    ``mode="fingerprint"`` serves each request from the entries recorded
    for its fingerprint, in recorded order; ``mode="order"`` hands out chat
    entries strictly in file order regardless of content.  Either way an
    entry is consumed once, and running out is a :class:`TranscriptMiss`.
    """

    def __init__(self, entries: Sequence[dict] = (), mode: str = "fingerprint", seed: int = 0):
        if mode not in ("fingerprint", "order"):
            raise ValueError(f"unknown replay mode {mode!r}")
        self.mode = mode
        self.embedder = HashEmbedder(seed)
        self._lock = threading.Lock()
        self._ordered: deque = deque()
        self._by_fp: dict[str, deque] = defaultdict(deque)
        self._embeds: dict[str, list] = {}
        self._seen: set[str] = set()
        for e in entries:
            kind = e.get("kind", "chat")
            if kind == "embed":
                self._embeds[e["fingerprint"]] = e["vectors"]
                continue
            self._ordered.append(e)
            fp = e.get("fingerprint") or ChatRequest.from_dict(e["request"]).fingerprint
            self._by_fp[fp].append(e)
            self._seen.add(fp)

    @classmethod
    def from_file(cls, path: Union[str, Path], mode: str = "fingerprint", seed: int = 0) -> "ScriptedBackend":
        entries = load_transcript(path)
        return cls(entries, mode=mode, seed=seed)

    def remaining(self) -> int:
        with self._lock:
            if self.mode == "order":
                return len(self._ordered)
            return sum(len(q) for q in self._by_fp.values())

    def chat(self, request: ChatRequest) -> ChatResponse:
        fp = request.fingerprint
        with self._lock:
            if self.mode == "order":
                if not self._ordered:
                    raise TranscriptExhausted(fp, "transcript exhausted")
                entry = self._ordered.popleft()
            else:
                queue = self._by_fp.get(fp)
                if not queue:
                    if fp in self._seen:
                        raise TranscriptExhausted(fp, "all recorded responses already consumed")
                    raise TranscriptMiss(fp, f"agent={request.agent or '?'}")
                entry = queue.popleft()
        resp = entry["response"]
        if isinstance(resp, str):
            resp = {"text": resp}
        return ChatResponse(
            text=resp["text"],
            prompt_tokens=resp.get("prompt_tokens", estimate_tokens(request.system + request.user)),
            completion_tokens=resp.get("completion_tokens", estimate_tokens(resp["text"])),
        )

    def embed(self, texts: Sequence[str], dim: int) -> list[np.ndarray]:
        recorded = self._embeds.get(embed_fingerprint(texts, dim))
        if recorded is not None:
            return [normalize(v) for v in recorded]
        return [self.embedder(t, dim) for t in texts]


class FunctionBackend:
    """Backend driven by Python callables; used to author transcripts and
    in tests.  ``embed_fn`` defaults to a :class:`HashEmbedder`."""

    def __init__(
        self,
        responder: Callable[[ChatRequest], str],
        embed_fn: Optional[Callable[[str, int], Sequence[float]]] = None,
        seed: int = 0,
    ):
        self.responder = responder
        self.embed_fn = embed_fn or HashEmbedder(seed)
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(request)
        text = self.responder(request)
        return ChatResponse(text, estimate_tokens(request.system + request.user), estimate_tokens(text))

    def embed(self, texts: Sequence[str], dim: int) -> list[np.ndarray]:
        return [normalize(self.embed_fn(t, dim)) for t in texts]


class LiveBackend:
    """OpenAI-compatible ``/chat/completions`` and ``/embeddings`` client
    with exponential backoff."""

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        chat_model: str = "default",
        embed_model: str = "default",
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        client=None,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.retries = retries
        self.backoff = backoff
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    @classmethod
    def from_env(cls, **kwargs) -> "LiveBackend":
        base = os.environ.get("LLM_BASE_URL")
        if not base:
            raise GatewayError("LLM_BASE_URL is not set")
        return cls(
            base,
            api_key=os.environ.get("LLM_API_KEY", ""),
            chat_model=os.environ.get("LLM_CHAT_MODEL", "default"),
            embed_model=os.environ.get("LLM_EMBED_MODEL", "default"),
            **kwargs,
        )

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        url = f"{self.base_url}{path}"
        last: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(url, json=payload)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = NetworkError(f"{url} answered {resp.status_code}")
                else:
                    resp.raise_for_status()
                    return resp.json()
            except httpx.HTTPStatusError as exc:
                raise GatewayError(f"{url} answered {exc.response.status_code}: {exc.response.text[:200]}") from exc
            except (httpx.TransportError, ValueError) as exc:
                last = exc
            if attempt < self.retries:
                delay = self.backoff * (2**attempt)
                logger.warning("request to %s failed (%s); retrying in %.1fs", url, last, delay)
                time.sleep(delay)
        raise NetworkError(f"{url} unreachable after {self.retries + 1} attempts: {last}")

    def chat(self, request: ChatRequest) -> ChatResponse:
        model = self.chat_model if request.model == "default" else request.model
        payload = {
            "model": model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            **dict(request.params),
        }
        data = self._post("/chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"unexpected chat response shape: {str(data)[:200]}") from exc
        usage = data.get("usage") or {}
        return ChatResponse(text, usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0))

    def embed(self, texts: Sequence[str], dim: int) -> list[np.ndarray]:
        data = self._post("/embeddings", {"model": self.embed_model, "input": list(texts), "dimensions": dim})
        rows = sorted(data["data"], key=lambda r: r.get("index", 0))
        return [normalize(r["embedding"]) for r in rows]


def load_transcript(path: Union[str, Path]) -> list[dict]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise GatewayError(f"{path}:{n}: bad transcript line: {exc}") from None
    return entries


class Gateway:
    """Thread-safe front door used by the agents."""

    def __init__(
        self,
        backend,
        record_path: Union[str, Path, None] = None,
        embed_dim: int = DEFAULT_EMBED_DIM,
        record_embeddings: bool = False,
    ):
        self.backend = backend
        self.embed_dim = embed_dim
        self.record_path = Path(record_path) if record_path else None
        self.record_embeddings = record_embeddings
        self.exchanges: list[ChatExchange] = []
        self._lock = threading.Lock()

    @classmethod
    def scripted(cls, transcript: Union[str, Path], mode: str = "fingerprint", seed: int = 0, **kwargs) -> "Gateway":
        return cls(ScriptedBackend.from_file(transcript, mode=mode, seed=seed), **kwargs)

    def _record(self, record: dict) -> None:
        if self.record_path is None:
            return
        self.record_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.record_path, "a", encoding="utf-8") as fh:
            fh.write(_canonical(record) + "\n")

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self.backend.chat(request)
        if response.text is None:
            raise GatewayError("backend returned no text")
        exchange = ChatExchange(request, response)
        with self._lock:
            self.exchanges.append(exchange)
            self._record(exchange.to_record())
        return response

    def chat(self, request: ChatRequest) -> str:
        return self.complete(request).text

    def embed(self, texts: Sequence[str], dim: Optional[int] = None) -> list[np.ndarray]:
        dim = dim or self.embed_dim
        texts = list(texts)
        if not texts:
            return []
        vectors = self.backend.embed(texts, dim)
        if self.record_embeddings:
            with self._lock:
                self._record(
                    {
                        "kind": "embed",
                        "fingerprint": embed_fingerprint(texts, dim),
                        "dim": dim,
                        "texts": texts,
                        "vectors": [v.tolist() for v in vectors],
                    }
                )
        return vectors

    def embed_one(self, text: str, dim: Optional[int] = None) -> np.ndarray:
        return self.embed([text], dim)[0]


_PARAGRAPH_RE = re.compile(r"\n[ \t]*\n\s*")
_SENTENCE_RE = re.compile(r"[.!?][\"')\]]*\s+")
_SPACE_RE = re.compile(r"\s+")


def _last_cut(pattern: re.Pattern, text: str, lo: int, hi: int) -> Optional[int]:
    best = None
    for m in pattern.finditer(text, lo, hi):
        if lo < m.end() <= hi:
            best = m.end()
    return best


def chunk_text(text: str, max_tokens: int) -> list[str]:
    """Split ``text`` into pieces of at most ``max_tokens`` estimated tokens.

    Cuts prefer paragraph breaks, then sentence ends, then whitespace, and
    only split inside a word when nothing else fits.  A preferred boundary
    is ignored if it would leave the chunk less than half full.  The chunks
    concatenate back to ``text`` exactly.
    """
    if max_tokens <= 0:
        raise ValueError("max_tokens must be positive")
    max_chars = max_tokens * CHARS_PER_TOKEN
    chunks: list[str] = []
    i, n = 0, len(text)
    while n - i > max_chars:
        hi = i + max_chars
        floor = i + max_chars // 2
        cut = None
        for pattern in (_PARAGRAPH_RE, _SENTENCE_RE, _SPACE_RE):
            found = _last_cut(pattern, text, i, hi)
            if found is not None and found >= floor:
                cut = found
                break
        if cut is None:
            cut = hi
        chunks.append(text[i:cut])
        i = cut
    if i < n:
        chunks.append(text[i:])
    return chunks
