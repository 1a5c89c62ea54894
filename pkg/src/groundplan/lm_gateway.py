"""Language-model access: sampling, perplexity, and embeddings.

Two models sit behind one protocol: a planning model that generates step
candidates and scores object relevance, and a translation model that embeds
text for cosine matching. Three backends implement it:

* StubBackend -- hermetic and fully deterministic. Generation is retrieval
  over a small plan corpus (the next line of the most similar plans, with
  synthetic log-probabilities); embeddings come from a seeded hash projection
  plus a curated synonym/topic lexicon, so lexical neighbors land close.
* UniformBackend -- assigns probability 1/V to every token; useful as a
  closed-form reference in tests.
* RemoteBackend -- an OpenAI-compatible completions + embeddings client with
  retries and an on-disk response cache, so re-runs replay offline.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

import numpy as np
import requests

from .errors import BackendError, InputError
from .prompts import parse_prompt_tail

EMBED_DIM = 128
_STOPWORDS = frozenset({"the", "a", "an"})


@dataclass(frozen=True)
class Sample:
    """One sampled continuation and its mean per-token log-probability."""

    text: str
    mean_logprob: float

    def __post_init__(self):
        if not math.isfinite(self.mean_logprob) or self.mean_logprob > 0:
            raise InputError(f"mean_logprob must be finite and <= 0, got {self.mean_logprob}")

    @property
    def is_empty(self) -> bool:
        return not self.text.strip()


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def cosine(a: Embedding, b: Embedding) -> float:
    """Standard cosine similarity, clamped to [-1, 1] against float drift."""
    if a.dim != b.dim:
        raise InputError(f"embedding dimension mismatch: {a.dim} vs {b.dim}")
    na = float(np.linalg.norm(a.vector))
    nb = float(np.linalg.norm(b.vector))
    if na == 0.0 or nb == 0.0:
        raise InputError("cosine of a zero vector is undefined")
    value = float(np.dot(a.vector, b.vector) / (na * nb))
    return max(-1.0, min(1.0, value))


class Backend(Protocol):
    identity: str

    def sample_continuations(
        self, prompt: str, k: int, stop: str, temperature: float, seed: int
    ) -> list[Sample]: ...

    def perplexity(self, prompt: str, continuation: str) -> float: ...

    def embed(self, text: str) -> Embedding: ...


def _stable_hash(*parts: str) -> int:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


# -- hash-projection embedder -------------------------------------------------


def load_lexicon() -> dict:
    raw = resources.files("groundplan.data").joinpath("stub_lexicon.json").read_text("utf-8")
    return json.loads(raw)


class HashEmbedder:
    """Deterministic bag-of-tokens embedder.

    Each token maps to a fixed random unit vector seeded by its hash; a text
    embeds as the mean over its tokens plus, for lexicon words, their topic
    vectors. Synonyms collapse to one canonical token, so "tv" and
    "television" embed identically.
    """

    def __init__(self, lexicon: dict | None = None, dim: int = EMBED_DIM):
        lexicon = lexicon if lexicon is not None else load_lexicon()
        self.dim = dim
        self.synonyms: dict[str, str] = dict(lexicon.get("synonyms", {}))
        self.topics: dict[str, list[str]] = {}
        for topic, words in lexicon.get("topics", {}).items():
            for word in words:
                self.topics.setdefault(word, []).append(topic)
        self._token_cache: dict[str, np.ndarray] = {}
        self._text_cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            rng = np.random.default_rng(_stable_hash("tok", token))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._token_cache[token] = vec
        return vec

    def tokenize(self, text: str) -> list[str]:
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        content = [t for t in tokens if t not in _STOPWORDS]
        if content:
            tokens = content
        if not tokens and text.strip():
            tokens = [text.strip().lower()]
        return [self.synonyms.get(t, t) for t in tokens]

    def embed(self, text: str) -> Embedding:
        with self._lock:
            cached = self._text_cache.get(text)
            if cached is not None:
                return Embedding(cached)
            tokens = self.tokenize(text)
            if not tokens:
                vec = np.zeros(self.dim)
            else:
                parts = []
                for token in tokens:
                    parts.append(self._token_vector(token))
                    for topic in self.topics.get(token, []):
                        parts.append(self._token_vector(f"topic:{topic}"))
                vec = np.mean(parts, axis=0)
            self._text_cache[text] = vec
            return Embedding(vec)


# -- stub backend --------------------------------------------------------------


@dataclass(frozen=True)
class CorpusPlan:
    task: str
    lines: tuple[str, ...]


class StubBackend:
    """Retrieval LM over a plan corpus; hermetic stand-in for the real models.

    Sampling parses the prompt tail (last task header plus the steps already
    accepted), retrieves the most task-similar corpus plans, and returns each
    one's next line; a prompt that has consumed the nearest plan yields empty
    (null) samples. Perplexity decays exponentially with the embedding
    distance between continuation and prompt; ``ppl_beta`` is calibrated so
    that, at the default planner weights, an object unrelated to the object
    prompt drags the weighted total below the 0.0 cutoff.
    """

    def __init__(
        self,
        corpus: list[CorpusPlan] | tuple[CorpusPlan, ...] = (),
        lexicon: dict | None = None,
        retrieval_size: int = 3,
        ppl_beta: float = 4.0,
        logprob_scale: float = 2.0,
    ):
        self.corpus = tuple(corpus)
        self.embedder = HashEmbedder(lexicon)
        self.retrieval_size = retrieval_size
        self.ppl_beta = ppl_beta
        self.logprob_scale = logprob_scale
        corpus_key = _stable_hash("corpus", *(f"{p.task}::{'|'.join(p.lines)}" for p in self.corpus))
        self.identity = f"stub:{corpus_key:016x}"

    # retrieval ----------------------------------------------------------

    def _task_similarities(self, query_task: str) -> list[tuple[float, int]]:
        if not query_task:
            return [(0.0, i) for i in range(len(self.corpus))]
        query = self.embed(query_task)
        scored = []
        for i, plan in enumerate(self.corpus):
            try:
                sim = cosine(query, self.embed(plan.task))
            except InputError:
                sim = 0.0
            scored.append((sim, i))
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        return scored

    def sample_continuations(
        self, prompt: str, k: int, stop: str = "\n", temperature: float = 0.8, seed: int = 0
    ) -> list[Sample]:
        if not prompt:
            raise InputError("prompt must be nonempty")
        if k < 1:
            raise InputError("k must be >= 1")
        if not self.corpus:
            return [Sample("", -0.05) for _ in range(k)]
        tail = parse_prompt_tail(prompt)
        next_index = len(tail.step_texts)
        ranked = self._task_similarities(tail.query_task)[: self.retrieval_size]
        sims = np.array([s for s, _ in ranked])
        # sharper than the raw sims: temperature widens the draw over neighbors
        tau = max(0.05, 0.2 * temperature)
        weights = np.exp((sims - sims.max()) / tau)
        probs = weights / weights.sum()

        rng = np.random.default_rng(_stable_hash("sample", prompt, str(seed), str(k)))
        samples = []
        for _ in range(k):
            pick = int(rng.choice(len(ranked), p=probs))
            sim, corpus_index = ranked[pick]
            lines = self.corpus[corpus_index].lines
            if next_index >= len(lines):
                samples.append(Sample("", -0.05))
                continue
            text = lines[next_index]
            if stop and stop in text:
                text = text.split(stop, 1)[0]
            noise = float(rng.normal(0.0, 0.02))
            logprob = min(-0.01, -self.logprob_scale * (1.0 - sim) - 0.05 + noise)
            samples.append(Sample(text, logprob))
        return samples

    def perplexity(self, prompt: str, continuation: str) -> float:
        if not continuation.strip():
            raise InputError("perplexity requires a nonempty continuation")
        cont = self.embed(continuation)
        ctx = self.embed(prompt) if prompt.strip() else None
        if ctx is None or float(np.linalg.norm(ctx.vector)) == 0.0 or float(
            np.linalg.norm(cont.vector)
        ) == 0.0:
            sim = 0.0
        else:
            sim = cosine(cont, ctx)
        return max(1.0, math.exp(self.ppl_beta * (1.0 - sim)))

    def embed(self, text: str) -> Embedding:
        return self.embedder.embed(text)


class UniformBackend:
    """Every token has probability 1/V; perplexity is exactly V."""

    def __init__(self, vocab_size: int):
        if vocab_size < 1:
            raise InputError("vocab_size must be >= 1")
        self.vocab_size = vocab_size
        self.identity = f"uniform:{vocab_size}"

    def sample_continuations(self, prompt, k, stop="\n", temperature=0.8, seed=0):
        logprob = -math.log(self.vocab_size) if self.vocab_size > 1 else 0.0
        return [Sample("", logprob) for _ in range(k)]

    def perplexity(self, prompt: str, continuation: str) -> float:
        if not continuation.strip():
            raise InputError("perplexity requires a nonempty continuation")
        return float(self.vocab_size)

    def embed(self, text: str) -> Embedding:
        vec = np.zeros(8)
        vec[0] = 1.0
        return Embedding(vec)


# -- remote backend -------------------------------------------------------------


@dataclass
class GatewayConfig:
    """Backend selection and remote-endpoint settings."""

    kind: str = "stub"
    base_url: str = "http://localhost:8000/v1"
    planning_model: str = "gpt2-large"
    translation_model: str = "stsb-roberta-large"
    timeout: float = 30.0
    retries: int = 2
    cache_dir: str | None = None
    api_key: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "GatewayConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown backend config keys: {sorted(unknown)}")
        return cls(**data)


class ResponseCache:
    """One JSON file per request hash; writes are atomic and serialized."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, value: dict) -> None:
        with self._lock:
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(json.dumps(value, sort_keys=True), encoding="utf-8")
            os.replace(tmp, self._path(key))


class RemoteBackend:
    """OpenAI-compatible completions/embeddings client with logprobs.

    Perplexity uses the echo trick: request the prompt+continuation with
    max_tokens=0 and echo=True, then average the token logprobs whose text
    offsets fall inside the continuation.
    """

    def __init__(self, config: GatewayConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()
        self.identity = (
            f"remote:{config.base_url}:{config.planning_model}:{config.translation_model}"
        )
        self.cache = ResponseCache(config.cache_dir) if config.cache_dir else None

    def _post(self, path: str, payload: dict) -> dict:
        key = hashlib.sha256(
            json.dumps([self.identity, path, payload], sort_keys=True).encode("utf-8")
        ).hexdigest()
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        url = self.config.base_url.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                response = self.session.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout
                )
                if response.status_code != 200:
                    raise BackendError(f"{url} returned HTTP {response.status_code}")
                data = response.json()
                if "choices" not in data and "data" not in data:
                    raise BackendError(f"{url}: malformed response body")
                if self.cache is not None:
                    self.cache.put(key, data)
                return data
            except (requests.RequestException, ValueError, BackendError) as exc:
                last_error = exc
                if attempt < self.config.retries:
                    time.sleep(0.05 * (attempt + 1))
        raise BackendError(f"backend request failed after {self.config.retries + 1} attempts: {last_error}")

    def sample_continuations(
        self, prompt: str, k: int, stop: str = "\n", temperature: float = 0.8, seed: int = 0
    ) -> list[Sample]:
        if not prompt:
            raise InputError("prompt must be nonempty")
        payload = {
            "model": self.config.planning_model,
            "prompt": prompt,
            "n": k,
            "temperature": temperature,
            "max_tokens": 64,
            "stop": [stop] if stop else None,
            "logprobs": 0,
            "seed": seed,
        }
        data = self._post("/completions", payload)
        choices = sorted(data["choices"], key=lambda c: c.get("index", 0))
        samples = []
        for choice in choices[:k]:
            text = choice.get("text", "").strip().splitlines()
            first_line = text[0] if text else ""
            logprobs = (choice.get("logprobs") or {}).get("token_logprobs") or []
            values = [lp for lp in logprobs if lp is not None]
            mean_lp = float(np.mean(values)) if values else 0.0
            samples.append(Sample(first_line, min(0.0, mean_lp)))
        if len(samples) != k:
            raise BackendError(f"asked for {k} samples, backend returned {len(samples)}")
        return samples

    def perplexity(self, prompt: str, continuation: str) -> float:
        if not continuation.strip():
            raise InputError("perplexity requires a nonempty continuation")
        payload = {
            "model": self.config.planning_model,
            "prompt": prompt + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
        }
        data = self._post("/completions", payload)
        logprobs = data["choices"][0]["logprobs"]
        offsets = logprobs["text_offset"]
        token_lps = logprobs["token_logprobs"]
        boundary = len(prompt)
        tail = [
            lp for offset, lp in zip(offsets, token_lps) if offset >= boundary and lp is not None
        ]
        if not tail:
            raise BackendError("no continuation tokens in echoed logprobs")
        return max(1.0, math.exp(-float(np.mean(tail))))

    def embed(self, text: str) -> Embedding:
        payload = {"model": self.config.translation_model, "input": text}
        data = self._post("/embeddings", payload)
        vector = np.asarray(data["data"][0]["embedding"], dtype=float)
        return Embedding(vector)


def make_backend(
    config: GatewayConfig, corpus: tuple[CorpusPlan, ...] | list[CorpusPlan] = ()
) -> Backend:
    if config.kind == "stub":
        return StubBackend(corpus)
    if config.kind == "remote":
        return RemoteBackend(config)
    raise InputError(f"unknown backend kind {config.kind!r} (expected 'stub' or 'remote')")
