"""VLM-as-a-judge pipeline: rubric prompts, provider client, verdicts.

The provider surface is a single HTTP POST carrying a JSON payload
{model, rubric_version, prompt, images: [b64, ...]} and returning
{"text": "..."}; endpoint and credential come from CVE_API_URL /
CVE_API_KEY unless set explicitly. Stub mode replaces the transport with a
deterministic one so the whole tier runs offline. Verdicts are cached on
disk keyed by the content hash of (images, rubric_version, model), making
reruns free; cache writes are atomic.

This module also hosts the satellite damage-description extraction used by
the prompt-conditioned generation path, with a hashing bag-of-tokens
embedding (dimension 64) standing in for a text encoder offline.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import io
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from threading import Lock

import numpy as np
import requests
from PIL import Image

PROMPT_EMBED_DIM = 64
CRITERIA = ("structural", "damage", "realism")

# thresholds on gray mean used by the stub damage-description heuristic;
# chosen between the toy corpus severity bands so toy images classify cleanly
STUB_SEVERITY_THRESHOLDS = ((0.60, "mild"), (0.37, "moderate"))


class VerdictSource(enum.Enum):
    LIVE = "live"
    CACHE = "cache"
    STUB = "stub"


class JudgeError(Exception):
    """Base class for judge pipeline failures."""


class VerdictError(JudgeError):
    """A provider response did not yield a valid verdict (retryable)."""


class UnparsableVerdict(VerdictError):
    """No three integer scores could be extracted."""


class MissingScoreField(VerdictError):
    def __init__(self, missing: list[str]):
        super().__init__(f"missing criteria: {', '.join(missing)}")
        self.missing = missing


class ScoreOutOfRange(VerdictError):
    def __init__(self, criterion: str, value: int):
        super().__init__(f"{criterion} score {value} outside 1..5")
        self.criterion = criterion
        self.value = value


class TransportError(JudgeError):
    """Network or provider-side failure (retryable)."""


class RateLimited(TransportError):
    def __init__(self, retry_after: float | None = None):
        super().__init__(f"rate limited (retry after {retry_after}s)")
        self.retry_after = retry_after


class AuthenticationError(JudgeError):
    """Credential rejected; not retryable."""


class RetriesExhausted(JudgeError):
    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


@dataclass(frozen=True)
class JudgeRequest:
    pair_id: str
    method: str
    generated_image: bytes
    reference_image: bytes
    rubric_version: str = "v1"


@dataclass(frozen=True)
class JudgeVerdict:
    structural: int
    damage: int
    realism: int
    source: VerdictSource = VerdictSource.LIVE
    raw_response: str = ""

    def __post_init__(self):
        for name in CRITERIA:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise ValueError(f"{name} score must be an integer in 1..5, got {value!r}")

    def scores(self) -> tuple[int, int, int]:
        return (self.structural, self.damage, self.realism)


@dataclass(frozen=True)
class DamagePrompt:
    pair_id: str
    text: str
    embedding: np.ndarray | None = None
    source: VerdictSource = VerdictSource.LIVE


@dataclass
class JudgeConfig:
    mode: str = "stub"  # "stub" or "live"
    provider_url: str | None = None
    api_key: str | None = None
    model: str = "gemini-2.5-flash"
    cache_dir: Path | None = None
    rubric_version: str = "v1"
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    backoff_jitter: float = 0.1
    max_inflight: int = 4
    rate_per_sec: float | None = None
    image_edge_limit: int = 768

    def resolved_url(self) -> str | None:
        return self.provider_url or os.environ.get("CVE_API_URL")

    def resolved_key(self) -> str | None:
        return self.api_key or os.environ.get("CVE_API_KEY")


def load_rubric(version: str) -> str:
    ref = resources.files("crossview_eval").joinpath(f"rubrics/{version}.txt")
    try:
        return ref.read_text()
    except FileNotFoundError:
        raise JudgeError(f"unknown rubric version {version!r}")


def build_judge_prompt(req: JudgeRequest, model: str, image_edge_limit: int = 768) -> dict:
    """Provider payload for one judged pair; byte-identical for equal inputs."""
    rubric = load_rubric(req.rubric_version)
    return {
        "model": model,
        "rubric_version": req.rubric_version,
        "prompt": rubric,
        "images": [
            _encode_image(req.generated_image, image_edge_limit),
            _encode_image(req.reference_image, image_edge_limit),
        ],
    }


def canonical_payload_bytes(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _encode_image(data: bytes, edge_limit: int) -> str:
    """Base64 of the payload, downscaled and re-encoded as PNG when oversized."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            if max(img.size) > edge_limit:
                scale = edge_limit / max(img.size)
                new_size = (max(1, round(img.width * scale)), max(1, round(img.height * scale)))
                img = img.resize(new_size, Image.BILINEAR)
                buf = io.BytesIO()
                img.save(buf, format="PNG")
                data = buf.getvalue()
    except Exception as exc:
        raise VerdictError(f"undecodable image payload: {exc}") from exc
    return base64.b64encode(data).decode("ascii")


_LENIENT_PATTERNS = {
    "structural": re.compile(r"struct\w*[^0-9+-]{0,40}?(\d+(?:\.\d+)?)", re.IGNORECASE | re.DOTALL),
    "damage": re.compile(r"damage\w*[^0-9+-]{0,40}?(\d+(?:\.\d+)?)", re.IGNORECASE | re.DOTALL),
    "realism": re.compile(r"realis\w*[^0-9+-]{0,40}?(\d+(?:\.\d+)?)", re.IGNORECASE | re.DOTALL),
}


def _coerce_score(criterion: str, value) -> int:
    if isinstance(value, bool):
        raise UnparsableVerdict(f"{criterion}: boolean is not a score")
    if isinstance(value, float):
        if not value.is_integer():
            raise UnparsableVerdict(f"{criterion}: fractional score {value} (integers only)")
        value = int(value)
    if isinstance(value, str):
        if re.fullmatch(r"\d+\.\d+", value):
            raise UnparsableVerdict(f"{criterion}: fractional score {value} (integers only)")
        if not re.fullmatch(r"[+-]?\d+", value):
            raise UnparsableVerdict(f"{criterion}: non-integer score {value!r}")
        value = int(value)
    if not isinstance(value, int):
        raise UnparsableVerdict(f"{criterion}: score has type {type(value).__name__}")
    if not 1 <= value <= 5:
        raise ScoreOutOfRange(criterion, value)
    return value


def _first_json_object(raw: str) -> dict | None:
    start = raw.find("{")
    end = raw.rfind("}")
    if start == -1 or end <= start:
        return None
    try:
        obj = json.loads(raw[start : end + 1])
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def parse_verdict(raw: str) -> JudgeVerdict:
    """Strict JSON parse first, then lenient extraction of labeled integers.

    Raises UnparsableVerdict, MissingScoreField, or ScoreOutOfRange so the
    caller's retry logic can distinguish the failure modes.
    """
    scores: dict[str, int] = {}
    obj = _first_json_object(raw)
    if obj is not None:
        for criterion in CRITERIA:
            if criterion in obj:
                scores[criterion] = _coerce_score(criterion, obj[criterion])
    if len(scores) < len(CRITERIA):
        for criterion, pattern in _LENIENT_PATTERNS.items():
            if criterion in scores:
                continue
            match = pattern.search(raw)
            if match:
                scores[criterion] = _coerce_score(criterion, match.group(1))
    missing = [c for c in CRITERIA if c not in scores]
    if len(missing) == len(CRITERIA):
        raise UnparsableVerdict(f"no criterion scores found in response: {raw[:200]!r}")
    if missing:
        raise MissingScoreField(missing)
    return JudgeVerdict(
        structural=scores["structural"],
        damage=scores["damage"],
        realism=scores["realism"],
        raw_response=raw,
    )


def serialize_verdict(verdict: JudgeVerdict) -> str:
    return json.dumps(
        {"structural": verdict.structural, "damage": verdict.damage, "realism": verdict.realism},
        sort_keys=True,
    )


class TokenBucket:
    """Thread-safe token-bucket limiter; acquire() blocks until a token frees up."""

    def __init__(self, rate_per_sec: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate_per_sec <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate_per_sec
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_sec)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


class HttpTransport:
    """POSTs the payload to the provider and returns the reply text."""

    source = VerdictSource.LIVE

    def __init__(self, url: str, api_key: str | None = None, timeout: float = 60.0, session=None):
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()

    def __call__(self, payload: dict) -> str:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"provider rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429:
            retry_after = resp.headers.get("Retry-After")
            raise RateLimited(float(retry_after) if retry_after else None)
        if resp.status_code >= 400:
            raise TransportError(f"provider returned HTTP {resp.status_code}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise TransportError(f"provider response is not JSON: {exc}") from exc
        if not isinstance(body, dict) or "text" not in body:
            raise TransportError("provider response missing 'text' field")
        return str(body["text"])


class StubTransport:
    """Deterministic offline stand-in: scores are (hash mod 5) + 1 per criterion.

    The hash is sha256 of the canonical payload bytes; criterion i reads its
    own 4-byte little-endian slice of the digest.
    """

    source = VerdictSource.STUB

    def __call__(self, payload: dict) -> str:
        digest = hashlib.sha256(canonical_payload_bytes(payload)).digest()
        scores = {}
        for i, criterion in enumerate(CRITERIA):
            chunk = int.from_bytes(digest[4 * i : 4 * i + 4], "little")
            scores[criterion] = (chunk % 5) + 1
        return json.dumps(scores, sort_keys=True)


class JudgeClient:
    """Cached, retrying, bounded-concurrency judge and prompt-extraction client."""

    def __init__(
        self,
        config: JudgeConfig,
        transport=None,
        sleep=time.sleep,
        jitter_rng=None,
        now=time.time,
    ):
        self.config = config
        if transport is not None:
            self.transport = transport
        elif config.mode == "stub":
            self.transport = StubTransport()
        else:
            url = config.resolved_url()
            if not url:
                raise JudgeError("live mode needs a provider URL (flag or CVE_API_URL)")
            self.transport = HttpTransport(url, config.resolved_key())
        self._sleep = sleep
        self._jitter_rng = jitter_rng
        self._now = now
        self._rate_limiter = (
            TokenBucket(config.rate_per_sec, sleep=sleep) if config.rate_per_sec else None
        )

    # -- caching ---------------------------------------------------------

    def _cache_key(self, *chunks: bytes) -> str:
        h = hashlib.sha256()
        for chunk in chunks:
            h.update(len(chunk).to_bytes(8, "little"))
            h.update(chunk)
        return h.hexdigest()

    def _cache_path(self, key: str) -> Path | None:
        if self.config.cache_dir is None:
            return None
        return Path(self.config.cache_dir) / f"{key}.json"

    def _cache_load(self, key: str) -> dict | None:
        path = self._cache_path(key)
        if path is None or not path.is_file():
            return None
        return json.loads(path.read_text())

    def _cache_store(self, key: str, record: dict) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
        os.replace(tmp, path)

    # -- retry loop ------------------------------------------------------

    def _call_with_retries(self, payload: dict, parse) :
        attempts = 0
        last: Exception | None = None
        while attempts < self.config.max_attempts:
            attempts += 1
            if self._rate_limiter is not None:
                self._rate_limiter.acquire()
            retry_after = None
            try:
                raw = self.transport(payload)
                return parse(raw), raw, attempts
            except AuthenticationError:
                raise
            except RateLimited as exc:
                last = exc
                retry_after = exc.retry_after
            except (VerdictError, TransportError) as exc:
                last = exc
            if attempts < self.config.max_attempts:
                delay = self.config.backoff_base * self.config.backoff_factor ** (attempts - 1)
                if self._jitter_rng is not None:
                    delay *= 1.0 + self.config.backoff_jitter * self._jitter_rng.random()
                if retry_after is not None:
                    delay = max(delay, retry_after)
                self._sleep(delay)
        raise RetriesExhausted(attempts, last)

    # -- operations ------------------------------------------------------

    def judge_pair(self, req: JudgeRequest) -> JudgeVerdict:
        key = self._cache_key(
            b"judge",
            req.generated_image,
            req.reference_image,
            req.rubric_version.encode(),
            self.config.model.encode(),
        )
        cached = self._cache_load(key)
        if cached is not None:
            v = cached["verdict"]
            return JudgeVerdict(
                structural=v["structural"],
                damage=v["damage"],
                realism=v["realism"],
                source=VerdictSource.CACHE,
                raw_response=cached.get("raw_response", ""),
            )
        payload = build_judge_prompt(req, self.config.model, self.config.image_edge_limit)
        verdict, raw, attempts = self._call_with_retries(payload, parse_verdict)
        verdict = replace(verdict, source=self.transport.source)
        self._cache_store(
            key,
            {
                "request_digest": key,
                "rubric_version": req.rubric_version,
                "model": self.config.model,
                "verdict": {
                    "structural": verdict.structural,
                    "damage": verdict.damage,
                    "realism": verdict.realism,
                },
                "raw_response": raw,
                "source": self.transport.source.value,
                "attempts": attempts,
                "created_at": self._now(),
            },
        )
        return verdict

    def judge_pairs(self, requests_: list[JudgeRequest]) -> list[JudgeVerdict]:
        """Judge many pairs with bounded concurrency; results keep input order."""
        if not requests_:
            return []
        with ThreadPoolExecutor(max_workers=self.config.max_inflight) as pool:
            return list(pool.map(self.judge_pair, requests_))

    def extract_damage_prompt(self, satellite_image: bytes, pair_id: str = "") -> DamagePrompt:
        key = self._cache_key(b"damage-prompt", satellite_image, self.config.model.encode())
        cached = self._cache_load(key)
        if cached is not None:
            return DamagePrompt(
                pair_id=pair_id,
                text=cached["text"],
                embedding=hash_embedding(cached["text"]),
                source=VerdictSource.CACHE,
            )
        if isinstance(self.transport, StubTransport):
            text = _stub_damage_description(satellite_image)
            attempts = 1
        else:
            payload = {
                "model": self.config.model,
                "prompt": (
                    "Describe the structural damage visible in this post-disaster satellite "
                    "image in two sentences, naming the overall severity as mild, moderate, "
                    "or severe."
                ),
                "images": [_encode_image(satellite_image, self.config.image_edge_limit)],
            }
            text, _, attempts = self._call_with_retries(payload, _parse_description)
        self._cache_store(
            key,
            {
                "request_digest": key,
                "model": self.config.model,
                "text": text,
                "source": self.transport.source.value,
                "attempts": attempts,
                "created_at": self._now(),
            },
        )
        return DamagePrompt(
            pair_id=pair_id, text=text, embedding=hash_embedding(text), source=self.transport.source
        )


def _parse_description(raw: str) -> str:
    text = raw.strip()
    if not text:
        raise UnparsableVerdict("empty damage description")
    return text


def _stub_damage_description(image_bytes: bytes) -> str:
    try:
        with Image.open(io.BytesIO(image_bytes)) as img:
            gray = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise VerdictError(f"undecodable image payload: {exc}") from exc
    mean = float(gray.mean())
    token = "severe"
    for threshold, name in STUB_SEVERITY_THRESHOLDS:
        if mean >= threshold:
            token = name
            break
    return (
        f"Aerial view indicates {token} structural damage. "
        f"Scene brightness statistic {mean:.3f} drives this offline stub description."
    )


def hash_embedding(text: str, dim: int = PROMPT_EMBED_DIM) -> np.ndarray:
    """Signed bag-of-tokens hashing embedding, L2-normalized unless empty."""
    vec = np.zeros(dim, dtype=np.float64)
    for token in re.findall(r"[a-z0-9]+", text.lower()):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        index = int.from_bytes(digest[:2], "little") % dim
        sign = 1.0 if digest[2] & 1 else -1.0
        vec[index] += sign
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0 else vec


def aggregate_verdicts(by_method: dict[str, list[JudgeVerdict]]) -> dict[str, tuple[float, float, float]]:
    """Per-method arithmetic means of the three criteria.

    Scores are integers, so sums are exact and the means are invariant to
    verdict order.
    """
    out: dict[str, tuple[float, float, float]] = {}
    for method, verdicts in by_method.items():
        if not verdicts:
            raise JudgeError(f"no verdicts for method {method!r}")
        n = len(verdicts)
        totals = [0, 0, 0]
        for v in verdicts:
            totals[0] += v.structural
            totals[1] += v.damage
            totals[2] += v.realism
        out[method] = (totals[0] / n, totals[1] / n, totals[2] / n)
    return out
