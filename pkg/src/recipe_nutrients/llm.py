"""Chat-model tier: prompt rendering, transport, output parsing, merging.

Two prompt styles are supported: direct inference (few-shot, answer in a
fixed one-line format) and refinement (the model adjusts an existing
prediction and returns JSON). Transport speaks the common chat-completions
HTTP+JSON protocol so both local inference servers and cloud APIs work; all
endpoint specifics live in EndpointConfig. Every parse and transport failure
in the refinement path degrades to the input prediction, never an exception.
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
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .ridge import NutrientPrediction
from .util import format_decimal, load_jsonl

logger = logging.getLogger(__name__)

PREDICTION_KEYS = ("fat", "protein", "saturates", "sugars")
REFINE_JSON_KEYS = ("protein_g", "fat_g", "sugars_g", "saturates_g")

DIRECT_SYSTEM_PROMPT = """\
You are a specialized nutritional data analyst. Your task is to calculate the nutrient profile per 100g for recipes provided in [INST] format.

Instructions:
Unit Conversion: Convert all units (e.g., pounds, cups, tablespoons, ml) to grams (g) using standard conversion factors (e.g., 1 cup water ≈ 236.6g, 1 tablespoon butter ≈ 14.2g).
Calculation: Sum the total weight and total nutrients of all ingredients, then normalize the values to a 100g portion.
Output Format: You must only provide the final result in this specific format:
Nutrient values per 100 g: fat - [value], protein - [value], saturates - [value], sugars - [value]"""

REFINE_SYSTEM_PROMPT = "You are a nutrition expert."

REFINE_USER_TEMPLATE = """\
Food:
{text}

Predicted nutrients per 100g:
Protein: {protein}
Fat: {fat}
Sugar: {sugars}
Saturates: {saturates}

Return JSON only with keys:
protein_g, fat_g, sugars_g, saturates_g"""


class TransportError(RuntimeError):
    """Request never produced a usable response (retries exhausted)."""


class EndpointError(RuntimeError):
    """The endpoint answered with a terminal error or malformed body."""

    def __init__(self, message: str, status: int | None = None) -> None:
        super().__init__(message)
        self.status = status


class ParseError(ValueError):
    """Model output did not contain the required nutrient values."""


@dataclass(frozen=True)
class ChatRequest:
    system: str
    messages: tuple[dict, ...]  # alternating user/assistant, final user
    temperature: float = 0.0
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if not self.system:
            raise ValueError("system message must be non-empty")
        if not self.messages or self.messages[-1]["role"] != "user":
            raise ValueError("final message must be a user message")
        for i, message in enumerate(self.messages):
            expected = "user" if i % 2 == 0 else "assistant"
            if message["role"] != expected:
                raise ValueError(f"messages must alternate user/assistant (message {i})")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_payload(self, model_name: str) -> dict:
        return {
            "model": model_name,
            "messages": [{"role": "system", "content": self.system},
                         *({"role": m["role"], "content": m["content"]} for m in self.messages)],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 2
    max_concurrency: int = 1
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


@dataclass(frozen=True)
class FewShotBank:
    exemplars: tuple[tuple[str, NutrientPrediction], ...]
    k: int = 2

    def __post_init__(self) -> None:
        if self.k > len(self.exemplars):
            raise ValueError(f"k={self.k} exceeds bank size {len(self.exemplars)}")

    @classmethod
    def from_file(cls, path: str | Path, k: int | None = None) -> "FewShotBank":
        exemplars = tuple(
            (str(row["ingredient_text"]), NutrientPrediction.from_dict(row))
            for row in load_jsonl(path)
        )
        return cls(exemplars=exemplars, k=len(exemplars) if k is None else k)

    @classmethod
    def default(cls, k: int | None = None) -> "FewShotBank":
        ref = resources.files("recipe_nutrients.data") / "fewshot_bank.jsonl"
        with resources.as_file(ref) as path:
            return cls.from_file(path, k=k)


def render_prediction_line(pred: NutrientPrediction) -> str:
    """The one-line answer format: "Nutrient values per 100 g: fat - X, ...\"."""
    parts = ", ".join(f"{key} - {format_decimal(getattr(pred, key))}" for key in PREDICTION_KEYS)
    return f"Nutrient values per 100 g: {parts}"


def render_direct_prompt(ingredient_text: str, bank: FewShotBank,
                         temperature: float = 0.0, max_tokens: int = 256) -> ChatRequest:
    """Few-shot direct-inference request; exemplars become worked turns."""
    if not ingredient_text.strip():
        raise ValueError("ingredient_text must be non-empty")
    messages: list[dict] = []
    for text, pred in bank.exemplars[:bank.k]:
        messages.append({"role": "user", "content": f"[INST] {text} [/INST]"})
        messages.append({"role": "assistant", "content": render_prediction_line(pred)})
    messages.append({"role": "user", "content": f"[INST] {ingredient_text} [/INST]"})
    return ChatRequest(system=DIRECT_SYSTEM_PROMPT, messages=tuple(messages),
                       temperature=temperature, max_tokens=max_tokens)


def render_refine_prompt(ingredient_text: str, pred: NutrientPrediction,
                         temperature: float = 0.0, max_tokens: int = 256) -> ChatRequest:
    """Refinement request: the text plus current predictions, JSON answer."""
    user = REFINE_USER_TEMPLATE.format(
        text=ingredient_text,
        protein=format_decimal(pred.protein),
        fat=format_decimal(pred.fat),
        sugars=format_decimal(pred.sugars),
        saturates=format_decimal(pred.saturates),
    )
    return ChatRequest(system=REFINE_SYSTEM_PROMPT,
                       messages=({"role": "user", "content": user},),
                       temperature=temperature, max_tokens=max_tokens)


def request_hash(req: ChatRequest, ep: EndpointConfig) -> str:
    payload = req.to_payload(ep.model_name)
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()
    return f"sha256:{digest}"


def complete(req: ChatRequest, ep: EndpointConfig) -> str:
    """POST the request to {base_url}/chat/completions and return the reply text.

    Transient failures (connection errors, timeouts, HTTP 429/5xx) retry with
    exponential backoff up to max_retries; other non-2xx statuses fail
    immediately.
    """
    headers = {"Content-Type": "application/json"}
    if ep.api_key_env:
        key = os.environ.get(ep.api_key_env)
        if not key:
            raise ValueError(f"environment variable {ep.api_key_env!r} is not set")
        headers["Authorization"] = f"Bearer {key}"
    url = ep.base_url.rstrip("/") + "/chat/completions"
    payload = req.to_payload(ep.model_name)

    last_failure = "no attempt made"
    for attempt in range(ep.max_retries + 1):
        if attempt:
            time.sleep(ep.backoff_base * 2 ** (attempt - 1))
        try:
            response = requests.post(url, json=payload, headers=headers, timeout=ep.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_failure = f"{type(exc).__name__}: {exc}"
            logger.debug("attempt %d failed: %s", attempt + 1, last_failure)
            continue
        if response.status_code == 429 or response.status_code >= 500:
            last_failure = f"HTTP {response.status_code}"
            logger.debug("attempt %d failed: %s", attempt + 1, last_failure)
            continue
        if not 200 <= response.status_code < 300:
            raise EndpointError(
                f"endpoint returned HTTP {response.status_code}: {response.text[:200]}",
                status=response.status_code)
        try:
            body = response.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(
                f"malformed completion body ({exc}): {response.text[:200]}") from exc
        if not isinstance(content, str):
            raise EndpointError(f"completion content is not text: {content!r}")
        return content
    raise TransportError(
        f"request failed after {ep.max_retries + 1} attempts; last failure: {last_failure}")


class TranscriptCache:
    """Append-only json-lines transcript enabling offline replay of runs."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], str] = {}
        if self.path.exists():
            for row in load_jsonl(self.path):
                self._entries[(str(row["id"]), str(row["request_hash"]))] = str(row["response"])

    def lookup(self, sample_id: str, req_hash: str) -> str | None:
        return self._entries.get((sample_id, req_hash))

    def record(self, sample_id: str, req_hash: str, response: str) -> None:
        row = {"id": sample_id, "request_hash": req_hash,
               "response": response, "timestamp": time.time()}
        with self._lock:
            self._entries[(sample_id, req_hash)] = response
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def complete_many(items: Sequence[tuple[str, ChatRequest]], ep: EndpointConfig,
                  cache: TranscriptCache | None = None) -> dict[str, str | None]:
    """Bounded-concurrency map over (id, request) pairs.

    Returns response text per id (None for ids whose request failed). Cached
    responses are replayed without touching the network.
    """

    def run_one(item: tuple[str, ChatRequest]) -> tuple[str, str | None]:
        sample_id, req = item
        req_hash = request_hash(req, ep)
        if cache is not None:
            hit = cache.lookup(sample_id, req_hash)
            if hit is not None:
                return sample_id, hit
        try:
            response = complete(req, ep)
        except (TransportError, EndpointError, ValueError) as exc:
            logger.warning("sample %s: request failed: %s", sample_id, exc)
            return sample_id, None
        if cache is not None:
            cache.record(sample_id, req_hash, response)
        return sample_id, response

    results: dict[str, str | None] = {}
    with ThreadPoolExecutor(max_workers=ep.max_concurrency) as pool:
        for sample_id, response in pool.map(run_one, items):
            results[sample_id] = response
    return results


def parse_llm_nutrients(text: str) -> NutrientPrediction:
    """Scan free text for the four "key - number" pairs, any order."""
    values: dict[str, float] = {}
    missing: list[str] = []
    for key in PREDICTION_KEYS:
        match = re.search(rf"\b{key}\s*-\s*(\d+(?:\.\d+)?)", text, flags=re.IGNORECASE)
        if match is None:
            missing.append(key)
        else:
            values[key] = float(match.group(1))
    if missing:
        raise ParseError(f"output is missing nutrient keys {missing}: {text[:120]!r}")
    return NutrientPrediction(**values)


def _first_json_object(text: str) -> dict:
    decoder = json.JSONDecoder()
    for index, char in enumerate(text):
        if char != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text, index)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ParseError(f"no json object found in output: {text[:120]!r}")


def parse_refine_json(text: str) -> NutrientPrediction:
    """Pull the refinement JSON out of the reply (code fences and prose tolerated)."""
    obj = _first_json_object(text)
    values: dict[str, float] = {}
    for key in REFINE_JSON_KEYS:
        if key not in obj:
            raise ParseError(f"refinement json is missing key {key!r}: {text[:120]!r}")
        value = obj[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ParseError(f"refinement key {key!r} is not a finite number: {value!r}")
        values[key.removesuffix("_g")] = max(0.0, float(value))
    return NutrientPrediction(fat=values["fat"], protein=values["protein"],
                              saturates=values["saturates"], sugars=values["sugars"])


def refine(ingredient_text: str, pred: NutrientPrediction,
           ep: EndpointConfig) -> NutrientPrediction:
    """One refinement pass; any transport or parse failure returns pred unchanged."""
    req = render_refine_prompt(ingredient_text, pred)
    try:
        response = complete(req, ep)
        return parse_refine_json(response)
    except (TransportError, EndpointError, ValueError) as exc:
        logger.warning("refinement fell back to the input prediction: %s", exc)
        return pred


def merge_predictions(base: Mapping[str, NutrientPrediction],
                      override: Mapping[str, NutrientPrediction],
                      ids: set[str]) -> dict[str, NutrientPrediction]:
    """Replace exactly the entries in ids with override's values."""
    outside = ids - set(base)
    if outside:
        some = ", ".join(sorted(outside)[:5])
        raise ValueError(f"{len(outside)} ids are not in the base predictions (e.g. {some})")
    unavailable = ids - set(override)
    if unavailable:
        some = ", ".join(sorted(unavailable)[:5])
        raise ValueError(f"{len(unavailable)} ids have no override prediction (e.g. {some})")
    return {sample_id: override[sample_id] if sample_id in ids else pred
            for sample_id, pred in base.items()}
