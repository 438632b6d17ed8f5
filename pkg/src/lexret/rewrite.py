"""Query transformation strategies: identity, q2d, q2d_cot, and gure.

``identity`` forwards the context untouched and never touches the
network. ``q2d`` and ``q2d_cot`` generate a pseudo-passage from few-shot
prompts and append it to the context with a single space, so the final
query always starts with the original context. ``gure`` generates a
replacement passage from an instruction prompt and uses the generation
alone as the query.

Generation goes through an OpenAI-compatible chat-completions endpoint.
Completed generations are cached in an append-only JSONL ledger keyed by
(strategy, template, context, decoding params), so interrupted runs
resume without repaying generation cost.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import httpx

from . import LexretError
from .corpus import QueryRecord

logger = logging.getLogger(__name__)

STRATEGIES = ("identity", "q2d", "q2d_cot", "gure")

GURE_INSTRUCTION = (
    "You are a helpful assistant specializing in generating legal passages "
    "that naturally align with the preceding context.\n"
    "\n"
    "Based on the given preceding context, please generate a legal passage "
    "that is coherent, relevant, and contextually appropriate.\n"
    "\n"
    "### Preceding Context : {Context}\n"
    "\n"
    "### Legal Passage : {Passage}"
)

_EXPANSION_INSTRUCTION = (
    "Write a following legal passage that is coherent, relevant, and "
    "contextually appropriate based on preceding context."
)

_COT_PREAMBLE = (
    "### Note: Examples provided below do not include intermediate steps "
    "due to sampling constraints.\n"
    "\n"
    "### Step 1: Understand the preceding context.\n"
    "\n"
    "### Step 2: Identify the key legal elements and principles required "
    "for coherence.\n"
    "\n"
    "### Step 3: Generate a legal passage that logically follows and "
    "aligns with the context.\n"
    "\n"
    "### Note: You can generate any intermediate step but, please mark "
    "final output with '<output>' tag."
)

COT_TAG = "<output>"

# Filler reasoning steps used when an in-context example carries none.
_DEFAULT_STEP1 = "Understand the preceding context and what it argues."
_DEFAULT_STEP2 = "Identify the legal elements a supporting passage must state."


class EndpointError(LexretError):
    """Raised when the generation endpoint fails after retries."""

    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


class EmptyCompletionError(EndpointError):
    """Raised when the endpoint returns an empty completion."""


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    top_p: float = 0.9
    max_tokens: int = 256

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")

    def cache_key_part(self) -> str:
        return f"t={self.temperature!r},p={self.top_p!r},m={self.max_tokens}"


@dataclass(frozen=True)
class Endpoint:
    """Descriptor for an OpenAI-compatible chat-completions service.

    The API key is read from the environment variable named by
    ``api_key_env`` when present; requests go out without authorization
    otherwise (local serving shims need none).
    """

    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_attempts: int = 4
    backoff_base: float = 0.5


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt body plus in-context examples for one strategy.

    ``examples`` holds (context, passage) pairs for q2d and
    (context, passage, step1, step2) tuples for q2d_cot; gure uses none.
    The q2d variants require exactly 3 examples.
    """

    name: str
    body: str
    examples: tuple = ()

    def __post_init__(self):
        if self.name not in ("gure", "q2d", "q2d_cot"):
            raise ValueError(f"unknown template name {self.name!r}")
        if self.name in ("q2d", "q2d_cot") and len(self.examples) != 3:
            raise ValueError(f"{self.name} template requires exactly 3 examples")

    @classmethod
    def gure(cls) -> "PromptTemplate":
        return cls(name="gure", body=GURE_INSTRUCTION)

    @classmethod
    def q2d(cls, examples) -> "PromptTemplate":
        return cls(name="q2d", body=_EXPANSION_INSTRUCTION, examples=tuple(examples))

    @classmethod
    def q2d_cot(cls, examples) -> "PromptTemplate":
        normalized = []
        for example in examples:
            context, passage = example[0], example[1]
            step1 = example[2] if len(example) > 2 else _DEFAULT_STEP1
            step2 = example[3] if len(example) > 3 else _DEFAULT_STEP2
            normalized.append((context, passage, step1, step2))
        return cls(name="q2d_cot", body=_EXPANSION_INSTRUCTION, examples=tuple(normalized))

    def fingerprint(self) -> str:
        payload = json.dumps([self.name, self.body, list(self.examples)], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def render_prompt(template: PromptTemplate, context: str, passage: str | None = None) -> str:
    """Substitute the context (and, for training records, the passage).

    Without a passage the gure prompt ends right after
    ``### Legal Passage :`` so the model supplies the passage itself.
    """
    if template.name == "gure":
        body = template.body
        if passage is None:
            body = body.replace(" {Passage}", "")
        else:
            body = body.replace("{Passage}", passage)
        return body.replace("{Context}", context)
    if passage is not None:
        raise ValueError(f"{template.name} prompts are inference-only, passage not accepted")
    parts = [template.body, ""]
    if template.name == "q2d_cot":
        parts += [_COT_PREAMBLE, ""]
    parts += ["Examples:", ""]
    for example in template.examples:
        if template.name == "q2d":
            ex_context, ex_passage = example
            parts += [
                f"### Preceding Context : {ex_context}",
                "",
                f"### Legal Passage : {ex_passage}",
                "",
            ]
        else:
            ex_context, ex_passage, step1, step2 = example
            parts += [
                f"### Preceding Context : {ex_context}",
                "",
                f"### Step1: {step1}",
                "",
                f"### Step2: {step2}",
                "",
                f"### Step3: {COT_TAG} {ex_passage}",
                "",
            ]
    parts += ["Query:", "", f"### Preceding Context : {context}", "", "### Legal Passage :"]
    return "\n".join(parts)


def generate(
    endpoint: Endpoint,
    prompt: str,
    params: DecodingParams,
    *,
    client: httpx.Client | None = None,
) -> str:
    """Request a completion, retrying transient failures with backoff.

    Retries cover transport errors, HTTP 429, and 5xx responses; other
    HTTP errors fail immediately. An empty completion raises
    :class:`EmptyCompletionError` so callers can tell it apart from
    transport failures.
    """
    payload = {
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    }
    headers = {}
    api_key = os.environ.get(endpoint.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=endpoint.timeout)
    last_error: str = "no attempts made"
    last_status: int | None = None
    try:
        for attempt in range(1, endpoint.max_attempts + 1):
            started = time.monotonic()
            try:
                response = client.post(url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last_error, last_status = str(exc), None
                logger.warning("attempt %d/%d failed: %s", attempt, endpoint.max_attempts, exc)
            else:
                elapsed = time.monotonic() - started
                if response.status_code == 200:
                    logger.debug("completion in %.3fs (attempt %d)", elapsed, attempt)
                    body = response.json()
                    text = body["choices"][0]["message"]["content"]
                    if not text or not text.strip():
                        raise EmptyCompletionError("endpoint returned an empty completion")
                    return text
                last_error = f"HTTP {response.status_code}"
                last_status = response.status_code
                retryable = response.status_code == 429 or response.status_code >= 500
                logger.warning(
                    "attempt %d/%d failed: HTTP %d",
                    attempt,
                    endpoint.max_attempts,
                    response.status_code,
                )
                if not retryable:
                    break
            if attempt < endpoint.max_attempts:
                time.sleep(min(endpoint.backoff_base * 2 ** (attempt - 1), 8.0))
    finally:
        if own_client:
            client.close()
    raise EndpointError(
        f"generation failed after {endpoint.max_attempts} attempts: {last_error}",
        status_code=last_status,
    )


def parse_cot_output(raw: str) -> str:
    """Text after the last ``<output>`` tag, trimmed.

    Without a tag the whole raw text comes back and a parse warning is
    logged; the caller still gets something usable as a pseudo-passage.
    """
    idx = raw.rfind(COT_TAG)
    if idx < 0:
        logger.warning("no %s tag in generation, using full text", COT_TAG)
        return raw.strip()
    return raw[idx + len(COT_TAG):].strip()


def _strip_scaffolding(text: str) -> str:
    # Few-shot models often keep generating the next example block; cut
    # the generation at the first sign of prompt scaffolding.
    cut = text.find("### Preceding Context")
    if cut >= 0:
        text = text[:cut]
    return text.strip()


@dataclass(frozen=True)
class RewrittenQuery:
    qid: str
    strategy: str
    raw_generation: str
    final_text: str
    cache_hit: bool = False


class RewriteCache:
    """Append-only JSONL ledger of completed generations.

    Entries are keyed by a hash of (strategy, template, context, params).
    Writes are serialized with a lock so concurrent rewrites stay safe.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self._entries[entry["key"]] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> dict | None:
        return self._entries.get(key)

    def put(self, key: str, strategy: str, context_hash: str, raw: str, final: str) -> None:
        entry = {
            "key": key,
            "strategy": strategy,
            "context_hash": context_hash,
            "raw": raw,
            "final": final,
            "timestamp": time.time(),
        }
        with self._lock:
            self._entries[key] = entry
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def cache_key(strategy: str, template: PromptTemplate | None, context: str,
              params: DecodingParams) -> str:
    template_part = template.fingerprint() if template is not None else "-"
    context_part = hashlib.sha256(context.encode("utf-8")).hexdigest()
    joined = "|".join([strategy, template_part, context_part, params.cache_key_part()])
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def rewrite(
    strategy: str,
    context: str,
    endpoint: Endpoint | None,
    params: DecodingParams,
    *,
    qid: str = "",
    template: PromptTemplate | None = None,
    cache: RewriteCache | None = None,
    client: httpx.Client | None = None,
) -> RewrittenQuery:
    """Apply one rewrite strategy to a context.

    The cache, when given, is consulted before any endpoint call; two
    rewrites with the same key cost exactly one generation.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if strategy == "identity":
        return RewrittenQuery(qid=qid, strategy="identity", raw_generation="", final_text=context)

    if template is None:
        if strategy == "gure":
            template = PromptTemplate.gure()
        else:
            raise ValueError(f"{strategy} requires a template with in-context examples")
    if endpoint is None:
        raise ValueError(f"{strategy} requires a generation endpoint")

    key = cache_key(strategy, template, context, params)
    context_hash = hashlib.sha256(context.encode("utf-8")).hexdigest()
    cached = cache.get(key) if cache is not None else None
    if cached is not None:
        return RewrittenQuery(
            qid=qid,
            strategy=strategy,
            raw_generation=cached["raw"],
            final_text=cached["final"],
            cache_hit=True,
        )

    prompt = render_prompt(template, context)
    raw = generate(endpoint, prompt, params, client=client)
    if strategy == "gure":
        final = _strip_scaffolding(raw)
    else:
        pseudo = parse_cot_output(raw) if strategy == "q2d_cot" else raw
        pseudo = _strip_scaffolding(pseudo)
        final = f"{context} {pseudo}"
    if cache is not None:
        cache.put(key, strategy, context_hash, raw, final)
    return RewrittenQuery(qid=qid, strategy=strategy, raw_generation=raw, final_text=final)


def rewrite_many(
    records: list[QueryRecord],
    strategy: str,
    endpoint: Endpoint | None,
    params: DecodingParams,
    *,
    template: PromptTemplate | None = None,
    template_for: "callable | None" = None,
    cache: RewriteCache | None = None,
    client: httpx.Client | None = None,
    max_workers: int = 1,
    lenient: bool = False,
) -> list[RewrittenQuery]:
    """Rewrite a batch of queries, optionally in parallel.

    ``template_for`` overrides ``template`` per record (used by the
    retrieved in-context example mode). In lenient mode a query whose
    generation fails after retries is dropped with a warning instead of
    aborting the batch. Results come back in input order.
    """

    def one(record: QueryRecord) -> RewrittenQuery | None:
        chosen = template_for(record) if template_for is not None else template
        try:
            return rewrite(
                strategy,
                record.context,
                endpoint,
                params,
                qid=record.qid,
                template=chosen,
                cache=cache,
                client=client,
            )
        except EndpointError:
            if not lenient:
                raise
            logger.warning("dropping query %s: generation failed", record.qid)
            return None

    if max_workers <= 1:
        results = [one(record) for record in records]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, records))
    return [r for r in results if r is not None]
