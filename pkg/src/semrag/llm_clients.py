"""Embedding and generation clients with deterministic offline fallbacks.

Remote clients speak an OpenAI-compatible wire protocol; their offline
twins are pure functions of their inputs, so an offline run is bit-for-bit
reproducible. Selection happens in make_clients: explicit request, the
SEMRAG_OFFLINE=1 environment variable, or missing endpoints all pick the
offline pair.

The offline generator understands the evidence prompt layout documented in
docs/prompt_template.md: it answers by echoing each evidence statement with
its clause citation, which keeps end-to-end answering testable without a
model. The offline summarizer is extractive: the first sentence of the
first line that has sentence punctuation, under a whitespace token budget.

A TokenLedger aggregates token counts and wall time per operation and can
enforce a hard budget.
"""

from __future__ import annotations

import csv
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import requests

from .errors import BudgetExceeded, HttpError
from .vector_align import EMBED_DIM, embed_text

logger = logging.getLogger(__name__)

ENV_EMBED_ENDPOINT = "SEMRAG_EMBED_ENDPOINT"
ENV_LLM_ENDPOINT = "SEMRAG_LLM_ENDPOINT"
ENV_API_KEY_VAR = "SEMRAG_API_KEY_VAR"
ENV_OFFLINE = "SEMRAG_OFFLINE"
DEFAULT_API_KEY_VAR = "SEMRAG_API_KEY"
HTTP_TIMEOUT_SECONDS = 30.0


def count_tokens(text: str) -> int:
    """Whitespace token count, the unit every budget in this package uses."""
    return len(text.split())


# --- ledger -----------------------------------------------------------------

@dataclass
class LedgerEntry:
    op: str
    tokens_in: int
    tokens_out: int
    wall_ms: float


class TokenLedger:
    """Accumulates per-call token usage; optionally enforces a hard budget."""

    def __init__(self, budget_tokens: Optional[int] = None):
        self.budget_tokens = budget_tokens
        self.entries: list[LedgerEntry] = []

    def record(self, op: str, tokens_in: int, tokens_out: int, wall_ms: float) -> None:
        self.entries.append(LedgerEntry(op, tokens_in, tokens_out, wall_ms))
        if self.budget_tokens is not None and self.total_tokens() > self.budget_tokens:
            raise BudgetExceeded(
                f"token budget {self.budget_tokens} exceeded at {self.total_tokens()}"
            )

    def total_tokens(self) -> int:
        return sum(e.tokens_in + e.tokens_out for e in self.entries)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["op", "tokens_in", "tokens_out", "wall_ms"])
            for e in self.entries:
                writer.writerow([e.op, e.tokens_in, e.tokens_out, f"{e.wall_ms:.3f}"])


# --- protocols --------------------------------------------------------------

class EmbedClient(Protocol):
    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class LlmClient(Protocol):
    def generate(self, prompt: str, max_tokens: int = 256) -> str: ...


# --- offline clients --------------------------------------------------------

class OfflineEmbedClient:
    """Hash-based embeddings; identical output for identical input, always."""

    model = "offline-hash-256"

    def __init__(self, dim: int = EMBED_DIM, ledger: Optional[TokenLedger] = None):
        self.dim = dim
        self.ledger = ledger

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        start = time.perf_counter()
        out = [embed_text(t, self.dim).tolist() for t in texts]
        if self.ledger is not None:
            self.ledger.record(
                "embed",
                sum(count_tokens(t) for t in texts),
                0,
                (time.perf_counter() - start) * 1000.0,
            )
        return out


_EVIDENCE_LINE = re.compile(r"^\[\d+\]\s+(.*)\s+\(clause\s+([^,)]+),[^)]*\)$")

NO_EVIDENCE_ANSWER = "no supporting evidence found"

# The relation phrases build_prompt can emit; the offline generator splits
# an evidence line at the first of these to recover the statement's object.
RELATION_MARKERS = (
    " has value under ",
    " is computed as ",
    " summarizes ",
    " states ",
)


def _statement_object(statement: str) -> str:
    """Text after the earliest relation phrase, or the whole statement."""
    earliest = None
    for marker in RELATION_MARKERS:
        pos = statement.find(marker)
        if pos != -1 and (earliest is None or pos < earliest[0]):
            earliest = (pos, marker)
    if earliest is None:
        return statement
    pos, marker = earliest
    return statement[pos + len(marker):]


class OfflineLlmClient:
    """Template-aware generator: answers with the top evidence line's object
    and its clause citation."""

    model = "offline-extractive"

    def __init__(self, ledger: Optional[TokenLedger] = None):
        self.ledger = ledger

    def generate(self, prompt: str, max_tokens: int = 256) -> str:
        start = time.perf_counter()
        answer = NO_EVIDENCE_ANSWER
        for line in prompt.splitlines():
            matched = _EVIDENCE_LINE.match(line.strip())
            if matched:
                answer = (
                    f"{_statement_object(matched.group(1))} "
                    f"(clause {matched.group(2)})"
                )
                break
        tokens = count_tokens(answer)
        if tokens > max_tokens:
            answer = " ".join(answer.split()[:max_tokens])
        if self.ledger is not None:
            self.ledger.record(
                "generate",
                count_tokens(prompt),
                count_tokens(answer),
                (time.perf_counter() - start) * 1000.0,
            )
        return answer


@dataclass
class Summary:
    text: str
    tokens_used: int


_SENTENCE_END = re.compile(r"[.!?]")


def offline_summarize(text: str, budget_tokens: int) -> Summary:
    """First sentence of the first line with sentence punctuation.

    The input is truncated to the token budget first; tokens_used counts
    the tokens actually read, not the summary length.
    """
    tokens = text.split()
    if len(tokens) > budget_tokens:
        text = " ".join(tokens[:budget_tokens])
    used = min(len(tokens), budget_tokens)
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        return Summary("", 0)
    for line in lines:
        matched = _SENTENCE_END.search(line)
        if matched:
            return Summary(line[: matched.end()].strip(), used)
    return Summary(lines[0].strip(), used)


def summarize_with(
    client: Optional[LlmClient], text: str, budget_tokens: int
) -> Summary:
    """Summarize through a client when given one, extractively otherwise."""
    if client is None or isinstance(client, OfflineLlmClient):
        return offline_summarize(text, budget_tokens)
    tokens = text.split()
    if len(tokens) > budget_tokens:
        text = " ".join(tokens[:budget_tokens])
    prompt = f"Summarize the following in one sentence.\n\n{text}"
    return Summary(client.generate(prompt, max_tokens=64), min(len(tokens), budget_tokens))


# --- remote clients ---------------------------------------------------------

def _api_key() -> Optional[str]:
    var = os.environ.get(ENV_API_KEY_VAR, DEFAULT_API_KEY_VAR)
    return os.environ.get(var)


def _post(url: str, payload: dict) -> dict:
    headers = {"Content-Type": "application/json"}
    key = _api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    try:
        response = requests.post(
            url, json=payload, headers=headers, timeout=HTTP_TIMEOUT_SECONDS
        )
    except requests.Timeout as exc:
        raise TimeoutError(f"no response from {url} within {HTTP_TIMEOUT_SECONDS}s") from exc
    if response.status_code != 200:
        raise HttpError(response.status_code, response.text)
    return response.json()


class HttpEmbedClient:
    def __init__(
        self,
        endpoint: str,
        model: str = "text-embedding",
        ledger: Optional[TokenLedger] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.ledger = ledger

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        start = time.perf_counter()
        body = _post(
            f"{self.endpoint}/v1/embeddings",
            {"model": self.model, "input": list(texts)},
        )
        vectors = [row["embedding"] for row in body["data"]]
        if self.ledger is not None:
            self.ledger.record(
                "embed",
                sum(count_tokens(t) for t in texts),
                0,
                (time.perf_counter() - start) * 1000.0,
            )
        return vectors


class HttpLlmClient:
    def __init__(
        self,
        endpoint: str,
        model: str = "chat",
        ledger: Optional[TokenLedger] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.ledger = ledger

    def generate(self, prompt: str, max_tokens: int = 256) -> str:
        start = time.perf_counter()
        body = _post(
            f"{self.endpoint}/v1/chat/completions",
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "max_tokens": max_tokens,
            },
        )
        text = body["choices"][0]["message"]["content"]
        if self.ledger is not None:
            self.ledger.record(
                "generate",
                count_tokens(prompt),
                count_tokens(text),
                (time.perf_counter() - start) * 1000.0,
            )
        return text


# --- selection --------------------------------------------------------------

@dataclass
class Clients:
    embed: EmbedClient
    llm: LlmClient
    offline: bool
    ledger: TokenLedger = field(default_factory=TokenLedger)


def make_clients(
    offline: Optional[bool] = None, ledger: Optional[TokenLedger] = None
) -> Clients:
    """Pick remote clients when endpoints are configured, offline otherwise.

    SEMRAG_OFFLINE=1 forces the offline pair regardless of endpoints; an
    explicit `offline` argument overrides everything.
    """
    ledger = ledger if ledger is not None else TokenLedger()
    embed_endpoint = os.environ.get(ENV_EMBED_ENDPOINT)
    llm_endpoint = os.environ.get(ENV_LLM_ENDPOINT)
    if offline is None:
        offline = (
            os.environ.get(ENV_OFFLINE) == "1"
            or not embed_endpoint
            or not llm_endpoint
        )
    if offline:
        return Clients(
            embed=OfflineEmbedClient(ledger=ledger),
            llm=OfflineLlmClient(ledger=ledger),
            offline=True,
            ledger=ledger,
        )
    return Clients(
        embed=HttpEmbedClient(embed_endpoint, ledger=ledger),
        llm=HttpLlmClient(llm_endpoint, ledger=ledger),
        offline=False,
        ledger=ledger,
    )
