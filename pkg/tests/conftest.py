"""Shared fixtures: synthetic corpora and a mock chat-completions server."""

from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from lexret.corpus import Passage, PassageCollection, QueryRecord


def make_collection(texts: list[str], prefix: str = "p") -> PassageCollection:
    return PassageCollection(
        [Passage(id=f"{prefix}{i}", text=t) for i, t in enumerate(texts)]
    )


def make_queries(collection: PassageCollection, contexts_and_targets) -> list[QueryRecord]:
    return [
        QueryRecord(
            qid=f"q{i}",
            context=context,
            target_id=collection[handle].id,
            target_handle=handle,
        )
        for i, (context, handle) in enumerate(contexts_and_targets)
    ]


def synonym_shift_corpus(n_passages: int, seed: int = 13):
    """Duplicate-free corpus whose queries are vocabulary-shifted
    paraphrases of their targets.

    Each passage mixes common boilerplate words (shared across the whole
    pool, so they discriminate poorly) with passage-unique content
    words. The query keeps the boilerplate but swaps every content word
    for an out-of-vocabulary synonym, which starves a term-matching
    retriever of its signal while leaving the sentence aligned with its
    target token for token.
    """
    rng = random.Random(seed)
    # A 4-word pool keeps boilerplate patterns shared by dozens of
    # passages, so the unsubstituted words cannot identify the target.
    common = [f"comm{t}" for t in range(4)]
    passages = []
    contexts = []
    for i in range(n_passages):
        boilerplate = [rng.choice(common) for _ in range(6)]
        content = [f"uniq{i}x{j}" for j in range(8)]
        words = boilerplate + content
        rng.shuffle(words)
        passages.append(" ".join(words))
        contexts.append(" ".join(f"syn{i}x{w[-1]}" if w.startswith("uniq") else w
                                 for w in words))
    collection = make_collection(passages)
    queries = make_queries(collection, [(ctx, i) for i, ctx in enumerate(contexts)])
    return collection, queries


def run_with_gold_ranks(rank_by_qid, list_len=12):
    """Build a run whose gold passage for qid i sits at the given rank.

    Gold handle for query i is i; filler handles are drawn far above the
    gold range so they never collide.
    """
    from lexret.ranking import RankedList, RetrievalRun

    run = RetrievalRun(name="fixture")
    gold = {}
    for i, (qid, rank) in enumerate(rank_by_qid.items()):
        gold[qid] = i
        entries = []
        filler = 10_000 + 100 * i
        for position in range(1, list_len + 1):
            handle = i if position == rank else filler + position
            entries.append((handle, float(list_len - position)))
        run.add(RankedList(qid=qid, entries=entries))
    return run, gold


class MockChatHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length))
        prompt = payload["messages"][-1]["content"]
        self.server.request_count += 1
        status, text = self.server.reply_fn(prompt)
        body = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": text}}]}
        ).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class MockChatServer:
    """Local HTTP server speaking the chat-completions protocol.

    ``reply_fn(prompt)`` returns (status, text); use it to echo gold
    passages or to simulate failures.
    """

    def __init__(self, reply_fn):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), MockChatHandler)
        self.server.reply_fn = reply_fn
        self.server.request_count = 0
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    @property
    def request_count(self) -> int:
        return self.server.request_count

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def extract_context(prompt: str) -> str:
    """Pull the query context back out of a rendered prompt."""
    marker = "### Preceding Context : "
    start = prompt.rindex(marker) + len(marker)
    end = prompt.index("\n", start)
    return prompt[start:end].strip()


@pytest.fixture
def mock_server_factory():
    def factory(reply_fn):
        return MockChatServer(reply_fn)

    return factory
