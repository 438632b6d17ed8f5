"""Secondary acceptance suite: loss oracles and the end-to-end contract.

The end-to-end test serves the trained memorizer through the real HTTP
shim and drives the retrieval engine through its CLI only: rewrite,
retrieve, and eval subcommands against the served endpoint.
"""

import json
import math
import random
import socket
import subprocess
import sys
import threading
import time
from contextlib import contextmanager

import pytest
import torch

from lexret_trainer.losses import (
    contrastive_loss,
    mnrl_loss,
    sft_loss_from_logits,
)
from test_losses import finite_difference_grad


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def test_loss_oracles():
    """mnrl hits ln B on uniform matrices to 1e-9, contrastive matches a
    direct formula evaluator on 1,000 random triples, and sft and mnrl
    gradients pass finite-difference checks at 1e-4 relative tolerance."""
    with criterion("Loss oracles (ln B to 1e-9, 1000 contrastive triples, grad checks)"):
        for batch in (2, 4, 8):
            sim = torch.full((batch, batch), 1.234, dtype=torch.float64)
            assert float(mnrl_loss(sim)) == pytest.approx(math.log(batch), abs=1e-9)

        rng = random.Random(99)
        for _ in range(1000):
            distance = rng.uniform(0.0, 3.0)
            label = rng.choice((0, 1))
            margin = rng.uniform(0.1, 2.0)
            expected = 0.5 * (
                label * distance**2 + (1 - label) * max(0.0, margin - distance) ** 2
            )
            got = float(contrastive_loss(distance, label, margin))
            assert got == pytest.approx(expected, abs=1e-12)

        torch.manual_seed(12)
        logits = torch.randn(8, 11, dtype=torch.float64, requires_grad=True)
        targets = torch.randint(0, 11, (8,))
        sft_loss_from_logits(logits, targets).backward()
        numeric = finite_difference_grad(
            lambda x: sft_loss_from_logits(x, targets), logits.detach().clone()
        )
        assert torch.allclose(logits.grad, numeric, rtol=1e-4, atol=1e-7)

        sim = torch.randn(6, 6, dtype=torch.float64, requires_grad=True)
        mnrl_loss(sim).backward()
        numeric = finite_difference_grad(mnrl_loss, sim.detach().clone())
        assert torch.allclose(sim.grad, numeric, rtol=1e-4, atol=1e-7)


def _free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


def _engine(args: list[str]) -> str:
    proc = subprocess.run(
        [sys.executable, "-m", "lexret.cli", *args],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, f"engine failed: {proc.stderr}"
    return proc.stdout


def test_end_to_end_contract(memorizer, tmp_path):
    """The memorizing rewriter behind the shim drives the engine to
    R@1 = 1.0 on its 50 queries over a duplicate-free corpus."""
    with criterion("End-to-end contract (shim-served rewriter, engine R@1 = 1.0, <15 min)"):
        started = time.monotonic()
        import uvicorn

        from lexret_trainer.serve import create_app

        passages = memorizer["passages"]
        queries = memorizer["queries"]
        ppath = tmp_path / "passages.jsonl"
        qpath = tmp_path / "queries.jsonl"
        with open(ppath, "w") as fh:
            for pid, text in passages.items():
                fh.write(json.dumps({"id": pid, "text": text}) + "\n")
        with open(qpath, "w") as fh:
            for query in queries:
                fh.write(json.dumps(query) + "\n")

        port = _free_port()
        server = uvicorn.Server(uvicorn.Config(
            create_app(memorizer["checkpoint"]),
            host="127.0.0.1", port=port, log_level="error",
        ))
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 30
        while not server.started:
            assert time.monotonic() < deadline, "shim did not start"
            time.sleep(0.05)
        try:
            rewritten = tmp_path / "rewritten.jsonl"
            _engine([
                "rewrite", "--passages", str(ppath), "--queries", str(qpath),
                "--strategy", "gure",
                "--endpoint-base-url", f"http://127.0.0.1:{port}/v1",
                "--endpoint-model", "rewriter",
                "--cache", str(tmp_path / "cache.jsonl"),
                "--out", str(rewritten),
            ])
            run_path = tmp_path / "run.trec"
            _engine([
                "retrieve", "--passages", str(ppath), "--rewritten", str(rewritten),
                "--k", "10", "--out", str(run_path), "--run-name", "gure-shim",
            ])
            report = json.loads(_engine([
                "eval", "--run", str(run_path), "--passages", str(ppath),
                "--queries", str(qpath), "--json",
            ]))
        finally:
            server.should_exit = True
            thread.join(timeout=10)

        r1 = report["per_trial"][0]["recall_at_1"]
        assert report["per_trial"][0]["n_queries"] == 50
        assert r1 == 1.0, f"R@1 = {r1}"

        total = memorizer["result"].train_seconds + (time.monotonic() - started)
        assert total < 15 * 60, f"took {total:.0f}s"
        print(f"  train+serve+drive total {total:.0f}s, engine R@1 = {r1}")
