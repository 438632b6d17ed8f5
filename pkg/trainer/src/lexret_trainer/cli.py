"""Command-line front end for the training side."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .data import (
    build_sft_dataset_from_files,
    dataset_fingerprint,
    load_passage_texts,
    load_sft_dataset,
    read_jsonl,
    save_sft_dataset,
)
from .retriever import (
    export_embeddings,
    hard_negative_triples,
    train_retriever_contrastive,
    train_retriever_mnrl,
)
from .train import TrainConfig, train_rewriter


@click.group()
@click.option("--verbose", is_flag=True)
def main(verbose: bool):
    """Training utilities for the passage retrieval engine."""
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("build-sft")
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def build_sft(queries, passages, out):
    """Render instruction records from engine corpus files."""
    records = build_sft_dataset_from_files(queries, passages)
    save_sft_dataset(records, out)
    click.echo(json.dumps({
        "n_records": len(records),
        "fingerprint": dataset_fingerprint(records),
    }))


@main.command("train-rewriter")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--resume-from", type=click.Path(exists=True), default=None)
@click.option("--epochs", default=1, show_default=True)
@click.option("--batch-size", default=4, show_default=True)
@click.option("--lr", default=5e-5, show_default=True)
@click.option("--rank", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-seq-len", default=1024, show_default=True)
def train_rewriter_cmd(dataset, out, resume_from, epochs, batch_size, lr, rank,
                       seed, max_seq_len):
    """Fine-tune the rewriter on an SFT dataset."""
    records = load_sft_dataset(dataset)
    config = TrainConfig.rewriter_defaults(
        epochs=epochs, batch_size=batch_size, learning_rate=lr,
        adapter_rank=rank, seed=seed, max_seq_len=max_seq_len,
    )
    result = train_rewriter(config, records, out, resume_from=resume_from)
    click.echo(json.dumps({"checkpoint": str(result.checkpoint_dir), "steps": result.steps}))


@main.command("train-retriever")
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--loss", default="mnrl", type=click.Choice(["mnrl", "contrastive"]))
@click.option("--run-file", type=click.Path(exists=True), default=None,
              help="Engine run file supplying hard negatives (contrastive only).")
@click.option("--out", required=True, type=click.Path(),
              help="Output embedding file for the passage pool.")
@click.option("--epochs", default=3, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--dim", default=64, show_default=True)
@click.option("--margin", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train_retriever_cmd(queries, passages, loss, run_file, out, epochs, batch_size,
                        lr, dim, margin, seed):
    """Fine-tune the retriever encoder and export pool embeddings."""
    query_records = read_jsonl(queries)
    passage_texts = load_passage_texts(passages)
    config = TrainConfig.retriever_defaults(
        epochs=epochs, batch_size=batch_size, learning_rate=lr,
        embedding_dim=dim, margin=margin, seed=seed, loss=loss,
    )
    if loss == "mnrl":
        pairs = [
            (str(q["context"]), passage_texts[str(q["target_id"])])
            for q in query_records if str(q["target_id"]) in passage_texts
        ]
        encoder, curve = train_retriever_mnrl(config, pairs)
    else:
        if not run_file:
            raise click.UsageError("contrastive training needs --run-file for hard negatives")
        triples = hard_negative_triples(run_file, query_records, passage_texts)
        encoder, curve = train_retriever_contrastive(config, triples)
    ordered = [(pid, text) for pid, text in passage_texts.items()]
    n = export_embeddings(encoder, ordered, out)
    click.echo(json.dumps({"n_embeddings": n, "final_loss": curve[-1]}))


@main.command("export-embeddings")
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(exists=True), default=None,
              help="Unused for the bag encoder; reserved for future encoders.")
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--queries", type=click.Path(exists=True), default=None,
              help="Texts used to fit the vocabulary when no checkpoint is given.")
@click.option("--dim", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def export_embeddings_cmd(checkpoint_dir, passages, queries, dim, seed, out):
    """Export pool embeddings from an untrained seeded encoder.

    Useful for smoke-testing the engine's dense path; train-retriever
    exports trained embeddings.
    """
    from .retriever import TextEncoder
    from .tokenizer import WordTokenizer

    passage_texts = load_passage_texts(passages)
    texts = list(passage_texts.values())
    vocab_source = list(texts)
    if queries:
        vocab_source += [str(q["context"]) for q in read_jsonl(queries)]
    tokenizer = WordTokenizer.from_texts(vocab_source)
    encoder = TextEncoder(tokenizer, dim=dim, seed=seed)
    n = export_embeddings(encoder, list(passage_texts.items()), out)
    click.echo(json.dumps({"n_embeddings": n, "dim": dim}))


@main.command()
@click.option("--checkpoint", "checkpoint_dir", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8601, show_default=True)
def serve(checkpoint_dir, host, port):
    """Serve a trained rewriter through the chat-completions shim."""
    import uvicorn

    from .serve import create_app

    uvicorn.run(create_app(Path(checkpoint_dir)), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
