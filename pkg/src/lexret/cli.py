"""Command-line front end.

Subcommands follow the pipeline stages: ingest, index, embed-import,
rewrite, retrieve, eval, stratify, stats, and the composite run. Logs go
to stderr, data goes to files, and reports print to stdout as a plain
table or as JSON with ``--json``.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import LexretError, corpus, dense, sparse
from .config import ConfigError, ExperimentConfig, derive_seed
from .corpus import CorpusError
from .eval import (
    MetricReport,
    evaluate_run,
    format_report_table,
    bleu,
    mean_words,
    ndcg_per_query,
    paired_t_test,
    rouge_l,
)
from .pipeline import (
    analyze_frequency,
    make_template,
    run_experiment,
    write_threshold_csv,
)
from .ranking import RetrievalRun, read_run, write_run
from .rewrite import (
    DecodingParams,
    Endpoint,
    EndpointError,
    RewriteCache,
    RewrittenQuery,
    rewrite_many,
)
from .textproc import tokenize

logger = logging.getLogger("lexret")

# Exit codes by failure class.
_EXIT_DATA = 2       # corpus / config / file format problems
_EXIT_ENDPOINT = 3   # generation endpoint failures
_EXIT_OTHER = 1


def _fail(exc: Exception) -> None:
    logger.error("%s", exc)
    if isinstance(exc, (CorpusError, ConfigError, sparse.IndexFormatError,
                        dense.EmbeddingError, OSError)):
        sys.exit(_EXIT_DATA)
    if isinstance(exc, EndpointError):
        sys.exit(_EXIT_ENDPOINT)
    sys.exit(_EXIT_OTHER)


@click.group()
@click.option("--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Legal passage retrieval experiment engine."""
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--fmt", default="jsonl", type=click.Choice(["jsonl", "csv"]))
@click.option("--id-field", default="id")
@click.option("--text-field", default="text")
@click.option("--qid-field", default="qid")
@click.option("--context-field", default="context")
@click.option("--target-field", default="target_id")
@click.option("--lenient", is_flag=True, help="Skip queries with unresolvable targets.")
@click.option("--out-passages", type=click.Path(), default=None)
@click.option("--out-queries", type=click.Path(), default=None)
def ingest(passages, queries, fmt, id_field, text_field, qid_field, context_field,
           target_field, lenient, out_passages, out_queries):
    """Validate raw data and write canonical JSONL."""
    try:
        collection = corpus.load_passages(
            passages, fmt, id_field=id_field, text_field=text_field
        )
        records = corpus.load_queries(
            queries, collection, fmt, strict=not lenient,
            qid_field=qid_field, context_field=context_field, target_field=target_field,
        )
        if out_passages:
            corpus.save_passages(collection, out_passages)
        if out_queries:
            corpus.save_queries(records, out_queries)
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({"n_passages": len(collection), "n_queries": len(records)}))


@main.command()
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--k1", default=1.5, show_default=True)
@click.option("--b", default=0.75, show_default=True)
def index(passages, out, k1, b):
    """Build and persist the BM25 index."""
    try:
        collection = corpus.load_passages(passages)
        idx = sparse.build_index(collection, sparse.BM25Params(k1=k1, b=b))
        sparse.save_index(idx, out)
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({"n_docs": idx.n_docs, "n_terms": len(idx.postings)}))


@main.command("embed-import")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--normalized", is_flag=True,
              help="Mark a .npy input as already unit-normalized.")
def embed_import(input_path, passages, out, normalized):
    """Validate external embeddings and write the binary store.

    Accepts an existing EMB1 file or a raw .npy matrix with one row per
    passage handle.
    """
    try:
        collection = corpus.load_passages(passages)
        if str(input_path).endswith(".npy"):
            matrix = np.load(input_path)
            dense.save_embeddings(matrix, out, normalized=normalized)
            store = dense.load_embeddings(out)
        else:
            store = dense.load_embeddings(input_path)
            dense.save_embeddings(store.matrix, out, normalized=True)
        if store.n != len(collection):
            raise dense.EmbeddingError(
                f"embeddings hold {store.n} rows but the pool has {len(collection)} passages"
            )
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({"n": store.n, "dim": store.dim}))


def _experiment_config(config_path, overrides) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_sources(config_path, overrides)
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)


_shared_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None),
    click.option("--passages", default=None),
    click.option("--queries", default=None),
    click.option("--train-queries", default=None,
                 help="Separate query file supplying in-context examples."),
    click.option("--output-dir", default=None),
    click.option("--strategy", default=None,
                 type=click.Choice(["identity", "q2d", "q2d_cot", "gure"])),
    click.option("--retriever", default=None, type=click.Choice(["bm25", "dense"])),
    click.option("--embeddings", default=None),
    click.option("--query-embeddings", default=None),
    click.option("--cache", default=None),
    click.option("--examples-file", default=None),
    click.option("--topk-examples", is_flag=True, default=None),
    click.option("--endpoint-base-url", default=None),
    click.option("--endpoint-model", default=None),
    click.option("--api-key-env", default=None),
    click.option("--temperature", type=float, default=None),
    click.option("--top-p", type=float, default=None),
    click.option("--max-tokens", type=int, default=None),
    click.option("--n", type=int, default=None),
    click.option("--trials", type=int, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--train-fraction", type=float, default=None),
    click.option("--k1", type=float, default=None),
    click.option("--b", type=float, default=None),
    click.option("--top-k", type=int, default=None),
    click.option("--lenient", is_flag=True, default=None),
    click.option("--max-workers", type=int, default=None),
]


def _with_shared_options(fn):
    for option in reversed(_shared_options):
        fn = option(fn)
    return fn


@main.command()
@_with_shared_options
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
def run(config_path, as_json, **overrides):
    """Run the full pipeline: sample trials, rewrite, retrieve, evaluate."""
    config = _experiment_config(config_path, overrides)
    try:
        result = run_experiment(config)
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    if as_json:
        click.echo(json.dumps(result.report.to_dict(), sort_keys=True))
    else:
        click.echo(format_report_table([result.report]))
    logger.info("manifest: %s", result.manifest_path)


@main.command("rewrite")
@_with_shared_options
@click.option("--out", required=True, type=click.Path())
def rewrite_cmd(config_path, out, **overrides):
    """Rewrite every query in the input file with the configured strategy.

    In-context examples for the expansion strategies come from
    --examples-file, from --train-queries, or from the train split of
    the input file itself, in that order of preference.
    """
    config = _experiment_config(config_path, overrides)
    try:
        collection = corpus.load_passages(config.passages)
        queries = corpus.load_queries(config.queries, collection, strict=not config.lenient)
        if config.strategy in ("q2d", "q2d_cot") and not config.examples_file:
            if config.train_queries:
                train = corpus.load_queries(
                    config.train_queries, collection, strict=not config.lenient
                )
            else:
                train, _ = corpus.split_queries(
                    queries, config.train_fraction, derive_seed(config.seed, "split")
                )
        else:
            train = []
        template, selector = make_template(config, train, collection)
        endpoint = None
        if config.endpoint_base_url:
            endpoint = Endpoint(
                base_url=config.endpoint_base_url,
                model=config.endpoint_model,
                api_key_env=config.api_key_env,
                timeout=config.endpoint_timeout,
                max_attempts=config.max_attempts,
            )
        params = DecodingParams(
            temperature=config.temperature, top_p=config.top_p, max_tokens=config.max_tokens
        )
        cache = RewriteCache(config.cache) if config.cache else None
        rewritten = rewrite_many(
            queries,
            config.strategy,
            endpoint,
            params,
            template=template,
            template_for=selector,
            cache=cache,
            max_workers=config.max_workers,
            lenient=config.lenient,
        )
        with open(out, "w", encoding="utf-8") as fh:
            for rq in rewritten:
                fh.write(json.dumps({
                    "qid": rq.qid,
                    "strategy": rq.strategy,
                    "raw_generation": rq.raw_generation,
                    "final_text": rq.final_text,
                    "cache_hit": rq.cache_hit,
                }, ensure_ascii=False) + "\n")
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({
        "n_rewritten": len(rewritten),
        "cache_hits": sum(1 for r in rewritten if r.cache_hit),
    }))


def _load_rewritten(path: str | Path) -> list[RewrittenQuery]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                out.append(RewrittenQuery(
                    qid=record["qid"],
                    strategy=record["strategy"],
                    raw_generation=record.get("raw_generation", ""),
                    final_text=record["final_text"],
                    cache_hit=record.get("cache_hit", False),
                ))
    return out


@main.command()
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--queries", type=click.Path(exists=True), default=None,
              help="Original queries; their contexts are the search texts.")
@click.option("--rewritten", type=click.Path(exists=True), default=None,
              help="Rewritten-queries JSONL; final_text is the search text.")
@click.option("--retriever", default="bm25", type=click.Choice(["bm25", "dense"]))
@click.option("--index", "index_path", type=click.Path(exists=True), default=None)
@click.option("--embeddings", type=click.Path(exists=True), default=None)
@click.option("--query-embeddings", type=click.Path(exists=True), default=None,
              help="EMB1 rows aligned with the query list order.")
@click.option("--k", default=10, show_default=True)
@click.option("--k1", default=1.5, show_default=True)
@click.option("--b", default=0.75, show_default=True)
@click.option("--run-name", default="lexret")
@click.option("--out", required=True, type=click.Path())
def retrieve(passages, queries, rewritten, retriever, index_path, embeddings,
             query_embeddings, k, k1, b, run_name, out):
    """Retrieve top-k passages for each query into a TREC run file."""
    try:
        collection = corpus.load_passages(passages)
        if rewritten:
            pairs = [(rq.qid, rq.final_text) for rq in _load_rewritten(rewritten)]
        elif queries:
            records = corpus.load_queries(queries, collection)
            pairs = [(q.qid, q.context) for q in records]
        else:
            raise click.UsageError("provide --queries or --rewritten")
        run_obj = RetrievalRun(name=run_name)
        if retriever == "bm25":
            if index_path:
                idx = sparse.load_index(index_path)
            else:
                idx = sparse.build_index(collection, sparse.BM25Params(k1=k1, b=b))
            for qid, text in pairs:
                run_obj.add(sparse.search(idx, tokenize(text), k, qid=qid))
        else:
            if not embeddings or not query_embeddings:
                raise click.UsageError(
                    "dense retrieval needs --embeddings and --query-embeddings"
                )
            store = dense.load_embeddings(embeddings)
            qstore = dense.load_embeddings(query_embeddings)
            if qstore.n != len(pairs):
                raise dense.EmbeddingError(
                    f"query embeddings hold {qstore.n} rows for {len(pairs)} queries"
                )
            for row, (qid, _) in enumerate(pairs):
                run_obj.add(dense.top_k(store, qstore.matrix[row], k, qid=qid))
        write_run(run_obj, collection, out)
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({"n_queries": len(run_obj.lists), "run": str(out)}))


def _gold_for_run(run: RetrievalRun, records) -> dict[str, int]:
    by_qid = {q.qid: q.target_handle for q in records}
    missing = [qid for qid in run.lists if qid not in by_qid]
    if missing:
        raise CorpusError(f"run has qids without gold targets: {missing[:5]}")
    return {qid: by_qid[qid] for qid in run.lists}


@main.command("eval")
@click.option("--run", "run_paths", required=True, multiple=True,
              type=click.Path(exists=True), help="Run file; repeat for trials.")
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--rewritten", multiple=True, type=click.Path(exists=True),
              help="Rewritten JSONL per trial, adds generation metrics.")
@click.option("--compare", type=click.Path(exists=True), default=None,
              help="Second run; adds a paired t-test on per-query metrics.")
@click.option("--text-match", is_flag=True,
              help="Count a retrieved passage as correct when its text equals the gold text.")
@click.option("--out-prefix", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def eval_cmd(run_paths, passages, queries, rewritten, compare, text_match,
             out_prefix, as_json):
    """Score run files: Recall@1/10, nDCG@10, and optional extras."""
    try:
        collection = corpus.load_passages(passages)
        records = corpus.load_queries(queries, collection)
        texts = collection.texts() if text_match else None
        per_trial = []
        name = None
        for path in run_paths:
            run_obj = read_run(path, collection)
            name = name or run_obj.name
            gold = _gold_for_run(run_obj, records)
            per_trial.append(evaluate_run(run_obj, gold, texts=texts))

        generation = None
        if rewritten:
            by_qid = {q.qid: q for q in records}
            candidates, references = [], []
            for path in rewritten:
                for rq in _load_rewritten(path):
                    record = by_qid[rq.qid]
                    if rq.strategy in ("q2d", "q2d_cot"):
                        candidate = rq.final_text[len(record.context):].strip()
                    else:
                        candidate = rq.final_text
                    candidates.append(candidate)
                    references.append(collection[record.target_handle].text)
            generation = {
                "bleu": bleu(candidates, references),
                "rouge_l_f": sum(rouge_l(c, r).f1 for c, r in zip(candidates, references))
                / len(candidates),
                "mean_words": mean_words(candidates),
            }

        report = MetricReport(name=name or "run", per_trial=per_trial, generation=generation)

        ttest = None
        if compare:
            other = read_run(compare, collection)
            base = read_run(run_paths[0], collection)
            shared = sorted(set(base.lists) & set(other.lists))
            if not shared:
                raise CorpusError("compared runs share no qids")
            gold = _gold_for_run(base, records)
            a = ndcg_per_query(base, gold, 10, texts=texts)
            gold_b = _gold_for_run(other, records)
            b_vals = ndcg_per_query(other, gold_b, 10, texts=texts)
            result = paired_t_test([a[q] for q in shared], [b_vals[q] for q in shared])
            ttest = {
                "metric": "ndcg_at_10",
                "t_statistic": result.t_statistic,
                "p_value": result.p_value,
                "n": result.n,
                "significant_at_01": result.significant_at_01,
                "degenerate": result.degenerate,
            }

        payload = report.to_dict()
        if ttest:
            payload["paired_t_test"] = ttest
        if out_prefix:
            Path(f"{out_prefix}.json").write_text(
                json.dumps(payload, sort_keys=True, indent=2) + "\n"
            )
            Path(f"{out_prefix}.txt").write_text(format_report_table([report]) + "\n")
            from .plots import report_figure

            report_figure(report, f"{out_prefix}.png")
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        click.echo(format_report_table([report]))
        if ttest:
            click.echo(
                f"paired t-test (nDCG@10): t={ttest['t_statistic']:.4f} "
                f"p={ttest['p_value']:.6f} n={ttest['n']} "
                f"significant_at_01={ttest['significant_at_01']}"
            )


@main.command()
@click.option("--run", "run_paths", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--train-fraction", default=0.9, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--thresholds", default="10,30,50,70,90,100", show_default=True)
@click.option("--out-prefix", required=True, type=click.Path())
def stratify(run_paths, passages, queries, train_fraction, seed, thresholds, out_prefix):
    """Recompute run metrics across train-frequency thresholds."""
    try:
        collection = corpus.load_passages(passages)
        records = corpus.load_queries(queries, collection)
        train, _ = corpus.split_queries(records, train_fraction, derive_seed(seed, "split"))
        freq = corpus.citation_frequency(train)
        runs = [read_run(path, collection) for path in run_paths]
        xs = [float(x) for x in thresholds.split(",")]
        rows = analyze_frequency(runs, records, freq, xs)
        csv_path = f"{out_prefix}.csv"
        write_threshold_csv(rows, csv_path, header_comment=f"seed={seed}")
        from .plots import threshold_figure

        threshold_figure(rows, f"{out_prefix}.png")
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({"rows": len(rows), "csv": csv_path}))


@main.command()
@click.option("--passages", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--figure", type=click.Path(), default=None,
              help="Also render the citation-frequency distribution.")
def stats(passages, queries, figure):
    """Corpus statistics: pool size, query count, top-1% citation share."""
    try:
        collection = corpus.load_passages(passages)
        records = corpus.load_queries(queries, collection)
        table = corpus.citation_frequency(records)
        share = corpus.top_share(table, 0.01)
        if figure:
            from .plots import frequency_figure

            frequency_figure(table, figure)
    except (LexretError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({
        "n_passages": len(collection),
        "n_queries": len(records),
        "top_1pct_share": share,
    }))


if __name__ == "__main__":
    main()
