"""End-to-end experiment orchestration.

``run_experiment`` wires the full protocol: load the pool, split off the
training share, sample the test trials, rewrite each trial's queries,
retrieve, score, and persist run files plus per-trial and aggregate
reports and a manifest. ``analyze_frequency`` recomputes the metrics of
finished runs under long-tail frequency thresholds.

Reruns with an identical config and a warm rewrite cache write
byte-identical run files and reports; nothing time-dependent lands in
the artifacts (the cache ledger carries the only timestamps).
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

from . import corpus, dense, rewrite, sparse
from .config import ExperimentConfig, derive_seed
from .corpus import FrequencyTable, PassageCollection, QueryRecord
from .eval import (
    MetricReport,
    evaluate_run,
    format_report_table,
    ndcg_at_k,
    recall_at_k,
    stratify_by_frequency,
    sample_trials,
    bleu,
    mean_words,
    rouge_l,
)
from .ranking import RankedList, RetrievalRun, write_run
from .rewrite import DecodingParams, Endpoint, PromptTemplate, RewriteCache, RewrittenQuery
from .textproc import tokenize

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    report: MetricReport
    run_paths: list[Path]
    manifest_path: Path
    report_paths: list[Path]


def _load_pool(config: ExperimentConfig) -> tuple[PassageCollection, list[QueryRecord]]:
    collection = corpus.load_passages(config.passages)
    queries = corpus.load_queries(config.queries, collection, strict=not config.lenient)
    return collection, queries


def _endpoint(config: ExperimentConfig) -> Endpoint | None:
    if not config.endpoint_base_url:
        return None
    return Endpoint(
        base_url=config.endpoint_base_url,
        model=config.endpoint_model,
        api_key_env=config.api_key_env,
        timeout=config.endpoint_timeout,
        max_attempts=config.max_attempts,
    )


def _decoding(config: ExperimentConfig) -> DecodingParams:
    return DecodingParams(
        temperature=config.temperature, top_p=config.top_p, max_tokens=config.max_tokens
    )


def load_examples_file(path: str | Path) -> list[tuple]:
    """Read in-context examples from JSONL with context/passage fields."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            example = [record["context"], record["passage"]]
            if "step1" in record:
                example.append(record["step1"])
            if "step2" in record:
                example.append(record["step2"])
            examples.append(tuple(example))
    return examples


def fixed_random_examples(
    train: list[QueryRecord], collection: PassageCollection, seed: int, count: int = 3
) -> list[tuple[str, str]]:
    """The default in-context examples: a fixed random draw from the
    training split, shared across every query."""
    if len(train) < count:
        raise ValueError(f"need at least {count} training queries for examples, got {len(train)}")
    rng = random.Random(derive_seed(seed, "examples"))
    picked = rng.sample(train, count)
    return [(q.context, collection[q.target_handle].text) for q in picked]


class RetrievedExampleSelector:
    """Per-query in-context examples: the top BM25 matches among training
    contexts, paired with their target passages."""

    def __init__(
        self,
        train: list[QueryRecord],
        collection: PassageCollection,
        strategy: str,
        count: int = 3,
    ):
        self.train = train
        self.collection = collection
        self.strategy = strategy
        self.count = count
        context_pool = PassageCollection(
            [corpus.Passage(id=f"train-{i}", text=q.context) for i, q in enumerate(train)]
        )
        self._index = sparse.build_index(context_pool)

    def __call__(self, record: QueryRecord) -> PromptTemplate:
        ranked = sparse.search(self._index, tokenize(record.context), self.count)
        picks = [self.train[handle] for handle, _ in ranked.entries]
        # Pad from the front of the train split if fewer than count matched.
        for q in self.train:
            if len(picks) >= self.count:
                break
            if q not in picks:
                picks.append(q)
        examples = [(q.context, self.collection[q.target_handle].text) for q in picks]
        if self.strategy == "q2d_cot":
            return PromptTemplate.q2d_cot(examples)
        return PromptTemplate.q2d(examples)


def make_template(
    config: ExperimentConfig,
    train: list[QueryRecord],
    collection: PassageCollection,
) -> tuple[PromptTemplate | None, "RetrievedExampleSelector | None"]:
    """Resolve the prompt template (or per-query selector) for a strategy."""
    strategy = config.strategy
    if strategy == "identity":
        return None, None
    if strategy == "gure":
        return PromptTemplate.gure(), None
    if config.topk_examples:
        return None, RetrievedExampleSelector(train, collection, strategy)
    if config.examples_file:
        examples = load_examples_file(config.examples_file)
        if len(examples) != 3:
            raise ValueError(f"examples file must hold exactly 3 examples, got {len(examples)}")
    else:
        examples = fixed_random_examples(train, collection, config.seed)
    if strategy == "q2d_cot":
        return PromptTemplate.q2d_cot(examples), None
    return PromptTemplate.q2d(examples), None


def retrieve_ranked(
    final_texts: dict[str, str],
    retriever: str,
    *,
    index: sparse.SparseIndex | None = None,
    store: dense.EmbeddingStore | None = None,
    query_vectors=None,
    k: int = 10,
) -> dict[str, RankedList]:
    """Rank the pool for each query text (or query vector, for dense)."""
    lists = {}
    if retriever == "bm25":
        assert index is not None
        for qid, text in final_texts.items():
            lists[qid] = sparse.search(index, tokenize(text), k, qid=qid)
    else:
        assert store is not None and query_vectors is not None
        for qid in final_texts:
            lists[qid] = dense.top_k(store, query_vectors[qid], k, qid=qid)
    return lists


def _generation_pairs(
    rewritten: list[RewrittenQuery],
    by_qid: dict[str, QueryRecord],
    collection: PassageCollection,
) -> tuple[list[str], list[str]]:
    """Candidate texts (generated part only) and their target passages."""
    candidates = []
    references = []
    for rq in rewritten:
        record = by_qid[rq.qid]
        if rq.strategy in ("q2d", "q2d_cot"):
            candidate = rq.final_text[len(record.context):].strip()
        else:
            candidate = rq.final_text
        candidates.append(candidate)
        references.append(collection[record.target_handle].text)
    return candidates, references


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the sampled-trials protocol end to end and persist artifacts."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash()
    label = f"{config.strategy}-{config.retriever}"

    collection, queries = _load_pool(config)
    train, test_pool = corpus.split_queries(
        queries, config.train_fraction, derive_seed(config.seed, "split")
    )
    logger.info("pool: %d passages, %d train / %d test queries",
                len(collection), len(train), len(test_pool))

    index = store = qstore = None
    query_rows: dict[str, int] = {}
    if config.retriever == "bm25":
        index = sparse.build_index(
            collection, sparse.BM25Params(k1=config.k1, b=config.b)
        )
    else:
        store = dense.load_embeddings(config.embeddings)
        if store.n != len(collection):
            raise dense.EmbeddingError(
                f"embeddings hold {store.n} rows but the pool has {len(collection)} passages"
            )
        if config.strategy != "identity":
            raise ValueError(
                "dense retrieval inside 'run' supports the identity strategy only; "
                "rewrite first, embed the rewritten queries externally, then use 'retrieve'"
            )
        if not config.query_embeddings:
            raise ValueError("dense retrieval requires a query embeddings file")
        qstore = dense.load_embeddings(config.query_embeddings)
        if qstore.n != len(queries):
            raise dense.EmbeddingError(
                f"query embeddings hold {qstore.n} rows but there are {len(queries)} queries"
            )
        query_rows = {q.qid: i for i, q in enumerate(queries)}

    template, selector = make_template(config, train, collection)
    endpoint = _endpoint(config)
    params = _decoding(config)
    cache = RewriteCache(config.cache) if config.cache else None

    trials = sample_trials(
        test_pool,
        n=config.n,
        trials=config.trials,
        seed=derive_seed(config.seed, "trials"),
        replace=config.sample_with_replacement,
    )

    per_trial = []
    run_paths = []
    all_rewritten: list[RewrittenQuery] = []
    by_qid = {q.qid: q for q in test_pool}
    cache_hits = cache_misses = 0
    for trial_idx, sampled in enumerate(trials):
        rewritten = rewrite.rewrite_many(
            sampled,
            config.strategy,
            endpoint,
            params,
            template=template,
            template_for=selector,
            cache=cache,
            max_workers=config.max_workers,
            lenient=config.lenient,
        )
        all_rewritten.extend(rewritten)
        if config.strategy != "identity":
            cache_hits += sum(1 for r in rewritten if r.cache_hit)
            cache_misses += sum(1 for r in rewritten if not r.cache_hit)

        rewritten_path = out_dir / f"rewritten_{label}_trial{trial_idx}_{chash}.jsonl"
        with open(rewritten_path, "w", encoding="utf-8") as fh:
            for rq in rewritten:
                fh.write(json.dumps({
                    "qid": rq.qid,
                    "strategy": rq.strategy,
                    "raw_generation": rq.raw_generation,
                    "final_text": rq.final_text,
                    "cache_hit": rq.cache_hit,
                }, ensure_ascii=False) + "\n")

        final_texts = {rq.qid: rq.final_text for rq in rewritten}
        query_vectors = None
        if config.retriever == "dense":
            query_vectors = {qid: qstore.matrix[query_rows[qid]] for qid in final_texts}
        lists = retrieve_ranked(
            final_texts,
            config.retriever,
            index=index,
            store=store,
            query_vectors=query_vectors,
            k=config.top_k,
        )
        run = RetrievalRun(name=f"{label}.seed{config.seed}.{chash}", lists=lists)
        run_path = out_dir / f"run_{label}_trial{trial_idx}_{chash}.trec"
        write_run(run, collection, run_path)
        run_paths.append(run_path)

        gold = {qid: by_qid[qid].target_handle for qid in lists}
        per_trial.append(evaluate_run(run, gold))

    generation = None
    if all_rewritten:
        candidates, references = _generation_pairs(all_rewritten, by_qid, collection)
        generation = {
            "bleu": bleu(candidates, references),
            "rouge_l_f": sum(rouge_l(c, r).f1 for c, r in zip(candidates, references))
            / len(candidates),
            "mean_words": mean_words(candidates),
        }

    report = MetricReport(name=label, per_trial=per_trial, generation=generation)

    report_payload = {"config_hash": chash, "seed": config.seed, **report.to_dict()}
    report_json = out_dir / f"report_{label}_{chash}.json"
    report_json.write_text(json.dumps(report_payload, sort_keys=True, indent=2) + "\n")
    report_txt = out_dir / f"report_{label}_{chash}.txt"
    report_txt.write_text(
        f"config_hash={chash} seed={config.seed}\n" + format_report_table([report]) + "\n"
    )
    # Imported lazily so commands that never plot skip the matplotlib load.
    from .plots import report_figure

    report_png = out_dir / f"report_{label}_{chash}.png"
    report_figure(report, report_png)

    total = cache_hits + cache_misses
    manifest = {
        "config_hash": chash,
        "seed": config.seed,
        "config": config.to_dict(),
        "outputs": sorted(
            str(p.name) for p in [*run_paths, report_json, report_txt, report_png]
        ),
        "cache": {
            "hits": cache_hits,
            "misses": cache_misses,
            "hit_rate": (cache_hits / total) if total else None,
        },
    }
    manifest_path = out_dir / f"manifest_{label}_{chash}.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    return ExperimentResult(
        report=report,
        run_paths=run_paths,
        manifest_path=manifest_path,
        report_paths=[report_json, report_txt, report_png],
    )


def analyze_frequency(
    runs: list[RetrievalRun],
    queries: list[QueryRecord],
    freq: FrequencyTable,
    thresholds: list[float],
) -> list[dict]:
    """Recompute run metrics under each frequency threshold.

    Each run is restricted to the queries whose target sits in the top
    X% most train-frequent targets of that run's own query set, then the
    restricted metrics are averaged across runs. X = 100 reproduces the
    unstratified numbers exactly.
    """
    by_qid = {q.qid: q for q in queries}
    rows = []
    for x in thresholds:
        metric_sums = {"recall_at_1": 0.0, "recall_at_10": 0.0, "ndcg_at_10": 0.0}
        unique_targets: set[int] = set()
        kept_total = 0
        for run in runs:
            pool = [by_qid[qid] for qid in run.lists]
            kept = stratify_by_frequency(pool, freq, x)
            kept_qids = {q.qid for q in kept}
            sub = RetrievalRun(
                name=run.name,
                lists={qid: rl for qid, rl in run.lists.items() if qid in kept_qids},
            )
            gold = {q.qid: q.target_handle for q in kept}
            metric_sums["recall_at_1"] += recall_at_k(sub, gold, 1)
            metric_sums["recall_at_10"] += recall_at_k(sub, gold, 10)
            metric_sums["ndcg_at_10"] += ndcg_at_k(sub, gold, 10)
            unique_targets.update(q.target_handle for q in kept)
            kept_total += len(kept)
        rows.append({
            "x_percent": x,
            "recall_at_1": metric_sums["recall_at_1"] / len(runs),
            "recall_at_10": metric_sums["recall_at_10"] / len(runs),
            "ndcg_at_10": metric_sums["ndcg_at_10"] / len(runs),
            "n_unique_targets": len(unique_targets),
            "n_queries": kept_total,
        })
    return rows


def write_threshold_csv(rows: list[dict], path: str | Path, *, header_comment: str = "") -> None:
    """Write the per-threshold rows as CSV, full float precision."""
    columns = ["x_percent", "recall_at_1", "recall_at_10", "ndcg_at_10", "n_unique_targets"]
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in columns) + "\n")
