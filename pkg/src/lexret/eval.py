"""Evaluation harness: retrieval metrics, generation metrics, trial
sampling, frequency stratification, and paired significance testing.

Each query has exactly one relevant passage, so nDCG uses binary gain
with a log2(rank + 1) discount and an ideal DCG of 1. A retrieved
passage counts as correct only when its handle equals the gold handle;
``text_match=True`` relaxes this to exact text equality for corpora with
near-duplicate passages.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field

from scipy import stats

from . import LexretError
from .corpus import FrequencyTable, QueryRecord
from .ranking import RetrievalRun
from .textproc import ngrams, tokenize


class EvalError(LexretError):
    """Raised for inconsistent evaluation inputs."""


# ---------------------------------------------------------------------------
# Retrieval metrics
# ---------------------------------------------------------------------------


def _gold_rank(run: RetrievalRun, gold: dict[str, int], qid: str,
               texts: list[str] | None) -> int | None:
    if qid not in gold:
        raise EvalError(f"no gold target for qid {qid!r}")
    ranked = run.lists[qid]
    if texts is None:
        return ranked.rank_of(gold[qid])
    gold_text = texts[gold[qid]]
    for rank, (handle, _) in enumerate(ranked.entries, start=1):
        if texts[handle] == gold_text:
            return rank
    return None


def recall_per_query(
    run: RetrievalRun, gold: dict[str, int], k: int, *, texts: list[str] | None = None
) -> dict[str, float]:
    """1.0 where the gold passage appears in the first k entries, else 0.0."""
    out = {}
    for qid in run.lists:
        rank = _gold_rank(run, gold, qid, texts)
        out[qid] = 1.0 if rank is not None and rank <= k else 0.0
    return out


def ndcg_per_query(
    run: RetrievalRun, gold: dict[str, int], k: int, *, texts: list[str] | None = None
) -> dict[str, float]:
    """1 / log2(rank + 1) where the gold passage ranks within k, else 0."""
    out = {}
    for qid in run.lists:
        rank = _gold_rank(run, gold, qid, texts)
        out[qid] = 1.0 / math.log2(rank + 1) if rank is not None and rank <= k else 0.0
    return out


def recall_at_k(run: RetrievalRun, gold: dict[str, int], k: int,
                *, texts: list[str] | None = None) -> float:
    """Fraction of queries whose gold passage appears in the top k."""
    if not run.lists:
        raise EvalError(f"run {run.name!r} is empty")
    per_query = recall_per_query(run, gold, k, texts=texts)
    return sum(per_query.values()) / len(per_query)


def ndcg_at_k(run: RetrievalRun, gold: dict[str, int], k: int,
              *, texts: list[str] | None = None) -> float:
    """Mean single-relevant nDCG at k over the run's queries."""
    if not run.lists:
        raise EvalError(f"run {run.name!r} is empty")
    per_query = ndcg_per_query(run, gold, k, texts=texts)
    return sum(per_query.values()) / len(per_query)


# ---------------------------------------------------------------------------
# Trial sampling and long-tail stratification
# ---------------------------------------------------------------------------


def sample_trials(
    test_pool: list[QueryRecord],
    n: int = 10000,
    trials: int = 3,
    seed: int = 0,
    *,
    replace: bool = False,
) -> list[list[QueryRecord]]:
    """Draw ``trials`` samples of size ``n`` from the test pool.

    Sampling is without replacement within a trial by default and
    independent across trials; each trial draws from its own seeded
    stream so results are reproducible per (seed, trial index).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not replace and n > len(test_pool):
        raise EvalError(
            f"cannot sample {n} queries without replacement from a pool of {len(test_pool)}"
        )
    subsets = []
    for trial in range(trials):
        rng = random.Random(f"{seed}:trial:{trial}")
        if replace:
            subsets.append(rng.choices(test_pool, k=n))
        else:
            subsets.append(rng.sample(test_pool, n))
    return subsets


def stratify_by_frequency(
    test_pool: list[QueryRecord], freq: FrequencyTable, x_percent: float
) -> list[QueryRecord]:
    """Keep test queries whose target is among the top X% most frequent
    passages, ranked by training-set citation count.

    Targets unseen in training count as frequency 0; ties break by
    ascending handle. X = 100 returns the pool unchanged, in order.
    """
    if not test_pool:
        raise EvalError("cannot stratify an empty query pool")
    if not 0.0 < x_percent <= 100.0:
        raise ValueError(f"x_percent must be in (0, 100], got {x_percent}")
    distinct = sorted(
        {q.target_handle for q in test_pool},
        key=lambda h: (-freq.counts.get(h, 0), h),
    )
    keep = set(distinct[: math.ceil(x_percent / 100.0 * len(distinct))])
    return [q for q in test_pool if q.target_handle in keep]


# ---------------------------------------------------------------------------
# Paired significance testing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    p_value: float
    n: int
    significant_at_01: bool
    degenerate: bool = False


def paired_t_test(metric_a: list[float], metric_b: list[float]) -> TTestResult:
    """Two-tailed paired t-test over per-query metric values.

    All-zero differences are degenerate (p = 1.0, flagged); nonzero mean
    with zero variance is the opposite limit (p = 0.0, flagged).
    """
    if len(metric_a) != len(metric_b):
        raise EvalError(f"paired samples differ in length: {len(metric_a)} vs {len(metric_b)}")
    n = len(metric_a)
    if n < 2:
        raise EvalError(f"need at least 2 pairs, got {n}")
    diffs = [a - b for a, b in zip(metric_a, metric_b)]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    sd = math.sqrt(var)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n, False, degenerate=True)
        t = math.copysign(math.inf, mean)
        return TTestResult(t, 0.0, n, True, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), n - 1))
    return TTestResult(t, p, n, p < 0.01)


# ---------------------------------------------------------------------------
# Generation similarity metrics
# ---------------------------------------------------------------------------

_BLEU_EPS = 1e-9


def bleu(candidates: list[str], references: list[str]) -> float:
    """Corpus BLEU with n = 1..4, uniform weights, and brevity penalty.

    Modified n-gram precisions are pooled over the corpus; a zero pooled
    precision is replaced by 1e-9 so texts with no 4-gram overlap still
    score finitely. Orders for which the candidate corpus has no n-grams
    at all are undefined and drop out of the geometric mean, so a
    single-word identity pair still scores 1.0.
    """
    if not candidates:
        raise EvalError("bleu of an empty corpus")
    if len(candidates) != len(references):
        raise EvalError(
            f"candidate/reference counts differ: {len(candidates)} vs {len(references)}"
        )
    cand_tokens = [tokenize(c) for c in candidates]
    ref_tokens = [tokenize(r) for r in references]
    log_precisions = []
    for n in range(1, 5):
        matched = 0
        total = 0
        for cand, ref in zip(cand_tokens, ref_tokens):
            cand_counts = Counter(ngrams(cand, n))
            ref_counts = Counter(ngrams(ref, n))
            matched += sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
            total += sum(cand_counts.values())
        if total == 0:
            continue
        log_precisions.append(math.log(matched / total if matched > 0 else _BLEU_EPS))
    c = sum(len(t) for t in cand_tokens)
    r = sum(len(t) for t in ref_tokens)
    if c == 0 or not log_precisions:
        return 0.0
    brevity = math.exp(1.0 - r / c) if c < r else 1.0
    return brevity * math.exp(sum(log_precisions) / len(log_precisions))


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _lcs_length(a: list[str], b: list[str]) -> int:
    # Rolling single-row DP; O(len(a) * len(b)) time, O(len(b)) space.
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            curr[j] = prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """ROUGE-L precision, recall, and F1 over token sequences."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = _lcs_length(cand, ref)
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    f1 = 2 * precision * recall / (precision + recall) if lcs else 0.0
    return RougeScore(precision, recall, f1)


def mean_words(texts: list[str]) -> float:
    """Mean whitespace-token count."""
    if not texts:
        raise EvalError("mean_words of an empty list")
    return sum(len(t.split()) for t in texts) / len(texts)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

TRIAL_METRICS = ("recall_at_1", "recall_at_10", "ndcg_at_10")


def evaluate_run(
    run: RetrievalRun, gold: dict[str, int], *, texts: list[str] | None = None
) -> dict[str, float]:
    """Standard per-trial metric block for one run."""
    return {
        "recall_at_1": recall_at_k(run, gold, 1, texts=texts),
        "recall_at_10": recall_at_k(run, gold, 10, texts=texts),
        "ndcg_at_10": ndcg_at_k(run, gold, 10, texts=texts),
        "n_queries": len(run.lists),
    }


@dataclass
class MetricReport:
    """Per-trial metrics with their mean and standard deviation.

    Standard deviation is the sample deviation (ddof 1) over trials, 0.0
    for a single trial. The optional generation block carries corpus
    BLEU, mean ROUGE-L F1, and mean word counts of the rewritten queries.
    """

    name: str
    per_trial: list[dict[str, float]]
    generation: dict[str, float] | None = None
    mean: dict[str, float] = field(init=False)
    std: dict[str, float] = field(init=False)

    def __post_init__(self):
        if not self.per_trial:
            raise EvalError("report needs at least one trial")
        self.mean = {}
        self.std = {}
        for key in TRIAL_METRICS:
            values = [trial[key] for trial in self.per_trial]
            m = sum(values) / len(values)
            self.mean[key] = m
            if len(values) > 1:
                self.std[key] = math.sqrt(sum((v - m) ** 2 for v in values) / (len(values) - 1))
            else:
                self.std[key] = 0.0

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "per_trial": self.per_trial,
            "mean": self.mean,
            "std": self.std,
        }
        if self.generation is not None:
            out["generation"] = self.generation
        return out


def format_report_table(reports: list[MetricReport]) -> str:
    """Plain-text table with the usual R @ 1 / R @ 10 / nDCG @ 10 columns.

    Values are percentages, mean over trials, with the trial standard
    deviation in parentheses when more than one trial ran.
    """
    header = f"{'Method':<28} {'R @ 1':>14} {'R @ 10':>14} {'nDCG @ 10':>14}"
    lines = [header, "-" * len(header)]
    for report in reports:
        cells = []
        for key in TRIAL_METRICS:
            value = 100.0 * report.mean[key]
            if len(report.per_trial) > 1:
                cells.append(f"{value:>7.2f} ({100.0 * report.std[key]:.2f})")
            else:
                cells.append(f"{value:>14.2f}")
        lines.append(f"{report.name:<28} {cells[0]:>14} {cells[1]:>14} {cells[2]:>14}")
    return "\n".join(lines)
