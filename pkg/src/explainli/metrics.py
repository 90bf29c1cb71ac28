"""Evaluation metrics and statistics.

All metrics are pure over immutable inputs; per-example terms are reduced
in a fixed order so repeated evaluations agree bit-for-bit.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import torch

from .errors import InputDataError

# ---------------------------------------------------------------------------
# Perplexity
# ---------------------------------------------------------------------------


def perplexity(model, batches: Iterable) -> float:
    """exp of the token-level mean cross-entropy over every (example, reference).

    ``model`` must expose token_cross_entropy(batch) -> (ce_sum, token_count);
    per-reference token losses are pooled before exponentiation, so three
    identical references give exactly the single-reference value.
    """
    total = 0.0
    count = 0
    with torch.no_grad():
        for batch in batches:
            ce, n = model.token_cross_entropy(batch)
            total += float(ce)
            count += n
    if count == 0:
        raise InputDataError("perplexity over an empty corpus")
    return math.exp(total / count)


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


@dataclass
class BleuResult:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hypothesis_length: int
    reference_length: int
    variant: str

    def __float__(self) -> float:
        return self.score


def _ngram_counts(tokens: Sequence[str], order: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1)
    )


def _closest_reference_length(
    hyp_len: int, references: Sequence[Sequence[str]]
) -> int:
    # ties break toward the shorter reference
    return min((abs(len(r) - hyp_len), len(r)) for r in references)[1]


def bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[Sequence[str]]],
    max_order: int = 4,
    smoothing: bool = False,
) -> BleuResult:
    """Corpus-level BLEU with multi-reference clipping and brevity penalty.

    No smoothing by default: any defined n-gram precision of zero makes the
    score zero. Orders with no candidate n-grams anywhere in the corpus
    (every hypothesis shorter than the order) are dropped from the geometric
    mean rather than treated as zero. With ``smoothing`` zero numerators are
    floored at 1 (add-one on zero counts).
    """
    if len(hypotheses) != len(references):
        raise InputDataError("hypotheses and references differ in length")
    if not hypotheses:
        raise InputDataError("bleu over an empty corpus")
    for refs in references:
        if not refs:
            raise InputDataError("empty reference set")

    matches = [0] * max_order
    possible = [0] * max_order
    hyp_length = 0
    ref_length = 0
    for hyp, refs in zip(hypotheses, references):
        hyp_length += len(hyp)
        ref_length += _closest_reference_length(len(hyp), refs)
        for order in range(1, max_order + 1):
            hyp_counts = _ngram_counts(hyp, order)
            if not hyp_counts:
                continue
            clip = Counter()
            for ref in refs:
                ref_counts = _ngram_counts(ref, order)
                for gram, count in ref_counts.items():
                    clip[gram] = max(clip[gram], count)
            matches[order - 1] += sum(
                min(count, clip[gram]) for gram, count in hyp_counts.items()
            )
            possible[order - 1] += sum(hyp_counts.values())

    precisions: list[float] = []
    log_sum = 0.0
    used_orders = 0
    zero_precision = False
    for order in range(max_order):
        if possible[order] == 0:
            precisions.append(float("nan"))
            continue
        numerator = matches[order]
        if numerator == 0 and smoothing:
            numerator = 1
        p = numerator / possible[order]
        precisions.append(p)
        used_orders += 1
        if p == 0.0:
            zero_precision = True
        else:
            log_sum += math.log(p)

    if hyp_length == 0:
        brevity_penalty = 0.0
    elif hyp_length > ref_length:
        brevity_penalty = 1.0
    else:
        brevity_penalty = math.exp(1.0 - ref_length / hyp_length)

    if zero_precision or used_orders == 0 or hyp_length == 0:
        score = 0.0
    else:
        score = 100.0 * brevity_penalty * math.exp(log_sum / used_orders)
    variant = f"bleu{max_order}" + ("-add1" if smoothing else "-strict")
    return BleuResult(
        score=score,
        precisions=tuple(precisions),
        brevity_penalty=brevity_penalty,
        hypothesis_length=hyp_length,
        reference_length=ref_length,
        variant=variant,
    )


# ---------------------------------------------------------------------------
# Correct@k grading harness
# ---------------------------------------------------------------------------


@dataclass
class AnnotationRecord:
    """Human grading of one generated explanation against required arguments."""

    example_index: int
    required_args: tuple[str, ...]
    annotators: tuple[tuple[str, ...], ...]  # three lists of mentioned args


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    path = Path(path)
    if not path.exists():
        raise InputDataError(f"annotation file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            try:
                annotators = tuple(
                    tuple(doc[f"annotator_{i}"]) for i in (1, 2, 3)
                )
                record = AnnotationRecord(
                    example_index=int(doc["example_index"]),
                    required_args=tuple(doc["required_args"]),
                    annotators=annotators,
                )
            except KeyError as exc:
                raise InputDataError(f"{path}:{lineno}: missing field {exc}") from exc
            records.append(record)
    return records


def correct_at_k(annotations: Sequence[AnnotationRecord], k: int = 100) -> float:
    """Mean over the first k examples of the 3-annotator mean partial score, x100."""
    by_index = {a.example_index: a for a in annotations}
    total = 0.0
    for index in range(k):
        record = by_index.get(index)
        if record is None:
            raise InputDataError(f"annotations missing example {index}")
        required = set(record.required_args)
        if not required:
            raise InputDataError(f"example {index}: empty required-argument list")
        if len(record.annotators) != 3:
            raise InputDataError(f"example {index}: expected 3 annotators")
        scores = []
        for mentions in record.annotators:
            unknown = set(mentions) - required
            if unknown:
                raise InputDataError(
                    f"example {index}: mentions outside required args: {sorted(unknown)}"
                )
            scores.append(len(set(mentions)) / len(required))
        total += sum(scores) / 3.0
    return 100.0 * total / k


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------


@dataclass
class WilcoxonResult:
    p_value: float | None
    statistic: float | None  # W+, the sum of positive-difference ranks
    n: int  # nonzero differences used
    method: str  # "exact", "normal", or "insufficient pairs"

    @property
    def insufficient(self) -> bool:
        return self.method == "insufficient pairs"


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = rank
        i = j + 1
    return ranks


def _exact_two_sided_p(doubled_ranks: list[int], w_doubled: int) -> float:
    # distribution of the doubled positive-rank sum via subset-sum counting
    total = sum(doubled_ranks)
    ways = [0] * (total + 1)
    ways[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            ways[s] += ways[s - r]
    n_patterns = 2 ** len(doubled_ranks)
    p_low = sum(ways[: w_doubled + 1]) / n_patterns
    p_high = sum(ways[w_doubled:]) / n_patterns
    return min(1.0, 2.0 * min(p_low, p_high))


def wilcoxon_signed_rank(
    a: Sequence[float], b: Sequence[float], exact_limit: int = 20
) -> WilcoxonResult:
    """Two-sided paired signed-rank test.

    Zero differences are dropped and ties get mid-ranks. The null
    distribution is exact (all sign patterns) up to ``exact_limit`` nonzero
    pairs and a normal approximation with continuity correction above.
    Fewer than 5 nonzero differences is reported as insufficient.
    """
    if len(a) != len(b):
        raise InputDataError("paired samples differ in length")
    diffs = [x - y for x, y in zip(a, b) if x != y]
    n = len(diffs)
    if n < 5:
        return WilcoxonResult(p_value=None, statistic=None, n=n, method="insufficient pairs")
    ranks = _midranks([abs(d) for d in diffs])
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)

    if n <= exact_limit:
        doubled = [round(2 * r) for r in ranks]
        p = _exact_two_sided_p(doubled, round(2 * w_plus))
        return WilcoxonResult(p_value=p, statistic=w_plus, n=n, method="exact")

    mean = n * (n + 1) / 4.0
    tie_counts = Counter(ranks).values()
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - sum(
        t**3 - t for t in tie_counts
    ) / 48.0
    if variance <= 0:
        return WilcoxonResult(p_value=1.0, statistic=w_plus, n=n, method="normal")
    correction = 0.5 * (1 if w_plus > mean else -1 if w_plus < mean else 0)
    z = (w_plus - mean - correction) / math.sqrt(variance)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(p_value=p, statistic=w_plus, n=n, method="normal")


# ---------------------------------------------------------------------------
# Seed aggregation and reporting
# ---------------------------------------------------------------------------


def mean_std(values: Sequence[float]) -> tuple[float, float | None]:
    """Mean and sample (n-1) standard deviation; std is None for a single value."""
    n = len(values)
    if n == 0:
        raise ValueError("no values")
    mean = sum(values) / n
    if n == 1:
        return mean, None
    variance = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(variance)


def format_mean_std(values: Sequence[float]) -> str:
    mean, std = mean_std(values)
    if std is None:
        return f"{mean:.2f}"
    return f"{mean:.2f} ({std:.2f})"


def aggregate_seeds(runs: Sequence[tuple[int, dict[str, float]]]) -> dict:
    """Per-metric mean/std over per-seed metric maps, with "mean (std)" rendering."""
    if not runs:
        raise ValueError("no runs to aggregate")
    metric_names: list[str] = []
    for _, metrics in runs:
        for name in metrics:
            if name not in metric_names:
                metric_names.append(name)
    out: dict[str, dict] = {}
    for name in metric_names:
        values = [metrics[name] for _, metrics in runs if name in metrics]
        mean, std = mean_std(values)
        out[name] = {
            "mean": mean,
            "std": std,
            "formatted": format_mean_std(values),
            "per_seed": {seed: metrics[name] for seed, metrics in runs if name in metrics},
        }
    return out


@dataclass
class EvalReport:
    """Metric bundle for one or more model families across seeds."""

    models: dict = field(default_factory=dict)  # family -> aggregate dict
    significance: list = field(default_factory=list)  # (family_a, family_b, metric, p)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "models": self.models,
            "significance": [
                {"pair": [a, b], "metric": m, "p_value": p}
                for a, b, m, p in self.significance
            ],
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=2, sort_keys=True)
