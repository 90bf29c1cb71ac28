"""Capability-gated evaluation of trained checkpoints.

Classifier checkpoints report label accuracy; generative checkpoints report
perplexity and BLEU; the joint models report all three. Per-example scores
feed the pairwise significance tests.
"""

from __future__ import annotations

from typing import Sequence

import torch

from .classifiers import accuracy as batch_accuracy
from .concvae import CVAEGenerator
from .corpus import Quadruplet, Vocabulary, encode_sequence, make_batches
from .interaction import InteractionModel
from .metrics import bleu, perplexity, wilcoxon_signed_rank
from .seq2seq import Seq2SeqGenerator
from .training import CLASSIFIER_MODEL_KINDS, TrainSettings


def metric_names_for(model_kind: str) -> tuple[str, ...]:
    if model_kind in CLASSIFIER_MODEL_KINDS:
        return ("accuracy",)
    if model_kind.startswith("interaction"):
        return ("accuracy", "perplexity", "bleu")
    return ("perplexity", "bleu")


def _decode_one(
    model: torch.nn.Module, record: Quadruplet, vocab: Vocabulary, max_len: int
) -> list[int]:
    premise = encode_sequence(vocab, record.premise, max_len)
    hypothesis = encode_sequence(vocab, record.hypothesis, max_len)
    if isinstance(model, InteractionModel):
        return model.step_one(premise, hypothesis, max_len=max_len).explanation
    if isinstance(model, CVAEGenerator):
        return model.generate(premise, hypothesis, max_len=max_len)
    if isinstance(model, Seq2SeqGenerator):
        src_premise = premise if model.mode == "full" else None
        return model.greedy_decode(src_premise, hypothesis, max_len=max_len)
    raise TypeError(f"{type(model).__name__} cannot generate explanations")


def decode_corpus(
    model: torch.nn.Module,
    corpus: Sequence[Quadruplet],
    vocab: Vocabulary,
    max_len: int = 25,
) -> list[tuple[str, ...]]:
    """Greedy explanation per record, in input order, as token tuples."""
    model.eval()
    return [
        vocab.decode(_decode_one(model, record, vocab, max_len))
        for record in corpus
    ]


def label_accuracy(
    model: torch.nn.Module,
    corpus: Sequence[Quadruplet],
    vocab: Vocabulary,
    settings: TrainSettings,
) -> float:
    model.eval()
    if isinstance(model, InteractionModel):
        scores = per_example_correct(model, corpus, vocab, settings.max_len)
        return 100.0 * sum(scores) / len(scores)
    batches = make_batches(
        corpus, vocab, settings.batch_size, seed=0,
        max_len=settings.max_len, shuffle=False,
    )
    total, count = 0.0, 0
    with torch.no_grad():
        for batch in batches:
            total += batch_accuracy(model(batch), batch.labels) * batch.size
            count += batch.size
    return 100.0 * total / count


def per_example_correct(
    model: torch.nn.Module,
    corpus: Sequence[Quadruplet],
    vocab: Vocabulary,
    max_len: int = 25,
) -> list[float]:
    """0/1 correctness per record, the classifier pairing score."""
    from .corpus import LABEL_TO_ID

    model.eval()
    out = []
    with torch.no_grad():
        if isinstance(model, InteractionModel):
            for record in corpus:
                premise = encode_sequence(vocab, record.premise, max_len)
                hypothesis = encode_sequence(vocab, record.hypothesis, max_len)
                result = model.step_one(premise, hypothesis, max_len=max_len)
                out.append(float(result.label_id == LABEL_TO_ID[record.label]))
        else:
            batches = make_batches(corpus, vocab, 16, seed=0, max_len=max_len, shuffle=False)
            for batch in batches:
                preds = model(batch).argmax(dim=-1)
                out.extend((preds == batch.labels).to(torch.float64).tolist())
    return out


def per_example_token_ce(
    model: torch.nn.Module,
    corpus: Sequence[Quadruplet],
    vocab: Vocabulary,
    max_len: int = 25,
) -> list[float]:
    """Mean token cross-entropy per record, the generator pairing score."""
    model.eval()
    out = []
    with torch.no_grad():
        for record in corpus:
            batches = make_batches([record], vocab, 1, seed=0, max_len=max_len, shuffle=False)
            ce, n = model.token_cross_entropy(batches[0])
            out.append(float(ce) / n)
    return out


def evaluate_model(
    model: torch.nn.Module,
    model_kind: str,
    corpus: Sequence[Quadruplet],
    vocab: Vocabulary,
    settings: TrainSettings | None = None,
) -> dict[str, float]:
    """All applicable metrics for one frozen model on a 3-reference corpus."""
    settings = settings or TrainSettings()
    metrics: dict[str, float] = {}
    names = metric_names_for(model_kind)
    if "accuracy" in names:
        metrics["accuracy"] = label_accuracy(model, corpus, vocab, settings)
    if "perplexity" in names:
        batches = make_batches(
            corpus, vocab, settings.batch_size, seed=0,
            max_len=settings.max_len, shuffle=False,
        )
        metrics["perplexity"] = perplexity(model, batches)
    if "bleu" in names:
        hypotheses = decode_corpus(model, corpus, vocab, settings.max_len)
        references = [record.explanations for record in corpus]
        metrics["bleu"] = bleu(hypotheses, references).score
    return metrics


def pairwise_significance(
    per_family_scores: dict[str, list[float]],
) -> list[tuple[str, str, str, float | None]]:
    """Wilcoxon over paired per-example scores for every family pair."""
    families = sorted(per_family_scores)
    results = []
    for i, fam_a in enumerate(families):
        for fam_b in families[i + 1 :]:
            a, b = per_family_scores[fam_a], per_family_scores[fam_b]
            if len(a) != len(b):
                continue
            test = wilcoxon_signed_rank(a, b)
            results.append((fam_a, fam_b, "per_example", test.p_value))
    return results
