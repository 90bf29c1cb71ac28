"""Quadruplet datasets: ingestion, vocabulary, tokenization, batching.

A quadruplet is one NLI record: premise, hypothesis, label word, and one
(train) or three (val/test) explanations. Everything in this module is a
pure function of its inputs, so corpora and vocabularies can be shared
freely across threads once built.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
import re
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import torch

from .errors import InputDataError

LABELS = ("entailment", "contradiction", "neutral")
LABEL_TO_ID = {label: i for i, label in enumerate(LABELS)}

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)

PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase and split on whitespace; punctuation marks become tokens."""
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Quadruplet:
    """One data record; explanations holds 1 (train) or 3 (val/test) sequences."""

    premise: tuple[str, ...]
    hypothesis: tuple[str, ...]
    label: str
    explanations: tuple[tuple[str, ...], ...]


def validate_quadruplet(record: Quadruplet, split: str) -> str | None:
    """Return a rejection reason, or None if the record is valid for the split."""
    if record.label not in LABELS:
        return f"unknown label {record.label!r}"
    expected = 1 if split == "train" else 3
    if len(record.explanations) != expected:
        return (
            f"expected {expected} explanation(s) for split {split!r}, "
            f"got {len(record.explanations)}"
        )
    if not record.premise:
        return "empty premise after tokenization"
    if not record.hypothesis:
        return "empty hypothesis after tokenization"
    if any(not e for e in record.explanations):
        return "empty explanation after tokenization"
    return None


_DEFAULT_SCHEMA = {
    "premise": "premise",
    "hypothesis": "hypothesis",
    "label": "label",
    "explanation": "explanation",
    "explanation_1": "explanation_1",
    "explanation_2": "explanation_2",
    "explanation_3": "explanation_3",
}


def _record_from_row(row: dict, split: str, schema: dict[str, str]) -> Quadruplet:
    def pick(key: str) -> str:
        column = schema.get(key, _DEFAULT_SCHEMA[key])
        if column not in row or row[column] is None:
            raise KeyError(column)
        return str(row[column])

    if split == "train":
        explanations = (tokenize(pick("explanation")),)
    else:
        explanations = tuple(
            tokenize(pick(f"explanation_{i}")) for i in (1, 2, 3)
        )
    return Quadruplet(
        premise=tokenize(pick("premise")),
        hypothesis=tokenize(pick("hypothesis")),
        label=str(row[schema.get("label", "label")]).strip().lower(),
        explanations=explanations,
    )


def load_quadruplets(
    path: str | Path,
    split: str,
    schema: dict[str, str] | None = None,
    fmt: str | None = None,
    delimiter: str = ",",
    max_reject_fraction: float = 0.01,
) -> list[Quadruplet]:
    """Load a quadruplet dataset from a JSONL or CSV file.

    Records are kept in file order. Invalid records (unknown label, wrong
    explanation count for the split, empty sequences) are rejected with a
    diagnostic on stderr; the whole load fails if more than
    ``max_reject_fraction`` of records are rejected.
    """
    path = Path(path)
    if split not in ("train", "val", "test"):
        raise InputDataError(f"unknown split {split!r}")
    if not path.exists():
        raise InputDataError(f"dataset file not found: {path}")
    schema = schema or {}
    if fmt is None:
        fmt = "csv" if path.suffix.lower() in (".csv", ".tsv") else "jsonl"

    rows: list[dict]
    if fmt == "jsonl":
        rows = []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise InputDataError(f"{path}:{lineno}: bad JSON: {exc}") from exc
    elif fmt == "csv":
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh, delimiter=delimiter))
    else:
        raise InputDataError(f"unknown dataset format {fmt!r}")

    records: list[Quadruplet] = []
    rejected = 0
    for index, row in enumerate(rows):
        try:
            record = _record_from_row(row, split, schema)
        except KeyError as exc:
            rejected += 1
            print(f"reject record {index}: missing field {exc}", file=sys.stderr)
            continue
        reason = validate_quadruplet(record, split)
        if reason is not None:
            rejected += 1
            print(f"reject record {index}: {reason}", file=sys.stderr)
            continue
        records.append(record)

    if rows and rejected / len(rows) > max_reject_fraction:
        raise InputDataError(
            f"{path}: rejected {rejected}/{len(rows)} records "
            f"(> {max_reject_fraction:.0%} allowed)"
        )
    return records


class Vocabulary:
    """Token/id bijection with reserved special ids and a frequency cutoff.

    Ids are deterministic for a given corpus: specials occupy 0..3, the rest
    are ordered by descending corpus frequency with lexicographic tie-break.
    """

    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self.id_to_token: tuple[str, ...] = tuple(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self.id_to_token == other.id_to_token
        )

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> tuple[str, ...]:
        tokens = [self.id_to_token[i] for i in ids]
        if strip_special:
            tokens = [t for t in tokens if t not in SPECIAL_TOKENS]
        return tuple(tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "\n".join(self.id_to_token) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)

    def sha256(self) -> str:
        text = "\n".join(self.id_to_token) + "\n"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_vocabulary(corpus: Sequence[Quadruplet], min_freq: int = 1) -> Vocabulary:
    """Count every token in the corpus and keep those with frequency >= min_freq."""
    if not corpus:
        raise InputDataError("cannot build a vocabulary from an empty corpus")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    for record in corpus:
        counts.update(record.premise)
        counts.update(record.hypothesis)
        for explanation in record.explanations:
            counts.update(explanation)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq and t not in SPECIAL_TOKENS),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(list(SPECIAL_TOKENS) + kept, min_freq=min_freq)


def encode_sequence(
    vocab: Vocabulary, tokens: Sequence[str], max_len: int = 25
) -> list[int]:
    """Encode as <bos> + ids + <eos>, truncating tail tokens to stay within max_len."""
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    ids = [BOS_ID] + [vocab.id_of(t) for t in tokens] + [EOS_ID]
    if len(ids) > max_len:
        ids = ids[: max_len - 1] + [EOS_ID]
    return ids


@dataclass
class Batch:
    """Padded id matrices for one batch, with masks marking real tokens.

    ``explanations`` is [B, R, L] where R is 1 for train batches and 3 for
    val/test batches.
    """

    premise: torch.Tensor
    premise_mask: torch.Tensor
    hypothesis: torch.Tensor
    hypothesis_mask: torch.Tensor
    explanations: torch.Tensor
    explanations_mask: torch.Tensor
    labels: torch.Tensor
    records: tuple[Quadruplet, ...] = field(default_factory=tuple)

    @property
    def size(self) -> int:
        return self.premise.shape[0]

    @property
    def n_references(self) -> int:
        return self.explanations.shape[1]


def pad_id_rows(rows: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad id rows with <pad> to the max row length; mask marks real tokens."""
    width = max(len(r) for r in rows)
    ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
    return ids, ids.ne(PAD_ID)


def _batch_from_records(
    records: Sequence[Quadruplet], vocab: Vocabulary, max_len: int
) -> Batch:
    premise, premise_mask = pad_id_rows(
        [encode_sequence(vocab, r.premise, max_len) for r in records]
    )
    hypothesis, hypothesis_mask = pad_id_rows(
        [encode_sequence(vocab, r.hypothesis, max_len) for r in records]
    )
    n_refs = len(records[0].explanations)
    flat_rows = [
        encode_sequence(vocab, r.explanations[j], max_len)
        for r in records
        for j in range(n_refs)
    ]
    flat_ids, flat_mask = pad_id_rows(flat_rows)
    explanations = flat_ids.view(len(records), n_refs, -1)
    explanations_mask = flat_mask.view(len(records), n_refs, -1)
    labels = torch.tensor([LABEL_TO_ID[r.label] for r in records], dtype=torch.long)
    return Batch(
        premise=premise,
        premise_mask=premise_mask,
        hypothesis=hypothesis,
        hypothesis_mask=hypothesis_mask,
        explanations=explanations,
        explanations_mask=explanations_mask,
        labels=labels,
        records=tuple(records),
    )


def make_batches(
    corpus: Sequence[Quadruplet],
    vocab: Vocabulary,
    batch_size: int,
    seed: int,
    max_len: int = 25,
    shuffle: bool = True,
) -> list[Batch]:
    """Shuffle the corpus as a pure function of seed and cut it into batches.

    The final partial batch is retained, so the batch count is always
    ceil(len(corpus) / batch_size).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(corpus)))
    if shuffle:
        random.Random(seed).shuffle(order)
    if corpus and len({len(r.explanations) for r in corpus}) > 1:
        raise InputDataError("corpus mixes different explanation counts")
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [corpus[i] for i in order[start : start + batch_size]]
        batches.append(_batch_from_records(chunk, vocab, max_len))
    return batches


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------
#
# Templated NLI triples over three verb families. The hypothesis is always
# "<subject> <family verb>", so without the premise it carries no label signal
# unless an artifact marker is planted; the premise verb then decides the
# label through the relation table below.

_SUBJECT_HEADS = (
    "man", "woman", "boy", "girl", "dog", "cat", "teacher", "farmer",
    "nurse", "student", "doctor", "painter", "sailor", "pilot", "chef",
    "runner", "dancer", "barber", "tailor", "miner",
)

_MODIFIERS = (
    ("in", "the", "park"), ("near", "the", "river"), ("at", "the", "beach"),
    ("on", "the", "road"), ("by", "the", "lake"), ("at", "night"),
    ("in", "the", "morning"), ("with", "a", "friend"), ("under", "the", "bridge"),
    ("behind", "the", "house"), ("inside", "the", "barn"), ("along", "the", "trail"),
    ("during", "the", "storm"), ("before", "breakfast"), ("after", "lunch"),
    ("beside", "the", "fence"), ("outside", "the", "shop"), ("around", "the", "square"),
)

_MOVE_VERBS = ("runs", "walks", "jumps", "swims", "dances", "climbs", "skips", "marches")
_REST_VERBS = ("sleeps", "naps", "dozes", "slumbers", "hibernates")
_SPEAK_VERBS = ("talks", "sings", "shouts", "whispers", "chats", "yells", "hums", "mumbles")

_HYPERNYMS = ("moves", "rests", "speaks")

# per hypernym: which premise-verb pools realize each label
_RELATIONS = {
    "moves": {"entailment": _MOVE_VERBS, "contradiction": _REST_VERBS, "neutral": _SPEAK_VERBS},
    "rests": {"entailment": _REST_VERBS, "contradiction": _MOVE_VERBS, "neutral": _SPEAK_VERBS},
    "speaks": {"entailment": _SPEAK_VERBS, "contradiction": _REST_VERBS, "neutral": _MOVE_VERBS},
}

ARTIFACT_MARKERS = {
    "entailment": "surely",
    "contradiction": "hardly",
    "neutral": "possibly",
}


def _explanation_templates(
    label: str, subject: tuple[str, ...], verb: str, hyper: str
) -> tuple[tuple[str, ...], ...]:
    if label == "entailment":
        # every entailment paraphrase mentions the premise verb
        return (
            ("someone", "who", verb, "also", hyper),
            ("a", "person", "who", verb, "always", hyper),
            ("whoever", verb, "must", "also", hyper),
        )
    if label == "contradiction":
        return (
            ("one", "can", "not", verb, "and", hyper, "at", "the", "same", "time"),
            ("nobody", "can", verb, "while", "they", hyper),
            ("it", "is", "impossible", "to", verb, "and", hyper, "together"),
        )
    return (
        ("just", "because", "someone", verb, "does", "not", "mean", "they", hyper),
        ("a", "person", "who", verb, "may", "or", "may", "not", hyper),
        (verb, "says", "nothing", "about", "whether", "one", hyper),
    )


def synth_corpus(
    n: int,
    seed: int,
    split: str = "train",
    artifact_strength: float = 0.0,
) -> list[Quadruplet]:
    """Generate a deterministic, class-balanced templated NLI corpus.

    Train records carry one explanation; val/test records carry three
    paraphrases. With ``artifact_strength`` > 0 a label-revealing marker
    word is appended to that fraction of hypotheses, planting a
    hypothesis-only shortcut of the given strength.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= artifact_strength <= 1.0:
        raise ValueError("artifact_strength must be in [0, 1]")
    rng = random.Random(seed)

    labels = [LABELS[i % 3] for i in range(n)]
    rng.shuffle(labels)

    records: list[Quadruplet] = []
    seen: set[tuple[tuple[str, ...], tuple[str, ...]]] = set()
    for label in labels:
        for _ in range(64):  # retry for distinct (premise, hypothesis) pairs
            subject = ("a", rng.choice(_SUBJECT_HEADS))
            hyper = rng.choice(_HYPERNYMS)
            verb = rng.choice(_RELATIONS[hyper][label])
            modifier = rng.choice(_MODIFIERS)
            premise = subject + (verb,) + modifier
            hypothesis = subject + (hyper,)
            if rng.random() < artifact_strength:
                hypothesis = hypothesis + (ARTIFACT_MARKERS[label],)
            if (premise, hypothesis) not in seen:
                break
        seen.add((premise, hypothesis))
        templates = _explanation_templates(label, subject, verb, hyper)
        if split == "train":
            explanations = (templates[rng.randrange(3)],)
        else:
            explanations = templates
        records.append(
            Quadruplet(
                premise=premise,
                hypothesis=hypothesis,
                label=label,
                explanations=explanations,
            )
        )
    return records


def quadruplet_to_json(record: Quadruplet) -> dict:
    """Render a record in the native JSONL schema (sentences re-joined by spaces)."""
    doc = {
        "premise": " ".join(record.premise),
        "hypothesis": " ".join(record.hypothesis),
        "label": record.label,
    }
    if len(record.explanations) == 1:
        doc["explanation"] = " ".join(record.explanations[0])
    else:
        for i, explanation in enumerate(record.explanations, start=1):
            doc[f"explanation_{i}"] = " ".join(explanation)
    return doc


def save_quadruplets(records: Sequence[Quadruplet], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(quadruplet_to_json(record)) + "\n")


def n_batches(n_records: int, batch_size: int) -> int:
    return math.ceil(n_records / batch_size)
