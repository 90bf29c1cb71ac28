"""Label-prediction architectures: separate, mixture, and premise-agnostic encoders."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .corpus import Batch, LABELS
from .transformer import (
    Encoder,
    ModelConfig,
    SequenceStates,
    TokenEmbedding,
    concat_pair,
    single_segment_positions,
)

CLASSIFIER_KINDS = ("separate", "mixture", "premise_agnostic")


class SeparateEncoderClassifier(nn.Module):
    """Two encoders, one per sentence; features [u; v; u-v; u*v] -> affine head.

    With ``abs_diff`` the subtraction block becomes |u-v| instead of u-v.
    """

    kind = "separate"

    def __init__(self, config: ModelConfig, abs_diff: bool = False):
        super().__init__()
        self.config = config
        self.abs_diff = abs_diff
        self.premise_embedding = TokenEmbedding(config)
        self.premise_encoder = Encoder(config)
        self.hypothesis_embedding = TokenEmbedding(config)
        self.hypothesis_encoder = Encoder(config)
        self.head = nn.Linear(4 * config.hidden, len(LABELS))

    def logits(
        self,
        premise: torch.Tensor,
        premise_mask: torch.Tensor,
        hypothesis: torch.Tensor,
        hypothesis_mask: torch.Tensor,
    ) -> torch.Tensor:
        if premise is None:
            raise ValueError("separate classifier requires a premise")
        p_states = self.premise_encoder(
            SequenceStates(self.premise_embedding(premise), premise_mask)
        )
        h_states = self.hypothesis_encoder(
            SequenceStates(self.hypothesis_embedding(hypothesis), hypothesis_mask)
        )
        u = p_states.values[:, 0]  # <bos> position of each sentence
        v = h_states.values[:, 0]
        diff = (u - v).abs() if self.abs_diff else u - v
        features = torch.cat([u, v, diff, u * v], dim=-1)
        return self.head(features)

    def forward(self, batch: Batch) -> torch.Tensor:
        return self.logits(
            batch.premise, batch.premise_mask, batch.hypothesis, batch.hypothesis_mask
        )


class MixtureEncoderClassifier(nn.Module):
    """One encoder over the concatenated pair; readout at the first <bos>."""

    kind = "mixture"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embedding = TokenEmbedding(config)
        self.encoder = Encoder(config)
        self.head = nn.Linear(config.hidden, len(LABELS))

    def logits(
        self,
        premise: torch.Tensor,
        premise_mask: torch.Tensor,
        hypothesis: torch.Tensor,
        hypothesis_mask: torch.Tensor,
    ) -> torch.Tensor:
        if premise is None:
            raise ValueError("mixture classifier requires a premise")
        ids, mask, positions = concat_pair(
            premise, premise_mask, hypothesis, hypothesis_mask, self.config.max_pos
        )
        states = self.encoder(SequenceStates(self.embedding(ids, positions), mask))
        return self.head(states.values[:, 0])

    def forward(self, batch: Batch) -> torch.Tensor:
        return self.logits(
            batch.premise, batch.premise_mask, batch.hypothesis, batch.hypothesis_mask
        )


class PremiseAgnosticClassifier(nn.Module):
    """Encoder over the hypothesis only; the premise never enters the graph."""

    kind = "premise_agnostic"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embedding = TokenEmbedding(config)
        self.encoder = Encoder(config)
        self.head = nn.Linear(config.hidden, len(LABELS))

    def logits(
        self,
        premise: torch.Tensor | None,
        premise_mask: torch.Tensor | None,
        hypothesis: torch.Tensor,
        hypothesis_mask: torch.Tensor,
    ) -> torch.Tensor:
        if hypothesis is None:
            raise ValueError("hypothesis is required")
        positions = single_segment_positions(hypothesis, self.config.max_pos)
        states = self.encoder(
            SequenceStates(self.embedding(hypothesis, positions), hypothesis_mask)
        )
        return self.head(states.values[:, 0])

    def forward(self, batch: Batch) -> torch.Tensor:
        return self.logits(
            None, None, batch.hypothesis, batch.hypothesis_mask
        )


def build_classifier(kind: str, config: ModelConfig, abs_diff: bool = False) -> nn.Module:
    if kind == "separate":
        return SeparateEncoderClassifier(config, abs_diff=abs_diff)
    if kind == "mixture":
        return MixtureEncoderClassifier(config)
    if kind == "premise_agnostic":
        return PremiseAgnosticClassifier(config)
    raise ValueError(f"unknown classifier kind {kind!r}")


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy -log softmax(logits)[label] over the batch."""
    return F.cross_entropy(logits, labels)


def accuracy(logits: torch.Tensor, labels: torch.Tensor) -> float:
    return float((logits.argmax(dim=-1) == labels).to(torch.float64).mean())
