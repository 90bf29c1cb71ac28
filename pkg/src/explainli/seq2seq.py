"""Non-probabilistic explanation generation baselines.

Two modes share one architecture: "full" encodes the concatenated
premise+hypothesis pair, "agnostic" encodes the hypothesis alone. Decoding
is greedy argmax with ties broken toward the lowest token id, which makes
generation a total deterministic function of the frozen parameters.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .corpus import BOS_ID, EOS_ID, PAD_ID, Batch
from .transformer import (
    Decoder,
    Encoder,
    ModelConfig,
    SequenceStates,
    TokenEmbedding,
    concat_pair,
    single_segment_positions,
)

GENERATION_MODES = ("full", "agnostic")


def argmax_lowest_id(logits: torch.Tensor) -> int:
    """Index of the maximum logit; ties resolve to the lowest token id."""
    best = logits.max()
    return int((logits == best).nonzero(as_tuple=False)[0, 0])


class Seq2SeqGenerator(nn.Module):
    """Teacher-forced encoder-decoder mapping an NLI input to its explanation."""

    def __init__(self, config: ModelConfig, mode: str = "full"):
        super().__init__()
        if mode not in GENERATION_MODES:
            raise ValueError(f"unknown generation mode {mode!r}")
        self.config = config
        self.mode = mode
        self.src_embedding = TokenEmbedding(config)
        self.encoder = Encoder(config)
        self.tgt_embedding = TokenEmbedding(config)
        self.decoder = Decoder(config)
        self.out_proj = nn.Linear(config.hidden, config.vocab_size)

    def encode_source(
        self,
        premise: torch.Tensor | None,
        premise_mask: torch.Tensor | None,
        hypothesis: torch.Tensor,
        hypothesis_mask: torch.Tensor,
    ) -> SequenceStates:
        if self.mode == "full":
            if premise is None:
                raise ValueError("full generation requires a premise")
            ids, mask, positions = concat_pair(
                premise, premise_mask, hypothesis, hypothesis_mask, self.config.max_pos
            )
        else:
            ids, mask = hypothesis, hypothesis_mask
            positions = single_segment_positions(ids, self.config.max_pos)
        return self.encoder(SequenceStates(self.src_embedding(ids, positions), mask))

    def decode_logits(
        self, prefix: torch.Tensor, prefix_mask: torch.Tensor, memory: SequenceStates
    ) -> torch.Tensor:
        positions = single_segment_positions(prefix, self.config.max_pos)
        states = SequenceStates(self.tgt_embedding(prefix, positions), prefix_mask)
        return self.out_proj(self.decoder(states, memory))

    def _reference_loss(
        self, memory: SequenceStates, explanation: torch.Tensor
    ) -> torch.Tensor:
        prefix = explanation[:, :-1]
        target = explanation[:, 1:]
        logits = self.decode_logits(prefix, prefix.ne(PAD_ID), memory)
        return F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]),
            target.reshape(-1),
            ignore_index=PAD_ID,
        )

    def generation_loss(self, batch: Batch) -> torch.Tensor:
        """Token cross-entropy of the explanation, averaged over references."""
        memory = self.encode_source(
            batch.premise, batch.premise_mask, batch.hypothesis, batch.hypothesis_mask
        )
        losses = [
            self._reference_loss(memory, batch.explanations[:, r])
            for r in range(batch.n_references)
        ]
        return torch.stack(losses).mean()

    def token_cross_entropy(self, batch: Batch) -> tuple[torch.Tensor, int]:
        """Summed cross-entropy and token count over every reference, for perplexity."""
        memory = self.encode_source(
            batch.premise, batch.premise_mask, batch.hypothesis, batch.hypothesis_mask
        )
        total = torch.zeros((), dtype=torch.float64)
        count = 0
        for r in range(batch.n_references):
            explanation = batch.explanations[:, r]
            prefix, target = explanation[:, :-1], explanation[:, 1:]
            logits = self.decode_logits(prefix, prefix.ne(PAD_ID), memory)
            total = total + F.cross_entropy(
                logits.reshape(-1, logits.shape[-1]),
                target.reshape(-1),
                ignore_index=PAD_ID,
                reduction="sum",
            ).to(torch.float64)
            count += int(target.ne(PAD_ID).sum())
        return total, count

    def greedy_decode(
        self,
        premise_ids: list[int] | None,
        hypothesis_ids: list[int],
        max_len: int = 25,
    ) -> list[int]:
        """Greedy rollout from <bos>; returns generated ids without specials."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        max_len = min(max_len, self.config.max_pos)
        premise = hypothesis = premise_mask = hypothesis_mask = None
        if premise_ids is not None:
            premise = torch.tensor([premise_ids], dtype=torch.long)
            premise_mask = premise.ne(PAD_ID)
        hypothesis = torch.tensor([hypothesis_ids], dtype=torch.long)
        hypothesis_mask = hypothesis.ne(PAD_ID)
        with torch.no_grad():
            memory = self.encode_source(
                premise, premise_mask, hypothesis, hypothesis_mask
            )
            return greedy_rollout(self, memory, max_len)


def greedy_rollout(model: nn.Module, memory: SequenceStates, max_len: int) -> list[int]:
    """Shared greedy loop: extend from <bos> until <eos> or the length cap."""
    prefix = [BOS_ID]
    generated: list[int] = []
    with torch.no_grad():
        while len(prefix) < max_len:
            ids = torch.tensor([prefix], dtype=torch.long)
            logits = model.decode_logits(ids, ids.ne(PAD_ID), memory)
            token = argmax_lowest_id(logits[0, -1])
            if token == EOS_ID:
                break
            generated.append(token)
            prefix.append(token)
    return generated
