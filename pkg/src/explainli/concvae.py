"""Latent-variable explanation generator.

A shared encoder produces contextual states for the premise+hypothesis pair
and for the explanation; a pooling stage collapses each to a single vector;
affine heads parameterize diagonal-Gaussian prior and posterior over the
latent; the decoder cross-attends over the latent (prepended as one extra
memory position) plus the pair states.

Two pooling kinds are drop-in interchangeable: "concoder" (width-1/2/3
convolutions, max-pool over positions, affine back to model width) and
"bos" (readout of the first <bos> position).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .corpus import BOS_ID, EOS_ID, PAD_ID, Batch
from .seq2seq import greedy_rollout
from .transformer import (
    Decoder,
    Encoder,
    ModelConfig,
    SequenceStates,
    TokenEmbedding,
    concat_pair,
    single_segment_positions,
)

POOLING_KINDS = ("concoder", "bos")
DEFAULT_K_VALUES = (-2.0, -1.0, 0.0, 1.0, 2.0)


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over the latent space (log_std from tanh, so in (-1, 1))."""

    mean: torch.Tensor
    log_std: torch.Tensor

    @property
    def std(self) -> torch.Tensor:
        return self.log_std.exp()

    def detach(self) -> "LatentGaussian":
        return LatentGaussian(self.mean.detach(), self.log_std.detach())


def reparameterize(g: LatentGaussian, eps: torch.Tensor) -> torch.Tensor:
    """z = mean + exp(log_std) * eps."""
    if eps.shape != g.mean.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != {tuple(g.mean.shape)}")
    return g.mean + g.log_std.exp() * eps


def kl_divergence(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over the last dim."""
    if q.mean.shape != p.mean.shape:
        raise ValueError("latent dimension mismatch")
    var_q = (2.0 * q.log_std).exp()
    var_p = (2.0 * p.log_std).exp()
    per_dim = 0.5 * (
        (var_q + (q.mean - p.mean) ** 2) / var_p
        - 1.0
        + 2.0 * (p.log_std - q.log_std)
    )
    return per_dim.sum(dim=-1)


def interpolate_latents(g: LatentGaussian, k_values: tuple[float, ...]) -> list[torch.Tensor]:
    """Diagonal ray through the Gaussian: one latent mean + k*std per k."""
    return [g.mean + float(k) * g.std for k in k_values]


class Concoder(nn.Module):
    """Collapse a sequence of states to one vector via n-gram conv + max-pool.

    Filters of width 1, 2, and 3 span the full hidden width; each filter
    bank is max-pooled over valid positions, the three pooled vectors are
    concatenated and projected back to the hidden width. Sequences shorter
    than 3 real positions are left-padded with a filler vector so every
    filter has at least one window.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        hidden = config.hidden
        self.convs = nn.ModuleList(
            nn.Conv1d(hidden, hidden, kernel_size=w) for w in (1, 2, 3)
        )
        self.affine = nn.Linear(3 * hidden, hidden)

    def forward(self, states: SequenceStates, filler: torch.Tensor) -> torch.Tensor:
        values, mask = states.values, states.mask
        lengths = mask.sum(dim=1)
        deficit = (3 - lengths).clamp(min=0)
        pad_cols = int(deficit.max())
        if pad_cols > 0:
            batch, _, hidden = values.shape
            front = filler.to(values.dtype).expand(batch, pad_cols, hidden)
            values = torch.cat([front, values], dim=1)
            # row i is valid on [pad_cols - deficit_i, pad_cols + length_i)
            col = torch.arange(values.shape[1], device=values.device)
            valid = (col[None, :] >= (pad_cols - deficit)[:, None]) & (
                col[None, :] < (pad_cols + lengths)[:, None]
            )
        else:
            valid = mask

        x = values.transpose(1, 2)  # [B, hidden, L]
        pooled = []
        for width, conv in zip((1, 2, 3), self.convs):
            scores = conv(x)  # [B, hidden, L - width + 1]
            # a window is valid iff its first and last positions are valid
            window_ok = valid[:, : scores.shape[-1] ] & valid[:, width - 1 :]
            scores = scores.masked_fill(~window_ok[:, None, :], float("-inf"))
            pooled.append(scores.max(dim=-1).values)
        return self.affine(torch.cat(pooled, dim=-1))


class CVAEGenerator(nn.Module):
    """Conditional latent-variable seq2seq; pooling selects the model family."""

    def __init__(self, config: ModelConfig, pooling: str = "concoder"):
        super().__init__()
        if pooling not in POOLING_KINDS:
            raise ValueError(f"unknown pooling kind {pooling!r}")
        self.config = config
        self.pooling = pooling
        hidden, d_z = config.hidden, config.d_z
        self.embedding = TokenEmbedding(config)  # shared for pair and explanation
        self.encoder = Encoder(config)
        self.concoder = Concoder(config) if pooling == "concoder" else None
        self.prior_mean = nn.Linear(hidden, d_z)
        self.prior_log_std = nn.Linear(hidden, d_z)
        self.posterior_mean = nn.Linear(2 * hidden, d_z)
        self.posterior_log_std = nn.Linear(2 * hidden, d_z)
        self.z_proj = nn.Identity() if d_z == hidden else nn.Linear(d_z, hidden)
        self.tgt_embedding = TokenEmbedding(config)
        self.decoder = Decoder(config)
        self.out_proj = nn.Linear(hidden, config.vocab_size)

    # -- encoding ----------------------------------------------------------

    def encode_pair(
        self,
        premise: torch.Tensor,
        premise_mask: torch.Tensor,
        hypothesis: torch.Tensor,
        hypothesis_mask: torch.Tensor,
    ) -> SequenceStates:
        ids, mask, positions = concat_pair(
            premise, premise_mask, hypothesis, hypothesis_mask, self.config.max_pos
        )
        return self.encoder(SequenceStates(self.embedding(ids, positions), mask))

    def encode_explanation(
        self, explanation: torch.Tensor, mask: torch.Tensor
    ) -> SequenceStates:
        positions = single_segment_positions(explanation, self.config.max_pos)
        return self.encoder(SequenceStates(self.embedding(explanation, positions), mask))

    def pool(self, states: SequenceStates) -> torch.Tensor:
        if self.concoder is not None:
            filler = self.embedding.tokens.weight[PAD_ID] * self.embedding.scale
            return self.concoder(states, filler)
        return states.values[:, 0]

    # -- latent ------------------------------------------------------------

    def prior_params(self, x_c: torch.Tensor) -> LatentGaussian:
        return LatentGaussian(
            mean=self.prior_mean(x_c), log_std=torch.tanh(self.prior_log_std(x_c))
        )

    def posterior_params(self, x_c: torch.Tensor, y_c: torch.Tensor) -> LatentGaussian:
        joined = torch.cat([x_c, y_c], dim=-1)
        return LatentGaussian(
            mean=self.posterior_mean(joined),
            log_std=torch.tanh(self.posterior_log_std(joined)),
        )

    # -- decoding ----------------------------------------------------------

    def latent_memory(self, z: torch.Tensor, x_states: SequenceStates) -> SequenceStates:
        """Prepend the (projected) latent as one extra memory position."""
        z_col = self.z_proj(z).unsqueeze(1)
        values = torch.cat([z_col, x_states.values], dim=1)
        ones = torch.ones(
            (x_states.mask.shape[0], 1), dtype=torch.bool, device=x_states.mask.device
        )
        return SequenceStates(values, torch.cat([ones, x_states.mask], dim=1))

    def decode_logits(
        self, prefix: torch.Tensor, prefix_mask: torch.Tensor, memory: SequenceStates
    ) -> torch.Tensor:
        positions = single_segment_positions(prefix, self.config.max_pos)
        states = SequenceStates(self.tgt_embedding(prefix, positions), prefix_mask)
        return self.out_proj(self.decoder(states, memory))

    def decode_with_latent(
        self, z: torch.Tensor, x_states: SequenceStates, max_len: int = 25
    ) -> list[int]:
        """Greedy explanation ids for one input, conditioned on the given latent."""
        memory = self.latent_memory(z, x_states)
        return greedy_rollout(self, memory, min(max_len, self.config.max_pos))

    # -- losses ------------------------------------------------------------

    def forward_parts(
        self, batch: Batch, rng: torch.Generator | None = None
    ) -> "ElboParts":
        """One full pass: prior from the pair, one posterior/recon per reference.

        With ``rng`` the latent is a reparameterized sample; without it the
        posterior mean is used, making the loss deterministic (evaluation).
        """
        x_states = self.encode_pair(
            batch.premise, batch.premise_mask, batch.hypothesis, batch.hypothesis_mask
        )
        x_c = self.pool(x_states)
        prior = self.prior_params(x_c)
        refs = []
        for r in range(batch.n_references):
            explanation = batch.explanations[:, r]
            y_mask = explanation.ne(PAD_ID)
            y_states = self.encode_explanation(explanation, y_mask)
            y_c = self.pool(y_states)
            posterior = self.posterior_params(x_c, y_c)
            if rng is None:
                eps = torch.zeros_like(posterior.mean)
            else:
                eps = torch.randn(
                    posterior.mean.shape, generator=rng, dtype=posterior.mean.dtype
                )
            z = reparameterize(posterior, eps)
            memory = self.latent_memory(z, x_states)
            prefix, target = explanation[:, :-1], explanation[:, 1:]
            logits = self.decode_logits(prefix, prefix.ne(PAD_ID), memory)
            recon = F.cross_entropy(
                logits.reshape(-1, logits.shape[-1]),
                target.reshape(-1),
                ignore_index=PAD_ID,
            )
            kl = kl_divergence(posterior, prior).mean()
            refs.append(ReferencePart(y_states=y_states, posterior=posterior, z=z,
                                      reconstruction=recon, kl=kl))
        return ElboParts(x_states=x_states, x_c=x_c, prior=prior, references=refs)

    def elbo_loss(
        self, batch: Batch, beta: float = 1.0, rng: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(reconstruction, kl), each averaged over the references."""
        parts = self.forward_parts(batch, rng=rng)
        recon = torch.stack([r.reconstruction for r in parts.references]).mean()
        kl = torch.stack([r.kl for r in parts.references]).mean()
        return recon, kl

    def token_cross_entropy(self, batch: Batch) -> tuple[torch.Tensor, int]:
        """Summed CE and token count with the test-time latent (prior mean)."""
        x_states = self.encode_pair(
            batch.premise, batch.premise_mask, batch.hypothesis, batch.hypothesis_mask
        )
        prior = self.prior_params(self.pool(x_states))
        memory = self.latent_memory(prior.mean, x_states)
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

    # -- generation --------------------------------------------------------

    def encode_single_pair(
        self, premise_ids: list[int], hypothesis_ids: list[int]
    ) -> SequenceStates:
        premise = torch.tensor([premise_ids], dtype=torch.long)
        hypothesis = torch.tensor([hypothesis_ids], dtype=torch.long)
        return self.encode_pair(
            premise, premise.ne(PAD_ID), hypothesis, hypothesis.ne(PAD_ID)
        )

    def generate(
        self,
        premise_ids: list[int],
        hypothesis_ids: list[int],
        max_len: int = 25,
        z: torch.Tensor | None = None,
    ) -> list[int]:
        """MAP generation: latent defaults to the prior mean."""
        with torch.no_grad():
            x_states = self.encode_single_pair(premise_ids, hypothesis_ids)
            if z is None:
                z = self.prior_params(self.pool(x_states)).mean
            return self.decode_with_latent(z, x_states, max_len)

    def interpolate(
        self,
        premise_ids: list[int],
        hypothesis_ids: list[int],
        k_values: tuple[float, ...] = DEFAULT_K_VALUES,
        max_len: int = 25,
    ) -> list[list[int]]:
        """One greedy decode per latent mean + k*std, preserving k order."""
        with torch.no_grad():
            x_states = self.encode_single_pair(premise_ids, hypothesis_ids)
            prior = self.prior_params(self.pool(x_states))
            return [
                self.decode_with_latent(z, x_states, max_len)
                for z in interpolate_latents(prior, tuple(k_values))
            ]


@dataclass
class ReferencePart:
    y_states: SequenceStates
    posterior: LatentGaussian
    z: torch.Tensor
    reconstruction: torch.Tensor
    kl: torch.Tensor


@dataclass
class ElboParts:
    x_states: SequenceStates
    x_c: torch.Tensor
    prior: LatentGaussian
    references: list[ReferencePart]


def encode_generated(ids: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
    """Wrap generated content ids as a <bos> ... <eos> row for re-encoding."""
    row = torch.tensor([[BOS_ID] + list(ids) + [EOS_ID]], dtype=torch.long)
    return row, row.ne(PAD_ID)
