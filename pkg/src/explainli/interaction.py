"""Joint explanation generation + label prediction, in two steps.

Step one is deterministic: decode the explanation at the prior mean and
predict the label from <bos> readouts (variant M1 uses the pair states, M2
the explanation states, M3 both). Step two sweeps the latent along
mean + k*std for a list of k values and decodes once per point, yielding
multiple candidate explanations for the same input.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .concvae import (
    CVAEGenerator,
    DEFAULT_K_VALUES,
    LatentGaussian,
    encode_generated,
    interpolate_latents,
)
from .corpus import LABELS, Batch
from .transformer import ModelConfig, SequenceStates

PREDICTOR_VARIANTS = ("m1", "m2", "m3")


@dataclass
class StepOneResult:
    label_id: int
    explanation: list[int]

    @property
    def label(self) -> str:
        return LABELS[self.label_id]


class InteractionModel(nn.Module):
    """A latent generator plus an affine label predictor trained jointly."""

    def __init__(
        self, config: ModelConfig, variant: str = "m3", pooling: str = "concoder"
    ):
        super().__init__()
        if variant not in PREDICTOR_VARIANTS:
            raise ValueError(f"unknown predictor variant {variant!r}")
        self.config = config
        self.variant = variant
        self.core = CVAEGenerator(config, pooling=pooling)
        head_width = 2 * config.hidden if variant == "m3" else config.hidden
        self.predictor = nn.Linear(head_width, len(LABELS))

    def predictor_logits(
        self,
        x_states: SequenceStates | None,
        y_states: SequenceStates | None,
    ) -> torch.Tensor:
        """Label logits from the <bos> readouts the variant requires."""
        if self.variant == "m1":
            if x_states is None:
                raise ValueError("variant m1 requires pair states")
            features = x_states.values[:, 0]
        elif self.variant == "m2":
            if y_states is None:
                raise ValueError("variant m2 requires explanation states")
            features = y_states.values[:, 0]
        else:
            if x_states is None or y_states is None:
                raise ValueError("variant m3 requires pair and explanation states")
            features = torch.cat([x_states.values[:, 0], y_states.values[:, 0]], dim=-1)
        return self.predictor(features)

    def joint_loss(
        self,
        batch: Batch,
        beta: float = 1.0,
        lambda_ce: float = 1.0,
        rng: torch.Generator | None = None,
    ) -> "JointLossParts":
        """ELBO objective plus weighted label cross-entropy (gold explanations)."""
        parts = self.core.forward_parts(batch, rng=rng)
        recon = torch.stack([r.reconstruction for r in parts.references]).mean()
        kl = torch.stack([r.kl for r in parts.references]).mean()
        ce_terms = [
            F.cross_entropy(
                self.predictor_logits(parts.x_states, ref.y_states), batch.labels
            )
            for ref in parts.references
        ]
        ce = torch.stack(ce_terms).mean()
        total = recon + beta * kl + lambda_ce * ce
        return JointLossParts(total=total, reconstruction=recon, kl=kl, label_ce=ce)

    # the generative surface is the core's, unchanged by the variant
    def elbo_loss(self, batch, beta=1.0, rng=None):
        return self.core.elbo_loss(batch, beta=beta, rng=rng)

    def token_cross_entropy(self, batch: Batch) -> tuple[torch.Tensor, int]:
        return self.core.token_cross_entropy(batch)

    def step_one(
        self, premise_ids: list[int], hypothesis_ids: list[int], max_len: int = 25
    ) -> StepOneResult:
        """MAP inference: decode at the prior mean, then predict the label.

        M2/M3 re-encode the generated explanation through the shared encoder;
        the whole step is deterministic for frozen parameters.
        """
        with torch.no_grad():
            x_states = self.core.encode_single_pair(premise_ids, hypothesis_ids)
            prior = self.core.prior_params(self.core.pool(x_states))
            explanation = self.core.decode_with_latent(prior.mean, x_states, max_len)
            y_states = None
            if self.variant in ("m2", "m3"):
                y_ids, y_mask = encode_generated(explanation)
                y_states = self.core.encode_explanation(y_ids, y_mask)
            logits = self.predictor_logits(x_states, y_states)
            return StepOneResult(
                label_id=int(logits.argmax(dim=-1)), explanation=explanation
            )

    def step_two(
        self,
        premise_ids: list[int],
        hypothesis_ids: list[int],
        k_values: tuple[float, ...] = DEFAULT_K_VALUES,
        max_len: int = 25,
    ) -> list[list[int]]:
        """One explanation per interpolation point, in k order; duplicates kept."""
        with torch.no_grad():
            x_states = self.core.encode_single_pair(premise_ids, hypothesis_ids)
            prior = self.core.prior_params(self.core.pool(x_states))
            return [
                self.core.decode_with_latent(z, x_states, max_len)
                for z in interpolate_latents(prior, tuple(k_values))
            ]

    def prior_for(
        self, premise_ids: list[int], hypothesis_ids: list[int]
    ) -> LatentGaussian:
        with torch.no_grad():
            x_states = self.core.encode_single_pair(premise_ids, hypothesis_ids)
            return self.core.prior_params(self.core.pool(x_states)).detach()


@dataclass
class JointLossParts:
    total: torch.Tensor
    reconstruction: torch.Tensor
    kl: torch.Tensor
    label_ce: torch.Tensor
