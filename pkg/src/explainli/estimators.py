"""Estimator-style wrappers: fit/predict/generate with sklearn conventions.

Constructors store hyperparameters verbatim (so ``get_params`` /
``set_params`` / ``clone`` work), ``fit`` takes a corpus of quadruplets and
returns self, and fitted state lives in trailing-underscore attributes.
Inputs to predict/generate may be Quadruplets, (premise, hypothesis) string
pairs, or token-sequence pairs.
"""

from __future__ import annotations

from typing import Sequence

from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .concvae import DEFAULT_K_VALUES
from .corpus import (
    LABELS,
    Quadruplet,
    build_vocabulary,
    encode_sequence,
    make_batches,
    tokenize,
)
from .errors import InputDataError
from .evaluation import evaluate_model, label_accuracy
from .interaction import StepOneResult
from .metrics import perplexity
from .training import TrainSettings, fit_model
from .transformer import ModelConfig


def require_fitted(estimator, *attrs: str) -> None:
    """Input-validation helper: raise NotFittedError before fit was called."""
    missing = [a for a in attrs if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first"
        )


def as_token_pair(item) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Normalize one input to (premise tokens, hypothesis tokens)."""
    if isinstance(item, Quadruplet):
        return item.premise, item.hypothesis
    if isinstance(item, (tuple, list)) and len(item) == 2:
        premise, hypothesis = item
        premise = tokenize(premise) if isinstance(premise, str) else tuple(premise)
        hypothesis = (
            tokenize(hypothesis) if isinstance(hypothesis, str) else tuple(hypothesis)
        )
        if not hypothesis:
            raise InputDataError("empty hypothesis")
        return premise, hypothesis
    raise InputDataError(
        "expected a Quadruplet or a (premise, hypothesis) pair, "
        f"got {type(item).__name__}"
    )


class _CorpusEstimator(BaseEstimator):
    """Shared fit machinery: build the vocabulary, train, keep the best model."""

    _model_kind: str = ""

    def _model_kind_resolved(self) -> str:
        return self._model_kind

    def _settings(self) -> TrainSettings:
        return TrainSettings(
            batch_size=self.batch_size,
            lr=self.lr,
            epochs=self.epochs,
            beta=getattr(self, "beta", 1.0),
            kl_warmup_epochs=getattr(self, "kl_warmup_epochs", 1.0),
            lambda_ce=getattr(self, "lambda_ce", 1.0),
            max_len=self.max_pos,
        )

    def _config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            layers=self.layers,
            hidden=self.hidden,
            heads=self.heads,
            ffn=self.ffn,
            max_pos=self.max_pos,
            dropout=self.dropout,
            latent_dim=getattr(self, "latent_dim", None),
        )

    def fit(self, X: Sequence[Quadruplet], y=None, val: Sequence[Quadruplet] | None = None):
        if not X:
            raise InputDataError("cannot fit on an empty corpus")
        self.vocab_ = build_vocabulary(X, min_freq=self.min_freq)
        settings = self._settings()
        result = fit_model(
            self._model_kind_resolved(),
            self._config(len(self.vocab_)),
            X,
            val,
            self.vocab_,
            settings,
            seed=self.seed,
            abs_diff=getattr(self, "abs_diff", False),
        )
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def _encode_pair(self, item) -> tuple[list[int], list[int]]:
        premise, hypothesis = as_token_pair(item)
        return (
            encode_sequence(self.vocab_, premise, self.max_pos),
            encode_sequence(self.vocab_, hypothesis, self.max_pos),
        )

    def evaluate(self, X: Sequence[Quadruplet]) -> dict[str, float]:
        """All applicable metrics on a reference corpus."""
        require_fitted(self, "model_", "vocab_")
        return evaluate_model(
            self.model_, self._model_kind_resolved(), X, self.vocab_, self._settings()
        )


class NLIClassifier(_CorpusEstimator, ClassifierMixin):
    """Three-way NLI label prediction with a selectable encoder layout."""

    def __init__(
        self,
        kind: str = "mixture",
        layers: int = 2,
        hidden: int = 64,
        heads: int = 2,
        ffn: int = 256,
        dropout: float = 0.0,
        max_pos: int = 25,
        lr: float = 1e-3,
        batch_size: int = 16,
        epochs: int = 5,
        seed: int = 1000,
        min_freq: int = 1,
        abs_diff: bool = False,
    ):
        self.kind = kind
        self.layers = layers
        self.hidden = hidden
        self.heads = heads
        self.ffn = ffn
        self.dropout = dropout
        self.max_pos = max_pos
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.min_freq = min_freq
        self.abs_diff = abs_diff

    def _model_kind_resolved(self) -> str:
        mapping = {"separate": "separate", "mixture": "mixture",
                   "premise_agnostic": "agnostic", "agnostic": "agnostic"}
        if self.kind not in mapping:
            raise InputDataError(f"unknown classifier kind {self.kind!r}")
        return mapping[self.kind]

    def predict(self, X) -> list[str]:
        require_fitted(self, "model_", "vocab_")
        import torch

        out = []
        with torch.no_grad():
            for item in X:
                premise_ids, hypothesis_ids = self._encode_pair(item)
                premise = torch.tensor([premise_ids])
                hypothesis = torch.tensor([hypothesis_ids])
                logits = self.model_.logits(
                    premise, premise.ne(0), hypothesis, hypothesis.ne(0)
                )
                out.append(LABELS[int(logits.argmax(dim=-1))])
        return out

    def score(self, X: Sequence[Quadruplet], y=None) -> float:
        """Label accuracy in [0, 1] on a quadruplet corpus."""
        require_fitted(self, "model_", "vocab_")
        return label_accuracy(self.model_, X, self.vocab_, self._settings()) / 100.0


class ExplanationSeq2Seq(_CorpusEstimator):
    """Deterministic explanation generation from the pair (or hypothesis only)."""

    def __init__(
        self,
        mode: str = "full",
        layers: int = 2,
        hidden: int = 64,
        heads: int = 2,
        ffn: int = 256,
        dropout: float = 0.0,
        max_pos: int = 25,
        lr: float = 1e-3,
        batch_size: int = 4,
        epochs: int = 50,
        seed: int = 1000,
        min_freq: int = 1,
    ):
        self.mode = mode
        self.layers = layers
        self.hidden = hidden
        self.heads = heads
        self.ffn = ffn
        self.dropout = dropout
        self.max_pos = max_pos
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.min_freq = min_freq

    def _model_kind_resolved(self) -> str:
        if self.mode not in ("full", "agnostic"):
            raise InputDataError(f"unknown generation mode {self.mode!r}")
        return f"seq2seq_{self.mode}"

    def generate(self, X) -> list[str]:
        require_fitted(self, "model_", "vocab_")
        out = []
        for item in X:
            premise_ids, hypothesis_ids = self._encode_pair(item)
            source_premise = premise_ids if self.mode == "full" else None
            ids = self.model_.greedy_decode(
                source_premise, hypothesis_ids, max_len=self.max_pos
            )
            out.append(" ".join(self.vocab_.decode(ids)))
        return out

    def perplexity(self, X: Sequence[Quadruplet]) -> float:
        require_fitted(self, "model_", "vocab_")
        batches = make_batches(
            X, self.vocab_, self.batch_size, seed=0, max_len=self.max_pos, shuffle=False
        )
        return perplexity(self.model_, batches)


class LatentExplanationGenerator(_CorpusEstimator):
    """Latent-variable generator; interpolation yields diverse explanations."""

    def __init__(
        self,
        pooling: str = "concoder",
        layers: int = 2,
        hidden: int = 64,
        heads: int = 2,
        ffn: int = 256,
        dropout: float = 0.0,
        max_pos: int = 25,
        latent_dim: int | None = None,
        beta: float = 1.0,
        kl_warmup_epochs: float = 1.0,
        lr: float = 1e-3,
        batch_size: int = 4,
        epochs: int = 50,
        seed: int = 1000,
        min_freq: int = 1,
    ):
        self.pooling = pooling
        self.layers = layers
        self.hidden = hidden
        self.heads = heads
        self.ffn = ffn
        self.dropout = dropout
        self.max_pos = max_pos
        self.latent_dim = latent_dim
        self.beta = beta
        self.kl_warmup_epochs = kl_warmup_epochs
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.min_freq = min_freq

    def _model_kind_resolved(self) -> str:
        if self.pooling == "concoder":
            return "concvae"
        if self.pooling == "bos":
            return "cvae"
        raise InputDataError(f"unknown pooling kind {self.pooling!r}")

    def generate(self, X) -> list[str]:
        require_fitted(self, "model_", "vocab_")
        out = []
        for item in X:
            premise_ids, hypothesis_ids = self._encode_pair(item)
            ids = self.model_.generate(premise_ids, hypothesis_ids, max_len=self.max_pos)
            out.append(" ".join(self.vocab_.decode(ids)))
        return out

    def interpolate(self, X, k_values=DEFAULT_K_VALUES) -> list[list[str]]:
        require_fitted(self, "model_", "vocab_")
        out = []
        for item in X:
            premise_ids, hypothesis_ids = self._encode_pair(item)
            decodes = self.model_.interpolate(
                premise_ids, hypothesis_ids, tuple(k_values), max_len=self.max_pos
            )
            out.append([" ".join(self.vocab_.decode(d)) for d in decodes])
        return out

    def perplexity(self, X: Sequence[Quadruplet]) -> float:
        require_fitted(self, "model_", "vocab_")
        batches = make_batches(
            X, self.vocab_, self.batch_size, seed=0, max_len=self.max_pos, shuffle=False
        )
        return perplexity(self.model_, batches)


class InteractionEstimator(LatentExplanationGenerator, ClassifierMixin):
    """Joint label prediction and explanation generation (variants m1/m2/m3)."""

    def __init__(
        self,
        variant: str = "m3",
        pooling: str = "concoder",
        layers: int = 2,
        hidden: int = 64,
        heads: int = 2,
        ffn: int = 256,
        dropout: float = 0.0,
        max_pos: int = 25,
        latent_dim: int | None = None,
        beta: float = 1.0,
        kl_warmup_epochs: float = 1.0,
        lambda_ce: float = 1.0,
        lr: float = 1e-3,
        batch_size: int = 4,
        epochs: int = 50,
        seed: int = 1000,
        min_freq: int = 1,
    ):
        super().__init__(
            pooling=pooling, layers=layers, hidden=hidden, heads=heads, ffn=ffn,
            dropout=dropout, max_pos=max_pos, latent_dim=latent_dim, beta=beta,
            kl_warmup_epochs=kl_warmup_epochs, lr=lr, batch_size=batch_size,
            epochs=epochs, seed=seed, min_freq=min_freq,
        )
        self.variant = variant
        self.lambda_ce = lambda_ce

    def _model_kind_resolved(self) -> str:
        if self.variant not in ("m1", "m2", "m3"):
            raise InputDataError(f"unknown predictor variant {self.variant!r}")
        return f"interaction_{self.variant}"

    def step_one(self, item) -> StepOneResult:
        require_fitted(self, "model_", "vocab_")
        premise_ids, hypothesis_ids = self._encode_pair(item)
        return self.model_.step_one(premise_ids, hypothesis_ids, max_len=self.max_pos)

    def predict(self, X) -> list[str]:
        return [self.step_one(item).label for item in X]

    def generate(self, X) -> list[str]:
        require_fitted(self, "model_", "vocab_")
        return [
            " ".join(self.vocab_.decode(self.step_one(item).explanation)) for item in X
        ]

    def score(self, X: Sequence[Quadruplet], y=None) -> float:
        require_fitted(self, "model_", "vocab_")
        return label_accuracy(self.model_, X, self.vocab_, self._settings()) / 100.0
