"""Seeded training loop shared by every model family.

One invocation owns its model exclusively (single writer); evaluation-mode
models are immutable. Runs are reproducible to the byte: parameter init,
batch shuffling, dropout, and latent sampling all derive from the run seed,
and reductions happen on a fixed thread count.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from .checkpoint import Checkpoint, arrays_from_model, save_checkpoint
from .classifiers import build_classifier, classification_loss
from .concvae import CVAEGenerator
from .corpus import Batch, Quadruplet, Vocabulary, make_batches
from .errors import InputDataError
from .interaction import InteractionModel
from .seq2seq import Seq2SeqGenerator
from .transformer import ModelConfig, init_parameters

MODEL_KINDS = (
    "separate",
    "mixture",
    "agnostic",
    "seq2seq_full",
    "seq2seq_agnostic",
    "cvae",
    "concvae",
    "interaction_m1",
    "interaction_m2",
    "interaction_m3",
)

CLASSIFIER_MODEL_KINDS = ("separate", "mixture", "agnostic")
GENERATIVE_MODEL_KINDS = tuple(k for k in MODEL_KINDS if k not in CLASSIFIER_MODEL_KINDS)


@dataclass
class TrainSettings:
    """Optimizer and objective hyperparameters (paper-protocol defaults)."""

    batch_size: int = 16
    lr: float = 1e-5
    epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    beta: float = 1.0  # KL weight after warm-up
    kl_warmup_epochs: float = 1.0
    lambda_ce: float = 1.0
    sample_latent: bool = True  # False pins eps = 0 everywhere
    max_len: int = 25
    num_threads: int = 1


def toy_train_settings(**overrides) -> TrainSettings:
    params = dict(batch_size=4, lr=1e-3, epochs=200)
    params.update(overrides)
    return TrainSettings(**params)


def build_model(model_kind: str, config: ModelConfig, abs_diff: bool = False) -> torch.nn.Module:
    if model_kind == "separate":
        return build_classifier("separate", config, abs_diff=abs_diff)
    if model_kind == "mixture":
        return build_classifier("mixture", config)
    if model_kind == "agnostic":
        return build_classifier("premise_agnostic", config)
    if model_kind == "seq2seq_full":
        return Seq2SeqGenerator(config, mode="full")
    if model_kind == "seq2seq_agnostic":
        return Seq2SeqGenerator(config, mode="agnostic")
    if model_kind == "cvae":
        return CVAEGenerator(config, pooling="bos")
    if model_kind == "concvae":
        return CVAEGenerator(config, pooling="concoder")
    if model_kind.startswith("interaction_m"):
        variant = model_kind.removeprefix("interaction_")
        return InteractionModel(config, variant=variant, pooling="concoder")
    raise InputDataError(f"unknown model kind {model_kind!r}")


def compute_loss(
    model: torch.nn.Module,
    batch: Batch,
    settings: TrainSettings,
    beta: float,
    rng: torch.Generator | None,
) -> torch.Tensor:
    if isinstance(model, InteractionModel):
        return model.joint_loss(
            batch, beta=beta, lambda_ce=settings.lambda_ce, rng=rng
        ).total
    if isinstance(model, CVAEGenerator):
        recon, kl = model.elbo_loss(batch, rng=rng)
        return recon + beta * kl
    if isinstance(model, Seq2SeqGenerator):
        return model.generation_loss(batch)
    return classification_loss(model(batch), batch.labels)


def evaluation_loss(
    model: torch.nn.Module,
    batches: Sequence[Batch],
    settings: TrainSettings,
) -> float:
    """Deterministic selection loss: latent at the posterior mean, full beta."""
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for batch in batches:
            loss = compute_loss(model, batch, settings, beta=settings.beta, rng=None)
            total += float(loss) * batch.size
            count += batch.size
    return total / max(count, 1)


def _warmup_factor(global_step: int, warmup_steps: float) -> float:
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, global_step / warmup_steps)


@dataclass
class FitResult:
    model: torch.nn.Module
    history: list[dict]
    best_epoch: int
    best_val_loss: float
    best_arrays: dict


def fit_model(
    model_kind: str,
    config: ModelConfig,
    train_corpus: Sequence[Quadruplet],
    val_corpus: Sequence[Quadruplet] | None,
    vocab: Vocabulary,
    settings: TrainSettings,
    seed: int,
    abs_diff: bool = False,
) -> FitResult:
    """Train one model for one seed; keep the epoch with the best validation loss.

    Without a validation corpus the training loss selects the checkpoint.
    The returned model carries the best epoch's parameters.
    """
    torch.set_num_threads(settings.num_threads)
    torch.manual_seed(seed)

    model = build_model(model_kind, config, abs_diff=abs_diff)
    init_parameters(model)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=settings.lr,
        betas=(settings.adam_beta1, settings.adam_beta2),
        eps=settings.adam_eps,
    )
    latent_rng = None
    if settings.sample_latent:
        latent_rng = torch.Generator()
        latent_rng.manual_seed(seed + 7919)

    val_batches = None
    if val_corpus:
        val_batches = make_batches(
            val_corpus, vocab, settings.batch_size, seed=0,
            max_len=settings.max_len, shuffle=False,
        )

    history: list[dict] = []
    best_val = float("inf")
    best_epoch = 0
    best_arrays = None
    global_step = 0

    for epoch in range(1, settings.epochs + 1):
        batches = make_batches(
            train_corpus, vocab, settings.batch_size,
            seed=seed * 1000 + epoch, max_len=settings.max_len,
        )
        warmup_steps = settings.kl_warmup_epochs * len(batches)
        model.train()
        epoch_loss = 0.0
        for batch in batches:
            beta_t = settings.beta * _warmup_factor(global_step, warmup_steps)
            loss = compute_loss(model, batch, settings, beta=beta_t, rng=latent_rng)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss)
            global_step += 1
        train_loss = epoch_loss / len(batches)

        if val_batches is not None:
            val_loss = evaluation_loss(model, val_batches, settings)
        else:
            val_loss = train_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_arrays = arrays_from_model(model)

    if best_arrays is None:  # zero epochs: keep the initialization
        best_arrays = arrays_from_model(model)
        best_val = float("nan")
    else:
        from .checkpoint import load_model_arrays

        load_model_arrays(model, best_arrays)
    model.eval()
    return FitResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        best_arrays=best_arrays,
    )


@dataclass
class TrainRunResult:
    seed: int
    checkpoint_path: Path
    log_path: Path
    best_epoch: int
    best_val_loss: float
    history: list[dict] = field(default_factory=list)


def train_one_seed(
    model_kind: str,
    config: ModelConfig,
    train_corpus: Sequence[Quadruplet],
    val_corpus: Sequence[Quadruplet] | None,
    vocab: Vocabulary,
    settings: TrainSettings,
    seed: int,
    out_dir: str | Path,
    run_name: str | None = None,
    abs_diff: bool = False,
) -> TrainRunResult:
    """fit_model plus on-disk artifacts: best checkpoint and a JSONL loss log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_name = run_name or model_kind

    result = fit_model(
        model_kind, config, train_corpus, val_corpus, vocab, settings, seed,
        abs_diff=abs_diff,
    )

    log_path = out_dir / f"{run_name}-seed{seed}.log.jsonl"
    with log_path.open("w", encoding="utf-8") as log:
        for entry in result.history:
            log.write(json.dumps(entry, sort_keys=True) + "\n")

    checkpoint_path = out_dir / f"{run_name}-seed{seed}.ckpt"
    save_checkpoint(
        checkpoint_path,
        Checkpoint(
            model_kind=model_kind,
            config=config,
            vocab_sha256=vocab.sha256(),
            arrays=result.best_arrays,
            extra={
                "seed": seed,
                "best_epoch": result.best_epoch,
                "best_val_loss": result.best_val_loss,
                "abs_diff": abs_diff,
                "settings": {
                    "batch_size": settings.batch_size,
                    "lr": settings.lr,
                    "epochs": settings.epochs,
                    "beta": settings.beta,
                    "kl_warmup_epochs": settings.kl_warmup_epochs,
                    "lambda_ce": settings.lambda_ce,
                },
            },
        ),
    )
    return TrainRunResult(
        seed=seed,
        checkpoint_path=checkpoint_path,
        log_path=log_path,
        best_epoch=result.best_epoch,
        best_val_loss=result.best_val_loss,
        history=result.history,
    )


def model_from_checkpoint(ckpt: "Checkpoint") -> torch.nn.Module:
    """Rebuild a frozen model from a loaded checkpoint."""
    from .checkpoint import load_model_arrays

    model = build_model(
        ckpt.model_kind, ckpt.config, abs_diff=bool(ckpt.extra.get("abs_diff", False))
    )
    load_model_arrays(model, ckpt.arrays)
    model.eval()
    return model


def deep_copy_model(model: torch.nn.Module) -> torch.nn.Module:
    return copy.deepcopy(model)
