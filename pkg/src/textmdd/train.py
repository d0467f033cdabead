"""Training loop, Adam, and corpus-level evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from . import __version__
from .contrastive import ContrastConfig, LabelPair, combined_loss
from .ctc import ZeroProbabilityError, greedy_decode
from .fusion import GateVariant
from .metrics import MddCounts, edit_distance, rates, score_triples
from .model import ModelDims, ToyMDDModel, backward, forward, init_params

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """A loss or gradient went non-finite during training."""


class InfeasibleTargetError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    variant: str = "TextGate"
    contrast: bool = False
    margin: float = 16.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 30
    max_steps: int | None = None
    freeze_encoder_steps: int = 0
    d: int = 32
    n_audio_blocks: int = 2
    n_text_blocks: int = 2
    scale_scores: bool = False
    on_infeasible: str = "skip"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr: must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size: must be positive, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs: must be positive, got {self.epochs}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps: must be positive, got {self.max_steps}")
        if self.freeze_encoder_steps < 0:
            raise ValueError("freeze_encoder_steps: must be non-negative")
        if self.on_infeasible not in ("skip", "abort"):
            raise ValueError("on_infeasible: must be 'skip' or 'abort'")
        if self.variant.endswith("Contrast"):
            object.__setattr__(self, "variant", self.variant[: -len("Contrast")])
            object.__setattr__(self, "contrast", True)
        GateVariant.from_name(self.variant)
        ContrastConfig(self.margin)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"{sorted(unknown)[0]}: unknown field")
        return cls(**data)

    @property
    def label(self) -> str:
        return self.variant + ("Contrast" if self.contrast else "")

    @property
    def gate_variant(self) -> GateVariant:
        return GateVariant.from_name(self.variant, self.scale_scores)

    @property
    def contrast_config(self) -> ContrastConfig:
        return ContrastConfig(self.margin, self.contrast)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def model_dims_for(utts: Sequence, cfg: TrainConfig, n_phones: int | None = None) -> ModelDims:
    if n_phones is None:
        n_phones = max(max(u.canonical + u.annotation) for u in utts)
    return ModelDims(
        n_phones=n_phones,
        d_in=utts[0].frames.shape[1],
        d=cfg.d,
        n_audio_blocks=cfg.n_audio_blocks,
        n_text_blocks=cfg.n_text_blocks,
        max_text_len=max(len(u.canonical) for u in utts),
    )


def utterance_loss(model, utt, contrast: ContrastConfig, freeze_audio=False):
    result = forward(model, utt.frames, utt.canonical)
    loss, dlogits = combined_loss(result.lattice, LabelPair(utt.canonical, utt.annotation), contrast)
    return loss, backward(model, result, dlogits, freeze_audio=freeze_audio)


def decode(model: ToyMDDModel, utt) -> list:
    return greedy_decode(forward(model, utt.frames, utt.canonical).lattice)


def corpus_per(model: ToyMDDModel, utts: Sequence) -> float:
    edits = total = 0
    for utt in utts:
        edits += edit_distance(utt.annotation, decode(model, utt))
        total += len(utt.annotation)
    return edits / total if total else 0.0


def train(
    train_utts: Sequence,
    dev_utts: Sequence,
    cfg: TrainConfig,
    n_phones: int | None = None,
    dims: ModelDims | None = None,
) -> tuple[ToyMDDModel, list]:
    """Mini-batch Adam on the mean per-utterance CTC (+ contrastive) loss.

    Returns the trained model and one history record per epoch.
    """
    if not train_utts:
        raise ValueError("training split is empty")
    if dims is None:
        dims = model_dims_for(list(train_utts) + list(dev_utts), cfg, n_phones)
    model = init_params(cfg.seed, dims, cfg.gate_variant)
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    contrast = cfg.contrast_config
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    history, step = [], 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_utts))
        epoch_loss, n_seen, skipped = 0.0, 0, 0
        for start in range(0, len(order), cfg.batch_size):
            freeze = step < cfg.freeze_encoder_steps
            batch_grads, batch_n = None, 0
            for k in order[start : start + cfg.batch_size]:
                utt = train_utts[k]
                try:
                    loss, grads = utterance_loss(model, utt, contrast, freeze)
                except ZeroProbabilityError as exc:
                    if cfg.on_infeasible == "abort":
                        raise InfeasibleTargetError(f"{utt.id}: {exc}") from None
                    log.warning("skipping %s: %s", utt.id, exc)
                    skipped += 1
                    continue
                if not math.isfinite(loss):
                    raise NumericError(f"non-finite loss {loss} on {utt.id} at step {step}")
                epoch_loss += loss
                n_seen += 1
                batch_n += 1
                if batch_grads is None:
                    batch_grads = grads
                else:
                    for name, g in grads.items():
                        batch_grads[name] += g
            if batch_n:
                for g in batch_grads.values():
                    g /= batch_n
                opt.step(model.params, batch_grads)
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        record = {
            "epoch": epoch,
            "steps": step,
            "train_loss": epoch_loss / max(n_seen, 1),
            "dev_per": corpus_per(model, dev_utts) if dev_utts else None,
            "skipped": skipped,
        }
        log.info("epoch %d loss %.4f dev PER %s", epoch, record["train_loss"], record["dev_per"])
        history.append(record)
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return model, history


def evaluate(model: ToyMDDModel, utts: Sequence, hypothesis_source: str = "model") -> dict:
    """Decode and score a split.

    ``hypothesis_source`` may be ``"annotation"`` or ``"canonical"`` to inject
    a perfect or an accept-everything recognizer instead of the model.
    """
    def hypothesis(utt):
        if hypothesis_source == "model":
            return decode(model, utt)
        if hypothesis_source == "annotation":
            return list(utt.annotation)
        if hypothesis_source == "canonical":
            return list(utt.canonical)
        raise ValueError(f"unknown hypothesis source {hypothesis_source!r}")

    if model is not None and utts and utts[0].frames.shape[1] != model.dims.d_in:
        raise ValueError(
            f"corpus feature dim {utts[0].frames.shape[1]} does not match model d_in {model.dims.d_in}"
        )
    triples = [(u.canonical, u.annotation, hypothesis(u)) for u in utts]
    counts, edits, ref_len = score_triples(triples)
    return scoring_report(counts, edits, ref_len, len(utts))


def scoring_report(counts: MddCounts, edits: int, ref_len: int, n_utts: int) -> dict:
    r = rates(counts)
    return {
        "n_utterances": n_utts,
        "per": edits / ref_len if ref_len else 0.0,
        "counts": counts.to_dict(),
        "totals": {"canonical_correct": counts.n_canonical_correct, "mispronounced": counts.n_mispronounced},
        "rates": r.to_dict(),
    }


def run_report(cfg: TrainConfig, history: list, evaluation: dict | None, corpus_meta: dict | None = None) -> dict:
    return {
        "version": __version__,
        "config": cfg.to_dict(),
        "label": cfg.label,
        "corpus": corpus_meta or {},
        "history": history,
        "evaluation": evaluation,
    }


def with_overrides(cfg: TrainConfig, **overrides) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
