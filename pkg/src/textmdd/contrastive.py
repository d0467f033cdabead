"""Contrastive margin objective between canonical and annotated phone sequences.

The canonical (prompted) sequence is pushed below the annotation (what was
actually said) by at least ``margin`` nats of CTC log-likelihood. When the
speaker pronounced everything as prompted the two sequences coincide, the
hinge sits at the constant ``margin`` and contributes no gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ctc import (
    BRUTE_FORCE_MAX_T,
    BRUTE_FORCE_MAX_V,
    InstanceTooLargeError,
    ZeroProbabilityError,
    _skip_allowed,
    check_seq,
    ctc_log_prob,
    ctc_loss_and_grad,
    expand_with_blanks,
)


@dataclass(frozen=True)
class ContrastConfig:
    margin: float = 16.0
    enabled: bool = True

    def __post_init__(self):
        if not self.margin >= 0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")


@dataclass(frozen=True)
class LabelPair:
    canonical: tuple[int, ...]
    annotation: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "canonical", tuple(int(i) for i in self.canonical))
        object.__setattr__(self, "annotation", tuple(int(i) for i in self.annotation))


class NotSingleSubstitutionError(ValueError):
    pass


def paired_path_dissimilarity(
    lattice: np.ndarray, path: Sequence[int], path_e: Sequence[int], t: int
) -> float:
    """``ln p(path_e | X) - ln p(path | X)`` for frame paths differing only at frame ``t``.

    Under frame-wise independence every shared frame cancels, leaving the
    log-probability difference at ``t``.
    """
    if len(path) != len(path_e) or len(path) != len(lattice):
        raise ValueError("both paths must cover every lattice frame")
    diff = [k for k, (a, b) in enumerate(zip(path, path_e)) if a != b]
    if diff != [t]:
        raise NotSingleSubstitutionError(
            f"paths must differ exactly at frame {t}, they differ at {diff}"
        )
    return float(lattice[t, path_e[t]] - lattice[t, path[t]])


def contrastive_loss_seq(
    lattice: np.ndarray, pair: LabelPair, cfg: ContrastConfig = ContrastConfig()
) -> tuple[float, np.ndarray]:
    """Sequence-level hinge ``max(ln P(canonical) - ln P(annotation) + m, 0)``.

    Returns the loss and its gradient with respect to the logits behind
    ``lattice``. The subgradient at the kink is zero.
    """
    lattice = np.asarray(lattice, dtype=float)
    zero = np.zeros_like(lattice)
    if pair.canonical == pair.annotation:
        ctc_log_prob(lattice, pair.annotation)  # validates inputs
        return float(cfg.margin), zero

    nll_annotation, grad_annotation = ctc_loss_and_grad(lattice, pair.annotation)
    log_p_canonical = ctc_log_prob(lattice, pair.canonical, check=False)
    if log_p_canonical == -np.inf:
        return 0.0, zero
    arg = log_p_canonical + nll_annotation + cfg.margin
    if arg <= 0.0:
        return 0.0, zero
    _, grad_canonical = ctc_loss_and_grad(lattice, pair.canonical, check=False)
    # d/dz [ln Pc - ln Pa] = -grad(nll_c) + grad(nll_a)
    return float(arg), grad_annotation - grad_canonical


def combined_loss(
    lattice: np.ndarray, pair: LabelPair, cfg: ContrastConfig = ContrastConfig()
) -> tuple[float, np.ndarray]:
    """CTC loss on the annotation plus, when enabled, the contrastive hinge."""
    loss, grad = ctc_loss_and_grad(lattice, pair.annotation)
    if not cfg.enabled:
        return loss, grad
    c_loss, c_grad = contrastive_loss_seq(lattice, pair, cfg)
    return loss + c_loss, grad + c_grad


def _substitution_index(pair: LabelPair) -> int | None:
    if len(pair.canonical) != len(pair.annotation):
        raise NotSingleSubstitutionError("sequences differ in length")
    diff = [k for k, (a, b) in enumerate(zip(pair.canonical, pair.annotation)) if a != b]
    if len(diff) > 1:
        raise NotSingleSubstitutionError(f"sequences differ at {len(diff)} positions")
    return diff[0] if diff else None


def _alignments(T: int, ext: list[int], skip: np.ndarray):
    """Yield every valid state sequence of length ``T`` over the expanded labels."""
    S = len(ext)
    ends = {S - 1, S - 2} if S > 1 else {0}
    state = [0] * T

    def extend(t, s):
        state[t] = s
        if t == T - 1:
            if s in ends:
                yield tuple(state)
            return
        # prune states that cannot reach the end in time
        for nxt in (s, s + 1, s + 2):
            if nxt >= S or (nxt == s + 2 and not skip[nxt]):
                continue
            if (S - 1 - nxt) // 2 > (T - 2 - t):
                continue
            yield from extend(t + 1, nxt)

    starts = [0, 1] if S > 1 else [0]
    for s0 in starts:
        yield from extend(0, s0)


def summed_pair_hinge(
    lattice: np.ndarray, pair: LabelPair, cfg: ContrastConfig = ContrastConfig()
) -> float:
    """Sum of per-path hinges over all paired annotation/canonical frame paths.

    Each valid alignment of the annotation is paired with the canonical path
    that uses the same state at every frame; pairs where that state sequence
    is not a valid canonical alignment are skipped. Small instances only.
    """
    lattice = np.asarray(lattice, dtype=float)
    T, n_symbols = lattice.shape
    if T > BRUTE_FORCE_MAX_T or n_symbols - 1 > BRUTE_FORCE_MAX_V:
        raise InstanceTooLargeError(
            f"pair enumeration limited to T<={BRUTE_FORCE_MAX_T}, V<={BRUTE_FORCE_MAX_V}"
        )
    check_seq(pair.annotation, n_symbols)
    check_seq(pair.canonical, n_symbols)
    _substitution_index(pair)
    ext_a = expand_with_blanks(pair.annotation)
    ext_c = expand_with_blanks(pair.canonical)
    skip_a, skip_c = _skip_allowed(ext_a), _skip_allowed(ext_c)
    ext_a_arr, ext_c_arr = np.asarray(ext_a), np.asarray(ext_c)
    frames = np.arange(T)
    total = 0.0
    for states in _alignments(T, ext_a, skip_a):
        st = np.asarray(states)
        jumps = st[1:] - st[:-1]
        if np.any((jumps == 2) & ~skip_c[st[1:]]):
            continue
        d = lattice[frames, ext_c_arr[st]].sum() - lattice[frames, ext_a_arr[st]].sum()
        total += max(d + cfg.margin, 0.0)
    return float(total)


__all__ = [
    "ContrastConfig",
    "LabelPair",
    "NotSingleSubstitutionError",
    "ZeroProbabilityError",
    "combined_loss",
    "contrastive_loss_seq",
    "paired_path_dissimilarity",
    "summed_pair_hinge",
]
