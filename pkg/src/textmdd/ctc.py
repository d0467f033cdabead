"""Log-space CTC over the blank-expanded label lattice.

A lattice is a ``(T, V + 1)`` array of natural-log probabilities, column 0
being the blank. Phone sequences are plain sequences of integer ids in
``1..V``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

BLANK = 0

# Exponential enumeration guard for the brute-force oracle.
BRUTE_FORCE_MAX_T = 10
BRUTE_FORCE_MAX_V = 5


class InvalidPhoneError(ValueError):
    """A phone id is the blank or falls outside the lattice vocabulary."""


class ZeroProbabilityError(ValueError):
    """The target sequence has no valid CTC path through the lattice."""


class LatticeError(ValueError):
    """The lattice is malformed (wrong rank, empty, or rows not normalized)."""


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class PhoneInventory:
    """Ordered phone alphabet; id ``i + 1`` names ``phones[i]``, id 0 is blank."""

    phones: tuple[str, ...]
    blank_id: int = BLANK
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        phones = tuple(self.phones)
        object.__setattr__(self, "phones", phones)
        if self.blank_id != BLANK:
            raise ValueError("blank id is fixed at 0")
        if len(set(phones)) != len(phones):
            raise ValueError("phone symbols must be unique")
        if "-" in phones:
            raise ValueError("'-' is reserved for the blank")
        if len(phones) + 1 < 2:
            raise ValueError("inventory needs at least one phone besides blank")
        object.__setattr__(self, "_index", {p: i + 1 for i, p in enumerate(phones)})

    @classmethod
    def numbered(cls, n: int) -> "PhoneInventory":
        return cls(tuple(f"p{i}" for i in range(1, n + 1)))

    @property
    def size(self) -> int:
        """Number of lattice columns (phones plus blank)."""
        return len(self.phones) + 1

    def encode(self, symbols: Sequence[str]) -> list[int]:
        try:
            return [self._index[s] for s in symbols]
        except KeyError as exc:
            raise InvalidPhoneError(f"unknown phone {exc.args[0]!r}") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return ["-" if i == BLANK else self.phones[i - 1] for i in ids]


def check_lattice(lattice: np.ndarray, atol: float = 1e-9) -> None:
    if lattice.ndim != 2 or lattice.shape[0] < 1 or lattice.shape[1] < 2:
        raise LatticeError(f"lattice must be (T>=1, V+1>=2), got {lattice.shape}")
    row_mass = np.logaddexp.reduce(lattice, axis=1)
    worst = float(np.max(np.abs(row_mass)))
    if not worst <= atol:
        raise LatticeError(f"lattice rows are not normalized (max |logsumexp| = {worst:.3g})")


def check_seq(seq: Sequence[int], n_symbols: int) -> None:
    for i in seq:
        if i == BLANK:
            raise InvalidPhoneError("label sequence contains the blank id")
        if not 0 < i < n_symbols:
            raise InvalidPhoneError(f"phone id {i} outside 1..{n_symbols - 1}")


def expand_with_blanks(seq: Sequence[int]) -> list[int]:
    """Interleave blanks around every label: ``[c, a, t] -> [-, c, -, a, -, t, -]``."""
    out = [BLANK]
    for label in seq:
        if label == BLANK:
            raise InvalidPhoneError("label sequence contains the blank id")
        out.extend((int(label), BLANK))
    return out


def collapse(path: Sequence[int]) -> list[int]:
    """Merge repeated frame labels, then drop blanks."""
    return [k for k, _ in itertools.groupby(path) if k != BLANK]


def _skip_allowed(ext: Sequence[int]) -> np.ndarray:
    """Whether state ``s`` may be entered from ``s - 2`` (skipping a blank)."""
    ext = np.asarray(ext)
    allowed = np.zeros(len(ext), dtype=bool)
    if len(ext) > 2:
        allowed[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return allowed


def _forward(lp: np.ndarray, ext: list[int], skip: np.ndarray) -> np.ndarray:
    T, S = lp.shape[0], len(ext)
    emit = lp[:, ext]
    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]
    return alpha


def _backward(lp: np.ndarray, ext: list[int], skip: np.ndarray) -> np.ndarray:
    """``beta[t, s]``: log mass of frames ``t..T-1`` given state ``s`` at ``t`` (emission included)."""
    T, S = lp.shape[0], len(ext)
    emit = lp[:, ext]
    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]
    return beta


def _final(alpha_last: np.ndarray) -> float:
    if len(alpha_last) == 1:
        return float(alpha_last[0])
    return float(np.logaddexp(alpha_last[-1], alpha_last[-2]))


def ctc_log_prob(lattice: np.ndarray, seq: Sequence[int], check: bool = True) -> float:
    """``ln P(seq | X)`` summed over every frame path collapsing to ``seq``.

    Returns ``-inf`` when no path exists (e.g. the sequence needs more
    frames than the lattice has).
    """
    lattice = np.asarray(lattice, dtype=float)
    if check:
        check_lattice(lattice)
    check_seq(seq, lattice.shape[1])
    ext = expand_with_blanks(seq)
    alpha = _forward(lattice, ext, _skip_allowed(ext))
    return _final(alpha[-1])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def logprob_grad_to_logits(lattice: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Chain a gradient on log-probabilities through ``lattice = log_softmax(logits)``."""
    return grad - np.exp(lattice) * np.sum(grad, axis=1, keepdims=True)


def ctc_loss_and_grad(
    lattice: np.ndarray,
    seq: Sequence[int],
    wrt: str = "logits",
    check: bool = True,
) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``seq`` and its gradient.

    ``wrt="logits"`` (default) differentiates through the log-softmax that
    produced the lattice, so the gradient is ``softmax - occupancy``.
    ``wrt="logprobs"`` treats each lattice entry as a free coordinate and
    returns minus the state occupancy.
    """
    if wrt not in ("logits", "logprobs"):
        raise ValueError(f"wrt must be 'logits' or 'logprobs', got {wrt!r}")
    lattice = np.asarray(lattice, dtype=float)
    if check:
        check_lattice(lattice)
    check_seq(seq, lattice.shape[1])
    ext = expand_with_blanks(seq)
    skip = _skip_allowed(ext)
    alpha = _forward(lattice, ext, skip)
    log_p = _final(alpha[-1])
    if log_p == -np.inf:
        raise ZeroProbabilityError(
            f"sequence of length {len(seq)} has no CTC path in {lattice.shape[0]} frames"
        )
    beta = _backward(lattice, ext, skip)
    emit = lattice[:, ext]
    with np.errstate(invalid="ignore"):
        log_occ = alpha + beta - emit - log_p
    occ_states = np.where(np.isfinite(log_occ), np.exp(log_occ), 0.0)
    occupancy = np.zeros_like(lattice)
    np.add.at(occupancy, (slice(None), np.asarray(ext)), occ_states)
    grad = -occupancy
    if wrt == "logits":
        grad = logprob_grad_to_logits(lattice, grad)
    return -log_p, grad


@lru_cache(maxsize=64)
def _path_table(T: int, n_symbols: int) -> tuple[np.ndarray, tuple[tuple[int, ...], ...]]:
    paths = np.array(list(itertools.product(range(n_symbols), repeat=T)), dtype=np.intp)
    collapsed = tuple(tuple(collapse(p)) for p in paths.tolist())
    return paths, collapsed


def ctc_brute_force(lattice: np.ndarray, seq: Sequence[int]) -> float:
    """Enumerate all ``(V+1)^T`` frame paths and sum those collapsing to ``seq``."""
    lattice = np.asarray(lattice, dtype=float)
    T, n_symbols = lattice.shape
    if T > BRUTE_FORCE_MAX_T or n_symbols - 1 > BRUTE_FORCE_MAX_V:
        raise InstanceTooLargeError(
            f"brute force limited to T<={BRUTE_FORCE_MAX_T}, V<={BRUTE_FORCE_MAX_V}"
        )
    check_seq(seq, n_symbols)
    paths, collapsed = _path_table(T, n_symbols)
    target = tuple(int(s) for s in seq)
    keep = np.fromiter((c == target for c in collapsed), dtype=bool, count=len(collapsed))
    if not keep.any():
        return -np.inf
    scores = lattice[np.arange(T), paths[keep]].sum(axis=1)
    return float(np.logaddexp.reduce(scores))


def greedy_decode(lattice: np.ndarray) -> list[int]:
    """Best-path decoding; ``argmax`` resolves ties to the lowest index."""
    return collapse(np.argmax(np.asarray(lattice), axis=1).tolist())
