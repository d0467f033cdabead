"""Independent small-instance oracles for every numerical component.

Each suite compares a production path against a route that shares none of
its recursion: exhaustive path enumeration, central finite differences, or a
memoized textbook edit-distance recursion. ``run_all`` drives them for the
``oracle`` CLI command.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np

from . import ctc
from .contrastive import (
    ContrastConfig,
    LabelPair,
    combined_loss,
    contrastive_loss_seq,
    paired_path_dissimilarity,
    summed_pair_hinge,
)
from .ctc import collapse, ctc_brute_force, ctc_log_prob, ctc_loss_and_grad, log_softmax
from .fusion import KINDS, GateVariant, fuse, fuse_grad, init_gate_params
from .metrics import align_pair
from .model import ModelDims, backward, forward, init_params


@dataclass
class OracleResult:
    name: str
    max_error: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``max|a - n|`` scaled by the larger of the two arrays' max magnitude.

    Callers pass the whole gradient of one instance flattened, so a
    parameter block whose gradient is tiny is judged against the scale of
    the full gradient rather than its own finite-difference noise.
    """
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    if scale < floor:
        return diff / floor
    return diff / scale


def central_difference(f: Callable[[], float], x: np.ndarray, step: float) -> np.ndarray:
    """Numerical gradient of ``f()`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        up = f()
        x[idx] = old - step
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2 * step)
    return grad


def random_lattice(rng, T, V, scale=2.0):
    return log_softmax(rng.normal(0.0, scale, size=(T, V + 1)))


# -- CTC ---------------------------------------------------------------------


def ctc_vs_brute_force(n: int = 1000, seed: int = 0, max_T=6, max_V=3, max_U=3) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        T = int(rng.integers(1, max_T + 1))
        V = int(rng.integers(1, max_V + 1))
        U = int(rng.integers(0, max_U + 1))
        lattice = random_lattice(rng, T, V)
        seq = rng.integers(1, V + 1, size=U).tolist()
        dp, brute = ctc_log_prob(lattice, seq), ctc_brute_force(lattice, seq)
        if np.isneginf(dp) or np.isneginf(brute):
            err = 0.0 if dp == brute else np.inf
        else:
            err = abs(dp - brute)
        worst = max(worst, err)
    return OracleResult("ctc_log_prob vs path enumeration", worst, 1e-9, n)


def ctc_total_mass(seed: int = 0) -> OracleResult:
    """All label sequences of length <= T carry total probability 1 (V=2)."""
    rng = np.random.default_rng(seed)
    worst, cases = 0.0, 0
    for T in range(1, 5):
        lattice = random_lattice(rng, T, 2)
        mass = 0.0
        for U in range(T + 1):
            for seq in itertools.product((1, 2), repeat=U):
                lp = ctc_log_prob(lattice, list(seq))
                mass += np.exp(lp) if np.isfinite(lp) else 0.0
        worst = max(worst, abs(mass - 1.0))
        cases += 1
    return OracleResult("ctc probability mass over all sequences", worst, 1e-9, cases)


def ctc_gradient(n: int = 100, seed: int = 1, step: float = 1e-6) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n:
        T = int(rng.integers(1, 7))
        V = int(rng.integers(1, 4))
        seq = rng.integers(1, V + 1, size=int(rng.integers(0, 4))).tolist()
        logits = rng.normal(size=(T, V + 1))
        if not np.isfinite(ctc_log_prob(log_softmax(logits), seq)):
            continue
        _, grad = ctc_loss_and_grad(log_softmax(logits), seq)
        numeric = central_difference(lambda: ctc_loss_and_grad(log_softmax(logits), seq)[0], logits, step)
        worst = max(worst, max_relative_error(grad, numeric))
        done += 1
    return OracleResult("ctc gradient vs finite differences", worst, 1e-6, n)


# -- contrastive ---------------------------------------------------------------


def _single_substitution_paths(rng, T, V):
    path = rng.integers(0, V + 1, size=T)
    t = int(rng.integers(T))
    other = path.copy()
    other[t] = (path[t] + int(rng.integers(1, V + 1))) % (V + 1)
    return path.tolist(), other.tolist(), t


def paired_path_identity(n: int = 100, seed: int = 2) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        T, V = int(rng.integers(1, 8)), int(rng.integers(1, 5))
        lattice = random_lattice(rng, T, V)
        path, path_e, t = _single_substitution_paths(rng, T, V)
        frames = np.arange(T)
        full = lattice[frames, path_e].sum() - lattice[frames, path].sum()
        worst = max(worst, abs(full - paired_path_dissimilarity(lattice, path, path_e, t)))
    return OracleResult("paired-path dissimilarity vs full path products", worst, 1e-12, n)


def enumerate_pair_hinge(lattice: np.ndarray, pair: LabelPair, margin: float) -> float:
    """Frame-path enumeration of the summed pairwise hinge.

    Walks all ``(V+1)^T`` frame paths, keeps those collapsing to the
    annotation, rewrites the frames spent on the substituted label into the
    canonical label, and keeps the pair if the rewrite collapses to the
    canonical sequence.
    """
    T, n_symbols = lattice.shape
    target = list(pair.annotation)
    diff = [k for k, (a, b) in enumerate(zip(pair.canonical, pair.annotation)) if a != b]
    frames = np.arange(T)
    total = 0.0
    for path in itertools.product(range(n_symbols), repeat=T):
        if collapse(path) != target:
            continue
        paired = list(path)
        if diff:
            k = diff[0]
            # label index of each frame: count label-run starts so far
            label_idx, prev = -1, ctc.BLANK
            for t, sym in enumerate(path):
                if sym != ctc.BLANK and sym != prev:
                    label_idx += 1
                if sym != ctc.BLANK and label_idx == k:
                    paired[t] = pair.canonical[k]
                prev = sym
            if collapse(paired) != list(pair.canonical):
                continue
        d = lattice[frames, paired].sum() - lattice[frames, list(path)].sum()
        total += max(d + margin, 0.0)
    return float(total)


def summed_hinge_vs_enumeration(n: int = 60, seed: int = 3) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        T, V = int(rng.integers(1, 7)), int(rng.integers(2, 4))
        U = int(rng.integers(1, 4))
        annotation = rng.integers(1, V + 1, size=U).tolist()
        canonical = list(annotation)
        if rng.random() < 0.8:
            k = int(rng.integers(U))
            canonical[k] = int((annotation[k] + rng.integers(1, V)) % V) + 1
        lattice = random_lattice(rng, T, V)
        margin = float(rng.choice([0.0, 1.0, 16.0]))
        pair = LabelPair(canonical, annotation)
        got = summed_pair_hinge(lattice, pair, ContrastConfig(margin))
        want = enumerate_pair_hinge(lattice, pair, margin)
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    return OracleResult("summed pair hinge vs frame-path enumeration", worst, 1e-9, n)


def combined_loss_gradient(n: int = 100, seed: int = 4, step: float = 1e-6) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n:
        T, V = int(rng.integers(3, 8)), int(rng.integers(2, 5))
        U = int(rng.integers(1, 3))
        annotation = rng.integers(1, V + 1, size=U).tolist()
        canonical = list(annotation)
        k = int(rng.integers(U))
        canonical[k] = int((annotation[k] + rng.integers(1, V)) % V) + 1
        logits = rng.normal(size=(T, V + 1))
        pair = LabelPair(canonical, annotation)
        cfg = ContrastConfig(float(rng.uniform(0.5, 3.0)))
        lat = log_softmax(logits)
        if not np.isfinite(ctc_log_prob(lat, annotation)) or not np.isfinite(ctc_log_prob(lat, canonical)):
            continue
        arg = ctc_log_prob(lat, canonical) - ctc_log_prob(lat, annotation) + cfg.margin
        if abs(arg) < 1e-3:  # stay clear of the hinge kink
            continue
        _, grad = combined_loss(lat, pair, cfg)
        numeric = central_difference(lambda: combined_loss(log_softmax(logits), pair, cfg)[0], logits, step)
        worst = max(worst, max_relative_error(grad, numeric))
        done += 1
    return OracleResult("combined loss gradient vs finite differences", worst, 1e-6, n)


def contrastive_identities(n: int = 50, seed: int = 5) -> OracleResult:
    """Equal sequences give loss == m and zero gradient; an inactive hinge gives zeros."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        T, V = int(rng.integers(2, 8)), int(rng.integers(2, 5))
        seq = rng.integers(1, V + 1, size=1).tolist()
        lattice = random_lattice(rng, T, V)
        loss, grad = contrastive_loss_seq(lattice, LabelPair(seq, seq), ContrastConfig(16.0))
        worst = max(worst, abs(loss - 16.0), float(np.max(np.abs(grad))))
        other = [seq[0] % V + 1]
        loss, grad = contrastive_loss_seq(lattice, LabelPair(other, seq), ContrastConfig(0.0))
        lp_o, lp_s = ctc_log_prob(lattice, other), ctc_log_prob(lattice, seq)
        if lp_o - lp_s <= 0:
            worst = max(worst, abs(loss), float(np.max(np.abs(grad))))
    return OracleResult("contrastive hinge identities", worst, 0.0, n)


# -- fusion and model ----------------------------------------------------------


def fusion_gradient(n: int = 50, seed: int = 6, step: float = 1e-6) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst, cases = 0.0, 0
    for kind in KINDS:
        for act in ("sigmoid", "softmax", "tanh"):
            variant = GateVariant(kind, act)
            for _ in range(max(1, n // 3)):
                T, N, d = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
                audio, text = rng.normal(size=(T, d)), rng.normal(size=(N, d))
                params = init_gate_params(rng, d, variant)
                for v in params.values():
                    v += rng.normal(0.0, 0.3, size=v.shape)
                up = rng.normal(size=(T, d))
                da, dt, dp = fuse_grad(audio, text, params, variant, up)

                def f():
                    return float(np.sum(up * fuse(audio, text, params, variant).fused))

                pairs = [(da, audio), (dt, text)] + [(dp[k], params[k]) for k in params]
                analytic = np.concatenate([a.ravel() for a, _ in pairs])
                numeric = np.concatenate([central_difference(f, x, step).ravel() for _, x in pairs])
                worst = max(worst, max_relative_error(analytic, numeric))
                cases += 1
    return OracleResult("fusion gradients vs finite differences", worst, 1e-5, cases)


def small_model_instance(seed: int, kind: str, contrast: bool, activation: str | None = None):
    """A d=4, T=5, N=3 model and utterance for whole-model gradient checks."""
    rng = np.random.default_rng(1000 + seed)
    dims = ModelDims(n_phones=3, d_in=3, d=4, max_text_len=3)
    act = activation or ("softmax" if kind.startswith("Baseline") else "sigmoid")
    model = init_params(seed, dims, GateVariant(kind, act))
    frames = rng.normal(size=(5, dims.d_in))
    canonical = rng.integers(1, 4, size=3).tolist()
    annotation = list(canonical)
    k = int(rng.integers(3))
    annotation[k] = canonical[k] % 3 + 1
    return model, frames, LabelPair(canonical, annotation), ContrastConfig(16.0, contrast)


def model_gradient(seed: int, kind: str, contrast: bool, step: float = 1e-5, freeze_audio=False) -> float:
    model, frames, pair, cfg = small_model_instance(seed, kind, contrast)

    def loss():
        return combined_loss(forward(model, frames, pair.canonical).lattice, pair, cfg)[0]

    result = forward(model, frames, pair.canonical)
    _, dlogits = combined_loss(result.lattice, pair, cfg)
    grads = backward(model, result, dlogits, freeze_audio=freeze_audio)
    names = [k for k in model.params if not (freeze_audio and k.startswith("audio."))]
    analytic = np.concatenate([grads[k].ravel() for k in names])
    numeric = np.concatenate([central_difference(loss, model.params[k], step).ravel() for k in names])
    return max_relative_error(analytic, numeric)


def model_gradients(seeds: int = 2) -> OracleResult:
    worst, cases = 0.0, 0
    for seed in range(seeds):
        for kind in KINDS:
            for contrast in (False, True):
                worst = max(worst, model_gradient(seed, kind, contrast))
                cases += 1
    return OracleResult("full-model gradients vs finite differences", worst, 1e-4, cases)


# -- alignment -------------------------------------------------------------------


@lru_cache(maxsize=None)
def recursive_edit_distance(a: tuple, b: tuple) -> int:
    """Textbook suffix recursion, memoized across calls."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        recursive_edit_distance(a[1:], b) + 1,
        recursive_edit_distance(a, b[1:]) + 1,
        recursive_edit_distance(a[1:], b[1:]) + (a[0] != b[0]),
    )


def all_sequences(max_len: int, alphabet=(1, 2, 3)) -> Iterator[tuple]:
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def alignment_vs_recursion(max_len: int = 4) -> OracleResult:
    seqs = list(all_sequences(max_len))
    worst, cases = 0, 0
    for a in seqs:
        for b in seqs:
            worst = max(worst, abs(align_pair(a, b).distance - recursive_edit_distance(a, b)))
            cases += 1
    return OracleResult("alignment distance vs recursive edit distance", float(worst), 0.0, cases)


# -- driver ----------------------------------------------------------------------


def _mutated_skip(ext):
    """Fault injection: lets the CTC lattice skip a blank between equal labels."""
    ext = np.asarray(ext)
    allowed = np.zeros(len(ext), dtype=bool)
    if len(ext) > 2:
        allowed[2:] = ext[2:] != ctc.BLANK
    return allowed


MUTATIONS = {"ctc-skip": (ctc, "_skip_allowed", _mutated_skip)}


@contextlib.contextmanager
def mutation(name: str | None):
    if name is None:
        yield
        return
    module, attr, replacement = MUTATIONS[name]
    original = getattr(module, attr)
    setattr(module, attr, replacement)
    try:
        yield
    finally:
        setattr(module, attr, original)


SUITES = (
    ctc_vs_brute_force,
    ctc_total_mass,
    ctc_gradient,
    paired_path_identity,
    summed_hinge_vs_enumeration,
    contrastive_identities,
    combined_loss_gradient,
    fusion_gradient,
    model_gradients,
    alignment_vs_recursion,
)


def run_all(mutate: str | None = None) -> list:
    with mutation(mutate):
        return [suite() for suite in SUITES]
