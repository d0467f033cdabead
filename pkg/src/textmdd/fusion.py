"""Text-audio fusion layers: the textual modulation gate and its variants.

Each audio frame attends over the canonical phone features with a raw
dot-product score, producing a text context vector ``c_t``. The variants
differ in how ``c_t`` is merged back into the audio stream:

``TextGate``        y = h + g * c,  g = sigmoid(h W + c U + b)
``AudioGate``       y = g * h + c
``DoubleGate``      y = g_a * h + g * c   (independent parameters for g_a)
``BaselineConcat``  y = [h ; c] P + p
``BaselineAdd``     y = h + c

Parameters live in a flat mapping with keys ``W, U, b`` (text-branch gate),
``W_a, U_a, b_a`` (audio-branch gate of DoubleGate) and ``P, p`` (concat
projection). Only the keys a variant uses need to be present.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .nn import sigmoid, softmax, softmax_backward

KINDS = ("BaselineConcat", "BaselineAdd", "DoubleGate", "TextGate", "AudioGate")
ACTIVATIONS = ("sigmoid", "softmax", "tanh")

# Named configurations; the suffix "Contrast" is handled by the trainer.
PRESETS = {
    "Baseline": ("BaselineConcat", "softmax"),
    "BaselineConcat": ("BaselineConcat", "softmax"),
    "BaselineAdd": ("BaselineAdd", "softmax"),
    "DoubleGate": ("DoubleGate", "sigmoid"),
    "TextGate": ("TextGate", "sigmoid"),
    "TextGateSigma": ("TextGate", "softmax"),
    "TextGatePhi": ("TextGate", "tanh"),
    "AudioGate": ("AudioGate", "sigmoid"),
}


@dataclass(frozen=True)
class GateVariant:
    kind: str = "TextGate"
    activation: str = "sigmoid"
    scale_scores: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown fusion kind {self.kind!r}; choose from {KINDS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")

    @classmethod
    def from_name(cls, name: str, scale_scores: bool = False) -> "GateVariant":
        try:
            kind, act = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(kind, act, scale_scores)

    @property
    def param_names(self) -> tuple[str, ...]:
        return {
            "BaselineConcat": ("P", "p"),
            "BaselineAdd": (),
            "DoubleGate": ("W", "U", "b", "W_a", "U_a", "b_a"),
            "TextGate": ("W", "U", "b"),
            "AudioGate": ("W", "U", "b"),
        }[self.kind]


class FusionOutput(NamedTuple):
    fused: np.ndarray
    alpha: np.ndarray
    gates: np.ndarray | tuple[np.ndarray, np.ndarray] | None


def init_gate_params(rng: np.random.Generator, d: int, variant: GateVariant) -> dict:
    params = {}
    for name in variant.param_names:
        if name in ("b", "b_a", "p"):
            params[name] = np.zeros(d)
        elif name == "P":
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(2 * d), size=(2 * d, d))
        else:
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
    return params


def _check_shapes(audio, text):
    if audio.ndim != 2 or text.ndim != 2:
        raise ValueError("audio and text features must be 2-D")
    if text.shape[0] == 0:
        raise ValueError("text features must have at least one row")
    if audio.shape[1] != text.shape[1]:
        raise ValueError(f"feature dims differ: audio {audio.shape[1]} vs text {text.shape[1]}")


def _activate(scores, activation):
    if activation == "sigmoid":
        return sigmoid(scores)
    if activation == "tanh":
        return np.tanh(scores)
    return softmax(scores, axis=1)


def _activate_backward(dalpha, alpha, activation):
    if activation == "sigmoid":
        return dalpha * alpha * (1.0 - alpha)
    if activation == "tanh":
        return dalpha * (1.0 - alpha**2)
    return softmax_backward(dalpha, alpha, axis=1)


def attention_context(
    audio: np.ndarray, text: np.ndarray, activation: str = "sigmoid", scale_scores: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Attention weights ``(T, N)`` over text positions and the context ``(T, d)``."""
    audio, text = np.asarray(audio, float), np.asarray(text, float)
    _check_shapes(audio, text)
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    scores = audio @ text.T
    if scale_scores:
        scores = scores / np.sqrt(audio.shape[1])
    alpha = _activate(scores, activation)
    return alpha, alpha @ text


def _gate(h, c, params, suffix=""):
    return sigmoid(h @ params["W" + suffix] + c @ params["U" + suffix] + params["b" + suffix])


def _fuse_forward(audio, text, params, variant, gate_clamp=None):
    audio, text = np.asarray(audio, float), np.asarray(text, float)
    alpha, ctx = attention_context(audio, text, variant.activation, variant.scale_scores)
    kind = variant.kind
    if gate_clamp is not None and kind not in ("TextGate", "DoubleGate"):
        raise ValueError(f"{kind} has no gate on the text branch to clamp")
    g = g_a = None
    if kind == "TextGate":
        g = np.full_like(ctx, gate_clamp) if gate_clamp is not None else _gate(audio, ctx, params)
        fused = audio + g * ctx
    elif kind == "AudioGate":
        g = _gate(audio, ctx, params)
        fused = g * audio + ctx
    elif kind == "DoubleGate":
        if gate_clamp is not None:
            g, g_a = np.full_like(ctx, gate_clamp), np.ones_like(ctx)
        else:
            g, g_a = _gate(audio, ctx, params), _gate(audio, ctx, params, "_a")
        fused = g_a * audio + g * ctx
    elif kind == "BaselineConcat":
        fused = np.concatenate([audio, ctx], axis=1) @ params["P"] + params["p"]
    else:
        fused = audio + ctx
    gates = (g_a, g) if kind == "DoubleGate" else g
    cache = (audio, text, alpha, ctx, g, g_a, gate_clamp)
    return FusionOutput(fused, alpha, gates), cache


def fuse(
    audio: np.ndarray,
    text: np.ndarray,
    params: Mapping[str, np.ndarray],
    variant: GateVariant,
    gate_clamp: float | None = None,
) -> FusionOutput:
    """Fuse text context into the audio stream.

    ``gate_clamp`` pins the text-branch gate to a constant (for DoubleGate
    the audio-branch gate is pinned to 1 alongside it), which is how the
    pass-through and add-equivalence properties are exercised.
    """
    out, _ = _fuse_forward(audio, text, params, variant, gate_clamp)
    return out


def _gate_backward(dg, h, c, g, params, grads, suffix=""):
    dz = dg * g * (1.0 - g)
    grads["W" + suffix] = h.T @ dz
    grads["U" + suffix] = c.T @ dz
    grads["b" + suffix] = dz.sum(axis=0)
    return dz @ params["W" + suffix].T, dz @ params["U" + suffix].T


def _fuse_backward(dy, cache, params, variant):
    audio, text, alpha, ctx, g, g_a, gate_clamp = cache
    kind = variant.kind
    grads = {name: np.zeros_like(params[name]) for name in variant.param_names}
    if kind == "TextGate":
        d_audio, d_ctx = dy.copy(), dy * g
        if gate_clamp is None:
            dh, dc = _gate_backward(dy * ctx, audio, ctx, g, params, grads)
            d_audio += dh
            d_ctx += dc
    elif kind == "AudioGate":
        d_audio, d_ctx = dy * g, dy.copy()
        dh, dc = _gate_backward(dy * audio, audio, ctx, g, params, grads)
        d_audio += dh
        d_ctx += dc
    elif kind == "DoubleGate":
        d_audio, d_ctx = dy * g_a, dy * g
        if gate_clamp is None:
            dh, dc = _gate_backward(dy * ctx, audio, ctx, g, params, grads)
            dh_a, dc_a = _gate_backward(dy * audio, audio, ctx, g_a, params, grads, "_a")
            d_audio += dh + dh_a
            d_ctx += dc + dc_a
    elif kind == "BaselineConcat":
        d = audio.shape[1]
        grads["P"] = np.concatenate([audio, ctx], axis=1).T @ dy
        grads["p"] = dy.sum(axis=0)
        dcat = dy @ params["P"].T
        d_audio, d_ctx = dcat[:, :d], dcat[:, d:]
    else:
        d_audio, d_ctx = dy.copy(), dy.copy()

    # context = alpha @ text; alpha = act(scores); scores = audio @ text.T
    d_alpha = d_ctx @ text.T
    d_text = alpha.T @ d_ctx
    d_scores = _activate_backward(d_alpha, alpha, variant.activation)
    if variant.scale_scores:
        d_scores = d_scores / np.sqrt(audio.shape[1])
    d_audio += d_scores @ text
    d_text += d_scores.T @ audio
    return d_audio, d_text, grads


def fuse_grad(
    audio: np.ndarray,
    text: np.ndarray,
    params: Mapping[str, np.ndarray],
    variant: GateVariant,
    upstream: np.ndarray,
    gate_clamp: float | None = None,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Gradients of ``sum(upstream * fused)`` w.r.t. audio, text and the fusion params."""
    _, cache = _fuse_forward(audio, text, params, variant, gate_clamp)
    return _fuse_backward(np.asarray(upstream, float), cache, params, variant)
