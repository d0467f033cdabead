"""Small trainable recognizer: audio encoder, text encoder, fusion, CTC head.

All parameters live in one flat ``dict[str, ndarray]`` whose keys are
prefixed by component (``audio.``, ``text.``, ``fusion.``, ``head.``), which
keeps the optimizer, freezing and checkpointing trivial.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import __version__
from .ctc import log_softmax
from .fusion import GateVariant, _fuse_backward, _fuse_forward, init_gate_params
from .nn import (
    attention_block_backward,
    attention_block_forward,
    gelu_backward,
    gelu_forward,
    layer_norm_backward,
    layer_norm_forward,
)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelDims:
    n_phones: int = 12
    d_in: int = 16
    d: int = 32
    n_audio_blocks: int = 2
    n_text_blocks: int = 2
    max_text_len: int = 16

    @property
    def vocab(self) -> int:
        return self.n_phones + 1


@dataclass
class ToyMDDModel:
    dims: ModelDims
    variant: GateVariant
    params: dict
    seed: int = 0

    def copy(self) -> "ToyMDDModel":
        return ToyMDDModel(self.dims, self.variant, {k: v.copy() for k, v in self.params.items()}, self.seed)


class ForwardResult(NamedTuple):
    lattice: np.ndarray
    logits: np.ndarray
    alpha: np.ndarray | None
    gates: object
    cache: tuple


def _attn_block_params(rng, d, prefix):
    scale = 1.0 / np.sqrt(d)
    out = {prefix + n: rng.normal(0.0, scale, size=(d, d)) for n in ("Wq", "Wk", "Wv", "Wo")}
    out[prefix + "ln_g"] = np.ones(d)
    out[prefix + "ln_b"] = np.zeros(d)
    return out


def init_params(seed: int, dims: ModelDims = ModelDims(), variant: GateVariant = GateVariant()) -> ToyMDDModel:
    """Deterministic initialization from a PCG64 stream seeded with ``seed``.

    Weights are ``N(0, 1/fan_in)``; biases and the gate bias start at zero,
    layer-norm gains at one.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    d = dims.d
    p = {
        "audio.W_in": rng.normal(0.0, 1.0 / np.sqrt(dims.d_in), size=(dims.d_in, d)),
        "audio.b_in": np.zeros(d),
    }
    for k in range(dims.n_audio_blocks):
        p[f"audio.{k}.W"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
        p[f"audio.{k}.b"] = np.zeros(d)
        p[f"audio.{k}.ln_g"] = np.ones(d)
        p[f"audio.{k}.ln_b"] = np.zeros(d)
    p["text.emb"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(dims.n_phones, d))
    p["text.pos"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(dims.max_text_len, d))
    for k in range(dims.n_text_blocks):
        p.update(_attn_block_params(rng, d, f"text.{k}."))
    for name, value in init_gate_params(rng, d, variant).items():
        p["fusion." + name] = value
    p.update(_attn_block_params(rng, d, "head.attn."))
    p["head.W_out"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, dims.vocab))
    p["head.b_out"] = np.zeros(dims.vocab)
    return ToyMDDModel(dims, variant, p, seed)


def _sub(params, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def _encode_audio(frames, params, dims):
    frames = np.asarray(frames, float)
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] != dims.d_in:
        raise ValueError(f"frames must be (T>=1, {dims.d_in}), got {frames.shape}")
    h = frames @ params["audio.W_in"] + params["audio.b_in"]
    caches = []
    for k in range(dims.n_audio_blocks):
        z = h @ params[f"audio.{k}.W"] + params[f"audio.{k}.b"]
        a, gcache = gelu_forward(z)
        out, lcache = layer_norm_forward(h + a, params[f"audio.{k}.ln_g"], params[f"audio.{k}.ln_b"])
        caches.append((h, gcache, lcache))
        h = out
    return h, (frames, caches)


def _encode_audio_backward(dh, cache, params, dims, grads):
    frames, caches = cache
    for k in reversed(range(dims.n_audio_blocks)):
        h_in, gcache, lcache = caches[k]
        dres, grads[f"audio.{k}.ln_g"], grads[f"audio.{k}.ln_b"] = layer_norm_backward(dh, lcache)
        dz = gelu_backward(dres, gcache)
        grads[f"audio.{k}.W"] = h_in.T @ dz
        grads[f"audio.{k}.b"] = dz.sum(axis=0)
        dh = dres + dz @ params[f"audio.{k}.W"].T
    grads["audio.W_in"] = frames.T @ dh
    grads["audio.b_in"] = dh.sum(axis=0)


def _encode_text(phones, params, dims):
    ids = np.asarray(phones, dtype=np.intp)
    n = len(ids)
    if n == 0:
        raise ValueError("canonical sequence is empty")
    if n > dims.max_text_len:
        raise ValueError(f"canonical length {n} exceeds max_text_len {dims.max_text_len}")
    if ids.min() < 1 or ids.max() > dims.n_phones:
        raise ValueError(f"phone ids must lie in 1..{dims.n_phones}")
    h = params["text.emb"][ids - 1] + params["text.pos"][:n]
    caches = []
    for k in range(dims.n_text_blocks):
        h, c = attention_block_forward(h, params, f"text.{k}.")
        caches.append(c)
    return h, (ids, caches)


def _encode_text_backward(dh, cache, params, dims, grads):
    ids, caches = cache
    for k in reversed(range(dims.n_text_blocks)):
        dh, g = attention_block_backward(dh, caches[k], params, f"text.{k}.")
        grads.update(g)
    demb = np.zeros_like(params["text.emb"])
    np.add.at(demb, ids - 1, dh)
    grads["text.emb"] = demb
    dpos = np.zeros_like(params["text.pos"])
    dpos[: len(ids)] = dh
    grads["text.pos"] = dpos


def encode_audio(frames: np.ndarray, model: ToyMDDModel) -> np.ndarray:
    """Position-free residual GELU stack, ``(T, d_in) -> (T, d)``."""
    return _encode_audio(frames, model.params, model.dims)[0]


def encode_text(phones: Sequence[int], model: ToyMDDModel) -> np.ndarray:
    """Embedding plus learned positions through the self-attention blocks, ``(N, d)``."""
    return _encode_text(phones, model.params, model.dims)[0]


def forward(
    model: ToyMDDModel,
    frames: np.ndarray,
    canonical: Sequence[int],
    audio_only: bool = False,
    gate_clamp: float | None = None,
) -> ForwardResult:
    """Run the full pipeline and return the normalized log-probability lattice.

    ``audio_only`` bypasses the text encoder and fusion entirely.
    """
    p, dims = model.params, model.dims
    audio, a_cache = _encode_audio(frames, p, dims)
    if audio_only:
        fused, alpha, gates, t_cache, f_cache = audio, None, None, None, None
    else:
        text, t_cache = _encode_text(canonical, p, dims)
        fout, f_cache = _fuse_forward(audio, text, _sub(p, "fusion."), model.variant, gate_clamp)
        fused, alpha, gates = fout
    h, h_cache = attention_block_forward(fused, p, "head.attn.")
    logits = h @ p["head.W_out"] + p["head.b_out"]
    lattice = log_softmax(logits)
    return ForwardResult(lattice, logits, alpha, gates, (a_cache, t_cache, f_cache, h_cache, h))


def backward(
    model: ToyMDDModel,
    result: ForwardResult,
    dlogits: np.ndarray,
    freeze_audio: bool = False,
) -> dict:
    """Gradients for every parameter given ``d loss / d logits``.

    With ``freeze_audio`` the audio-encoder entries are returned as exact
    zeros; all other entries are unaffected.
    """
    p, dims = model.params, model.dims
    a_cache, t_cache, f_cache, h_cache, h = result.cache
    grads: dict = {}
    grads["head.W_out"] = h.T @ dlogits
    grads["head.b_out"] = dlogits.sum(axis=0)
    dh = dlogits @ p["head.W_out"].T
    dfused, g = attention_block_backward(dh, h_cache, p, "head.attn.")
    grads.update(g)
    if f_cache is None:
        d_audio = dfused
        for k in p:
            if k.startswith(("text.", "fusion.")):
                grads[k] = np.zeros_like(p[k])
    else:
        d_audio, d_text, fgrads = _fuse_backward(dfused, f_cache, _sub(p, "fusion."), model.variant)
        grads.update({"fusion." + k: v for k, v in fgrads.items()})
        _encode_text_backward(d_text, t_cache, p, dims, grads)
    if freeze_audio:
        for k in p:
            if k.startswith("audio."):
                grads[k] = np.zeros_like(p[k])
    else:
        _encode_audio_backward(d_audio, a_cache, p, dims, grads)
    return grads


def save_checkpoint(model: ToyMDDModel, path: str | Path) -> None:
    """Write an ``.npz`` archive: one little-endian float64 array per parameter.

    A ``__meta__`` uint8 entry holds UTF-8 JSON with the format number,
    package version, dims, variant and seed.
    """
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": __version__,
        "dims": asdict(model.dims),
        "variant": asdict(model.variant),
        "seed": model.seed,
    }
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in sorted(model.params.items())}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    # np.savez stamps the wall clock into the zip headers; fix it for reproducible bytes
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path: str | Path) -> ToyMDDModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        params = {k: data[k].astype(float) for k in data.files if k != "__meta__"}
    return ToyMDDModel(ModelDims(**meta["dims"]), GateVariant(**meta["variant"]), params, meta["seed"])
