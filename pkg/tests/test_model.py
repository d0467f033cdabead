import numpy as np
import pytest

from textmdd.contrastive import LabelPair, combined_loss
from textmdd.fusion import KINDS, GateVariant
from textmdd.model import (
    ModelDims,
    backward,
    encode_audio,
    encode_text,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from textmdd.oracles import model_gradient, small_model_instance

DIMS = ModelDims(n_phones=5, d_in=3, d=6, max_text_len=6)


def frames(T=7, seed=0):
    return np.random.default_rng(seed).normal(size=(T, DIMS.d_in))


def test_init_deterministic_and_seed_sensitive():
    a, b, c = init_params(3, DIMS), init_params(3, DIMS), init_params(4, DIMS)
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params if "W" in k)
    assert not a.params["fusion.b"].any()


def test_gate_mean_at_init():
    model = init_params(0, ModelDims(), GateVariant("TextGate"))
    rng = np.random.default_rng(0)
    means = []
    for _ in range(20):
        canonical = rng.integers(1, 13, size=8).tolist()
        out = forward(model, rng.normal(size=(20, 16)), canonical)
        means.append(out.gates.mean())
    assert 0.4 <= np.mean(means) <= 0.6


def test_audio_encoder_shape_and_position_free():
    model = init_params(0, DIMS)
    x = frames(5)
    x[3] = x[1]
    h = encode_audio(x, model)
    assert h.shape == (5, DIMS.d)
    np.testing.assert_array_equal(h[1], h[3])


def test_audio_encoder_zero_input_finite():
    model = init_params(0, DIMS)
    h = encode_audio(np.zeros((4, DIMS.d_in)), model)
    assert np.all(np.isfinite(h))


def test_audio_encoder_rejects_bad_dim():
    with pytest.raises(ValueError):
        encode_audio(np.zeros((4, DIMS.d_in + 1)), init_params(0, DIMS))


def test_text_encoder_shape_order_and_errors():
    model = init_params(0, DIMS)
    h = encode_text([1, 2, 3, 4], model)
    assert h.shape == (4, DIMS.d)
    assert not np.allclose(h, encode_text([4, 3, 2, 1], model)[::-1])
    assert encode_text([2], model).shape == (1, DIMS.d)
    with pytest.raises(ValueError):
        encode_text([6], model)
    with pytest.raises(ValueError):
        encode_text([1] * 7, model)


@pytest.mark.parametrize("kind", KINDS)
def test_lattice_rows_normalized_and_deterministic(kind):
    model = init_params(1, DIMS, GateVariant(kind, "softmax"))
    a = forward(model, frames(), [1, 2, 3])
    b = forward(model, frames(), [1, 2, 3])
    np.testing.assert_allclose(np.logaddexp.reduce(a.lattice, axis=1), 0.0, atol=1e-9)
    assert np.array_equal(a.lattice, b.lattice)


def test_saturated_gate_matches_audio_only_pipeline():
    model = init_params(2, DIMS, GateVariant("TextGate"))
    model.params["fusion.W"][:] = 0
    model.params["fusion.U"][:] = 0
    model.params["fusion.b"][:] = -50.0
    full = forward(model, frames(), [1, 2, 3]).lattice
    audio_only = forward(model, frames(), [1, 2, 3], audio_only=True).lattice
    np.testing.assert_allclose(full, audio_only, atol=1e-9, rtol=0)


def test_add_variant_zero_embeddings_matches_audio_only():
    model = init_params(3, DIMS, GateVariant("BaselineAdd", "softmax"))
    model.params["text.emb"][:] = 0
    model.params["text.pos"][:] = 0
    for k in range(DIMS.n_text_blocks):
        model.params[f"text.{k}.ln_b"][:] = 0
    full = forward(model, frames(), [1, 2, 3]).lattice
    audio_only = forward(model, frames(), [1, 2, 3], audio_only=True).lattice
    np.testing.assert_allclose(full, audio_only, atol=1e-9, rtol=0)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("contrast", [False, True])
def test_full_model_gradient(kind, contrast):
    assert model_gradient(seed=7, kind=kind, contrast=contrast) <= 1e-4


def test_freeze_zeroes_exactly_audio_subset():
    model, x, pair, cfg = small_model_instance(0, "TextGate", True)
    result = forward(model, x, pair.canonical)
    _, dlogits = combined_loss(result.lattice, pair, cfg)
    free = backward(model, result, dlogits)
    frozen = backward(model, result, dlogits, freeze_audio=True)
    for k in model.params:
        if k.startswith("audio."):
            assert not frozen[k].any()
            assert free[k].any()
        else:
            assert np.array_equal(frozen[k], free[k])


def test_freeze_gradient_matches_fd_on_rest():
    assert model_gradient(seed=3, kind="DoubleGate", contrast=True, freeze_audio=True) <= 1e-4


def test_zero_upstream_zero_gradients():
    model, x, pair, _ = small_model_instance(1, "DoubleGate", False)
    result = forward(model, x, pair.canonical)
    grads = backward(model, result, np.zeros_like(result.logits))
    assert set(grads) == set(model.params)
    assert all(not g.any() for g in grads.values())


def test_checkpoint_roundtrip(tmp_path):
    model = init_params(5, DIMS, GateVariant("DoubleGate", "tanh"))
    save_checkpoint(model, tmp_path / "a.npz")
    save_checkpoint(model, tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back = load_checkpoint(tmp_path / "a.npz")
    assert back.dims == model.dims and back.variant == model.variant and back.seed == 5
    assert all(np.array_equal(back.params[k], model.params[k]) for k in model.params)
    a = forward(model, frames(), [1, 2]).lattice
    assert np.array_equal(a, forward(back, frames(), [1, 2]).lattice)


def test_loss_pair_with_model():
    model = init_params(0, DIMS)
    result = forward(model, frames(9), [1, 2, 3])
    loss, grad = combined_loss(result.lattice, LabelPair([1, 2, 3], [1, 4, 3]))
    assert np.isfinite(loss) and grad.shape == result.logits.shape
