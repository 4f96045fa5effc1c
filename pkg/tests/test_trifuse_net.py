import numpy as np
import pytest

from support import check_gradients, randomized_params, tiny_config
from trifuse.core.config import build_run_config
from trifuse.core.exceptions import ArgumentError, CheckpointError, ShapeError
from trifuse.models.schemas import CnmConfig, EsmConfig
from trifuse.services.autodiff import Tensor, backward, precision
from trifuse.services.layers import ModelParams
from trifuse.services.trifuse_net import (
    build_model,
    cnm_predict_noise,
    dilated_residual_block,
    esm_apply,
    init_residual_block,
    init_trifuse_params,
    timestep_embedding,
    training_loss,
)


def test_default_architecture_size():
    params = build_model(build_run_config({}))
    cnm = sum(t.data.size for name, t in params.items() if name.startswith("cnm."))
    esm = sum(t.data.size for name, t in params.items() if name.startswith("esm."))
    assert cnm == 59907
    assert esm == 136041
    assert params.num_parameters() == 195948


def test_initialisation_is_seeded():
    config = tiny_config()
    a, b = init_trifuse_params(config.cnm_config(), config.esm_config(), 3), \
        init_trifuse_params(config.cnm_config(), config.esm_config(), 3)
    c = init_trifuse_params(config.cnm_config(), config.esm_config(), 4)
    for name, tensor in a.items():
        np.testing.assert_array_equal(tensor.data, b[name].data)
    assert not np.array_equal(a["cnm.enc0.w"].data, c["cnm.enc0.w"].data)


def test_channel_mismatch_is_rejected():
    with pytest.raises(ArgumentError):
        init_trifuse_params(CnmConfig(channels=3), EsmConfig(channels=1), 0)


def test_timestep_embedding_layout():
    emb = timestep_embedding(5, 8, batch=2)
    assert emb.shape == (2, 8)
    assert emb[0, 0] == pytest.approx(np.sin(5.0))
    assert emb[0, 4] == pytest.approx(np.cos(5.0))
    np.testing.assert_array_equal(emb[0], emb[1])
    assert timestep_embedding([1, 2, 3], 7, batch=3).shape == (3, 7)
    with pytest.raises(ArgumentError):
        timestep_embedding(0, 8, batch=1)
    with pytest.raises(ShapeError):
        timestep_embedding([1, 2], 8, batch=3)


def test_untrained_noise_predictor_outputs_zero(rng):
    config = tiny_config()
    params = build_model(config)
    x_t = rng.normal(size=(2, 3, 8, 12))
    out = cnm_predict_noise(x_t, [3, 17], rng.normal(size=x_t.shape), params, config.cnm_config())
    assert out.shape == x_t.shape
    np.testing.assert_array_equal(out.data, 0.0)


def test_noise_predictor_needs_dims_divisible_by_four(rng):
    config = tiny_config()
    params = build_model(config)
    x = rng.normal(size=(1, 3, 10, 8))
    with pytest.raises(ShapeError):
        cnm_predict_noise(x, 1, x, params, config.cnm_config())
    with pytest.raises(ShapeError):
        cnm_predict_noise(x[:, :2], 1, x[:, :2], params, config.cnm_config())


def test_untrained_edge_module_is_identity(rng):
    config = tiny_config()
    params = build_model(config)
    bands = [rng.normal(size=(2, 3, 8, 8)).astype(np.float32) for _ in range(3)]
    for mode in (False, True):
        refined = esm_apply(bands, params, config.esm_config(), training=mode)
        for before, after in zip(bands, refined):
            np.testing.assert_array_equal(after.data, before)


def test_edge_module_rejects_mismatched_bands(rng):
    config = tiny_config()
    params = build_model(config)
    with pytest.raises(ShapeError):
        esm_apply([rng.normal(size=(1, 3, 8, 8))] * 2, params, config.esm_config())
    with pytest.raises(ShapeError):
        esm_apply([rng.normal(size=(1, 3, 8, 8))] * 2 + [rng.normal(size=(1, 3, 4, 8))],
                  params, config.esm_config())
    with pytest.raises(ShapeError):
        esm_apply([rng.normal(size=(1, 3, 7, 7))] * 3, params, config.esm_config())


@pytest.mark.parametrize("dilation", [1, 2, 4])
def test_residual_block_with_zero_convolutions_is_identity(rng, dilation):
    params = ModelParams()
    init_residual_block(params, "blk", rng, 4)
    for name in ("conv1", "conv2"):
        params[f"blk.{name}.w"].data[...] = 0.0
    x = rng.normal(size=(2, 4, 9, 7)).astype(np.float32)
    out = dilated_residual_block(x, params, "blk", dilation)
    assert out.shape == x.shape
    np.testing.assert_array_equal(out.data, x)


def test_residual_block_preserves_size_with_random_weights(rng):
    params = ModelParams()
    init_residual_block(params, "blk", rng, 4)
    x = rng.normal(size=(1, 4, 11, 13))
    assert dilated_residual_block(x, params, "blk", 4, training=True).shape == (1, 4, 11, 13)
    with pytest.raises(ShapeError):
        dilated_residual_block(rng.normal(size=(1, 3, 8, 8)), params, "blk", 1)


def test_noise_predictor_gradients():
    rng = np.random.default_rng(10)
    config = tiny_config()
    with precision(np.float64):
        params = randomized_params(config, 10)
        x_t = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True)
        condition = rng.normal(size=(2, 3, 8, 8))
        weights = rng.normal(size=(2, 3, 8, 8))
        build = lambda: (cnm_predict_noise(x_t, [4, 9], condition, params, config.cnm_config()) * weights).sum()
        tensors = [x_t] + [t for name, t in params.items() if name.startswith("cnm.")]
        backward(build(), params=tensors)
        assert check_gradients(build, tensors, rng, entries_per_tensor=2) is None


@pytest.mark.parametrize("attention", ["cross", "self"])
def test_edge_module_gradients(attention):
    rng = np.random.default_rng(11)
    config = tiny_config(esm_attention=attention)
    with precision(np.float64):
        params = randomized_params(config, 11)
        bands = [Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True) for _ in range(3)]
        weights = [rng.normal(size=(2, 3, 8, 8)) for _ in range(3)]

        def build():
            refined = esm_apply(bands, params, config.esm_config(), training=True)
            return sum(((r * w).sum() for r, w in zip(refined[1:], weights[1:])), (refined[0] * weights[0]).sum())

        tensors = bands + [t for name, t in params.items() if name.startswith("esm.")]
        backward(build(), params=tensors)
        assert check_gradients(build, tensors, rng, entries_per_tensor=2) is None


def test_training_loss_examples():
    zeros = np.zeros((2, 3, 4, 4))
    assert training_loss(zeros, zeros).item() == pytest.approx(0.0)
    assert training_loss(zeros + 1.0, zeros).item() == pytest.approx(1.0)
    loss = training_loss(zeros + 1.0, zeros, zeros + 0.5, zeros, weight=0.1)
    assert loss.item() == pytest.approx(1.0 + 0.1 * 0.5)


def test_training_loss_matches_numpy(rng):
    pred, true = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    enhanced, reference = rng.random((2, 3, 8, 8)), rng.random((2, 3, 8, 8))
    with precision(np.float64):
        loss = training_loss(pred, true, enhanced, reference, weight=0.3)
    expected = np.mean((pred - true) ** 2) + 0.3 * np.mean(np.abs(enhanced - reference))
    assert loss.item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ShapeError):
        training_loss(pred, true[:1])


def test_build_model_restores_state_and_rejects_other_architectures():
    config = tiny_config()
    trained = randomized_params(config, 5)
    restored = build_model(config, trained.state())
    for name, tensor in trained.items():
        np.testing.assert_array_equal(restored[name].data, tensor.data)
    with pytest.raises(CheckpointError):
        build_model(tiny_config(base_channels=16), trained.state())
