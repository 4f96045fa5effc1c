import numpy as np
import pytest

from support import natural_image, tiny_config
from trifuse.core.checkpoint import save_checkpoint
from trifuse.core.config import build_run_config
from trifuse.core.exceptions import ConfigError
from trifuse.models.schemas import EnhanceVariant
from trifuse.services.enhancer import Enhancer, refine_details
from trifuse.services.trifuse_net import build_model
from trifuse.services.wavelet import dwt2


@pytest.fixture
def enhancer(tiny):
    return Enhancer(build_model(tiny), tiny)


def test_untrained_default_model_enhances_a_64px_image():
    config = build_run_config({})
    out = Enhancer(build_model(config), config).enhance(natural_image(0) * 0.3)
    assert out.shape == (64, 64, 3)
    assert out.dtype == np.float32
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_same_seed_gives_identical_output(enhancer):
    low = natural_image(1, 32, 40) * 0.3
    np.testing.assert_array_equal(enhancer.enhance(low, seed=3), enhancer.enhance(low, seed=3))
    assert not np.array_equal(enhancer.enhance(low, seed=3), enhancer.enhance(low, seed=4))


def test_odd_sizes_come_back_unchanged(enhancer):
    low = natural_image(2, 37, 45) * 0.3
    assert enhancer.enhance(low, steps=2).shape == (37, 45, 3)


def test_untrained_pipeline_without_noise_module_is_identity(tiny):
    low = natural_image(3, 33, 41) * 0.4
    out = Enhancer(build_model(tiny), tiny, EnhanceVariant.NO_CNM).enhance(low)
    np.testing.assert_allclose(out, low, atol=1e-5)


def test_variants_skip_their_component(tiny):
    low = natural_image(4, 32, 32) * 0.4
    params = build_model(tiny)
    full = Enhancer(params, tiny).enhance(low)
    no_esm = Enhancer(params, tiny, "no_esm").enhance(low)
    # Untrained ESM is the identity, so only the noise module changes anything
    np.testing.assert_allclose(full, no_esm, atol=1e-5)


def test_refine_details_keeps_band_shapes(tiny):
    pyr = dwt2(natural_image(5, 16, 16), 1)
    refined = refine_details(pyr.details[0], build_model(tiny), tiny)
    for before, after in zip(pyr.details[0].as_tuple(), refined.as_tuple()):
        assert after.shape == before.shape
        np.testing.assert_allclose(after, before, atol=1e-5)


def test_input_validation(enhancer):
    with pytest.raises(ConfigError):
        enhancer.enhance(np.zeros((4, 16, 3)))
    with pytest.raises(ConfigError):
        enhancer.enhance(np.zeros((16, 16, 1)))
    with pytest.raises(ConfigError):
        enhancer.enhance(natural_image(6, 16, 16), steps=50)


def test_from_checkpoint(tmp_path, tiny):
    params = build_model(tiny)
    path = tmp_path / "model.trif"
    save_checkpoint(path, params.state(), tiny)
    loaded = Enhancer.from_checkpoint(path, "no_esm")
    assert loaded.variant is EnhanceVariant.NO_ESM
    assert loaded.config == tiny
    low = natural_image(7, 24, 24) * 0.3
    np.testing.assert_array_equal(loaded.enhance(low), Enhancer(params, tiny, "no_esm").enhance(low))


def test_larger_wavelet_depth(tiny):
    config = tiny_config(wavelet_levels=2)
    out = Enhancer(build_model(config), config).enhance(natural_image(8, 40, 36) * 0.3)
    assert out.shape == (40, 36, 3)
