"""
Enhancer Service
Wavelet + CNM + ESM inference pipeline
"""
from pathlib import Path
from typing import Optional, Union

import numpy as np
from loguru import logger

from trifuse.core.checkpoint import load_checkpoint
from trifuse.core.config import RunConfig
from trifuse.core.exceptions import ConfigError
from trifuse.core.rng import substream
from trifuse.models.schemas import EnhanceVariant, SamplerConfig
from trifuse.services.autodiff import no_grad
from trifuse.services.diffusion import (
    denormalize_approx,
    make_schedule,
    normalize_approx,
    restore_approximation,
)
from trifuse.services.imaging import as_image, from_batch, pad_to_multiple, to_batch
from trifuse.services.layers import ModelParams
from trifuse.services.trifuse_net import build_model, esm_apply
from trifuse.services.wavelet import DetailBands, WaveletPyramid, dwt2, idwt2


def refine_details(bands: DetailBands, params: ModelParams, config: RunConfig, training: bool = False):
    """Run the ESM on one level of (h, w, C) detail bands, returning new DetailBands"""
    batch = [to_batch([band]) for band in bands.as_tuple()]
    refined = esm_apply(batch, params, config.esm_config(), training=training)
    v, h, d = (from_batch(t.data.astype(np.float64))[0] for t in refined)
    return DetailBands(v=v, h=h, d=d)


class Enhancer:
    """
    Enhances low-light images with a trained (or untrained) model

    The pipeline is a pure function of (image, parameters, config, seed), so a
    single instance may serve concurrent calls.
    """

    def __init__(
        self,
        params: ModelParams,
        config: RunConfig,
        variant: Union[EnhanceVariant, str] = EnhanceVariant.FULL,
    ):
        self.params = params
        self.config = config
        self.variant = EnhanceVariant(variant)
        self.schedule = make_schedule(config.timesteps, config.beta_start, config.beta_end)

    @classmethod
    def from_checkpoint(
        cls,
        path: Union[str, Path],
        variant: Union[EnhanceVariant, str] = EnhanceVariant.FULL,
    ) -> "Enhancer":
        config, state = load_checkpoint(path)
        logger.info(f"✅ Loaded checkpoint {path} (k={config.wavelet_levels}, T={config.timesteps})")
        return cls(build_model(config, state), config, variant)

    def sampler(self, steps: Optional[int] = None, eta: Optional[float] = None) -> SamplerConfig:
        try:
            return SamplerConfig(
                timesteps=self.config.timesteps,
                steps=self.config.sampling_steps if steps is None else steps,
                eta=self.config.eta if eta is None else eta,
            )
        except ValueError as e:
            raise ConfigError(f"invalid sampler settings: {e}") from e

    def enhance(
        self,
        low: np.ndarray,
        steps: Optional[int] = None,
        eta: Optional[float] = None,
        seed: Optional[int] = None,
    ) -> np.ndarray:
        """
        Enhance one image

        Args:
            low: (H, W, C) low-light image in [0, 1]
            steps: Implicit sampling steps (config value when None)
            eta: Sampler stochasticity (config value when None)
            seed: Noise seed (config seed when None)

        Returns:
            float32 (H, W, C) image in [0, 1], same size as ``low``
        """
        img = as_image(low)
        cfg = self.config
        height, width, channels = img.shape
        if channels != cfg.channels:
            raise ConfigError(f"model expects {cfg.channels}-channel images, got {channels}")
        if min(height, width) < cfg.min_image_size:
            raise ConfigError(
                f"image {height}x{width} is smaller than {cfg.min_image_size} pixels, "
                f"the minimum for wavelet_levels={cfg.wavelet_levels}"
            )
        sampler = self.sampler(steps, eta)
        seed = cfg.seed if seed is None else seed

        pyr = dwt2(pad_to_multiple(img, cfg.size_multiple), cfg.wavelet_levels)
        with no_grad():
            approx = pyr.approx
            if self.variant != EnhanceVariant.NO_CNM:
                condition = to_batch([normalize_approx(pyr.approx, cfg.wavelet_levels)])
                restored = restore_approximation(
                    condition, self.params, cfg.cnm_config(), self.schedule, sampler,
                    substream(seed, "noise"),
                )
                approx = denormalize_approx(from_batch(restored)[0], cfg.wavelet_levels)

            details = list(pyr.details)
            if self.variant != EnhanceVariant.NO_ESM:
                details[0] = refine_details(details[0], self.params, cfg)

        out = idwt2(WaveletPyramid(levels=pyr.levels, approx=approx, details=details, sizes=pyr.sizes))
        return np.clip(out[:height, :width], 0.0, 1.0).astype(np.float32)
