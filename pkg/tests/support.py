"""
Test helpers: synthetic natural images, tiny configurations, gradient checks
"""
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from trifuse.core.config import RunConfig, build_run_config
from trifuse.services.autodiff import Tensor
from trifuse.services.imaging import save_image
from trifuse.services.layers import ModelParams
from trifuse.services.trifuse_net import init_trifuse_params

# Small network and chain so model tests run in seconds
TINY_CONFIG: Dict[str, object] = {
    "seed": 7,
    "timesteps": 20,
    "sampling_steps": 5,
    "base_channels": 8,
    "num_transformer_blocks": 1,
    "num_heads": 2,
    "timestep_embed_dim": 8,
    "esm_block_channels": 8,
    "esm_dilations": [1, 2],
    "esm_heads": 2,
    "esm_attention_pool": 2,
    "batch_size": 2,
    "patch_size": 16,
    "iters": 3,
    "log_every": 1,
    "checkpoint_every": 2,
    "learning_rate": 1e-3,
    "niqe_patch": 32,
}


def tiny_config(**overrides) -> RunConfig:
    values = dict(TINY_CONFIG)
    values.update(overrides)
    return build_run_config(values)


def config_text(values: Dict[str, object]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def randomized_params(config: RunConfig, seed: int) -> ModelParams:
    """Model parameters with every tensor drawn at random, zero-initialised heads included"""
    params = init_trifuse_params(config.cnm_config(), config.esm_config(), seed)
    rng = np.random.default_rng(seed)
    for name, tensor in params.items():
        if name.endswith(".g"):
            tensor.data[...] = 1.0 + rng.normal(scale=0.1, size=tensor.shape)
        else:
            tensor.data[...] = rng.normal(scale=0.3, size=tensor.shape)
    return params


def pink_noise(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Unit-variance noise with a 1/f amplitude spectrum"""
    white = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    freq = np.sqrt(fx ** 2 + fy ** 2)
    freq[0, 0] = 1.0
    field = np.real(np.fft.ifft2(np.fft.fft2(white) / freq))
    field -= field.mean()
    return field / (field.std() + 1e-12)


def natural_image(seed: int, height: int = 64, width: int = 64, channels: int = 3) -> np.ndarray:
    """
    Scene-like test image: smooth shading, hard-edged shapes and fine texture

    Returns:
        float32 (H, W, C) in [0.02, 0.98]
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width] / float(max(height, width))
    gx, gy = rng.uniform(-0.3, 0.3, size=2)
    shading = 0.45 + gx * (xx - 0.5) + gy * (yy - 0.5)

    shapes = np.zeros((height, width))
    for _ in range(6):
        offset = rng.uniform(-0.3, 0.3)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, height), rng.integers(0, width)
            h, w = rng.integers(height // 8, height // 2), rng.integers(width // 8, width // 2)
            shapes[y0:y0 + h, x0:x0 + w] += offset
        else:
            cy, cx = rng.uniform(0, 1, size=2)
            r = rng.uniform(0.08, 0.25)
            shapes[(yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2] += offset

    texture = 0.04 * pink_noise(rng, height, width) + 0.015 * rng.standard_normal((height, width))
    gray = shading + shapes + texture
    tint = rng.uniform(0.85, 1.15, size=channels) if channels > 1 else np.ones(1)
    img = gray[:, :, None] * tint[None, None, :]
    return np.clip(img, 0.02, 0.98).astype(np.float32)


def write_images(directory: Path, count: int, size: int = 64, suffix: str = ".png", seed: int = 0) -> List[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    return [
        save_image(natural_image(seed + i, size, size), directory / f"img{i:02d}{suffix}")
        for i in range(count)
    ]


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Iterable[Tensor],
    rng: np.random.Generator,
    entries_per_tensor: int = 3,
    h: float = 1e-6,
    rtol: float = 1e-5,
    atol: float = 1e-7,
) -> Optional[str]:
    """
    Compare analytic gradients with central differences on random entries

    ``loss_fn`` must rebuild the graph from the tensors' current data. The
    analytic gradients must already be populated.

    Returns:
        None when every sampled entry agrees, otherwise a description of the
        first mismatch
    """
    for tensor in tensors:
        flat = tensor.data.reshape(-1)
        grad = tensor.grad.reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_tensor, flat.size), replace=False)
        for index in picks:
            original = flat[index]
            flat[index] = original + h
            up = loss_fn().item()
            flat[index] = original - h
            down = loss_fn().item()
            flat[index] = original
            numeric = (up - down) / (2 * h)
            analytic = float(grad[index])
            if abs(numeric - analytic) > rtol * max(abs(numeric), abs(analytic)) + atol:
                return f"{tensor.name or tensor!r}[{index}]: analytic {analytic:.10g} vs numeric {numeric:.10g}"
    return None
