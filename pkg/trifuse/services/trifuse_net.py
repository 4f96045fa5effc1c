"""
TriFuse Network Service
Conditional noise module (CNM), edge sharpening module (ESM) and training loss

CNM:  concat(x_t, condition) -> conv encoder (two stride-2 stages) -> tokens
      -> pre-norm transformer blocks (+ sinusoidal timestep embedding)
      -> conv decoder (two nearest x2 stages, additive encoder skips)
      -> zero-initialised output conv
ESM:  per direction (V, H, D): lift conv -> depthwise conv -> dilated residual
      blocks; directional cross-attention on pooled tokens; concat + fusion
      conv, added back to each input band.
"""
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from trifuse.core.config import RunConfig
from trifuse.core.exceptions import ArgumentError, CheckpointError, ShapeError
from trifuse.core.rng import substream
from trifuse.models.schemas import CnmConfig, EsmConfig
from trifuse.services.autodiff import Tensor, absolute, add, as_tensor, concat, mul, reshape, sub
from trifuse.services.layers import (
    ModelParams,
    add_attention,
    add_conv,
    add_linear,
    add_norm,
    batch_norm,
    conv2d,
    downsample_avg,
    layer_norm,
    linear,
    map_from_tokens,
    multi_head_attention,
    relu,
    tokens_from_map,
    upsample_nearest,
)

BANDS = ("v", "h", "d")
FFN_EXPANSION = 2

TensorLike = Union[Tensor, np.ndarray]


# -- initialisation ----------------------------------------------------------------

def init_cnm_params(params: ModelParams, cfg: CnmConfig, rng: np.random.Generator) -> None:
    width = cfg.base_channels
    add_conv(params, "cnm.enc0", rng, cfg.channels + cfg.condition_channels, width)
    add_conv(params, "cnm.enc1", rng, width, width)
    add_conv(params, "cnm.enc2", rng, width, width)
    add_linear(params, "cnm.time.fc1", rng, cfg.timestep_embed_dim, width)
    add_linear(params, "cnm.time.fc2", rng, width, width)
    for i in range(cfg.num_transformer_blocks):
        prefix = f"cnm.blocks.{i}"
        add_norm(params, f"{prefix}.ln1", width)
        add_attention(params, f"{prefix}.attn", rng, width)
        add_norm(params, f"{prefix}.ln2", width)
        add_linear(params, f"{prefix}.ffn.fc1", rng, width, FFN_EXPANSION * width)
        add_linear(params, f"{prefix}.ffn.fc2", rng, FFN_EXPANSION * width, width)
    add_norm(params, "cnm.ln_out", width)
    add_conv(params, "cnm.dec1", rng, width, width)
    add_conv(params, "cnm.dec0", rng, width, width)
    add_conv(params, "cnm.out", rng, width, cfg.channels, zero=True)


def init_residual_block(params: ModelParams, prefix: str, rng: np.random.Generator, channels: int) -> None:
    add_norm(params, f"{prefix}.bn1", channels, running=True)
    add_conv(params, f"{prefix}.conv1", rng, channels, channels)
    add_norm(params, f"{prefix}.bn2", channels, running=True)
    add_conv(params, f"{prefix}.conv2", rng, channels, channels)


def init_esm_params(params: ModelParams, cfg: EsmConfig, rng: np.random.Generator) -> None:
    width = cfg.block_channels
    for band in BANDS:
        prefix = f"esm.{band}"
        add_conv(params, f"{prefix}.lift", rng, cfg.channels, width)
        add_conv(params, f"{prefix}.dw", rng, width, width, groups=width)
        for i, _ in enumerate(cfg.dilation_rates):
            init_residual_block(params, f"{prefix}.res{i}", rng, width)
        add_norm(params, f"{prefix}.ln", width)
        add_attention(params, f"{prefix}.attn", rng, width)
    add_conv(params, "esm.fuse", rng, 3 * width, 3 * cfg.channels, zero=True)


def init_trifuse_params(cnm_cfg: CnmConfig, esm_cfg: EsmConfig, seed: int) -> ModelParams:
    """
    Fresh CNM + ESM parameters

    Args:
        cnm_cfg: CNM architecture
        esm_cfg: ESM architecture
        seed: Run seed (the "init" stream is used)

    Returns:
        ModelParams with zero-initialised output heads
    """
    if cnm_cfg.channels != esm_cfg.channels:
        raise ArgumentError(f"CNM and ESM disagree on image channels: {cnm_cfg.channels} vs {esm_cfg.channels}")
    params = ModelParams()
    init_cnm_params(params, cnm_cfg, substream(seed, "init", "cnm"))
    init_esm_params(params, esm_cfg, substream(seed, "init", "esm"))
    return params


# -- CNM ---------------------------------------------------------------------------

def timestep_embedding(t: Union[int, Sequence[int], np.ndarray], dim: int, batch: int) -> np.ndarray:
    """Sinusoidal embedding, (batch, dim); sin half then cos half"""
    steps = np.asarray(t, dtype=np.float64).reshape(-1)
    if steps.size == 1:
        steps = np.repeat(steps, batch)
    if steps.size != batch:
        raise ShapeError(f"{steps.size} timesteps for a batch of {batch}")
    if np.any(steps < 1):
        raise ArgumentError("timesteps must be >= 1")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = steps[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((batch, 1))], axis=1)
    return emb


def _conv(x: Tensor, params: ModelParams, prefix: str, **kwargs) -> Tensor:
    return conv2d(x, params[f"{prefix}.w"], params[f"{prefix}.b"], **kwargs)


def _norm(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def cnm_predict_noise(
    x_t: TensorLike,
    t: Union[int, Sequence[int], np.ndarray],
    condition: TensorLike,
    params: ModelParams,
    cfg: CnmConfig,
) -> Tensor:
    """
    Predict the noise in ``x_t`` at step ``t`` given the conditioning band

    Args:
        x_t: Noisy approximation band, (B, C, H, W)
        t: Timestep (scalar or one per batch item), >= 1
        condition: Low-light approximation band, (B, C, H, W)
        params: Model parameters
        cfg: CNM architecture

    Returns:
        Predicted noise, same shape as ``x_t``
    """
    x_t, condition = as_tensor(x_t), as_tensor(condition)
    if x_t.ndim != 4 or condition.ndim != 4:
        raise ShapeError(f"CNM expects 4D inputs, got {x_t.shape} and {condition.shape}")
    batch, channels, height, width = x_t.shape
    if condition.shape[0] != batch or condition.shape[2:] != (height, width):
        raise ShapeError(f"condition {condition.shape} does not match x_t {x_t.shape}")
    if channels != cfg.channels or condition.shape[1] != cfg.condition_channels:
        raise ShapeError(f"CNM configured for {cfg.channels}+{cfg.condition_channels} channels, "
                         f"got {channels}+{condition.shape[1]}")
    if height % 4 or width % 4:
        raise ShapeError(f"CNM needs spatial dims divisible by 4, got {height}x{width}")

    e0 = relu(_conv(concat([x_t, condition], axis=1), params, "cnm.enc0"))
    e1 = relu(_conv(e0, params, "cnm.enc1", stride=2))
    e2 = relu(_conv(e1, params, "cnm.enc2", stride=2))

    emb = Tensor(timestep_embedding(t, cfg.timestep_embed_dim, batch))
    emb = linear(relu(linear(emb, params["cnm.time.fc1.w"], params["cnm.time.fc1.b"])),
                 params["cnm.time.fc2.w"], params["cnm.time.fc2.b"])
    tokens = add(tokens_from_map(e2), reshape(emb, (batch, 1, cfg.base_channels)))

    for i in range(cfg.num_transformer_blocks):
        prefix = f"cnm.blocks.{i}"
        normed = _norm(tokens, params, f"{prefix}.ln1")
        tokens = add(tokens, multi_head_attention(normed, normed, params, f"{prefix}.attn", cfg.num_heads))
        hidden = relu(linear(_norm(tokens, params, f"{prefix}.ln2"),
                             params[f"{prefix}.ffn.fc1.w"], params[f"{prefix}.ffn.fc1.b"]))
        tokens = add(tokens, linear(hidden, params[f"{prefix}.ffn.fc2.w"], params[f"{prefix}.ffn.fc2.b"]))
    tokens = _norm(tokens, params, "cnm.ln_out")

    z = map_from_tokens(tokens, height // 4, width // 4)
    d1 = add(relu(_conv(upsample_nearest(z, 2), params, "cnm.dec1")), e1)
    d0 = add(relu(_conv(upsample_nearest(d1, 2), params, "cnm.dec0")), e0)
    return _conv(d0, params, "cnm.out")


# -- ESM ---------------------------------------------------------------------------

def dilated_residual_block(
    x: TensorLike,
    params: ModelParams,
    prefix: str,
    dilation: int,
    training: bool = False,
) -> Tensor:
    """
    Y = X + Conv(ReLU(BN(Conv(ReLU(BN(X)))))), both convs dilated

    Args:
        x: (B, C, H, W) feature map, C equal to the block width
        params: Holds ``{prefix}.bn1/conv1/bn2/conv2``
        prefix: Parameter name prefix
        dilation: Dilation rate of both convolutions
        training: Batch statistics (True) or running statistics (False)
    """
    x = as_tensor(x)
    width = params[f"{prefix}.conv1.w"].shape[0]
    if x.ndim != 4 or x.shape[1] != width:
        raise ShapeError(f"residual block {prefix} expects {width} channels, got shape {x.shape}")

    def bn(y: Tensor, name: str) -> Tensor:
        return batch_norm(
            y,
            params[f"{prefix}.{name}.g"],
            params[f"{prefix}.{name}.b"],
            params.buffers[f"{prefix}.{name}.running_mean"],
            params.buffers[f"{prefix}.{name}.running_var"],
            training,
        )

    branch = _conv(relu(bn(x, "bn1")), params, f"{prefix}.conv1", dilation=dilation)
    branch = _conv(relu(bn(branch, "bn2")), params, f"{prefix}.conv2", dilation=dilation)
    return add(x, branch)


def esm_apply(
    bands: Sequence[TensorLike],
    params: ModelParams,
    cfg: EsmConfig,
    training: bool = False,
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Refine the (V, H, D) detail bands

    Args:
        bands: Three (B, C, h, w) tensors in V, H, D order
        params: Model parameters
        cfg: ESM architecture
        training: Batch-norm mode

    Returns:
        Refined (V, H, D); each equals its input plus a fused correction
    """
    inputs = [as_tensor(b) for b in bands]
    if len(inputs) != 3:
        raise ShapeError(f"ESM expects three bands, got {len(inputs)}")
    shapes = {b.shape for b in inputs}
    if len(shapes) != 1:
        raise ShapeError(f"ESM bands differ in shape: {[b.shape for b in inputs]}")
    batch, channels, height, width = inputs[0].shape
    if channels != cfg.channels:
        raise ShapeError(f"ESM configured for {cfg.channels} channels, got {channels}")
    pool = cfg.attention_pool
    if height % pool or width % pool:
        raise ShapeError(f"ESM attention pooling by {pool} needs divisible band dims, got {height}x{width}")

    streams = []
    for band, x in zip(BANDS, inputs):
        prefix = f"esm.{band}"
        s = _conv(x, params, f"{prefix}.lift")
        s = _conv(s, params, f"{prefix}.dw", groups=cfg.block_channels)
        for i, rate in enumerate(cfg.dilation_rates):
            s = dilated_residual_block(s, params, f"{prefix}.res{i}", rate, training)
        streams.append(s)

    pooled = [downsample_avg(s, pool) if pool > 1 else s for s in streams]
    normed = [_norm(tokens_from_map(p), params, f"esm.{band}.ln") for band, p in zip(BANDS, pooled)]
    mixed = []
    for i, band in enumerate(BANDS):
        if cfg.attention == "cross":
            context = concat([normed[j] for j in range(3) if j != i], axis=1)
        else:
            context = normed[i]
        ctx = multi_head_attention(normed[i], context, params, f"esm.{band}.attn", cfg.num_heads)
        ctx = map_from_tokens(ctx, height // pool, width // pool)
        if pool > 1:
            ctx = upsample_nearest(ctx, pool)
        mixed.append(add(streams[i], ctx))

    fused = _conv(concat(mixed, axis=1), params, "esm.fuse")
    return tuple(
        add(x, fused[:, i * channels:(i + 1) * channels]) for i, x in enumerate(inputs)
    )


# -- loss --------------------------------------------------------------------------

def training_loss(
    pred_noise: TensorLike,
    true_noise: TensorLike,
    enhanced: Optional[TensorLike] = None,
    reference: Optional[TensorLike] = None,
    weight: float = 0.1,
) -> Tensor:
    """
    mean((pred - true)²) + weight * mean|enhanced - reference|

    The pixel term is skipped when ``enhanced`` is None.
    """
    pred_noise, true_noise = as_tensor(pred_noise), as_tensor(true_noise)
    if pred_noise.shape != true_noise.shape:
        raise ShapeError(f"noise shapes differ: {pred_noise.shape} vs {true_noise.shape}")
    diff = sub(pred_noise, true_noise)
    loss = mul(diff, diff).mean()
    if enhanced is not None:
        enhanced, reference = as_tensor(enhanced), as_tensor(reference)
        if enhanced.shape != reference.shape:
            raise ShapeError(f"image shapes differ: {enhanced.shape} vs {reference.shape}")
        loss = add(loss, mul(absolute(sub(enhanced, reference)).mean(), weight))
    return loss


def build_model(config: RunConfig, state: Optional[Mapping[str, np.ndarray]] = None) -> ModelParams:
    """
    Parameters for ``config``, fresh or restored from a checkpoint state

    Raises:
        CheckpointError: ``state`` was written for a different architecture
    """
    params = init_trifuse_params(config.cnm_config(), config.esm_config(), config.seed)
    if state is not None:
        try:
            params.load_state(dict(state))
        except ShapeError as e:
            raise CheckpointError(f"checkpoint does not match its configuration: {e}") from e
    return params
