"""
Trainer Service
Paired-patch training loop for the CNM and ESM
"""
import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from tqdm import tqdm

from trifuse.core.checkpoint import save_checkpoint
from trifuse.core.config import RunConfig
from trifuse.core.exceptions import ConfigError, EmptyDatasetError
from trifuse.core.rng import derive_seed, substream
from trifuse.models.schemas import DatasetManifest, Split
from trifuse.services.autodiff import Tensor, add, backward, mul, sub
from trifuse.services.diffusion import forward_sample, make_schedule, normalize_approx
from trifuse.services.imaging import extract_paired_patches, load_pair, to_batch
from trifuse.services.layers import ModelParams, haar_synthesis
from trifuse.services.optimizer import OptimizerState, optimizer_step
from trifuse.services.trifuse_net import build_model, cnm_predict_noise, esm_apply, training_loss
from trifuse.services.wavelet import dwt2

Pair = Tuple[np.ndarray, np.ndarray]

LOG_COLUMNS = ("iter", "loss", "noise_loss", "pixel_loss", "lr")


@dataclass
class TrainingRecord:
    """Loss terms of one iteration"""
    iter: int
    loss: float
    noise_loss: float
    pixel_loss: float
    lr: float


def load_pairs(manifest: DatasetManifest, split: Split, channels: Optional[int] = None) -> List[Pair]:
    """
    Load every paired (low, high) image of a split

    Raises:
        EmptyDatasetError: The split has no pairs
        ConfigError: Channel count differs from ``channels``
    """
    entries = manifest.paired(split)
    if not entries:
        raise EmptyDatasetError(f"manifest has no {split.value} pairs")
    pairs = []
    for entry in entries:
        low, high = load_pair(manifest, entry)
        if channels is not None and low.shape[2] != channels:
            raise ConfigError(f"{entry.low}: {low.shape[2]} channels, configuration expects {channels}")
        pairs.append((low, high))
    return pairs


class Trainer:
    """
    Trains CNM and ESM jointly

    Each iteration draws a batch of paired patches, corrupts the reference
    approximation band with the forward process, predicts the noise
    conditioned on the low-light band, reconstructs an image through the
    differentiable inverse Haar with ESM-refined details, and takes one
    Adam step on noise MSE + λ·pixel L1.
    """

    def __init__(self, config: RunConfig, params: Optional[ModelParams] = None):
        self.config = config
        self.params = params if params is not None else build_model(config)
        self.schedule = make_schedule(config.timesteps, config.beta_start, config.beta_end)
        self.optimizer = OptimizerState(
            learning_rate=config.learning_rate,
            decay_factor=config.decay_factor,
            decay_every=config.decay_every,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
        )
        self.history: List[TrainingRecord] = []

    def sample_batch(self, pairs: Sequence[Pair], iteration: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Random paired patches for one iteration, drawn from the "crop" stream"""
        cfg = self.config
        picks = substream(cfg.seed, "crop", iteration).integers(0, len(pairs), size=cfg.batch_size)
        lows, highs = [], []
        for j, index in enumerate(picks):
            low, high = pairs[int(index)]
            [(lp, hp)] = extract_paired_patches(
                low, high, cfg.patch_size, 1, derive_seed(cfg.seed, "crop", iteration, j)
            )
            lows.append(lp)
            highs.append(hp)
        return lows, highs

    def _reconstruct(self, approx: Tensor, low_pyramids: list) -> Tensor:
        """Differentiable inverse transform: A_hat with low details, level-1 details through the ESM"""
        cfg = self.config
        x = approx
        for level in range(cfg.wavelet_levels, 0, -1):
            bands = [to_batch([p.details[level - 1].as_tuple()[i] for p in low_pyramids]) for i in range(3)]
            if level == 1:
                v, h, d = esm_apply(bands, self.params, cfg.esm_config(), training=True)
            else:
                v, h, d = (Tensor(b) for b in bands)
            x = haar_synthesis(x, v, h, d)
        return x

    def loss_terms(
        self, lows: Sequence[np.ndarray], highs: Sequence[np.ndarray], iteration: int
    ) -> Tuple[Tensor, Tensor, np.ndarray, Tensor, np.ndarray]:
        """
        Build the training graph for one batch of (H, W, C) patches

        Timesteps and noise come from the iteration's named streams, so the
        same arguments always rebuild the same graph.

        Returns:
            (loss, predicted noise, true noise, enhanced batch, reference batch)
        """
        cfg = self.config
        k = cfg.wavelet_levels
        low_pyrs = [dwt2(p, k) for p in lows]
        high_pyrs = [dwt2(p, k) for p in highs]
        condition = to_batch([normalize_approx(p.approx, k) for p in low_pyrs])
        x0 = to_batch([normalize_approx(p.approx, k) for p in high_pyrs])

        t = substream(cfg.seed, "timestep", iteration).integers(1, cfg.timesteps + 1, size=len(lows))
        eps = substream(cfg.seed, "noise", "train", iteration).standard_normal(x0.shape)
        x_t = forward_sample(x0, t, eps, self.schedule)

        pred = cnm_predict_noise(x_t, t, condition, self.params, cfg.cnm_config())

        # x̂0 = x_t/√ᾱ - ε̂·√(1-ᾱ)/√ᾱ, then back to coefficient range
        ab = self.schedule.alpha_bar_at(t).reshape(-1, 1, 1, 1)
        x0_hat = sub(Tensor(x_t / np.sqrt(ab)), mul(pred, np.sqrt(1.0 - ab) / np.sqrt(ab)))
        approx_hat = mul(add(x0_hat, 0.5), 2.0 ** k)
        enhanced = self._reconstruct(approx_hat, low_pyrs)
        reference = to_batch(highs)

        loss = training_loss(pred, eps, enhanced, reference, cfg.loss_lambda)
        return loss, pred, eps, enhanced, reference

    def step(self, lows: Sequence[np.ndarray], highs: Sequence[np.ndarray], iteration: int) -> TrainingRecord:
        """One optimisation step on a batch of (H, W, C) patches"""
        loss, pred, eps, enhanced, reference = self.loss_terms(lows, highs, iteration)
        self.params.zero_grad()
        backward(loss, params=list(self.params))
        lr = optimizer_step(self.params, self.optimizer)

        record = TrainingRecord(
            iter=iteration,
            loss=loss.item(),
            noise_loss=float(np.mean((pred.data.astype(np.float64) - eps) ** 2)),
            pixel_loss=float(np.mean(np.abs(enhanced.data.astype(np.float64) - reference))),
            lr=lr,
        )
        self.history.append(record)
        return record

    def save(self, path: Union[str, Path]) -> None:
        save_checkpoint(path, self.params.state(), self.config)

    def fit(
        self,
        pairs: Sequence[Pair],
        checkpoint_path: Union[str, Path],
        log_path: Optional[Union[str, Path]] = None,
        on_log: Optional[Callable[[TrainingRecord], None]] = None,
    ) -> List[TrainingRecord]:
        """
        Run ``config.iters`` iterations

        Args:
            pairs: Full-size (low, high) training images
            checkpoint_path: Written every ``checkpoint_every`` iterations and at the end
            log_path: Optional CSV receiving every ``log_every``-th record
            on_log: Called with every ``log_every``-th record

        Returns:
            The record of every iteration
        """
        if not pairs:
            raise EmptyDatasetError("no training pairs")
        cfg = self.config
        log_file = None
        writer = None
        if log_path is not None:
            log_path = Path(log_path)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            log_file = open(log_path, "w", newline="", encoding="utf-8")
            writer = csv.DictWriter(log_file, fieldnames=LOG_COLUMNS, lineterminator="\n")
            writer.writeheader()

        logger.info(f"Training {self.params.num_parameters()} parameters on {len(pairs)} pairs "
                    f"for {cfg.iters} iterations")
        try:
            for iteration in tqdm(range(1, cfg.iters + 1), desc="train", disable=cfg.iters == 0):
                lows, highs = self.sample_batch(pairs, iteration)
                record = self.step(lows, highs, iteration)
                if iteration % cfg.log_every == 0:
                    if writer is not None:
                        writer.writerow({k: f"{v:.6f}" if isinstance(v, float) else v
                                         for k, v in asdict(record).items()})
                    if on_log is not None:
                        on_log(record)
                if iteration % cfg.checkpoint_every == 0 and iteration != cfg.iters:
                    self.save(checkpoint_path)
                    logger.info(f"💾 Checkpoint at iteration {iteration}: {checkpoint_path}")
        finally:
            if log_file is not None:
                log_file.close()

        self.save(checkpoint_path)
        logger.info(f"✅ Training finished, checkpoint written to {checkpoint_path}")
        return self.history
