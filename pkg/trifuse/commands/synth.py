"""
Synth Command
Builds a paired low-light dataset from well-exposed images
"""
import shutil
from pathlib import Path
from typing import Dict, List

import numpy as np
from loguru import logger

from trifuse.commands.common import add_parser, run_config
from trifuse.core.exceptions import EmptyDatasetError
from trifuse.core.rng import derive_seed
from trifuse.models.schemas import DegradationLevel
from trifuse.services.imaging import build_manifest, list_images, load_image, save_image, synthesize_low_light
from trifuse.services.iqa import FULL_REFERENCE, ms_ssim, mae, mse, psnr, ssim
from trifuse.services.reports import format_value

LEVEL_CHOICES = [level.value for level in DegradationLevel] + ["all"]

_STAT_FNS = {"psnr": psnr, "ssim": ssim, "ms_ssim": ms_ssim, "mse": mse, "mae": mae}


def register(subparsers) -> None:
    parser = add_parser(subparsers, "synth", "Darken well-exposed images into a paired dataset")
    parser.add_argument("--input", required=True, help="Directory of well-exposed PNG/PPM images")
    parser.add_argument("--out", required=True, help="Dataset directory to create")
    parser.add_argument("--level", choices=LEVEL_CHOICES, default="all", help="Degradation level")
    parser.add_argument("--seed", type=int, default=None, help="Noise seed (config seed when omitted)")
    parser.add_argument("--config", default=None, help="Run configuration file (presets, split fractions)")
    parser.add_argument("--stats", default=None, help="Optional CSV of per-level degradation statistics")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = run_config(args.config, seed=args.seed)
    sources = list_images(args.input)
    if not sources:
        raise EmptyDatasetError(f"no PNG/PPM images in {args.input}")
    levels = list(DegradationLevel) if args.level == "all" else [DegradationLevel(args.level)]
    out = Path(args.out)

    stats: Dict[DegradationLevel, List[Dict[str, float]]] = {level: [] for level in levels}
    for src in sources:
        _copy(src, out / "high")
        img = load_image(src)
        for level in levels:
            params = config.degradation_params(level)
            low = synthesize_low_light(img, params, derive_seed(config.seed, "degrade", level.value, src.name))
            save_image(low, out / level.value / src.name)
            if args.stats:
                stats[level].append({name: fn(low, img) for name, fn in _STAT_FNS.items()})

    build_manifest(out, (config.train_frac, config.val_frac))
    logger.info(f"✅ Synthesized {len(sources) * len(levels)} images into {out}")

    if args.stats:
        lines = [",".join(["level"] + list(FULL_REFERENCE))]
        for level in levels:
            rows = stats[level]
            lines.append(",".join([level.value] + [
                format_value(float(np.mean([r[m] for r in rows]))) for m in FULL_REFERENCE
            ]))
        stats_path = Path(args.stats)
        stats_path.parent.mkdir(parents=True, exist_ok=True)
        stats_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print("\n".join(lines))
    return 0


def _copy(src: Path, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(src, directory / src.name)
