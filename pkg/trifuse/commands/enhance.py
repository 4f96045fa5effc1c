"""
Enhance Command
Single-file or directory enhancement with a checkpoint
"""
import time
from pathlib import Path
from typing import Tuple

from loguru import logger

from trifuse.commands.common import add_parser
from trifuse.core.exceptions import ArgumentError
from trifuse.models.schemas import EnhanceVariant
from trifuse.services.enhancer import Enhancer
from trifuse.services.imaging import IMAGE_SUFFIXES, list_images, load_image, save_image
from trifuse.services.reports import parallel_map


def register(subparsers) -> None:
    parser = add_parser(subparsers, "enhance", "Enhance a low-light image or a directory of them")
    parser.add_argument("--ckpt", required=True, help="Checkpoint from train")
    parser.add_argument("--input", required=True, help="Image file or directory")
    parser.add_argument("--output", required=True, help="Output file (file mode) or directory")
    parser.add_argument("--steps", type=int, default=None, help="Implicit sampling steps (checkpoint value when omitted)")
    parser.add_argument("--eta", type=float, default=None, help="Sampler stochasticity in [0, 1]")
    parser.add_argument("--seed", type=int, default=None, help="Noise seed (checkpoint seed when omitted)")
    parser.add_argument(
        "--variant",
        choices=[v.value for v in EnhanceVariant],
        default=EnhanceVariant.FULL.value,
        help="Pipeline variant",
    )
    parser.set_defaults(handler=run)


def run(args) -> int:
    enhancer = Enhancer.from_checkpoint(args.ckpt, args.variant)
    src = Path(args.input)

    def process(job: Tuple[Path, Path]) -> float:
        source, target = job
        start = time.perf_counter()
        out = enhancer.enhance(load_image(source), steps=args.steps, eta=args.eta, seed=args.seed)
        elapsed = time.perf_counter() - start
        save_image(out, target)
        return elapsed

    if src.is_dir():
        out_dir = Path(args.output)
        jobs = [(p, out_dir / f"{p.stem}.png") for p in list_images(src)]
        if not jobs:
            raise ArgumentError(f"no PNG/PPM images in {src}")
    else:
        target = Path(args.output)
        if target.suffix.lower() not in IMAGE_SUFFIXES:
            raise ArgumentError(f"output {target} must end in .png or .ppm in single-file mode")
        jobs = [(src, target)]

    timings = parallel_map(process, jobs)
    for (source, _), elapsed in zip(jobs, timings):
        print(f"{source.name}\t{elapsed:.3f}s", flush=True)
    logger.info(f"✅ Enhanced {len(jobs)} image(s) into {args.output}")
    return 0
