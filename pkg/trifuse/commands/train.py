"""
Train Command
"""
from pathlib import Path

from trifuse.commands.common import add_parser, run_config
from trifuse.models.schemas import Split
from trifuse.services.imaging import read_manifest
from trifuse.services.trainer import Trainer, TrainingRecord, load_pairs


def register(subparsers) -> None:
    parser = add_parser(subparsers, "train", "Train the noise predictor and edge sharpener on a manifest")
    parser.add_argument("--manifest", required=True, help="Dataset manifest (from synth)")
    parser.add_argument("--config", default=None, help="Run configuration file")
    parser.add_argument("--out", required=True, help="Checkpoint file to write")
    parser.add_argument("--iters", type=int, default=None, help="Iterations (config value when omitted)")
    parser.add_argument("--seed", type=int, default=None, help="Run seed (config seed when omitted)")
    parser.add_argument("--log", default=None, help="Loss CSV (default: checkpoint path with .csv suffix)")
    parser.set_defaults(handler=run)


def _print_record(record: TrainingRecord) -> None:
    print(f"iter {record.iter} loss {record.loss:.6f} noise {record.noise_loss:.6f} "
          f"pixel {record.pixel_loss:.6f} lr {record.lr:.6g}", flush=True)


def run(args) -> int:
    config = run_config(args.config, iters=args.iters, seed=args.seed)
    manifest = read_manifest(args.manifest)
    pairs = load_pairs(manifest, Split.TRAIN, config.channels)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    Trainer(config).fit(pairs, out, log_path=log_path, on_log=_print_record)
    return 0
