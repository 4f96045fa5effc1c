"""
Ablate Command
"""
from trifuse.commands.common import add_parser, metric_suite, parse_metrics, run_config
from trifuse.services.ablation import AXES, AblationRunner
from trifuse.services.imaging import read_manifest

DEFAULT_METRICS = ["psnr", "ssim"]


def register(subparsers) -> None:
    parser = add_parser(subparsers, "ablate", "Train and score variants along one ablation axis")
    parser.add_argument("--manifest", required=True, help="Dataset manifest (from synth)")
    parser.add_argument("--config", default=None, help="Run configuration file")
    parser.add_argument("--axis", required=True, help=f"One of: {', '.join(AXES)}")
    parser.add_argument("--out", required=True, help="Directory for checkpoints and the comparison CSV")
    parser.add_argument("--iters", type=int, default=None, help="Training iterations per model")
    parser.add_argument("--seed", type=int, default=None, help="Run seed")
    parser.add_argument("--metrics", default=None, help="Comma-separated metrics (default: psnr,ssim)")
    parser.add_argument("--niqe-model", default=None, help="Pristine model, needed for niqe/brisque")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = run_config(args.config, iters=args.iters, seed=args.seed)
    suite = metric_suite(parse_metrics(args.metrics, DEFAULT_METRICS), args.niqe_model)
    runner = AblationRunner(read_manifest(args.manifest), config, suite, args.out)
    rows = runner.run(args.axis)
    path = runner.write_csv(args.axis, rows)
    print(path.read_text(encoding="utf-8"), end="")
    return 0
