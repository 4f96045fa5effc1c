"""
Eval Command
Scores predictions against references (or reference-free) and writes the metric CSV
"""
from trifuse.commands.common import add_parser, metric_suite, parse_metrics
from trifuse.services.iqa import FULL_REFERENCE, NO_REFERENCE
from trifuse.services.reports import EvaluationService, mean_row, report_lines, write_report_csv


def register(subparsers) -> None:
    parser = add_parser(subparsers, "eval", "Compute image quality metrics for a directory of predictions")
    parser.add_argument("--pred", required=True, help="Directory of predictions")
    parser.add_argument("--ref", default=None, help="Directory of references (needed for full-reference metrics)")
    parser.add_argument(
        "--metrics",
        default=None,
        help="Comma-separated subset of psnr,ssim,ms_ssim,mse,mae,brisque,niqe "
             "(default: full-reference metrics with --ref, brisque,niqe without)",
    )
    parser.add_argument("--niqe-model", default=None, help="Pristine model from fit-niqe")
    parser.add_argument("--brisque-model", default=None, help="BRISQUE regressor file (falls back to the NIQE model)")
    parser.add_argument("--out", default=None, help="CSV report to write")
    parser.set_defaults(handler=run)


def run(args) -> int:
    default = list(FULL_REFERENCE) if args.ref else list(NO_REFERENCE)
    suite = metric_suite(parse_metrics(args.metrics, default), args.niqe_model, args.brisque_model)
    report = EvaluationService(suite).evaluate_directories(args.pred, args.ref)
    if args.out:
        write_report_csv(report, args.out)
    print(report_lines(report)[0])
    print(mean_row(report))
    return 0
