"""
Reports Service
Pairs prediction/reference directories, scores them and writes metric CSVs
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from loguru import logger

from trifuse.core.config import settings
from trifuse.core.exceptions import ArgumentError, EmptyDatasetError
from trifuse.models.schemas import MetricReport
from trifuse.services.imaging import list_images, load_image
from trifuse.services.iqa import MetricSuite

PathLike = Union[str, Path]
T = TypeVar("T")
R = TypeVar("R")

MEAN_LABEL = "MEAN"


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: Optional[int] = None) -> List[R]:
    """Map over ``items`` with at most ``threads`` workers, keeping input order"""
    workers = max(1, min(threads or settings.THREADS, len(items) or 1))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def pair_directories(pred_dir: PathLike, ref_dir: Optional[PathLike] = None) -> List[Tuple[str, Path, Optional[Path]]]:
    """
    Match prediction files to reference files by stem

    Args:
        pred_dir: Directory of predictions
        ref_dir: Directory of references, or None for no-reference scoring

    Returns:
        (image name, prediction path, reference path or None), sorted by name

    Raises:
        ArgumentError: Names present on one side only
        EmptyDatasetError: No images in ``pred_dir``
    """
    preds = {p.stem: p for p in list_images(pred_dir)}
    if not preds:
        raise EmptyDatasetError(f"no images in {pred_dir}")
    if ref_dir is None:
        return [(preds[s].name, preds[s], None) for s in sorted(preds)]

    refs = {p.stem: p for p in list_images(ref_dir)}
    missing_ref = sorted(set(preds) - set(refs))
    missing_pred = sorted(set(refs) - set(preds))
    if missing_ref or missing_pred:
        problems = []
        if missing_ref:
            problems.append(f"no reference for: {', '.join(missing_ref)}")
        if missing_pred:
            problems.append(f"no prediction for: {', '.join(missing_pred)}")
        raise ArgumentError("prediction and reference names differ; " + "; ".join(problems))
    return [(preds[s].name, preds[s], refs[s]) for s in sorted(preds)]


class EvaluationService:
    """Scores images with a MetricSuite and aggregates a MetricReport"""

    def __init__(self, suite: MetricSuite, threads: Optional[int] = None):
        self.suite = suite
        self.threads = threads

    def evaluate_arrays(self, items: Iterable[Tuple[str, np.ndarray, Optional[np.ndarray]]]) -> MetricReport:
        items = list(items)
        scores = parallel_map(lambda item: self.suite.score(item[1], item[2]), items, self.threads)
        report = MetricReport(metrics=self.suite.ordered)
        for (name, _, _), values in zip(items, scores):
            report.per_image[name] = values
        return report

    def evaluate_directories(self, pred_dir: PathLike, ref_dir: Optional[PathLike] = None) -> MetricReport:
        """
        Score every prediction in ``pred_dir``

        Args:
            pred_dir: Predictions
            ref_dir: References; required when full-reference metrics are requested

        Returns:
            MetricReport keyed by prediction file name
        """
        if self.suite.needs_reference and ref_dir is None:
            raise ArgumentError("full-reference metrics requested without a reference directory")
        pairs = pair_directories(pred_dir, ref_dir)

        def score(item: Tuple[str, Path, Optional[Path]]) -> Dict[str, float]:
            name, pred_path, ref_path = item
            pred = load_image(pred_path)
            ref = load_image(ref_path) if ref_path is not None and self.suite.needs_reference else None
            return self.suite.score(pred, ref)

        scores = parallel_map(score, pairs, self.threads)
        report = MetricReport(metrics=self.suite.ordered)
        for (name, _, _), values in zip(pairs, scores):
            report.per_image[name] = values
        logger.info(f"✅ Scored {report.count} images on {', '.join(report.metrics)}")
        return report


def format_value(value: float) -> str:
    return f"{value:.6f}"


def mean_row(report: MetricReport) -> str:
    means = report.means
    return ",".join([MEAN_LABEL] + [format_value(means[m]) for m in report.metrics])


def report_lines(report: MetricReport) -> List[str]:
    """CSV lines: header, one row per image sorted by name, then the MEAN row"""
    lines = [",".join(["image"] + list(report.metrics))]
    for name in sorted(report.per_image):
        values = report.per_image[name]
        lines.append(",".join([name] + [format_value(values[m]) for m in report.metrics]))
    lines.append(mean_row(report))
    return lines


def write_report_csv(report: MetricReport, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(report_lines(report)) + "\n", encoding="utf-8")
    return path
