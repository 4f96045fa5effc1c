"""
Helpers shared by the subcommands
"""
import argparse
from pathlib import Path
from typing import Any, List, Optional

from trifuse.core.config import RunConfig, load_run_config
from trifuse.core.exceptions import ArgumentError
from trifuse.services.iqa import METRIC_ORDER, MetricSuite, load_brisque_regressor, load_niqe_model


def add_parser(subparsers, name: str, help_text: str) -> argparse.ArgumentParser:
    return subparsers.add_parser(
        name,
        help=help_text,
        description=help_text,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )


def run_config(config_path: Optional[str], **overrides: Any) -> RunConfig:
    """Defaults < --config file < flags that were given"""
    return load_run_config(Path(config_path) if config_path else None, overrides)


def parse_metrics(text: Optional[str], default: List[str]) -> List[str]:
    if not text:
        return list(default)
    names = [part.strip().lower().replace("-", "_") for part in text.split(",") if part.strip()]
    unknown = [n for n in names if n not in METRIC_ORDER]
    if unknown:
        raise ArgumentError(f"unknown metrics {unknown}; choose from {', '.join(METRIC_ORDER)}")
    return names


def metric_suite(metrics: List[str], niqe_model: Optional[str], brisque_model: Optional[str] = None) -> MetricSuite:
    return MetricSuite(
        metrics=metrics,
        niqe_model=load_niqe_model(niqe_model) if niqe_model else None,
        brisque_regressor=load_brisque_regressor(brisque_model) if brisque_model else None,
    )
