"""
Ablation Service
Train-and-evaluate matrix over wavelet levels, sampling steps or pipeline components
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from loguru import logger

from trifuse.core.config import RunConfig, build_run_config
from trifuse.core.exceptions import ArgumentError, EmptyDatasetError
from trifuse.models.schemas import DatasetManifest, EnhanceVariant, Split
from trifuse.services.enhancer import Enhancer
from trifuse.services.iqa import MetricSuite
from trifuse.services.layers import ModelParams
from trifuse.services.reports import EvaluationService, format_value
from trifuse.services.trainer import Pair, Trainer, load_pairs

AXES = ("k", "steps", "components")
LEVEL_VALUES = (1, 2, 3)
STEP_VALUES = (5, 10, 15)
COMPONENT_VALUES = (EnhanceVariant.FULL, EnhanceVariant.NO_ESM, EnhanceVariant.NO_CNM)


@dataclass
class AblationRow:
    setting: str
    means: Dict[str, float]


class AblationRunner:
    """
    Runs one ablation axis on a manifest

    ``k`` trains one model per wavelet level. ``steps`` and ``components``
    train once and vary inference only. Scores come from the val split, or
    the train split when val is empty.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        config: RunConfig,
        suite: MetricSuite,
        out_dir: Union[str, Path],
    ):
        self.manifest = manifest
        self.config = config
        self.suite = suite
        self.out_dir = Path(out_dir)
        self.train_pairs: List[Pair] = load_pairs(manifest, Split.TRAIN, config.channels)
        try:
            self.eval_pairs = load_pairs(manifest, Split.VAL, config.channels)
        except EmptyDatasetError:
            logger.warning("⚠️ No val pairs, scoring the ablation on the train split")
            self.eval_pairs = self.train_pairs

    def _train(self, config: RunConfig, name: str) -> ModelParams:
        trainer = Trainer(config)
        trainer.fit(self.train_pairs, self.out_dir / f"{name}.trif")
        return trainer.params

    def _score(self, enhancer: Enhancer, steps: Optional[int] = None) -> Dict[str, float]:
        items = [
            (f"{i:04d}", enhancer.enhance(low, steps=steps), high)
            for i, (low, high) in enumerate(self.eval_pairs)
        ]
        return EvaluationService(self.suite).evaluate_arrays(items).means

    def run(self, axis: str) -> List[AblationRow]:
        if axis not in AXES:
            raise ArgumentError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXES)}")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        rows: List[AblationRow] = []

        if axis == "k":
            for k in LEVEL_VALUES:
                values = self.config.model_dump()
                values["wavelet_levels"] = k
                config = build_run_config(values)
                params = self._train(config, f"k{k}")
                rows.append(AblationRow(f"k={k}", self._score(Enhancer(params, config))))
                logger.info(f"✅ Ablation k={k}: {rows[-1].means}")
        elif axis == "steps":
            if self.config.timesteps < max(STEP_VALUES):
                raise ArgumentError(f"steps ablation needs timesteps >= {max(STEP_VALUES)}")
            params = self._train(self.config, "steps")
            enhancer = Enhancer(params, self.config)
            for steps in STEP_VALUES:
                rows.append(AblationRow(f"S={steps}", self._score(enhancer, steps)))
                logger.info(f"✅ Ablation S={steps}: {rows[-1].means}")
        else:
            params = self._train(self.config, "components")
            for variant in COMPONENT_VALUES:
                rows.append(AblationRow(variant.value, self._score(Enhancer(params, self.config, variant))))
                logger.info(f"✅ Ablation {variant.value}: {rows[-1].means}")
        return rows

    def write_csv(self, axis: str, rows: Sequence[AblationRow]) -> Path:
        """Writes ``ablation_<axis>.csv``: axis, setting, then one column per metric"""
        path = self.out_dir / f"ablation_{axis}.csv"
        metrics = self.suite.ordered
        lines = [",".join(["axis", "setting"] + metrics)]
        for row in rows:
            lines.append(",".join([axis, row.setting] + [format_value(row.means[m]) for m in metrics]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path
