"""
Run registry

Commands record what they did in TrainingRun / EvaluationRecord rows. The
database is optional: a failure here is logged and the command carries on.
"""

import logging
from typing import Optional

from django.conf import settings
from django.db import DatabaseError

from . import __version__
from .models import EvaluationRecord, TrainingRun
from .services.artifacts import jsonable

logger = logging.getLogger(__name__)


def recording_enabled(enabled: bool = True) -> bool:
    return enabled and settings.FORECASTING.get('RECORD_RUNS', True)


def record_training(command: str, config, output_dir, best_epoch: Optional[int], metrics: dict,
                    enabled: bool = True) -> Optional[TrainingRun]:
    """Store one training-style run; returns None when disabled or on database failure"""

    if not recording_enabled(enabled):
        return None
    try:
        return TrainingRun.objects.create(
            command=command,
            seed=config.seed,
            variant=config.model.variant,
            ablations=list(config.model.ablations),
            config_hash=config.config_hash(),
            config=config.to_dict(),
            output_dir=str(output_dir),
            best_epoch=best_epoch,
            metrics=jsonable(metrics),
            artifact_version=__version__,
        )
    except DatabaseError as exc:
        logger.warning("could not record %s run (%s); run 'manage.py migrate' to enable the registry", command, exc)
        return None


def record_evaluation(checkpoint, split: str, metrics: dict, pattern: str = '', ratio: float = 0.0, seed: int = 0,
                      config_hash: str = '', enabled: bool = True) -> Optional[EvaluationRecord]:
    if not recording_enabled(enabled):
        return None
    try:
        run = TrainingRun.objects.filter(config_hash=config_hash).first() if config_hash else None
        return EvaluationRecord.objects.create(
            run=run,
            checkpoint=str(checkpoint),
            split=split,
            mask_pattern=pattern or '',
            ratio=ratio,
            seed=seed,
            metrics=jsonable(metrics),
        )
    except DatabaseError as exc:
        logger.warning("could not record evaluation of %s (%s)", checkpoint, exc)
        return None
