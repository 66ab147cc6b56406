"""Bookkeeping of training runs and bench reports in the Django database."""
import logging

from django.db import transaction

from .models import TrainingRun, StageCheckpoint, BenchReport, BenchRow

logger = logging.getLogger(__name__)


def start_run(config):
    run = TrainingRun.objects.create(
        name=config.name,
        preset=config.plan.preset,
        seed=config.plan.seed,
        config=config.to_dict(),
        output_dir=str(config.output_dir),
    )
    logger.debug("registered run %s", run.pk)
    return run


def record_stage(run, index, result):
    return StageCheckpoint.objects.create(
        run=run,
        stage=result.stage,
        index=index,
        epochs=result.epochs,
        final_loss=result.final_loss,
        path=str(result.checkpoint),
    )


def finish_run(run, error=None):
    run.status = 'failed' if error else 'completed'
    run.error = str(error or '')
    run.save(update_fields=['status', 'error', 'updated_at'])


@transaction.atomic
def record_bench(checkpoint, corpus, methods, tau_grid, output_dir, rows):
    report = BenchReport.objects.create(
        checkpoint=str(checkpoint),
        corpus=str(corpus),
        methods=list(methods),
        tau_grid=list(tau_grid),
        output_dir=str(output_dir),
    )
    BenchRow.objects.bulk_create(BenchRow(report=report, **row.as_record()) for row in rows)
    return report
