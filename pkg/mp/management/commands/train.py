import json
import logging
from dataclasses import replace
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from mp import registry
from mp.config import load_run_config, write_effective_config
from mp.corpus import check_compatible, ingest
from mp.encoder import Encoder
from mp.exceptions import MagicPyramidError
from mp.pipeline import STAGES, accuracy, train
from mp.pruning import PruneMode

logger = logging.getLogger(__name__)

TRAINING_LOG = 'training_log.jsonl'
EPOCH_METRICS = {'soft': 'mean_gate', 'hard': 'mean_retained'}


class Command(BaseCommand):
    help = "Run the stages of a training plan and write one checkpoint per active stage."

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help="Run config JSON (model, plan, corpus).")
        parser.add_argument('--output-dir', help="Overrides the config's output directory.")
        parser.add_argument('--seed', type=int, help="Overrides the plan seed.")
        parser.add_argument('--no-record', action='store_true', help="Skip the run registry database.")

    def handle(self, *args, **options):
        try:
            config = load_run_config(options['config'])
            if options['output_dir']:
                config = replace(config, output_dir=Path(options['output_dir']).resolve())
            if options['seed'] is not None:
                config = replace(config, plan=replace(config.plan, seed=options['seed']))
            corpus = ingest(config.train_corpus, config.corpus_format,
                            classes=config.model.classes, vocab=config.model.vocab)
            check_compatible(corpus, config.model)
        except MagicPyramidError as exc:
            raise CommandError(str(exc)) from exc

        write_effective_config(config)
        run = None
        if not options['no_record']:
            run = registry.start_run(config)

        log_path = config.output_dir / TRAINING_LOG
        self.stdout.write(f"Training {config.name} ({config.plan.preset}, epochs {tuple(config.plan.epochs)}) "
                          f"on {len(corpus)} examples -> {config.output_dir}")
        with open(log_path, 'w') as log:
            def on_epoch(stage, epoch, mean_loss, metric):
                record = {'stage': stage, 'epoch': epoch, 'mean_loss': mean_loss}
                if stage in EPOCH_METRICS:
                    record[EPOCH_METRICS[stage]] = metric
                log.write(json.dumps(record, sort_keys=True) + '\n')
                log.flush()
                self.stdout.write(f"  {stage} epoch {epoch}: loss {mean_loss:.6f}")

            def on_stage(result):
                if result.skipped:
                    return
                if run is not None:
                    registry.record_stage(run, STAGES.index(result.stage) + 1, result)
                self.stdout.write(self.style.SUCCESS(f"  {result.stage} -> {result.checkpoint}"))

            model = Encoder(config.model, seed=config.plan.seed)
            try:
                train(model, corpus.examples, config.plan, config.output_dir,
                      on_epoch=on_epoch, on_stage=on_stage)
            except MagicPyramidError as exc:
                logger.error("run %s failed: %s", config.name, exc)
                if run is not None:
                    registry.finish_run(run, exc)
                raise CommandError(str(exc)) from exc
        if run is not None:
            registry.finish_run(run)

        if config.test_corpus is not None:
            try:
                test = ingest(config.test_corpus, config.corpus_format,
                              classes=config.model.classes, vocab=config.model.vocab)
            except MagicPyramidError as exc:
                raise CommandError(str(exc)) from exc
            full = accuracy(model, test.examples)
            line = f"Test accuracy {full:.4f} on {len(test)} examples"
            if config.plan.epochs.hard:
                line += f", {accuracy(model, test.examples, PruneMode.HARD):.4f} with hard pruning"
            self.stdout.write(line)
        self.stdout.write(self.style.SUCCESS(f"Training log written to {log_path}"))
