import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from mp import registry
from mp.checkpoint import load_checkpoint
from mp.corpus import check_compatible, ingest
from mp.engine import (METHODS, OVERALL, select_operating_point, speedup_report,
                       write_report, write_traces)
from mp.exceptions import InputError, LoadError, MagicPyramidError
from mp.pruning import PruneMode, PruningState, apply_threshold_schedule

logger = logging.getLogger(__name__)


def _fmt(value, spec):
    return '-' if value is None else format(value, spec)


class Command(BaseCommand):
    help = "Measure FLOPs speedup and accuracy of a checkpoint per method, halt value and length bucket."

    def add_arguments(self, parser):
        defaults = settings.MAGIC_PYRAMID
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--corpus', required=True, help="Evaluation corpus (.jsonl or .tsv).")
        parser.add_argument('--format', choices=['jsonl', 'tsv'])
        parser.add_argument('--tau', type=float, nargs='+', default=defaults['TAU_GRID'],
                            help="Halt values in [0, 1].")
        parser.add_argument('--methods', nargs='+', choices=METHODS, default=['mp'],
                            help="baseline, prune (tokens only), exit (depth only), mp (both).")
        parser.add_argument('--output', required=True, help="Directory for report.tsv, report.jsonl, traces.jsonl.")
        parser.add_argument('--workers', type=int, default=defaults['BENCH_WORKERS'])
        parser.add_argument('--delta-final', type=float,
                            help="Re-impose the linear threshold schedule instead of the trained thresholds.")
        parser.add_argument('--max-drop', type=float, default=0.01,
                            help="Accuracy drop allowed when picking an operating point against baseline. "
                                 "The synthetic benchmark acceptance run selects at 0.02.")
        parser.add_argument('--no-record', action='store_true', help="Skip the run registry database.")

    def handle(self, *args, **options):
        taus = options['tau']
        if any(not 0.0 <= t <= 1.0 for t in taus):
            raise CommandError(f"halt values must lie in [0, 1], got {taus}")
        output = Path(options['output'])
        try:
            model, header = load_checkpoint(options['checkpoint'])
            cfg = model.config
            try:
                corpus = ingest(options['corpus'], options['format'], classes=cfg.classes, vocab=cfg.vocab)
            except InputError as exc:
                raise LoadError(f"corpus does not match checkpoint: {exc}") from exc
            check_compatible(corpus, cfg)
            pruning = PruningState.for_model(model, PruneMode.HARD)
            if options['delta_final'] is not None:
                apply_threshold_schedule(model, options['delta_final'])
            report = speedup_report(corpus.examples, model, pruning, taus,
                                    methods=options['methods'], workers=options['workers'])
        except MagicPyramidError as exc:
            raise CommandError(str(exc)) from exc

        tsv, jsonl = write_report(report.rows, output)
        traces = write_traces(report.traces, output / 'traces.jsonl')
        self.stdout.write(f"Checkpoint stage {header.get('stage')!r}, {len(corpus)} examples, "
                          f"thresholds {[round(float(d), 5) for d in pruning.deltas.reshape(-1)]}")
        self.stdout.write(f"{'method':<9}{'tau':>6}  {'bucket':<7}{'count':>6}{'gflops':>12}"
                          f"{'speedup':>9}{'acc':>8}{'exit':>6}  note")
        for row in report.rows:
            self.stdout.write(
                f"{row.method:<9}{_fmt(row.tau, '.2f'):>6}  {row.bucket:<7}{row.count:>6}"
                f"{_fmt(row.mean_gflops, '.6f'):>12}{_fmt(row.speedup, '.2f'):>9}"
                f"{_fmt(row.accuracy, '.4f'):>8}{_fmt(row.mean_exit_layer, '.2f'):>6}  {row.note}")

        baseline = [r for r in report.rows if r.method == 'baseline' and r.bucket == OVERALL]
        if baseline:
            for method in options['methods']:
                if method == 'baseline':
                    continue
                point = select_operating_point(report.rows, baseline[0].accuracy, options['max_drop'], method)
                if point is None:
                    self.stdout.write(f"{method}: no setting within {options['max_drop']} of baseline accuracy")
                else:
                    self.stdout.write(f"{method}: operating point tau={point.tau} "
                                      f"speedup {point.speedup:.2f}x at accuracy {point.accuracy:.4f}")

        if not options['no_record']:
            saved = registry.record_bench(options['checkpoint'], options['corpus'], options['methods'],
                                          taus, output, report.rows)
            logger.info("recorded bench report %s", saved.pk)
        self.stdout.write(self.style.SUCCESS(f"Wrote {tsv}, {jsonl} and {traces}"))
