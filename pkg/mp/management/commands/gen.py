from django.core.management.base import BaseCommand, CommandError

from mp.corpus import SynthSpec, export_corpus, synth_task
from mp.exceptions import MagicPyramidError


class Command(BaseCommand):
    help = "Generate a synthetic marker-token classification corpus (jsonl or tsv)."

    def add_arguments(self, parser):
        parser.add_argument('--output', required=True, help="Corpus file to write (.jsonl or .tsv).")
        parser.add_argument('--format', choices=['jsonl', 'tsv'], help="Defaults to the output suffix.")
        parser.add_argument('--size', type=int, default=1000, help="Number of examples.")
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--classes', type=int, default=2)
        parser.add_argument('--vocab', type=int, default=64, help="Vocabulary size, [CLS] id 0 included.")
        parser.add_argument('--markers-per-class', type=int, default=2)
        parser.add_argument('--salient', type=int, default=1, help="Class markers planted per sequence.")
        parser.add_argument('--mix', type=float, nargs=3, default=[1 / 3, 1 / 3, 1 / 3],
                            metavar=('SHORT', 'MIDDLE', 'LONG'), help="Length bucket weights.")
        parser.add_argument('--min-length', type=int, default=4)
        parser.add_argument('--max-length', type=int, default=120)

    def handle(self, *args, **options):
        try:
            spec = SynthSpec(
                size=options['size'],
                classes=options['classes'],
                vocab=options['vocab'],
                markers_per_class=options['markers_per_class'],
                salient=options['salient'],
                bucket_mix=tuple(options['mix']),
                min_length=options['min_length'],
                max_length=options['max_length'],
            )
            corpus = synth_task(spec, seed=options['seed'])
            path = export_corpus(corpus, options['output'], options['format'])
        except MagicPyramidError as exc:
            raise CommandError(str(exc)) from exc
        stats = corpus.stats
        self.stdout.write(self.style.SUCCESS(
            f"Wrote {stats.count} examples to {path} "
            f"(lengths {stats.shortest}-{stats.longest}, mean {stats.mean:.1f}; buckets {stats.buckets}; "
            f"labels {corpus.label_counts()})"))
