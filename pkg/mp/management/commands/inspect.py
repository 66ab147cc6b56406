from django.core.management.base import BaseCommand, CommandError

from mp.checkpoint import load_checkpoint
from mp.encoder import GROUPS
from mp.engine import baseline_cost, block_cost, count_flops
from mp.exceptions import MagicPyramidError


class Command(BaseCommand):
    help = "Summarise a checkpoint: header, parameter groups, thresholds and per-layer cost."

    def add_arguments(self, parser):
        parser.add_argument('checkpoint')
        parser.add_argument('--length', type=int, default=64,
                            help="Sequence length (without [CLS]) for the cost table.")

    def handle(self, *args, **options):
        try:
            model, header = load_checkpoint(options['checkpoint'])
            n = options['length'] + 1
            cfg = model.config
            if n > cfg.max_len:
                raise CommandError(f"length {options['length']} plus [CLS] exceeds max_len {cfg.max_len}")
            block = block_cost(cfg, n)
            sub = count_flops(cfg, n, 'subclassifier')
            total = baseline_cost(cfg, n)
        except MagicPyramidError as exc:
            raise CommandError(str(exc)) from exc

        self.stdout.write(f"{options['checkpoint']}: stage {header.get('stage')!r}, "
                          f"format {header['format_version']}, extra {header.get('extra')}")
        self.stdout.write("Config:")
        for key, value in cfg.to_dict().items():
            self.stdout.write(f"  {key:<16}{value}")
        self.stdout.write("Parameters:")
        for group in GROUPS:
            self.stdout.write(f"  {group:<16}{model.params.count(group):>10}")
        self.stdout.write(f"  {'total':<16}{model.params.count():>10}")
        deltas = model.params['pruning.deltas'].reshape(-1).tolist()
        self.stdout.write("Thresholds: " + ', '.join(f"l{i}={d:.5f}" for i, d in enumerate(deltas, start=1)))
        self.stdout.write(f"Cost at {options['length']} tokens (+[CLS]):")
        self.stdout.write(f"  block          {block.macs:>12} MACs {block.aux:>10} aux")
        self.stdout.write(f"  sub-classifier {sub.macs:>12} MACs {sub.aux:>10} aux "
                          f"({sub.macs / block.macs:.1%} of a block)")
        self.stdout.write(f"  full forward   {total.macs:>12} MACs {total.aux:>10} aux "
                          f"({total.flops / 1e9:.6f} GFLOPs)")
