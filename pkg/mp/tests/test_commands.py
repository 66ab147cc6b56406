import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import CommandError, call_command
from django.test import SimpleTestCase, TestCase

from mp.checkpoint import read_header
from mp.management.commands.bench import Command as BenchCommand
from mp.models import BenchReport, BenchRow, TrainingRun

from .factories import write_corpus, write_run_config


def run(*args):
    out = StringIO()
    call_command(*args, stdout=out)
    return out.getvalue()


class GenCommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_writes_the_requested_corpus(self):
        path = self.dir / 'short.tsv'
        out = run('gen', '--output', str(path), '--size', '12', '--mix', '1', '0', '0',
                  '--max-length', '30', '--seed', '4')
        self.assertIn('Wrote 12 examples', out)
        lines = path.read_text().splitlines()
        self.assertEqual(len(lines), 12)
        self.assertIn('\t', lines[0])

    def test_same_seed_same_bytes(self):
        a, b = self.dir / 'a.jsonl', self.dir / 'b.jsonl'
        run('gen', '--output', str(a), '--size', '20', '--seed', '1')
        run('gen', '--output', str(b), '--size', '20', '--seed', '1')
        self.assertEqual(a.read_bytes(), b.read_bytes())

    def test_invalid_corpus_settings(self):
        with self.assertRaises(CommandError):
            run('gen', '--output', str(self.dir / 'x.jsonl'), '--vocab', '4')


class TrainCommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        write_corpus(self.dir, 'train.jsonl', seed=0)
        write_corpus(self.dir, 'test.jsonl', seed=1, size=10)

    def test_single_stage_preset(self):
        config = write_run_config(self.dir, preset='bert')
        out = run('train', '--config', str(config))
        self.assertIn('Test accuracy', out)
        output = self.dir / 'out'
        self.assertEqual([p.name for p in output.glob('checkpoint-*')], ['checkpoint-1-regular.safetensors'])
        effective = json.loads((output / 'effective_config.json').read_text())
        self.assertEqual(effective['plan']['epochs'], {'regular': 1, 'soft': 0, 'hard': 0, 'sub': 0})
        self.assertEqual(effective['output_dir'], str(output.resolve()))

        saved = TrainingRun.objects.get()
        self.assertEqual((saved.preset, saved.status, saved.seed), ('bert', 'completed', 3))
        self.assertEqual(saved.checkpoints.count(), 1)

    def test_full_preset_writes_every_stage(self):
        config = write_run_config(self.dir, preset='mp')
        run('train', '--config', str(config))
        output = self.dir / 'out'
        names = sorted(p.name for p in output.glob('checkpoint-*'))
        self.assertEqual(names, ['checkpoint-1-regular.safetensors', 'checkpoint-2-soft.safetensors',
                                 'checkpoint-3-hard.safetensors', 'checkpoint-4-sub.safetensors'])
        self.assertEqual(read_header(output / names[-1])['stage'], 'sub')
        log = [json.loads(line) for line in (output / 'training_log.jsonl').read_text().splitlines()]
        self.assertEqual([r['stage'] for r in log], ['regular', 'soft', 'hard', 'sub'])
        self.assertIn('mean_gate', log[1])
        self.assertIn('mean_retained', log[2])
        saved = TrainingRun.objects.get()
        self.assertEqual(list(saved.checkpoints.values_list('stage', flat=True)), ['regular', 'soft', 'hard', 'sub'])

    def test_reruns_are_byte_identical(self):
        config = write_run_config(self.dir, preset='mp')
        run('train', '--config', str(config), '--output-dir', str(self.dir / 'one'), '--no-record')
        run('train', '--config', str(config), '--output-dir', str(self.dir / 'two'), '--no-record')
        for path in sorted((self.dir / 'one').glob('checkpoint-*')):
            self.assertEqual(path.read_bytes(), (self.dir / 'two' / path.name).read_bytes(), path.name)
        self.assertEqual((self.dir / 'one' / 'training_log.jsonl').read_text(),
                         (self.dir / 'two' / 'training_log.jsonl').read_text())
        self.assertFalse(TrainingRun.objects.exists())

    def test_effective_config_reproduces_the_run(self):
        config = write_run_config(self.dir, preset='bert')
        run('train', '--config', str(config), '--no-record')
        effective = json.loads((self.dir / 'out' / 'effective_config.json').read_text())
        effective['output_dir'] = str(self.dir / 'again')
        again = self.dir / 'again.json'
        again.write_text(json.dumps(effective))
        run('train', '--config', str(again), '--no-record')
        name = 'checkpoint-1-regular.safetensors'
        self.assertEqual((self.dir / 'out' / name).read_bytes(), (self.dir / 'again' / name).read_bytes())

    def test_invalid_configs(self):
        bad = self.dir / 'bad.json'
        bad.write_text(json.dumps({'name': 'x', 'plan': {'preset': 'albert'},
                                   'corpus': {'train': 'train.jsonl'}}))
        with self.assertRaises(CommandError):
            run('train', '--config', str(bad))
        with self.assertRaises(CommandError):
            run('train', '--config', str(self.dir / 'missing.json'))
        (self.dir / 'broken.json').write_text('{"name": ')
        with self.assertRaises(CommandError):
            run('train', '--config', str(self.dir / 'broken.json'))

    def test_corpus_too_wide_for_the_model(self):
        write_corpus(self.dir, 'train.jsonl', seed=0, vocab=40)
        config = write_run_config(self.dir, preset='bert')
        with self.assertRaises(CommandError):
            run('train', '--config', str(config), '--no-record')


class BenchCommandTests(TestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        write_corpus(cls.dir, 'train.jsonl', seed=0)
        write_corpus(cls.dir, 'test.jsonl', seed=1, size=10)
        write_corpus(cls.dir, 'wide.jsonl', seed=2, size=5, vocab=40)
        config = write_run_config(cls.dir, preset='mp')
        run('train', '--config', str(config), '--no-record')
        cls.checkpoint = cls.dir / 'out' / 'checkpoint-4-sub.safetensors'

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_report_has_a_row_per_halt_value_and_bucket(self):
        output = self.dir / 'bench'
        out = run('bench', '--checkpoint', str(self.checkpoint), '--corpus', str(self.dir / 'test.jsonl'),
                  '--tau', '0.1', '0.5', '0.8', '--output', str(output))
        lines = (output / 'report.tsv').read_text().splitlines()
        self.assertTrue(lines[0].startswith('# gflops = 2 x MACs'))
        self.assertEqual(len(lines), 2 + 12)
        self.assertEqual(len((output / 'report.jsonl').read_text().splitlines()), 12)
        self.assertEqual(len((output / 'traces.jsonl').read_text().splitlines()), 30)
        self.assertIn('Wrote', out)
        report = BenchReport.objects.get()
        self.assertEqual(report.tau_grid, [0.1, 0.5, 0.8])
        self.assertEqual(BenchRow.objects.filter(report=report).count(), 12)

    def test_methods_and_operating_points(self):
        output = self.dir / 'methods'
        out = run('bench', '--checkpoint', str(self.checkpoint), '--corpus', str(self.dir / 'test.jsonl'),
                  '--tau', '0.5', '--methods', 'baseline', 'prune', 'exit', 'mp', '--output', str(output),
                  '--workers', '2', '--no-record')
        records = [json.loads(line) for line in (output / 'report.jsonl').read_text().splitlines()]
        self.assertEqual(len(records), 16)
        self.assertEqual(records[0]['method'], 'baseline')
        self.assertEqual(records[0]['speedup'], 1.0)
        self.assertIn('prune:', out)
        self.assertFalse(BenchReport.objects.exists())

    def test_corpus_outside_the_checkpoint_vocab(self):
        with self.assertRaisesRegex(CommandError, 'does not match checkpoint'):
            run('bench', '--checkpoint', str(self.checkpoint), '--corpus', str(self.dir / 'wide.jsonl'),
                '--output', str(self.dir / 'wide'))

    def test_bad_halt_value(self):
        with self.assertRaises(CommandError):
            run('bench', '--checkpoint', str(self.checkpoint), '--corpus', str(self.dir / 'test.jsonl'),
                '--tau', '1.5', '--output', str(self.dir / 'bad'))

    def test_missing_checkpoint(self):
        with self.assertRaises(CommandError):
            run('bench', '--checkpoint', str(self.dir / 'nope.safetensors'),
                '--corpus', str(self.dir / 'test.jsonl'), '--output', str(self.dir / 'none'))

    def test_inspect_summarises_the_checkpoint(self):
        out = run('inspect', str(self.checkpoint), '--length', '20')
        self.assertIn("stage 'sub'", out)
        self.assertIn('Thresholds: l1=', out)
        self.assertIn('sub-classifier', out)
        with self.assertRaises(CommandError):
            run('inspect', str(self.checkpoint), '--length', '100')

    def test_max_drop_help_names_the_acceptance_tolerance(self):
        parser = BenchCommand().create_parser('manage.py', 'bench')
        self.assertIn('selects at 0.02', ' '.join(parser.format_help().split()))
        self.assertEqual(parser.get_default('max_drop'), 0.01)
