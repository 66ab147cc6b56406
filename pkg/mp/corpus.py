"""Pre-tokenised corpora: jsonl/tsv ingestion, export and the synthetic marker task.

jsonl: one object per line, ``{"ids": [5, 9, 2], "label": 1}``
tsv:   ``label<TAB>space-separated ids``

Token id 0 is reserved for [CLS]; corpus ids run from 1 to vocab - 1.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch

from .encoder import ModelConfig
from .engine import BUCKETS, bucket_for
from .exceptions import ConfigError, InputError, LoadError
from .pipeline import LabeledExample
from .serializers import CorpusRecordSerializer

logger = logging.getLogger(__name__)

FORMATS = ('jsonl', 'tsv')


@dataclass(frozen=True)
class LengthStats:
    count: int
    shortest: int
    longest: int
    mean: float
    buckets: dict

    @classmethod
    def of(cls, examples):
        lengths = [e.length for e in examples]
        counts = Counter(bucket_for(n) for n in lengths)
        buckets = {b.label: counts.get(b.label, 0) for b in BUCKETS}
        if not lengths:
            return cls(0, 0, 0, 0.0, buckets)
        return cls(len(lengths), min(lengths), max(lengths), sum(lengths) / len(lengths), buckets)


@dataclass
class Corpus:
    examples: list
    classes: int
    vocab: int
    name: str = 'corpus'
    stats: LengthStats = field(init=False)

    def __post_init__(self):
        for index, example in enumerate(self.examples):
            if example.label >= self.classes:
                raise InputError(f"{self.name}[{index}]: label {example.label} >= {self.classes} classes")
            bad = [i for i in example.ids if not 1 <= i < self.vocab]
            if bad:
                raise InputError(f"{self.name}[{index}]: ids outside 1..{self.vocab - 1}: {bad[:5]}")
        self.stats = LengthStats.of(self.examples)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, index):
        return self.examples[index]

    def label_counts(self):
        return dict(sorted(Counter(e.label for e in self.examples).items()))


def guess_format(path, fmt=None):
    fmt = fmt or Path(path).suffix.lstrip('.')
    if fmt not in FORMATS:
        raise InputError(f"{path}: unknown corpus format {fmt!r}; choose from {FORMATS}")
    return fmt


def _parse_line(line, fmt):
    if fmt == 'jsonl':
        record = json.loads(line)
        if not isinstance(record, dict):
            raise ValueError("expected a JSON object")
        return record
    label, sep, ids = line.rstrip('\n').partition('\t')
    if not sep:
        raise ValueError("expected label<TAB>ids")
    return {'label': label.strip(), 'ids': ids.split()}


def ingest(path, fmt=None, classes=2, vocab=64, name=None) -> Corpus:
    """Read and validate a corpus file; records keep file order, blank lines are skipped."""
    path = Path(path)
    fmt = guess_format(path, fmt)
    if not path.exists():
        raise InputError(f"{path}: no such corpus file")
    examples = []
    context = {'classes': classes, 'vocab': vocab}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = _parse_line(line, fmt)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: malformed {fmt} record ({exc})") from exc
            serializer = CorpusRecordSerializer(data=record, context=context)
            if not serializer.is_valid():
                raise InputError(f"{path}:{lineno}: {serializer.errors}")
            examples.append(LabeledExample(**serializer.validated_data))
    corpus = Corpus(examples, classes, vocab, name or path.stem)
    logger.info("ingested %d examples from %s (%s)", len(corpus), path, corpus.stats.buckets)
    return corpus


def export_corpus(corpus: Corpus, path, fmt=None):
    path = Path(path)
    fmt = guess_format(path, fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        for example in corpus:
            if fmt == 'jsonl':
                f.write(json.dumps({'ids': list(example.ids), 'label': example.label}) + '\n')
            else:
                f.write(f"{example.label}\t{' '.join(map(str, example.ids))}\n")
    return path


def check_compatible(corpus: Corpus, config: ModelConfig):
    """Raise LoadError when a corpus cannot be fed to a model of ``config``."""
    if corpus.classes > config.classes:
        raise LoadError(f"corpus has {corpus.classes} classes, model has {config.classes}")
    if corpus.vocab > config.vocab:
        raise LoadError(f"corpus vocab {corpus.vocab} exceeds model vocab {config.vocab}")
    if corpus.stats.longest + 1 > config.max_len:
        raise LoadError(f"longest sequence {corpus.stats.longest} plus [CLS] exceeds max_len {config.max_len}")


# ---------------------------------------------------------------------------
# Synthetic task
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Marker task: each sequence carries ``salient`` markers of its class among filler ids.

    Class c owns marker ids ``1 + c * markers_per_class`` up to the next
    class's first id; every id above the markers is filler.
    """
    size: int = 1000
    classes: int = 2
    vocab: int = 64
    markers_per_class: int = 2
    salient: int = 1
    bucket_mix: tuple = (1 / 3, 1 / 3, 1 / 3)
    min_length: int = 4
    max_length: int = 120

    def __post_init__(self):
        object.__setattr__(self, 'bucket_mix', tuple(float(m) for m in self.bucket_mix))
        if self.size < 0:
            raise ConfigError(f"size must be non-negative, got {self.size}")
        if self.classes < 2 or self.markers_per_class < 1 or self.salient < 1:
            raise ConfigError("need two classes, one marker per class and one salient marker per sequence")
        if self.filler_ids[0] >= self.vocab:
            raise ConfigError(f"vocab {self.vocab} leaves no filler ids after the markers")
        if len(self.bucket_mix) != len(BUCKETS) or any(m < 0 for m in self.bucket_mix) or not sum(self.bucket_mix):
            raise ConfigError(f"bucket mix needs {len(BUCKETS)} non-negative weights")
        if not self.salient <= self.min_length <= BUCKETS[0].high:
            raise ConfigError(f"min_length must lie in [salient, {BUCKETS[0].high}]")
        if self.max_length < BUCKETS[-1].low and self.bucket_mix[-1] > 0:
            raise ConfigError(f"max_length {self.max_length} cannot produce long sequences")

    def markers(self, label):
        start = 1 + label * self.markers_per_class
        return list(range(start, start + self.markers_per_class))

    @property
    def filler_ids(self):
        return (1 + self.classes * self.markers_per_class, self.vocab)

    def length_range(self, bucket):
        low = max(bucket.low, self.min_length)
        high = self.max_length if bucket.high is None else min(bucket.high, self.max_length)
        return low, high

    def quotas(self):
        """Exact per-bucket counts by largest remainder."""
        total = sum(self.bucket_mix)
        shares = [self.size * m / total for m in self.bucket_mix]
        counts = [int(s) for s in shares]
        order = sorted(range(len(shares)), key=lambda i: counts[i] - shares[i])
        for i in order[:self.size - sum(counts)]:
            counts[i] += 1
        return counts


def _randint(low, high, generator):
    return int(torch.randint(low, high + 1, (1,), generator=generator))


def synth_task(spec: SynthSpec, seed: int = 0, name='synthetic') -> Corpus:
    generator = torch.Generator().manual_seed(seed)
    plan = []
    for bucket, count in zip(BUCKETS, spec.quotas()):
        plan.extend([bucket] * count)
    order = torch.randperm(len(plan), generator=generator).tolist()
    filler_low, filler_high = spec.filler_ids
    examples = []
    for index in order:
        low, high = spec.length_range(plan[index])
        length = _randint(low, high, generator)
        label = _randint(0, spec.classes - 1, generator)
        ids = torch.randint(filler_low, filler_high, (length,), generator=generator).tolist()
        markers = spec.markers(label)
        slots = torch.randperm(length, generator=generator)[:spec.salient].tolist()
        for slot in slots:
            ids[slot] = markers[_randint(0, len(markers) - 1, generator)]
        examples.append(LabeledExample(tuple(ids), label))
    corpus = Corpus(examples, spec.classes, spec.vocab, name)
    logger.info("generated %d examples (seed %d): %s", len(corpus), seed, corpus.stats.buckets)
    return corpus


def oracle_label(ids: Sequence[int], spec: SynthSpec) -> Optional[int]:
    """Class whose markers occur most often; None when no marker is present."""
    votes = Counter()
    for token in ids:
        if 1 <= token < spec.filler_ids[0]:
            votes[(token - 1) // spec.markers_per_class] += 1
    if not votes:
        return None
    return votes.most_common(1)[0][0]
