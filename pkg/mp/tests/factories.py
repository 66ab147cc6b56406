import json
from pathlib import Path

import torch

from mp.corpus import SynthSpec, export_corpus, synth_task
from mp.encoder import Encoder, ModelConfig
from mp.pipeline import LabeledExample

GRAD_CHECK_CONFIG = dict(layers=3, hidden=16, heads=2, ffn=32, classes=3, vocab=12, max_len=8,
                         sub_hidden=8, sub_heads=1, sub_ffn=16)


def tiny_config(**overrides):
    values = dict(layers=3, hidden=16, heads=2, ffn=32, classes=2, vocab=16, max_len=48)
    values.update(overrides)
    return ModelConfig(**values)


def tiny_model(seed=0, **overrides):
    return Encoder(tiny_config(**overrides), seed=seed)


def random_ids(length, vocab, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.randint(1, vocab, (length,), generator=generator).tolist()


def marker_examples(count=40, vocab=16, seed=0, min_length=4, max_length=10):
    """Two-class toy set: label 1 iff token 1 occurs, which the first position always decides."""
    generator = torch.Generator().manual_seed(seed)
    examples = []
    for index in range(count):
        label = index % 2
        length = int(torch.randint(min_length, max_length + 1, (1,), generator=generator))
        ids = torch.randint(2, vocab, (length,), generator=generator).tolist()
        if label:
            ids[0] = 1
        examples.append(LabeledExample(tuple(ids), label))
    return examples


def short_spec(size=24, vocab=16, max_length=30):
    return SynthSpec(size=size, classes=2, vocab=vocab, markers_per_class=1, salient=1,
                     bucket_mix=(1, 0, 0), min_length=4, max_length=max_length)


def write_corpus(directory, name='train.jsonl', seed=0, **spec):
    corpus = synth_task(short_spec(**spec), seed=seed)
    return export_corpus(corpus, Path(directory) / name)


def write_run_config(directory, preset='mp', epochs=None, **model):
    model_values = dict(layers=2, hidden=8, heads=2, ffn=16, classes=2, vocab=16, max_len=48)
    model_values.update(model)
    data = {
        'name': f'tiny-{preset}',
        'model': model_values,
        'plan': {
            'preset': preset,
            'epochs': epochs or {'regular': 1, 'soft': 1, 'hard': 1, 'sub': 1},
            'learning_rate': 0.005,
            'batch_size': 8,
            'delta_final': 0.05,
            'temperature': 0.01,
            'seed': 3,
        },
        'corpus': {'train': 'train.jsonl', 'test': 'test.jsonl'},
        'output_dir': 'out',
    }
    path = Path(directory) / 'run.json'
    path.write_text(json.dumps(data))
    return path
