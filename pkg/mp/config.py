"""Run configs: JSON documents naming a model, a training plan and corpus files.

Relative corpus and output paths resolve against the config file's
directory. The effective config (defaults filled in, paths absolute) is
echoed next to the checkpoints and can be passed back to ``train``.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from django.conf import settings

from .encoder import ModelConfig
from .exceptions import ConfigError
from .pipeline import TrainPlan
from .serializers import RunConfigSerializer

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG = 'effective_config.json'


@dataclass(frozen=True)
class RunConfig:
    name: str
    model: ModelConfig
    plan: TrainPlan
    train_corpus: Path
    test_corpus: Optional[Path]
    corpus_format: Optional[str]
    output_dir: Path

    def to_dict(self):
        corpus = {'train': str(self.train_corpus)}
        if self.test_corpus is not None:
            corpus['test'] = str(self.test_corpus)
        if self.corpus_format:
            corpus['format'] = self.corpus_format
        return {
            'name': self.name,
            'model': self.model.to_dict(),
            'plan': self.plan.to_dict(),
            'corpus': corpus,
            'output_dir': str(self.output_dir),
        }


def _resolve(base, value):
    path = Path(value).expanduser()
    return path if path.is_absolute() else (base / path).resolve()


def parse_run_config(data, base_dir='.') -> RunConfig:
    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(f"invalid run config: {serializer.errors}")
    valid = serializer.validated_data
    base = Path(base_dir).resolve()
    corpus = valid['corpus']
    output_dir = valid.get('output_dir') or str(Path(engine_output_dir()) / valid['name'])
    return RunConfig(
        name=valid['name'],
        model=valid['model']['config'],
        plan=valid['plan']['plan'],
        train_corpus=_resolve(base, corpus['train']),
        test_corpus=_resolve(base, corpus['test']) if corpus.get('test') else None,
        corpus_format=corpus.get('format'),
        output_dir=_resolve(base, output_dir),
    )


def engine_output_dir():
    return settings.MAGIC_PYRAMID['OUTPUT_DIR']


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read run config ({exc})") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: run config must be a JSON object")
    return parse_run_config(data, path.parent)


def write_effective_config(config: RunConfig):
    config.output_dir.mkdir(parents=True, exist_ok=True)
    path = config.output_dir / EFFECTIVE_CONFIG
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + '\n')
    logger.info("effective config written to %s", path)
    return path
