"""Four-step training schedule: regular, soft pruning, hard pruning, sub-classifiers.

Every baseline is a pattern of active stages over the same model:

    preset     regular  soft  hard  sub
    bert          x
    ltp           x      x     x
    fastbert      x                  x
    mp            x      x     x     x

A stage owns a set of trainable parameter groups; everything else is frozen
(``requires_grad`` off) and never handed to the optimizer.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import torch

from . import numerics as nx
from .checkpoint import save_checkpoint
from .encoder import Encoder
from .exceptions import ConfigError, InputError, NumericError, StageError
from .exiting import stage2_loss, sub_forward
from .pruning import PruneMode, PruningState, apply_threshold_schedule, mask_l1_penalty, pruned_forward

logger = logging.getLogger(__name__)

STAGES = ('regular', 'soft', 'hard', 'sub')
PRESETS = {
    'bert': ('regular',),
    'ltp': ('regular', 'soft', 'hard'),
    'fastbert': ('regular', 'sub'),
    'mp': ('regular', 'soft', 'hard', 'sub'),
}
STAGE_GROUPS = {
    'regular': ('backbone', 'classifier'),
    'soft': ('backbone', 'classifier', 'pruning'),
    'hard': ('backbone', 'classifier'),
    'sub': ('subclassifier',),
}


class StageEpochs(NamedTuple):
    regular: int = 3
    soft: int = 1
    hard: int = 2
    sub: int = 2


@dataclass(frozen=True)
class LabeledExample:
    ids: tuple
    label: int

    def __post_init__(self):
        object.__setattr__(self, 'ids', tuple(int(i) for i in self.ids))
        if not self.ids:
            raise InputError("an example needs at least one token")
        if self.label < 0:
            raise InputError(f"negative label {self.label}")

    @property
    def length(self):
        return len(self.ids)


@dataclass(frozen=True)
class TrainPlan:
    epochs: StageEpochs = StageEpochs()
    preset: str = 'mp'
    learning_rate: float = 2e-5
    batch_size: int = 64
    delta_final: float = 0.04
    temperature: float = 1e-5
    l1_weight: float = 0.01
    tau_grid: tuple = (0.1, 0.5, 0.8)
    seed: int = 0
    mp_mode: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'epochs', StageEpochs(*self.epochs))
        object.__setattr__(self, 'tau_grid', tuple(float(t) for t in self.tau_grid))
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if any(e < 0 for e in self.epochs):
            raise ConfigError(f"epoch counts must be non-negative, got {tuple(self.epochs)}")
        if self.epochs.soft > 0 and self.epochs.hard == 0:
            raise ConfigError("soft pruning must be followed by at least one hard pruning epoch")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.l1_weight < 0:
            raise ConfigError(f"l1 weight must be non-negative, got {self.l1_weight}")
        if self.delta_final < 0:
            raise ConfigError(f"final threshold must be non-negative, got {self.delta_final}")
        if any(not 0.0 <= t <= 1.0 for t in self.tau_grid):
            raise ConfigError(f"halt values must lie in [0, 1], got {self.tau_grid}")

    def to_dict(self):
        data = asdict(self)
        data['epochs'] = self.epochs._asdict()
        data['tau_grid'] = list(self.tau_grid)
        return data


def make_plan(preset, regular=3, soft=1, hard=2, sub=2, **hyper) -> TrainPlan:
    """Plan with the stage pattern of ``preset``; inactive stages get 0 epochs."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    active = PRESETS[preset]
    counts = dict(zip(STAGES, (regular, soft, hard, sub)))
    epochs = StageEpochs(*(counts[stage] if stage in active else 0 for stage in STAGES))
    hyper.setdefault('mp_mode', preset == 'mp')
    return TrainPlan(epochs=epochs, preset=preset, **hyper)


@dataclass
class StageResult:
    stage: str
    epochs: int
    epoch_losses: list = field(default_factory=list)
    # per-epoch stage-specific metrics, e.g. mean soft gate
    metrics: list = field(default_factory=list)
    checkpoint: Optional[Path] = None

    @property
    def skipped(self):
        return self.epochs == 0

    @property
    def final_loss(self):
        return self.epoch_losses[-1] if self.epoch_losses else None


def cross_entropy(logits, label):
    logp = nx.log_softmax_rows(logits)
    return nx.scale(nx.sum_all(nx.columns(logp, label, label + 1)), -1.0)


def _generator(plan: TrainPlan, stage: str):
    return torch.Generator().manual_seed(plan.seed * len(STAGES) + STAGES.index(stage))


def _fit(model: Encoder, data: Sequence[LabeledExample], plan: TrainPlan, stage: str,
         example_loss: Callable, epochs: int, generator=None, on_epoch=None) -> StageResult:
    result = StageResult(stage, epochs)
    if epochs == 0:
        logger.info("stage %s skipped", stage)
        return result
    if not data:
        raise StageError(stage, 1, "no training examples")
    for example in data:
        if example.label >= model.config.classes:
            raise InputError(f"stage {stage!r}: label {example.label} outside {model.config.classes} classes")

    generator = generator or _generator(plan, stage)
    model.params.set_trainable_groups(STAGE_GROUPS[stage])
    tensors = [t for _, t in model.params.trainable()]
    optimizer = torch.optim.Adam(tensors, lr=plan.learning_rate)
    logger.info("stage %s: %d epochs over %d examples, %d trainable tensors",
                stage, epochs, len(data), len(tensors))

    for epoch in range(1, epochs + 1):
        total, metric_total = 0.0, 0.0
        order = torch.randperm(len(data), generator=generator).tolist()
        for start in range(0, len(order), plan.batch_size):
            batch = [data[i] for i in order[start:start + plan.batch_size]]
            try:
                with nx.GradTape() as tape:
                    loss, metric = None, 0.0
                    for example in batch:
                        term, value = example_loss(model, example)
                        loss = term if loss is None else nx.add(loss, term)
                        metric += value
                    loss = nx.scale(loss, 1.0 / len(batch))
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss {value}")
                grads = tape.gradient(loss, tensors)
            except NumericError as exc:
                raise StageError(stage, epoch, f"batch at offset {start}: {exc}") from exc
            optimizer.zero_grad(set_to_none=True)
            for t, g in zip(tensors, grads):
                t.grad = g
            optimizer.step()
            total += value * len(batch)
            metric_total += metric
            logger.debug("stage %s epoch %d offset %d loss %.6f", stage, epoch, start, value)
        result.epoch_losses.append(total / len(data))
        result.metrics.append(metric_total / len(data))
        logger.info("stage %s epoch %d/%d mean loss %.6f", stage, epoch, epochs, result.epoch_losses[-1])
        if on_epoch:
            on_epoch(stage, epoch, result.epoch_losses[-1], result.metrics[-1])
    return result


def regular_loss(model, example):
    ps = PruningState.for_model(model)
    final = pruned_forward(model, example.ids, ps).final
    return cross_entropy(model.logits(final), example.label), 0.0


def soft_prune_loss(model, example, temperature, l1_weight):
    """Task cross-entropy plus the gate penalty; the metric is the mean prunable gate."""
    ps = PruningState.for_model(model, PruneMode.SOFT, temperature, l1_weight)
    out = pruned_forward(model, example.ids, ps)
    loss = nx.add(cross_entropy(model.logits(out.final), example.label), mask_l1_penalty(out.gates, l1_weight))
    prunable = [g.detach().reshape(-1)[1:] for g in out.gates if g.numel() > 1]
    mean_gate = float(torch.cat(prunable).mean()) if prunable else 1.0
    return loss, mean_gate


def hard_prune_loss(model, example):
    ps = PruningState.for_model(model, PruneMode.HARD)
    out = pruned_forward(model, example.ids, ps)
    return cross_entropy(model.logits(out.final), example.label), float(out.final.n)


def subclassifier_loss(model, example, mp_mode):
    """Distillation loss of every sub-classifier against the frozen main classifier."""
    mode = PruneMode.HARD if mp_mode else PruneMode.DISABLED
    with torch.no_grad():
        out = pruned_forward(model, example.ids, PruningState.for_model(model, mode))
        p_t = model.pool_and_classify(out.final)
    sub_probs = [sub_forward(model, out.states[layer - 1], layer)
                 for layer in range(1, model.config.layers)]
    return stage2_loss(sub_probs, p_t), 0.0


def stage_regular(model, data, plan, on_epoch=None) -> StageResult:
    return _fit(model, data, plan, 'regular', regular_loss, plan.epochs.regular, on_epoch=on_epoch)


def stage_soft_prune(model, data, plan, on_epoch=None) -> StageResult:
    """Initialise thresholds from the linear schedule, then train them with the model."""
    apply_threshold_schedule(model, plan.delta_final)

    def loss(m, example):
        return soft_prune_loss(m, example, plan.temperature, plan.l1_weight)

    return _fit(model, data, plan, 'soft', loss, plan.epochs.soft, on_epoch=on_epoch)


def stage_hard_prune(model, data, plan, on_epoch=None) -> StageResult:
    return _fit(model, data, plan, 'hard', hard_prune_loss, plan.epochs.hard, on_epoch=on_epoch)


def stage_subclassifiers(model, data, plan, mp_mode=None, on_epoch=None) -> StageResult:
    mp_mode = plan.mp_mode if mp_mode is None else mp_mode

    def loss(m, example):
        return subclassifier_loss(m, example, mp_mode)

    return _fit(model, data, plan, 'sub', loss, plan.epochs.sub, on_epoch=on_epoch)


STAGE_RUNNERS = {
    'regular': stage_regular,
    'soft': stage_soft_prune,
    'hard': stage_hard_prune,
    'sub': stage_subclassifiers,
}


def checkpoint_name(index, stage):
    return f'checkpoint-{index}-{stage}.safetensors'


def train(model: Encoder, data: Sequence[LabeledExample], plan: TrainPlan,
          output_dir=None, on_epoch=None, on_stage=None) -> list:
    """Run every stage in order; active stages leave a stage-tagged checkpoint in ``output_dir``."""
    results = []
    for index, stage in enumerate(STAGES, start=1):
        result = STAGE_RUNNERS[stage](model, data, plan, on_epoch=on_epoch)
        if not result.skipped and output_dir is not None:
            result.checkpoint = save_checkpoint(
                model, Path(output_dir) / checkpoint_name(index, stage), stage=stage,
                extra={'preset': plan.preset, 'seed': plan.seed, 'epochs': result.epochs,
                       'final_loss': result.final_loss})
        results.append(result)
        if on_stage:
            on_stage(result)
    return results


def accuracy(model: Encoder, data: Sequence[LabeledExample], mode=PruneMode.DISABLED) -> float:
    if not data:
        return 0.0
    ps = PruningState.for_model(model, mode)
    correct = 0
    with torch.no_grad():
        for example in data:
            logits = model.logits(pruned_forward(model, example.ids, ps).final)
            correct += int(int(logits.argmax()) == example.label)
    return correct / len(data)
