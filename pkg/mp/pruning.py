"""Width-wise reduction: attention importance, soft gates, hard masks and thresholds.

Importance is the attention a token *receives*: the column mean of each
head's row-stochastic matrix, averaged over heads. Scores of the retained
tokens therefore sum to one at every layer.
"""
import enum
import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import torch

from . import numerics as nx
from .encoder import Encoder, HiddenState, ModelConfig
from .exceptions import ConfigError, InputError, ShapeError

logger = logging.getLogger(__name__)


class PruneMode(str, enum.Enum):
    DISABLED = 'disabled'
    SOFT = 'soft'
    HARD = 'hard'


@dataclass
class PruningState:
    """Per-layer thresholds plus the gate settings of the current stage.

    ``deltas`` is a ``(1, L)`` matrix; for a model it is the same tensor as
    ``params['pruning.deltas']`` so the soft stage trains it in place.
    """
    deltas: nx.Matrix
    temperature: float = 1e-5
    l1_weight: float = 0.0
    mode: PruneMode = PruneMode.DISABLED

    def __post_init__(self):
        try:
            self.mode = PruneMode(self.mode)
        except ValueError as exc:
            raise ConfigError(f"unknown pruning mode {self.mode!r}") from exc
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.l1_weight < 0:
            raise ConfigError(f"l1 weight must be non-negative, got {self.l1_weight}")
        if self.deltas.dim() != 2 or self.deltas.shape[0] != 1:
            raise ShapeError(f"deltas must be a single row, got {tuple(self.deltas.shape)}")

    @classmethod
    def for_model(cls, model: Encoder, mode=PruneMode.DISABLED, temperature=1e-5, l1_weight=0.0):
        return cls(model.params['pruning.deltas'], temperature, l1_weight, mode)

    @property
    def delta_final(self):
        return float(self.deltas[0, -1])

    def delta(self, layer):
        return nx.columns(self.deltas, layer - 1, layer)

    def with_mode(self, mode):
        return replace(self, mode=PruneMode(mode))


def importance(attn: Sequence[nx.Matrix]) -> nx.Matrix:
    """Attention received per token, as a ``1 x n`` row."""
    if not attn:
        raise InputError("importance needs at least one attention head")
    total = nx.mean_rows(attn[0])
    for a in attn[1:]:
        total = nx.add(total, nx.mean_rows(a))
    return nx.scale(total, 1.0 / len(attn))


def soft_gate(s: nx.Matrix, layer: int, ps: PruningState) -> nx.Matrix:
    if ps.mode is not PruneMode.SOFT:
        raise ConfigError(f"soft gates need soft mode, state is {ps.mode.value}")
    if ps.temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {ps.temperature}")
    return nx.sigmoid(nx.scale(nx.sub(s, ps.delta(layer)), 1.0 / ps.temperature))


def apply_soft_mask(h: HiddenState, gates: nx.Matrix) -> HiddenState:
    """Scale each row by its gate; the [CLS] row always passes with gate 1."""
    n = h.n
    if gates.numel() != n:
        raise ShapeError(f"{gates.numel()} gates for {n} rows")
    passthrough = torch.ones(1, n, dtype=nx.DTYPE)
    passthrough[0, 0] = 0.0
    cls = torch.zeros(1, n, dtype=nx.DTYPE)
    cls[0, 0] = 1.0
    effective = nx.add(nx.mul(gates.reshape(1, n), passthrough), cls)
    return h.replace_values(nx.mul(h.values, nx.transpose(effective)))


def hard_mask(s: nx.Matrix, layer: int, ps: PruningState) -> torch.Tensor:
    """Boolean keep vector: a token survives iff its score exceeds the layer threshold."""
    if ps.mode is not PruneMode.HARD:
        raise ConfigError(f"hard masks need hard mode, state is {ps.mode.value}")
    keep = s.detach().reshape(-1) > float(ps.deltas[0, layer - 1])
    keep[0] = True
    return keep


def threshold_schedule(delta_final: float, config: ModelConfig) -> torch.Tensor:
    """Linear per-layer thresholds delta_final * l / L for l = 1..L."""
    if delta_final < 0:
        raise InputError(f"final threshold must be non-negative, got {delta_final}")
    layers = config.layers
    return torch.tensor([delta_final * layer / layers for layer in range(1, layers + 1)], dtype=nx.DTYPE)


def apply_threshold_schedule(model: Encoder, delta_final: float):
    schedule = threshold_schedule(delta_final, model.config)
    with torch.no_grad():
        model.params['pruning.deltas'].copy_(schedule.reshape(1, -1))
    logger.info("thresholds initialised from final threshold %.4f: %s", delta_final,
                [round(float(d), 5) for d in schedule])
    return schedule


def mask_l1_penalty(gates: Sequence[nx.Matrix], l1_weight: float) -> nx.Matrix:
    """l1_weight times the mean absolute gate over every prunable token of every layer.

    Column 0 of each gate row is the [CLS] slot and is left out: its gate is
    forced to one.
    """
    parts = [nx.columns(g.reshape(1, -1), 1, g.numel()) for g in gates if g.numel() > 1]
    if not parts:
        return torch.zeros((), dtype=nx.DTYPE)
    flat = parts[0] if len(parts) == 1 else nx.concat_columns(parts)
    return nx.scale(nx.mean_all(nx.absolute(flat)), l1_weight)


class PrunedForward(NamedTuple):
    states: list
    gates: list

    @property
    def final(self):
        return self.states[-1]


def pruned_forward(model: Encoder, ids, ps: PruningState) -> PrunedForward:
    """Backbone forward with the gates or masks of ``ps`` applied after blocks 1..L-1.

    ``states[l - 1]`` is the output of block l before its own gate or mask,
    which is what sub-classifier l reads; the gated or shortened state feeds
    block l + 1.
    """
    layers = model.config.layers
    h = model.embed(ids)
    states, gates = [], []
    for layer in range(1, layers + 1):
        out = model.block_forward(h, layer)
        states.append(out.hidden)
        h = out.hidden
        if layer < layers and ps.mode is not PruneMode.DISABLED:
            with nx.component('pruning'):
                s = importance(out.attention)
                if ps.mode is PruneMode.SOFT:
                    g = soft_gate(s, layer, ps)
                    gates.append(g)
                    h = apply_soft_mask(h, g)
                else:
                    h = h.keep(hard_mask(s, layer, ps))
    return PrunedForward(states, gates)
