"""Transformer backbone: embeddings, post-norm blocks, [CLS] pooler and main classifier."""
import logging
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional, Sequence

import torch

from . import numerics as nx
from .exceptions import ConfigError, InputError, LoadError, ShapeError

logger = logging.getLogger(__name__)

CLS_ID = 0
MASKED_LOGIT = -1e9
INIT_STD = 0.02
SCALE_MODES = ('head', 'model')


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    hidden: int = 32
    heads: int = 4
    ffn: int = 128
    classes: int = 2
    vocab: int = 64
    max_len: int = 128
    # 0 selects the defaults: hidden // 2 and 2 * sub_hidden
    sub_hidden: int = 0
    sub_heads: int = 1
    sub_ffn: int = 0
    attention_scale: str = 'head'

    def __post_init__(self):
        if self.sub_hidden == 0:
            object.__setattr__(self, 'sub_hidden', max(1, self.hidden // 2))
        if self.sub_ffn == 0:
            object.__setattr__(self, 'sub_ffn', 2 * self.sub_hidden)
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, int) and value < 1:
                raise ConfigError(f"{f.name} must be positive, got {value}")
        if self.layers < 2:
            raise ConfigError("need at least two layers (one exit point plus the final layer)")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.sub_hidden > self.hidden or self.sub_hidden % self.sub_heads:
            raise ConfigError("sub_hidden must divide into sub_heads and not exceed hidden")
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if self.vocab < 2:
            raise ConfigError("vocab must hold [CLS] plus at least one token")
        if self.attention_scale not in SCALE_MODES:
            raise ConfigError(f"attention_scale must be one of {SCALE_MODES}")

    @property
    def head_size(self):
        return self.hidden // self.heads

    @property
    def sub_head_size(self):
        return self.sub_hidden // self.sub_heads

    def score_scale(self, width, heads):
        """Divisor of the attention logits for a block of this width."""
        return math.sqrt(width // heads if self.attention_scale == 'head' else width)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

GROUPS = ('backbone', 'classifier', 'pruning', 'subclassifier')


def parameter_group(name):
    if name.startswith('sub'):
        return 'subclassifier'
    if name.startswith('pruning.'):
        return 'pruning'
    if name.startswith(('pooler.', 'classifier.')):
        return 'classifier'
    return 'backbone'


class ParameterSet(Mapping):
    """Named trainable tensors with freeze flags.

    Frozen tensors have ``requires_grad`` off, so no graph reaches them and
    the optimizer of a stage never sees them.
    """

    def __init__(self):
        self._tensors = {}
        self._frozen = set()

    def register(self, name, tensor):
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = tensor.detach().to(nx.DTYPE).clone().requires_grad_(True)
        self._tensors[name] = t
        return t

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def is_frozen(self, name):
        return name in self._frozen

    def set_trainable_groups(self, groups):
        for group in groups:
            if group not in GROUPS:
                raise ConfigError(f"unknown parameter group {group!r}")
        self._frozen = {n for n in self._tensors if parameter_group(n) not in groups}
        for name, t in self._tensors.items():
            t.requires_grad_(name not in self._frozen)

    def trainable(self):
        return [(n, t) for n, t in self._tensors.items() if n not in self._frozen]

    def snapshot(self, group=None):
        return {n: t.detach().clone() for n, t in self._tensors.items()
                if group is None or parameter_group(n) == group}

    def load_state(self, tensors):
        missing = set(self._tensors) - set(tensors)
        extra = set(tensors) - set(self._tensors)
        if missing or extra:
            raise LoadError(f"tensor names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        with torch.no_grad():
            for name, t in self._tensors.items():
                value = tensors[name]
                if tuple(value.shape) != tuple(t.shape):
                    raise LoadError(f"{name}: shape {tuple(value.shape)} != {tuple(t.shape)}")
                t.copy_(value.to(nx.DTYPE))

    def count(self, group=None):
        return sum(t.numel() for n, t in self._tensors.items()
                   if group is None or parameter_group(n) == group)

    def clone(self):
        twin = ParameterSet()
        for name, t in self._tensors.items():
            twin.register(name, t)
        twin.set_trainable_groups({parameter_group(n) for n in self._tensors if n not in self._frozen})
        return twin


def _block_parameters(params, prefix, width, ffn, normal):
    zeros, ones = torch.zeros, torch.ones
    for proj in ('query', 'key', 'value', 'output'):
        params.register(f'{prefix}.{proj}.weight', normal(width, width))
        params.register(f'{prefix}.{proj}.bias', zeros(width, dtype=nx.DTYPE))
    params.register(f'{prefix}.attn_norm.gain', ones(width, dtype=nx.DTYPE))
    params.register(f'{prefix}.attn_norm.bias', zeros(width, dtype=nx.DTYPE))
    params.register(f'{prefix}.ffn_in.weight', normal(width, ffn))
    params.register(f'{prefix}.ffn_in.bias', zeros(ffn, dtype=nx.DTYPE))
    params.register(f'{prefix}.ffn_out.weight', normal(ffn, width))
    params.register(f'{prefix}.ffn_out.bias', zeros(width, dtype=nx.DTYPE))
    params.register(f'{prefix}.ffn_norm.gain', ones(width, dtype=nx.DTYPE))
    params.register(f'{prefix}.ffn_norm.bias', zeros(width, dtype=nx.DTYPE))


def _head_parameters(params, pooler, projector, width, classes, normal):
    params.register(f'{pooler}.weight', normal(width, width))
    params.register(f'{pooler}.bias', torch.zeros(width, dtype=nx.DTYPE))
    params.register(f'{projector}.weight', normal(width, classes))
    params.register(f'{projector}.bias', torch.zeros(classes, dtype=nx.DTYPE))


def build_parameters(config: ModelConfig, seed: int = 0) -> ParameterSet:
    """Initialise every tensor of the model, sub-classifiers and thresholds included."""
    generator = torch.Generator().manual_seed(seed)

    def normal(*shape):
        return torch.randn(*shape, generator=generator, dtype=nx.DTYPE) * INIT_STD

    params = ParameterSet()
    params.register('embed.tokens', normal(config.vocab, config.hidden))
    params.register('embed.positions', normal(config.max_len, config.hidden))
    for layer in range(1, config.layers + 1):
        _block_parameters(params, f'layer{layer}', config.hidden, config.ffn, normal)
    _head_parameters(params, 'pooler', 'classifier', config.hidden, config.classes, normal)
    params.register('pruning.deltas', torch.zeros(1, config.layers, dtype=nx.DTYPE))
    for layer in range(1, config.layers):
        prefix = f'sub{layer}'
        params.register(f'{prefix}.down.weight', normal(config.hidden, config.sub_hidden))
        params.register(f'{prefix}.down.bias', torch.zeros(config.sub_hidden, dtype=nx.DTYPE))
        _block_parameters(params, prefix, config.sub_hidden, config.sub_ffn, normal)
        _head_parameters(params, f'{prefix}.pooler', f'{prefix}.projector',
                         config.sub_hidden, config.classes, normal)
    return params


# ---------------------------------------------------------------------------
# Hidden states and block kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HiddenState:
    """Activations of the retained tokens after ``layer`` blocks.

    ``positions`` holds the original sequence positions of the rows; row 0 is
    always the [CLS] slot.
    """
    values: nx.Matrix
    positions: torch.Tensor
    layer: int

    def __post_init__(self):
        n = self.values.shape[0]
        if n < 1 or self.positions.numel() != n:
            raise ShapeError(f"hidden state with {n} rows and {self.positions.numel()} positions")
        if int(self.positions[0]) != 0 or (n > 1 and not bool((self.positions.diff() > 0).all())):
            raise ShapeError("positions must start at the [CLS] slot and strictly increase")

    @property
    def n(self):
        return self.values.shape[0]

    def keep(self, mask):
        """Physically drop the rows where ``mask`` is False."""
        index = torch.nonzero(mask, as_tuple=False).reshape(-1)
        return HiddenState(nx.take_rows(self.values, index), self.positions[index], self.layer)

    def replace_values(self, values):
        return HiddenState(values, self.positions, self.layer)


class BlockOutput(NamedTuple):
    hidden: HiddenState
    attention: list


def key_bias_for(key_mask):
    """Additive logit row hiding the keys where ``key_mask`` is False."""
    zeros = torch.zeros(key_mask.shape[0], dtype=nx.DTYPE)
    return torch.where(key_mask, zeros, zeros + MASKED_LOGIT).reshape(1, -1)


def attention_sublayer(x, params, prefix, heads, divisor, key_bias=None):
    """Multi-head self-attention with residual and layernorm; returns (output, per-head probs)."""
    width = x.shape[1]
    size = width // heads
    q = nx.add(nx.matmul(x, params[f'{prefix}.query.weight']), params[f'{prefix}.query.bias'])
    k = nx.add(nx.matmul(x, params[f'{prefix}.key.weight']), params[f'{prefix}.key.bias'])
    v = nx.add(nx.matmul(x, params[f'{prefix}.value.weight']), params[f'{prefix}.value.bias'])
    probs, contexts = [], []
    for head in range(heads):
        lo, hi = head * size, (head + 1) * size
        qh, kh, vh = nx.columns(q, lo, hi), nx.columns(k, lo, hi), nx.columns(v, lo, hi)
        scores = nx.scale(nx.matmul(qh, nx.transpose(kh)), 1.0 / divisor)
        if key_bias is not None:
            scores = nx.add(scores, key_bias)
        a = nx.softmax_rows(scores)
        probs.append(a)
        contexts.append(nx.matmul(a, vh))
    context = contexts[0] if heads == 1 else nx.concat_columns(contexts)
    attended = nx.add(nx.matmul(context, params[f'{prefix}.output.weight']), params[f'{prefix}.output.bias'])
    out = nx.layer_norm(nx.add(x, attended),
                        params[f'{prefix}.attn_norm.gain'], params[f'{prefix}.attn_norm.bias'])
    return out, probs


def ffn_sublayer(x, params, prefix):
    inner = nx.gelu(nx.add(nx.matmul(x, params[f'{prefix}.ffn_in.weight']), params[f'{prefix}.ffn_in.bias']))
    outer = nx.add(nx.matmul(inner, params[f'{prefix}.ffn_out.weight']), params[f'{prefix}.ffn_out.bias'])
    return nx.layer_norm(nx.add(x, outer), params[f'{prefix}.ffn_norm.gain'], params[f'{prefix}.ffn_norm.bias'])


def cls_logits(values, params, pooler, projector):
    """tanh-pooled [CLS] row projected to class logits."""
    cls = nx.take_rows(values, torch.zeros(1, dtype=torch.long))
    pooled = nx.tanh(nx.add(nx.matmul(cls, params[f'{pooler}.weight']), params[f'{pooler}.bias']))
    return nx.add(nx.matmul(pooled, params[f'{projector}.weight']), params[f'{projector}.bias'])


class Encoder:
    """Backbone plus main classifier; sub-classifier tensors ride along in ``params``."""

    def __init__(self, config: ModelConfig, params: Optional[ParameterSet] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else build_parameters(config, seed)

    def copy(self):
        return Encoder(self.config, self.params.clone())

    def embed(self, ids: Sequence[int]) -> HiddenState:
        ids = [int(i) for i in ids]
        if not ids or ids[0] != CLS_ID:
            ids = [CLS_ID] + ids
        if CLS_ID in ids[1:]:
            raise InputError(f"id {CLS_ID} is reserved for [CLS]")
        bad = [i for i in ids if not 0 <= i < self.config.vocab]
        if bad:
            raise InputError(f"token ids outside vocab of {self.config.vocab}: {bad[:5]}")
        if len(ids) > self.config.max_len:
            raise InputError(f"sequence of {len(ids)} exceeds max_len {self.config.max_len}")
        positions = torch.arange(len(ids))
        with nx.component('embedding'):
            values = nx.add(nx.take_rows(self.params['embed.tokens'], torch.tensor(ids, dtype=torch.long)),
                            nx.take_rows(self.params['embed.positions'], positions))
        return HiddenState(values, positions, 0)

    def _check_layer(self, h, layer):
        if not 1 <= layer <= self.config.layers:
            raise InputError(f"layer {layer} outside 1..{self.config.layers}")
        if h.layer != layer - 1:
            raise InputError(f"block {layer} expects the output of layer {layer - 1}, got {h.layer}")

    def attention_probs(self, h: HiddenState, layer: int, key_mask=None):
        self._check_layer(h, layer)
        cfg = self.config
        bias = None if key_mask is None else key_bias_for(key_mask)
        _, probs = attention_sublayer(h.values, self.params, f'layer{layer}', cfg.heads,
                                      cfg.score_scale(cfg.hidden, cfg.heads), bias)
        return probs

    def block_forward(self, h: HiddenState, layer: int, key_mask=None) -> BlockOutput:
        """One backbone block; ``key_mask`` hides keys from every query (reference path only)."""
        self._check_layer(h, layer)
        cfg = self.config
        prefix = f'layer{layer}'
        bias = None if key_mask is None else key_bias_for(key_mask)
        with nx.component('attention'):
            mid, probs = attention_sublayer(h.values, self.params, prefix, cfg.heads,
                                            cfg.score_scale(cfg.hidden, cfg.heads), bias)
        with nx.component('ffn'):
            out = ffn_sublayer(mid, self.params, prefix)
        return BlockOutput(HiddenState(out, h.positions, layer), probs)

    def logits(self, h: HiddenState):
        with nx.component('classifier'):
            return cls_logits(h.values, self.params, 'pooler', 'classifier')

    def pool_and_classify(self, h: HiddenState):
        with nx.component('classifier'):
            return nx.softmax_rows(self.logits(h))

    def forward(self, ids):
        """Plain full-width, full-depth forward; returns the class distribution."""
        h = self.embed(ids)
        for layer in range(1, self.config.layers + 1):
            h = self.block_forward(h, layer).hidden
        return self.pool_and_classify(h)
