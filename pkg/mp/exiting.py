"""Depth-wise reduction: sub-classifiers, normalised entropy, halting and distillation losses."""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch

from . import numerics as nx
from .encoder import Encoder, HiddenState, attention_sublayer, cls_logits, ffn_sublayer
from .exceptions import InputError, ShapeError

logger = logging.getLogger(__name__)

TARGET_FLOOR = 1e-12
# Head probabilities are clamped only far below any representable mass so 0 * log 0 stays 0.
HEAD_FLOOR = 1e-300


class SubClassifier:
    """Exit head after backbone layer ``layer``.

    Projects the retained rows down to ``sub_hidden``, runs one reduced block,
    pools [CLS] and projects to class logits.
    """

    def __init__(self, model: Encoder, layer: int):
        if not 1 <= layer < model.config.layers:
            raise InputError(f"sub-classifiers exist for layers 1..{model.config.layers - 1}, not {layer}")
        self.model = model
        self.layer = layer
        self.prefix = f'sub{layer}'

    def logits(self, h: HiddenState):
        cfg, params, prefix = self.model.config, self.model.params, self.prefix
        with nx.component('subclassifier'):
            x = nx.add(nx.matmul(h.values, params[f'{prefix}.down.weight']), params[f'{prefix}.down.bias'])
            x, _ = attention_sublayer(x, params, prefix, cfg.sub_heads,
                                      cfg.score_scale(cfg.sub_hidden, cfg.sub_heads))
            x = ffn_sublayer(x, params, prefix)
            return cls_logits(x, params, f'{prefix}.pooler', f'{prefix}.projector')

    def __call__(self, h: HiddenState):
        with nx.component('subclassifier'):
            return nx.softmax_rows(self.logits(h))


def sub_forward(model: Encoder, h: HiddenState, layer: int):
    """Class distribution of exit head ``layer`` over the output of block ``layer``.

    With pruning on, ``h`` holds the rows that entered block ``layer``: tokens
    dropped at earlier layers are gone, but layer ``layer``'s own mask has not
    been applied yet. A layer's mask belongs to the step into the next block,
    in training and at inference alike.
    """
    if h.layer != layer:
        raise InputError(f"sub-classifier {layer} reads the output of block {layer}, got layer {h.layer}")
    return SubClassifier(model, layer)(h)


def uncertainty(p, classes: int) -> float:
    """Entropy of ``p`` divided by log(classes): 0 for one-hot, 1 for uniform."""
    p = torch.as_tensor(p, dtype=nx.DTYPE).detach().reshape(-1)
    if p.numel() != classes:
        raise ShapeError(f"distribution over {p.numel()} classes, expected {classes}")
    entropy = float(torch.special.entr(p).sum())
    return min(1.0, max(0.0, entropy / math.log(classes)))


def should_exit(u: float, tau: float) -> bool:
    return u <= tau


def exit_layer_for(uncertainties: Sequence[float], tau: float, layers: int) -> int:
    """First layer whose uncertainty is within ``tau``, or the final layer."""
    for layer, u in enumerate(uncertainties, start=1):
        if should_exit(u, tau):
            return layer
    return layers


def kd_loss(p_s, p_t):
    """KL(p_s || p_t) with the sub-classifier distribution in the first slot."""
    if p_s.shape != p_t.shape:
        raise ShapeError(f"distributions of shape {tuple(p_s.shape)} and {tuple(p_t.shape)}")
    log_ratio = nx.sub(nx.log(p_s, HEAD_FLOOR), nx.log(p_t, TARGET_FLOOR))
    return nx.sum_all(nx.mul(p_s, log_ratio))


def stage2_loss(sub_probs: Sequence, p_t):
    """Sum of the sub-classifier divergences from the (frozen) main classifier."""
    if not sub_probs:
        raise InputError("stage-2 loss needs at least one sub-classifier output")
    target = p_t.detach()
    total = kd_loss(sub_probs[0], target)
    for p in sub_probs[1:]:
        total = nx.add(total, kd_loss(p, target))
    return total


@dataclass
class ExitState:
    tau: Optional[float]
    uncertainties: list = field(default_factory=list)
    distributions: list = field(default_factory=list)
    final: Optional[nx.Matrix] = None
    exit_layer: int = 0
