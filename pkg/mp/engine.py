"""Fused inference (block, exit test, token drop per layer) and the FLOPs ledger.

Costs come from the instrumented counter in :mod:`mp.numerics`; the closed
forms in :func:`count_flops` reproduce it exactly. GFLOPs are 2 x MACs and
speedup is baseline MACs over actual MACs with exit-head overhead charged.
Auxiliary element ops (softmax, layernorm, GELU, biases, residuals) are kept
in a separate column so either convention can be read off the ledger.
"""
import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, astuple, dataclass, field
from functools import reduce
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import torch

from . import numerics as nx
from .encoder import Encoder, ModelConfig
from .exceptions import ConfigError, InputError
from .exiting import ExitState, should_exit, sub_forward, uncertainty
from .pruning import PruneMode, PruningState, hard_mask, importance

logger = logging.getLogger(__name__)

COMPONENTS = ('embedding', 'attention', 'ffn', 'pruning', 'subclassifier', 'classifier')
METHODS = ('baseline', 'prune', 'exit', 'mp')
REPORT_COLUMNS = ('method', 'tau', 'bucket', 'count', 'mean_gflops', 'speedup',
                  'accuracy', 'mean_exit_layer', 'note')
REPORT_HEADER = '# gflops = 2 x MACs; speedup = baseline MACs / actual MACs, exit-head overhead included'
OVERALL = 'all'


# ---------------------------------------------------------------------------
# Closed-form costs
# ---------------------------------------------------------------------------

def _attention_cost(n, width, heads, masked=False):
    aux = 6 * n * width + (3 if masked else 2) * heads * n * n
    return nx.OpCount(4 * n * width * width + 2 * n * n * width, aux)


def _ffn_cost(n, width, inner):
    return nx.OpCount(2 * n * width * inner, 2 * n * inner + 3 * n * width)


def _head_cost(width, classes):
    # pooler, projector and the output softmax
    return nx.OpCount(width * width + width * classes, 2 * width + 2 * classes)


def count_flops(cfg: ModelConfig, n: int, component: str, masked: bool = False) -> nx.OpCount:
    """Exact cost of one component at ``n`` retained rows ([CLS] included).

    attention      4 n d^2 + 2 n^2 d MACs;  6 n d + 2 H n^2 aux (+ H n^2 with a key mask)
    ffn            2 n d d_ff MACs;          2 n d_ff + 3 n d aux
    embedding      0 MACs;                   n d aux
    pruning        0 MACs;                   H n^2 + H n aux (importance of the hard path)
    classifier     d^2 + d N MACs;           2 d + 2 N aux
    subclassifier  down-projection n d d_s, then attention, ffn and head at width d_s
    """
    if n < 1:
        raise InputError(f"need at least one retained row, got {n}")
    d, heads = cfg.hidden, cfg.heads
    if component == 'attention':
        return _attention_cost(n, d, heads, masked)
    if component == 'ffn':
        return _ffn_cost(n, d, cfg.ffn)
    if component == 'embedding':
        return nx.OpCount(0, n * d)
    if component == 'pruning':
        return nx.OpCount(0, heads * n * n + heads * n)
    if component == 'classifier':
        return _head_cost(d, cfg.classes)
    if component == 'subclassifier':
        ds = cfg.sub_hidden
        return (nx.OpCount(n * d * ds, n * ds)
                + _attention_cost(n, ds, cfg.sub_heads)
                + _ffn_cost(n, ds, cfg.sub_ffn)
                + _head_cost(ds, cfg.classes))
    raise InputError(f"unknown component {component!r}; choose from {COMPONENTS}")


def block_cost(cfg: ModelConfig, n: int) -> nx.OpCount:
    return count_flops(cfg, n, 'attention') + count_flops(cfg, n, 'ffn')


def baseline_cost(cfg: ModelConfig, n: int) -> nx.OpCount:
    """Full depth, full width, no exit heads."""
    return (count_flops(cfg, n, 'embedding') + block_cost(cfg, n) * cfg.layers
            + count_flops(cfg, n, 'classifier'))


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

@dataclass
class LayerCost:
    layer: int
    retained: int
    attention: nx.OpCount = nx.OpCount()
    ffn: nx.OpCount = nx.OpCount()
    pruning: nx.OpCount = nx.OpCount()
    subclassifier: nx.OpCount = nx.OpCount()
    uncertainty: Optional[float] = None
    exited: bool = False
    kept: Optional[int] = None

    @property
    def total(self):
        return self.attention + self.ffn + self.pruning + self.subclassifier


@dataclass
class FlopsLedger:
    baseline: nx.OpCount
    embedding: nx.OpCount = nx.OpCount()
    layers: list = field(default_factory=list)
    classifier: nx.OpCount = nx.OpCount()
    exit_layer: int = 0

    @property
    def actual(self):
        return reduce(lambda a, b: a + b, (c.total for c in self.layers), self.embedding + self.classifier)

    @property
    def components(self):
        totals = {'embedding': self.embedding, 'classifier': self.classifier}
        for label in ('attention', 'ffn', 'pruning', 'subclassifier'):
            totals[label] = reduce(lambda a, b: a + b, (getattr(c, label) for c in self.layers), nx.OpCount())
        return totals

    @property
    def retained(self):
        return [c.retained for c in self.layers]

    @property
    def speedup(self):
        return self.baseline.macs / self.actual.macs

    @property
    def gflops(self):
        return self.actual.flops / 1e9


class InferenceResult(NamedTuple):
    prediction: int
    exit_state: ExitState
    ledger: FlopsLedger
    trace: list


def _measure(fn):
    with nx.counting() as counter:
        value = fn()
    return value, counter


def mp_infer(ids, model: Encoder, pruning: Optional[PruningState], tau: Optional[float],
             force_exit_layer: Optional[int] = None) -> InferenceResult:
    """Per layer: block, then (below the top) exit test on the block output, then token drop.

    ``tau=None`` disables the exit heads entirely; ``pruning=None`` or a
    disabled state keeps every token. ``force_exit_layer`` stops at that
    layer whatever the uncertainty.
    """
    cfg = model.config
    layers = cfg.layers
    if tau is not None and not 0.0 <= tau <= 1.0:
        raise InputError(f"halt value must lie in [0, 1], got {tau}")
    if force_exit_layer is not None and not 1 <= force_exit_layer <= layers:
        raise InputError(f"forced exit layer {force_exit_layer} outside 1..{layers}")
    prune = pruning is not None and pruning.mode is not PruneMode.DISABLED
    if prune and pruning.mode is not PruneMode.HARD:
        raise ConfigError("inference drops tokens with hard masks only")
    use_exit = tau is not None or force_exit_layer is not None

    with torch.no_grad():
        h, counter = _measure(lambda: model.embed(ids))
        ledger = FlopsLedger(baseline=baseline_cost(cfg, h.n), embedding=counter.total)
        state = ExitState(tau)
        trace = []
        for layer in range(1, layers + 1):
            cost = LayerCost(layer, h.n)
            out, counter = _measure(lambda: model.block_forward(h, layer))
            cost.attention, cost.ffn = counter['attention'], counter['ffn']
            h = out.hidden
            if layer < layers and use_exit:
                p, counter = _measure(lambda: sub_forward(model, h, layer))
                cost.subclassifier = counter.total
                cost.uncertainty = uncertainty(p, cfg.classes)
                state.uncertainties.append(cost.uncertainty)
                state.distributions.append(p)
                if force_exit_layer is not None:
                    cost.exited = layer == force_exit_layer
                else:
                    cost.exited = should_exit(cost.uncertainty, tau)
                if cost.exited:
                    state.final, state.exit_layer = p, layer
            if layer < layers and prune and not cost.exited:
                def drop():
                    with nx.component('pruning'):
                        return h.keep(hard_mask(importance(out.attention), layer, pruning))
                h, counter = _measure(drop)
                cost.pruning = counter.total
            cost.kept = h.n
            ledger.layers.append(cost)
            trace.append({'layer': layer, 'retained': cost.retained, 'kept': cost.kept,
                          'uncertainty': cost.uncertainty, 'exited': cost.exited,
                          'macs': cost.total.macs})
            if cost.exited:
                break
        else:
            p, counter = _measure(lambda: model.pool_and_classify(h))
            ledger.classifier = counter.total
            state.final, state.exit_layer = p, layers
    ledger.exit_layer = state.exit_layer
    return InferenceResult(int(state.final.argmax()), state, ledger, trace)


# ---------------------------------------------------------------------------
# Length buckets and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LengthBucket:
    label: str
    low: int
    high: Optional[int] = None

    def contains(self, n):
        return n >= self.low and (self.high is None or n <= self.high)


BUCKETS = (
    LengthBucket('short', 1, 34),
    LengthBucket('middle', 35, 70),
    LengthBucket('long', 71),
)


def bucket_for(n: int) -> str:
    for bucket in BUCKETS:
        if bucket.contains(n):
            return bucket.label
    raise InputError(f"length {n} is not a valid sequence length")


@dataclass(frozen=True)
class LedgerTotals:
    """Associative per-group sums of ledgers; ``+`` merges two groups."""
    count: int = 0
    correct: int = 0
    baseline_macs: int = 0
    actual_macs: int = 0
    actual_aux: int = 0
    exit_layers: int = 0

    @classmethod
    def of(cls, result: InferenceResult, label: int):
        actual = result.ledger.actual
        return cls(1, int(result.prediction == label), result.ledger.baseline.macs,
                   actual.macs, actual.aux, result.ledger.exit_layer)

    def __add__(self, other):
        return LedgerTotals(*(a + b for a, b in zip(astuple(self), astuple(other))))


@dataclass
class ReportRow:
    method: str
    tau: Optional[float]
    bucket: str
    count: int
    mean_gflops: Optional[float] = None
    speedup: Optional[float] = None
    accuracy: Optional[float] = None
    mean_exit_layer: Optional[float] = None
    note: str = ''

    @classmethod
    def from_totals(cls, method, tau, bucket, totals: LedgerTotals):
        if totals.count == 0:
            return cls(method, tau, bucket, 0, note='empty')
        speedup = totals.baseline_macs / totals.actual_macs
        return cls(method, tau, bucket, totals.count,
                   mean_gflops=2 * totals.actual_macs / totals.count / 1e9,
                   speedup=speedup,
                   accuracy=totals.correct / totals.count,
                   mean_exit_layer=totals.exit_layers / totals.count,
                   note='overhead exceeds savings' if speedup < 1.0 else '')

    def as_record(self):
        return asdict(self)


class SpeedupReport(NamedTuple):
    rows: list
    traces: list


def method_settings(method, pruning: Optional[PruningState], tau):
    """(pruning state, halt value) that realise ``method`` on one model."""
    hard = pruning.with_mode(PruneMode.HARD) if pruning is not None else None
    if method == 'baseline':
        return None, None
    if method == 'prune':
        return hard, None
    if method == 'exit':
        return None, tau
    if method == 'mp':
        return hard, tau
    raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")


def speedup_report(dataset: Sequence, model: Encoder, pruning: Optional[PruningState],
                   tau_grid: Sequence[float], methods: Sequence[str] = ('mp',),
                   workers: int = 1) -> SpeedupReport:
    """Overall and per-bucket rows for every (method, tau); tau-free methods get one pass."""
    if not dataset:
        raise InputError("speedup report needs at least one example")
    for method in methods:
        method_settings(method, pruning, None)
    rows, traces = [], []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for method in methods:
            taus = list(tau_grid) if method in ('exit', 'mp') else [None]
            for tau in taus:
                ps, halt = method_settings(method, pruning, tau)
                results = list(pool.map(lambda ex: mp_infer(ex.ids, model, ps, halt), dataset))
                groups = {OVERALL: LedgerTotals(), **{b.label: LedgerTotals() for b in BUCKETS}}
                for index, (example, result) in enumerate(zip(dataset, results)):
                    bucket = bucket_for(example.length)
                    totals = LedgerTotals.of(result, example.label)
                    groups[OVERALL] = groups[OVERALL] + totals
                    groups[bucket] = groups[bucket] + totals
                    traces.append({'method': method, 'tau': tau, 'index': index,
                                   'length': example.length, 'bucket': bucket,
                                   'label': example.label, 'prediction': result.prediction,
                                   'exit_layer': result.ledger.exit_layer,
                                   'speedup': result.ledger.speedup, 'layers': result.trace})
                for bucket, totals in groups.items():
                    rows.append(ReportRow.from_totals(method, tau, bucket, totals))
                overall = rows[-len(groups)]
                logger.info("%s tau=%s: accuracy %.4f, %.6f GFLOPs, speedup %.2fx, mean exit layer %.2f",
                            method, tau, overall.accuracy, overall.mean_gflops, overall.speedup,
                            overall.mean_exit_layer)
    return SpeedupReport(rows, traces)


def select_operating_point(rows: Sequence[ReportRow], baseline_accuracy: float,
                           max_drop: float = 0.01, method: str = 'mp') -> Optional[ReportRow]:
    """Cheapest overall row of ``method`` whose accuracy is within ``max_drop`` of the baseline."""
    eligible = [r for r in rows if r.method == method and r.bucket == OVERALL and r.count
                and r.accuracy >= baseline_accuracy - max_drop]
    return min(eligible, key=lambda r: r.mean_gflops, default=None)


def pruned_equivalence_check(ids, model: Encoder, pruning: Optional[PruningState] = None,
                             keep_plan=None) -> float:
    """Max |logit difference| between physical token removal and key masking.

    Drop decisions come from the hard masks of ``pruning`` or, when given,
    from ``keep_plan``: one boolean row per layer 1..L-1 over the embedded
    positions ([CLS] included). Both paths use the same decisions.
    """
    layers = model.config.layers
    if keep_plan is None and (pruning is None or pruning.mode is not PruneMode.HARD):
        raise ConfigError("equivalence check needs a hard pruning state or an explicit keep plan")
    with torch.no_grad():
        h = model.embed(ids)
        n = h.n
        if keep_plan is not None:
            if len(keep_plan) < layers - 1:
                raise InputError(f"keep plan covers {len(keep_plan)} layers, need {layers - 1}")
            keep_plan = [torch.as_tensor(k, dtype=torch.bool) for k in keep_plan]
            if any(k.numel() != n for k in keep_plan):
                raise InputError(f"every keep plan row must cover {n} positions")
        alive = []
        for layer in range(1, layers + 1):
            out = model.block_forward(h, layer)
            h = out.hidden
            if layer < layers:
                if keep_plan is not None:
                    keep = keep_plan[layer - 1][h.positions].clone()
                    keep[0] = True
                else:
                    keep = hard_mask(importance(out.attention), layer, pruning)
                h = h.keep(keep)
                mask = torch.zeros(n, dtype=torch.bool)
                mask[h.positions] = True
                alive.append(mask)
        physical = model.logits(h)

        full, key_mask = model.embed(ids), None
        for layer in range(1, layers + 1):
            full = model.block_forward(full, layer, key_mask).hidden
            if layer < layers:
                key_mask = alive[layer - 1]
        masked = model.logits(full)
    return float((physical - masked).abs().max())


def write_report(rows: Sequence[ReportRow], directory, stem='report'):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tsv, jsonl = directory / f'{stem}.tsv', directory / f'{stem}.jsonl'
    with open(tsv, 'w', newline='') as f:
        f.write(REPORT_HEADER + '\n')
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, delimiter='\t', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ('' if v is None else v) for k, v in row.as_record().items()})
    with open(jsonl, 'w') as f:
        for row in rows:
            f.write(json.dumps(row.as_record(), sort_keys=True) + '\n')
    return tsv, jsonl


def write_traces(traces: Sequence[dict], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        for record in traces:
            f.write(json.dumps(record, sort_keys=True) + '\n')
    return path
