"""Float64 dense kernels over torch tensors.

Every kernel records itself on the active :class:`GradTape` and charges the
active :class:`OpCounter`, so one forward implementation serves training,
finite-difference checks and exact cost accounting. Gradients come from torch
autograd over the graph the kernels build while a tape is open.

Counting convention: ``matmul`` charges one MAC per multiply-accumulate
(``rows * inner * cols``); elementwise kernels, ``softmax_rows``,
``log_softmax_rows`` and ``layer_norm`` charge one auxiliary op per output
element; reductions charge one auxiliary op per input element; slicing,
gathering, concatenation and transposition are free.
"""
import logging
import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Optional, Sequence

import torch
import torch.nn.functional as F

from .exceptions import InputError, NumericError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
LAYER_NORM_EPS = 1e-5
# Denominator floor of the relative error: absolute disagreements below
# floor * tolerance count as agreement.
GRAD_CHECK_FLOOR = 1e-4

Matrix = torch.Tensor

_local = threading.local()


def _stack(name):
    stack = getattr(_local, name, None)
    if stack is None:
        stack = []
        setattr(_local, name, stack)
    return stack


def matrix(values, requires_grad=False) -> Matrix:
    """Build a float64 matrix; 1-D input becomes a single row."""
    t = torch.atleast_2d(torch.as_tensor(values, dtype=DTYPE)).clone()
    if not torch.isfinite(t).all():
        raise NumericError("matrix values must be finite")
    return t.requires_grad_(requires_grad)


# ---------------------------------------------------------------------------
# Op counting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpCount:
    macs: int = 0
    aux: int = 0

    def __add__(self, other):
        return OpCount(self.macs + other.macs, self.aux + other.aux)

    def __mul__(self, k):
        return OpCount(self.macs * k, self.aux * k)

    @property
    def flops(self):
        return 2 * self.macs


class OpCounter:
    """Instrumented counter charged by every kernel while installed."""

    def __init__(self):
        self.components = defaultdict(OpCount)

    def charge(self, label, macs, aux):
        self.components[label] = self.components[label] + OpCount(macs, aux)

    @property
    def total(self):
        result = OpCount()
        for count in self.components.values():
            result = result + count
        return result

    def __getitem__(self, label):
        return self.components.get(label, OpCount())


@contextmanager
def counting() -> Iterator[OpCounter]:
    counter = OpCounter()
    stack = _stack('counters')
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


@contextmanager
def component(label: str):
    """Label the ops charged inside the block (attention, ffn, ...)."""
    labels = _stack('labels')
    labels.append(label)
    try:
        yield
    finally:
        labels.pop()


def _charge(macs=0, aux=0):
    counters = _stack('counters')
    if not counters:
        return
    labels = _stack('labels')
    label = labels[-1] if labels else 'other'
    for counter in counters:
        counter.charge(label, macs, aux)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class GradTape:
    """Ordered record of the kernels run while the tape is open.

    ``gradient`` differentiates a scalar loss with respect to any registered
    parameter. With ``trace=True`` the tape also records, in ``visited``, the
    order in which the backward pass reaches each recorded op.
    """

    def __init__(self, trace=False):
        self.ops = []
        self.visited = []
        self._trace = trace
        self._grad_mode = None

    def __enter__(self):
        self._grad_mode = torch.enable_grad()
        self._grad_mode.__enter__()
        _stack('tapes').append(self)
        return self

    def __exit__(self, *exc):
        _stack('tapes').pop()
        self._grad_mode.__exit__(*exc)
        return False

    def record(self, name, out):
        self.ops.append(name)
        if self._trace and out.requires_grad:
            out.register_hook(lambda grad, name=name: self.visited.append(name))

    def gradient(self, loss: Matrix, params: Sequence[Matrix]):
        if loss.numel() != 1:
            raise ShapeError(f"loss must be scalar, got shape {tuple(loss.shape)}")
        if not torch.isfinite(loss).all():
            raise NumericError(f"non-finite loss {loss.item()}")
        grads = [None] * len(params)
        wanted = [i for i, p in enumerate(params) if p.requires_grad]
        if wanted and loss.requires_grad:
            found = torch.autograd.grad(
                loss, [params[i] for i in wanted], allow_unused=True)
            for i, g in zip(wanted, found):
                grads[i] = g
        return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def _finish(name, out):
    if not torch.isfinite(out).all():
        raise NumericError(f"{name} produced non-finite values")
    tapes = _stack('tapes')
    if tapes:
        tapes[-1].record(name, out)
    return out


def _broadcast(name, fn, a, b):
    try:
        return fn(a, b)
    except RuntimeError as exc:
        raise ShapeError(f"{name}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not broadcast") from exc


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {tuple(a.shape)} x {tuple(b.shape)}")
    _charge(macs=a.shape[0] * a.shape[1] * b.shape[1])
    return _finish('matmul', a @ b)


def add(a: Matrix, b: Matrix) -> Matrix:
    out = _broadcast('add', torch.add, a, b)
    _charge(aux=out.numel())
    return _finish('add', out)


def sub(a: Matrix, b: Matrix) -> Matrix:
    out = _broadcast('sub', torch.sub, a, b)
    _charge(aux=out.numel())
    return _finish('sub', out)


def mul(a: Matrix, b: Matrix) -> Matrix:
    out = _broadcast('mul', torch.mul, a, b)
    _charge(aux=out.numel())
    return _finish('mul', out)


def scale(a: Matrix, factor: float) -> Matrix:
    _charge(aux=a.numel())
    return _finish('scale', a * factor)


def softmax_rows(m: Matrix) -> Matrix:
    # torch subtracts the row max before exponentiating
    _charge(aux=m.numel())
    return _finish('softmax_rows', torch.softmax(m, dim=-1))


def log_softmax_rows(m: Matrix) -> Matrix:
    _charge(aux=m.numel())
    return _finish('log_softmax_rows', torch.log_softmax(m, dim=-1))


def layer_norm(m: Matrix, gain: Matrix, bias: Matrix) -> Matrix:
    cols = m.shape[-1]
    if gain.numel() != cols or bias.numel() != cols:
        raise ShapeError(f"layer_norm: gain/bias length must be {cols}")
    _charge(aux=m.numel())
    out = F.layer_norm(m, (cols,), gain.reshape(-1), bias.reshape(-1), eps=LAYER_NORM_EPS)
    return _finish('layer_norm', out)


def gelu(m: Matrix) -> Matrix:
    _charge(aux=m.numel())
    return _finish('gelu', F.gelu(m))


def tanh(m: Matrix) -> Matrix:
    _charge(aux=m.numel())
    return _finish('tanh', torch.tanh(m))


def sigmoid(m: Matrix) -> Matrix:
    _charge(aux=m.numel())
    return _finish('sigmoid', torch.sigmoid(m))


def log(m: Matrix, floor: float = 0.0) -> Matrix:
    """Natural log; entries below ``floor`` are clamped first (no gradient there)."""
    _charge(aux=m.numel())
    if floor > 0.0:
        m = torch.clamp(m, min=floor)
    return _finish('log', torch.log(m))


def absolute(m: Matrix) -> Matrix:
    _charge(aux=m.numel())
    return _finish('absolute', torch.abs(m))


def sum_all(m: Matrix) -> Matrix:
    _charge(aux=m.numel())
    return _finish('sum_all', m.sum())


def mean_all(m: Matrix) -> Matrix:
    _charge(aux=m.numel())
    return _finish('mean_all', m.mean())


def mean_rows(m: Matrix) -> Matrix:
    """Column means as a single row (the mean over rows)."""
    _charge(aux=m.numel())
    return _finish('mean_rows', m.mean(dim=0, keepdim=True))


def transpose(m: Matrix) -> Matrix:
    return _finish('transpose', m.transpose(0, 1))


def take_rows(m: Matrix, index: torch.Tensor) -> Matrix:
    try:
        out = m.index_select(0, index)
    except (IndexError, RuntimeError) as exc:
        raise ShapeError(f"take_rows: bad index for {m.shape[0]} rows") from exc
    return _finish('take_rows', out)


def columns(m: Matrix, start: int, stop: int) -> Matrix:
    if not 0 <= start < stop <= m.shape[1]:
        raise ShapeError(f"columns: [{start}, {stop}) outside {m.shape[1]} columns")
    return _finish('columns', m[:, start:stop])


def concat_columns(parts: Sequence[Matrix]) -> Matrix:
    try:
        out = torch.cat(list(parts), dim=1)
    except RuntimeError as exc:
        raise ShapeError("concat_columns: row counts differ") from exc
    return _finish('concat_columns', out)


# ---------------------------------------------------------------------------
# Finite-difference checker
# ---------------------------------------------------------------------------

def _scalar(loss):
    value = float(loss.detach())
    if value != value or value in (float('inf'), float('-inf')):
        raise NumericError(f"non-finite loss {value}")
    return value


def grad_check(loss_fn: Callable[[Mapping[str, Matrix]], Matrix],
               params: Mapping[str, Matrix],
               h: float,
               names: Optional[Sequence[str]] = None,
               floor: float = GRAD_CHECK_FLOOR) -> float:
    """Worst relative error between tape gradients and central differences.

    Every element of every selected parameter that requires grad is perturbed in turn.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 1e-6 <= h <= 1e-3:
        raise InputError(f"finite-difference step {h} outside [1e-6, 1e-3]")
    selected = [(name, params[name]) for name in (names if names is not None else params)]
    selected = [(name, p) for name, p in selected if p.requires_grad]

    with GradTape() as tape:
        loss = loss_fn(params)
    _scalar(loss)
    analytic = tape.gradient(loss, [p for _, p in selected])

    worst, worst_at = 0.0, None
    with torch.no_grad():
        for (name, p), grad in zip(selected, analytic):
            flat = p.view(-1)
            grad = grad.reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                up = _scalar(loss_fn(params))
                flat[i] = original - h
                down = _scalar(loss_fn(params))
                flat[i] = original
                numeric = (up - down) / (2.0 * h)
                a = grad[i].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                if err > worst:
                    worst, worst_at = err, (name, i, a, numeric)
    logger.debug("grad_check worst relative error %.3e at %s", worst, worst_at)
    return worst
