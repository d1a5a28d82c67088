"""Dense float64 tensors, a reverse-mode tape, and instrumentation counters.

Every :class:`Tensor` owns its payload. Allocation and release of payloads are
reported to the per-thread counters so that :func:`measure` can report the
peak number of simultaneously live payload bytes, next to a FLOP count that
the operations in :mod:`hyperconformer.ops` accumulate as they run.

Recording is opt-in: operations are only written to a :class:`Tape` while one
is active (``with Tape() as tape:``) and at least one input requires a
gradient. Outside a tape, forwards run in inference mode and intermediates are
released as soon as Python drops them.
"""

from __future__ import annotations

import dataclasses
import itertools
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import UsageError

_state = threading.local()
_node_ids = itertools.count(1)


class Counters:
    """Mutable live/peak/FLOP counters for one thread."""

    __slots__ = ("live_bytes", "peak_bytes", "flops")

    def __init__(self):
        self.live_bytes = 0
        self.peak_bytes = 0
        self.flops = 0


def counters() -> Counters:
    c = getattr(_state, "counters", None)
    if c is None:
        c = _state.counters = Counters()
    return c


def add_flops(n: int) -> None:
    counters().flops += int(n)


@dataclass(frozen=True)
class InstrumentationStats:
    peak_bytes: int
    flops: int
    duration_seconds: float
    live_bytes: int


def measure(fn: Callable, *args, **kwargs):
    """Run ``fn`` and return ``(result, InstrumentationStats)``.

    ``peak_bytes`` is the high-water mark of payload bytes allocated inside
    the window, above what was live on entry. ``live_bytes`` is what is still
    held when ``fn`` returns (typically the result and anything on a tape).
    Nested windows fold their FLOPs and peaks into the enclosing window.
    """
    c = counters()
    outer_flops, outer_peak = c.flops, c.peak_bytes
    base = c.live_bytes
    c.flops = 0
    c.peak_bytes = base
    start = time.perf_counter()
    try:
        result = fn(*args, **kwargs)
    finally:
        duration = time.perf_counter() - start
        flops, peak = c.flops, c.peak_bytes
        c.flops = outer_flops + flops
        c.peak_bytes = max(outer_peak, peak)
    stats = InstrumentationStats(
        peak_bytes=peak - base,
        flops=flops,
        duration_seconds=duration,
        live_bytes=c.live_bytes - base,
    )
    return result, stats


class Tensor:
    """A float64 array with an optional gradient slot.

    The payload is read-only once constructed; only ``grad`` changes.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_counters", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self._adopt(np.array(data, dtype=np.float64, order="C", copy=True))
        self.requires_grad = bool(requires_grad)

    def _adopt(self, arr: np.ndarray) -> None:
        arr.flags.writeable = False
        self.data = arr
        self.grad = None
        self.node_id = None
        self.requires_grad = False
        c = counters()
        self._counters = c
        c.live_bytes += arr.nbytes
        if c.live_bytes > c.peak_bytes:
            c.peak_bytes = c.live_bytes

    @classmethod
    def wrap(cls, arr) -> "Tensor":
        """Adopt a freshly computed array without copying when possible."""
        arr = np.asarray(arr)
        if (
            arr.dtype != np.float64
            or not arr.flags.owndata
            or not arr.flags.c_contiguous
            or not arr.flags.writeable
        ):
            arr = np.array(arr, dtype=np.float64, order="C", copy=True)
        t = cls.__new__(cls)
        t._adopt(arr)
        return t

    def __del__(self):
        try:
            self._counters.live_bytes -= self.data.nbytes
        except AttributeError:
            pass

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators (implemented in ops) ----------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward: Callable


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager; nodes are appended in execution order, so the
    list is topologically sorted by construction.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


def active_tape() -> Tape | None:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def result(arr, inputs: Sequence[Tensor], backward: Callable, flops: int = 0) -> Tensor:
    """Wrap an op's output, count its FLOPs and record it if a tape is live.

    ``backward`` maps the output gradient (ndarray) to a tuple of input
    gradients, one per entry of ``inputs`` (``None`` where not needed).
    """
    if flops:
        add_flops(flops)
    out = Tensor.wrap(arr)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node_id = next(_node_ids)
        tape.nodes.append(Node(tuple(inputs), out, backward))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf that requires it.

    Gradients add onto existing ``grad`` slots, so several backward passes
    accumulate; call ``zero_grad`` on parameters between optimizer steps.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node_id is None or not any(n.output is loss for n in reversed(tape.nodes)):
        raise UsageError("loss was not produced on this tape")
    grads = {id(loss): np.ones_like(loss.data)}
    owners = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        owners.pop(id(node.output), None)
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = t
    for key, g in grads.items():
        t = owners[key]
        if t.node_id is not None:
            continue
        g = np.array(g, dtype=np.float64).reshape(t.shape)
        t.grad = g if t.grad is None else t.grad + g


def parameters(obj) -> list[Tensor]:
    """Distinct gradient-carrying tensors reachable through dataclasses and lists, in order."""
    seen, out = set(), []

    def walk(o):
        if isinstance(o, Tensor):
            if o.requires_grad and id(o) not in seen:
                seen.add(id(o))
                out.append(o)
        elif dataclasses.is_dataclass(o) and not isinstance(o, type):
            for f in dataclasses.fields(o):
                walk(getattr(o, f.name))
        elif isinstance(o, (list, tuple)):
            for item in o:
                walk(item)

    walk(obj)
    return out
