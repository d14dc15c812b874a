"""All-prefix-sums for an arbitrary associative operator.

Two element representations are supported:

* a plain Python ``list``; ``combine(a, b)`` is called pairwise;
* a :class:`Batched` dataclass whose array fields share a leading axis;
  ``combine`` is then vectorized and each tree level is a single call
  (optionally split across worker threads).

The parallel path is a Blelloch up-sweep/down-sweep over the input padded to
a power of two.  Padding slots act as identities and are never passed to
``combine``, so the tree shape depends only on the input length.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ._linalg import chunk_slices
from .model import ParameterError


class Batched:
    """Mixin for dataclasses whose array fields share a leading batch axis."""

    def __len__(self) -> int:
        return len(getattr(self, dataclasses.fields(self)[0].name))

    def take(self, idx):
        return dataclasses.replace(
            self, **{f.name: getattr(self, f.name)[idx] for f in dataclasses.fields(self)})

    def reversed(self):
        return self.take(slice(None, None, -1))

    @classmethod
    def concatenate(cls, items):
        names = [f.name for f in dataclasses.fields(cls)]
        return cls(**{k: np.concatenate([np.asarray(getattr(it, k)) for it in items])
                      for k in names})


@dataclass(frozen=True)
class ScanPlan:
    length: int
    direction: str = "forward"
    execution: str = "parallel"
    cutoff: int = 64
    workers: int = 1

    def __post_init__(self):
        if self.length < 1:
            raise ParameterError("scan needs at least one element")
        if self.direction not in ("forward", "reversed"):
            raise ParameterError(f"unknown direction {self.direction!r}")
        if self.execution not in ("sequential", "parallel"):
            raise ParameterError(f"unknown execution {self.execution!r}")


@dataclass
class ScanStats:
    """Structural counters filled in by :func:`scan`."""

    combine_calls: int = 0
    depth: int = 0  # combine levels of the longest sweep (chain length if sequential)
    levels: list = field(default_factory=list)


# ----------------------------------------------------------------- storage


class _ListStore:
    def __init__(self, items, combine, workers):
        self.items = list(items)
        self.combine = combine
        self.workers = workers

    def pad(self, size):
        self.items.extend([None] * (size - len(self.items)))

    def get(self, i):
        return self.items[i]

    def copy(self, dst, src):
        for d, s in zip(dst, src):
            self.items[d] = self.items[s]

    def combine_into(self, dst, left, right):
        pairs = [(self.items[a], self.items[b]) for a, b in zip(left, right)]
        slices = chunk_slices(len(pairs), self.workers)
        if len(slices) > 1:
            with ThreadPoolExecutor(len(slices)) as pool:
                parts = pool.map(lambda s: [self.combine(a, b) for a, b in pairs[s]], slices)
                out = [x for part in parts for x in part]
        else:
            out = [self.combine(a, b) for a, b in pairs]
        for d, v in zip(dst, out):
            self.items[d] = v

    def result(self, order):
        return [self.items[i] for i in order]


class _BatchStore:
    def __init__(self, elements: Batched, combine, workers):
        self.cls = type(elements)
        self.names = [f.name for f in dataclasses.fields(elements)]
        self.buf = {k: np.array(getattr(elements, k), dtype=float) for k in self.names}
        self.combine = combine
        self.workers = workers

    def pad(self, size):
        extra = size - len(self.buf[self.names[0]])
        if extra > 0:
            for k, v in self.buf.items():
                self.buf[k] = np.concatenate([v, np.repeat(v[-1:], extra, axis=0)])

    def _view(self, idx):
        return self.cls(**{k: v[idx] for k, v in self.buf.items()})

    def copy(self, dst, src):
        dst, src = np.asarray(dst, int), np.asarray(src, int)
        for v in self.buf.values():
            v[dst] = v[src]

    def combine_into(self, dst, left, right):
        dst, left, right = (np.asarray(a, int) for a in (dst, left, right))
        a, b = self._view(left), self._view(right)

        def work(s):
            return self.combine(a.take(s), b.take(s))

        slices = chunk_slices(len(dst), self.workers)
        if len(slices) > 1:
            with ThreadPoolExecutor(len(slices)) as pool:
                parts = list(pool.map(work, slices))
        else:
            parts = [self.combine(a, b)]
        for s, part in zip(slices, parts):
            for k in self.names:
                self.buf[k][dst[s]] = getattr(part, k)

    def result(self, order):
        return self._view(np.asarray(order, int))


def _make_store(elements, combine, workers):
    if isinstance(elements, Batched):
        return _BatchStore(elements, combine, workers)
    if isinstance(elements, Sequence):
        return _ListStore(elements, combine, workers)
    raise ParameterError(f"unsupported element container {type(elements).__name__}")


# --------------------------------------------------------------------- scans


def _reverse(elements):
    return elements.reversed() if isinstance(elements, Batched) else list(elements)[::-1]


def _flip(combine):
    return lambda a, b: combine(b, a)


def sequential_scan(elements, combine: Callable, direction: str = "forward",
                    stats: ScanStats | None = None):
    """O(T) left-to-right prefix combination; the reference for :func:`scan`."""
    n = len(elements)
    if n == 0:
        raise ParameterError("scan needs at least one element")
    if direction == "reversed":
        return _reverse(sequential_scan(_reverse(elements), _flip(combine), "forward", stats))
    if isinstance(elements, Batched):
        out = [elements.take(slice(0, 1))]
        for k in range(1, n):
            out.append(combine(out[-1], elements.take(slice(k, k + 1))))
        if stats is not None:
            stats.combine_calls += n - 1
            stats.depth = max(stats.depth, n - 1)
        return type(elements).concatenate(out)
    out = [elements[0]]
    for x in list(elements)[1:]:
        out.append(combine(out[-1], x))
    if stats is not None:
        stats.combine_calls += n - 1
        stats.depth = max(stats.depth, n - 1)
    return out


def scan(elements, combine: Callable, plan: ScanPlan | None = None,
         stats: ScanStats | None = None):
    """Inclusive prefix (``forward``) or suffix (``reversed``) combination.

    forward:  out[k] = a_0 * a_1 * ... * a_k
    reversed: out[k] = a_k * a_{k+1} * ... * a_{T-1}

    The reversed scan reverses the input, runs a forward scan with the operand
    order swapped, and reverses the output.
    """
    n = len(elements)
    plan = plan or ScanPlan(n)
    if n == 0:
        raise ParameterError("scan needs at least one element")
    if plan.direction == "reversed":
        fwd = dataclasses.replace(plan, direction="forward")
        return _reverse(scan(_reverse(elements), _flip(combine), fwd, stats))
    if plan.execution == "sequential" or n < plan.cutoff:
        return sequential_scan(elements, combine, "forward", stats)
    return _blelloch(elements, combine, plan.workers, stats)


def _blelloch(elements, combine, workers, stats):
    n = len(elements)
    size = 1 << (n - 1).bit_length()
    store = _make_store(elements, combine, workers)
    store.pad(size)
    valid = np.zeros(size, dtype=bool)
    valid[:n] = True
    calls = 0
    depth = 0
    per_level = []

    # up-sweep: node r accumulates its subtree
    stride = 1
    while stride < size:
        left = np.arange(stride - 1, size, 2 * stride)
        right = left + stride
        both = valid[left] & valid[right]
        only_left = valid[left] & ~valid[right]
        if both.any():
            store.combine_into(right[both], left[both], right[both])
            calls += int(both.sum())
            depth += 1
        per_level.append(int(both.sum()))
        store.copy(right[only_left], left[only_left])
        valid[right[only_left]] = True
        stride *= 2
    total_slot = size - 1  # holds the full reduction

    # down-sweep: exclusive prefixes; the padding slot at index n (or the
    # root copy) supplies the last inclusive value
    total_copy = size  # extra slot appended for the total
    store.pad(size + 1 + size // 2)  # plus scratch for one level of left values
    store.copy([total_copy], [total_slot])
    up_depth, depth = depth, 0
    valid = np.concatenate([valid, [True]])
    valid[total_slot] = False  # identity at the root
    stride = size // 2
    while stride >= 1:
        left = np.arange(stride - 1, size, 2 * stride)
        right = left + stride
        vl, vr = valid[left].copy(), valid[right].copy()
        # right <- right (prefix before subtree) * left (left subtree sum)
        # left  <- right (prefix before subtree)
        both = vl & vr
        tmp = size + 1 + np.arange(len(left))
        store.copy(tmp, left)
        store.copy(left, right)
        if both.any():
            store.combine_into(right[both], right[both], tmp[both])
            calls += int(both.sum())
            depth += 1
        only_sub = vl & ~vr
        store.copy(right[only_sub], tmp[only_sub])
        valid[left] = vr
        valid[right] = vl | vr
        per_level.append(int(both.sum()))
        stride //= 2

    if stats is not None:
        stats.combine_calls += calls
        stats.depth = max(stats.depth, up_depth, depth)
        stats.levels.extend(per_level)
    order = list(range(1, n)) + [total_copy]
    return store.result(order)
