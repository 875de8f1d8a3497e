"""A numpy RASP interpreter with select/aggregate instrumentation.

Sequences are plain 1-D integer arrays. A :class:`Machine` owns the trace for
one program run; every select, sel_width, aggregation, kqv and element-wise
map goes through it so that attention-equivalent operations can be counted.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Seq = np.ndarray
SelMatrix = np.ndarray


class RaspError(ValueError):
    pass


class Pred(enum.Enum):
    """Closed set of select predicates, called as ``pred(key, query)``."""

    EQ = "equals"
    NEQ = "not_equals"
    LT = "less"
    GT = "greater"
    TRUE = "true"

    def __call__(self, key, query):
        if self is Pred.EQ:
            return np.equal(key, query)
        if self is Pred.NEQ:
            return np.not_equal(key, query)
        if self is Pred.LT:
            return np.less(key, query)
        if self is Pred.GT:
            return np.greater(key, query)
        return np.ones(np.broadcast(key, query).shape, dtype=bool)


def equals(x, y):
    return np.equal(x, y)


def not_equals(x, y):
    return np.not_equal(x, y)


def is_true(x, default=0):
    return np.greater(x, default)


@dataclass
class TraceRecord:
    kind: str  # select | sel_width | aggr_mean | kqv | map
    causal: bool = False
    label: str = ""
    max_width: int = 0
    empty_rows: int = 0
    mixed_rows: int = 0  # rows averaging unequal values
    truncated: bool = False
    offset: int | None = None


@dataclass
class ExecutionTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def count(self, kind: str) -> int:
        return sum(r.kind == kind for r in self.records)

    @property
    def attention_ops(self) -> int:
        # every kqv and every bare sel_width pays for exactly one select
        return self.count("select")

    @property
    def kqv_ops(self) -> int:
        return self.count("kqv")

    @property
    def non_causal(self) -> list[TraceRecord]:
        return [r for r in self.records if r.kind == "select" and not r.causal]

    @property
    def mixed_aggregations(self) -> list[TraceRecord]:
        return [r for r in self.records if r.kind == "aggr_mean" and r.mixed_rows]

    def non_unit_offsets(self) -> list[TraceRecord]:
        return [r for r in self.records if r.offset is not None and abs(r.offset) > 1]

    def summary(self) -> dict[str, int]:
        return {
            "select": self.count("select"),
            "sel_width": self.count("sel_width"),
            "aggr_mean": self.count("aggr_mean"),
            "kqv": self.count("kqv"),
            "map": self.count("map"),
            "non_causal": len(self.non_causal),
            "mixed_aggregations": len(self.mixed_aggregations),
        }


def _seq(x) -> Seq:
    a = np.asarray(x)
    if a.dtype == bool:
        return a
    return a.astype(np.int64, copy=False)


def _same_len(*xs: Seq) -> None:
    if len({len(x) for x in xs}) > 1:
        raise RaspError(f"length mismatch: {[len(x) for x in xs]}")


class Machine:
    """Interpreter state for a single program run."""

    def __init__(self):
        self.trace = ExecutionTrace()

    # -- constructors -----------------------------------------------------
    def full(self, template: Seq, constant: int) -> Seq:
        return np.full(len(template), constant, dtype=np.int64)

    def indices(self, template: Seq) -> Seq:
        return np.arange(len(template), dtype=np.int64)

    # -- attention --------------------------------------------------------
    def select(self, keys: Seq, queries: Seq, pred: Pred, causal: bool = False, label: str = "") -> SelMatrix:
        keys, queries = _seq(keys), _seq(queries)
        _same_len(keys, queries)
        A = np.asarray(pred(keys[None, :], queries[:, None]), dtype=bool)
        if causal:
            A &= np.tri(len(keys), dtype=bool)
        widths = A.sum(axis=1)
        self.trace.append(
            TraceRecord(
                "select",
                causal=causal,
                label=label,
                max_width=int(widths.max(initial=0)),
                empty_rows=int((widths == 0).sum()),
            )
        )
        return A

    def sel_width(self, A: SelMatrix, label: str = "") -> Seq:
        self.trace.append(TraceRecord("sel_width", label=label))
        return A.sum(axis=1).astype(np.int64)

    def aggr_mean(self, A: SelMatrix, values: Seq, default: int = 0, label: str = "") -> Seq:
        values = _seq(values).astype(np.int64)
        if A.shape != (len(values), len(values)):
            raise RaspError("selection matrix and values disagree in length")
        width = A.sum(axis=1)
        total = A.astype(np.int64) @ values
        safe = np.maximum(width, 1)
        # integer mean truncated toward zero
        mean = np.sign(total) * (np.abs(total) // safe)
        out = np.where(width > 0, mean, default).astype(np.int64)
        multi = width > 1
        mixed = 0
        truncated = False
        if multi.any():
            big = np.iinfo(np.int64).max
            hi = np.where(A, values[None, :], -big).max(axis=1)
            lo = np.where(A, values[None, :], big).min(axis=1)
            mixed_rows = multi & (hi != lo)
            mixed = int(mixed_rows.sum())
            truncated = bool((mixed_rows & (np.abs(total) % safe != 0)).any())
        self.trace.append(
            TraceRecord(
                "aggr_mean",
                label=label,
                max_width=int(width.max(initial=0)),
                empty_rows=int((width == 0).sum()),
                mixed_rows=mixed,
                truncated=truncated,
            )
        )
        return out

    def kqv(
        self,
        keys: Seq,
        queries: Seq,
        values: Seq,
        pred: Pred = Pred.EQ,
        default: int = 0,
        causal: bool = False,
        label: str = "",
    ) -> Seq:
        _same_len(_seq(keys), _seq(queries), _seq(values))
        A = self.select(keys, queries, pred, causal, label=label)
        out = self.aggr_mean(A, values, default, label=label)
        self.trace.records[-1].causal = causal
        self.trace.append(TraceRecord("kqv", causal=causal, label=label))
        return out

    # -- element-wise -------------------------------------------------------
    def seq_map(self, a: Seq, b: Seq, fn: Callable[[int, int], int], label: str = "") -> Seq:
        a, b = _seq(a), _seq(b)
        _same_len(a, b)
        self.trace.append(TraceRecord("map", label=label))
        return np.array([fn(int(x), int(y)) for x, y in zip(a, b)], dtype=np.int64)

    def where(self, cond: Seq, if_true: Seq, if_false: Seq) -> Seq:
        cond, if_true, if_false = _seq(cond), _seq(if_true), _seq(if_false)
        _same_len(cond, if_true, if_false)
        self.trace.append(TraceRecord("map", label="where"))
        return np.where(cond.astype(bool), if_true, if_false).astype(np.int64)

    def shift(self, seq: Seq, offset: int, label: str = "") -> Seq:
        """Constant arithmetic on positional values (``idx + c``)."""
        self.trace.append(TraceRecord("map", label=label or "shift", offset=int(offset)))
        return _seq(seq) + int(offset)

    def positional(self, seq: Seq, fn: Callable[[Seq], Seq], label: str) -> Seq:
        """A vectorised element-wise map over positions, e.g. residues."""
        self.trace.append(TraceRecord("map", label=label))
        return _seq(fn(_seq(seq)))
