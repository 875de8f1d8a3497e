"""Clever-Hans edge-lookup predictor and teacher-forced evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .graph import GraphError, PathStarGraph
from .tokenizer import TargetVariant, TokenizedSample

Predictor = Callable[[TokenizedSample, Sequence[int], np.random.Generator], int]


def chc_predict(
    prefix: Sequence[int],
    graph: PathStarGraph,
    rng: np.random.Generator,
    target: int | None = None,
    predict_target_at_end: bool = False,
) -> int:
    """Next node of a forward arm given the true nodes so far.

    Empty prefix: the start node. After the start: a uniform guess among the
    leading nodes. Afterwards: the unique neighbour further from the start.
    With ``predict_target_at_end`` the M-th position is filled with ``target``
    directly instead of looked up.
    """
    if not prefix:
        return graph.start
    if len(prefix) == 1:
        return int(rng.choice(graph.leading))
    if predict_target_at_end and target is not None and len(prefix) == graph.M - 1:
        return target
    prev = prefix[-1]
    if prev not in graph.nodes:
        raise GraphError(f"node {prev} is not in the graph")
    nxt = graph.successor(prev)
    if nxt is None:
        raise GraphError(f"node {prev} is a final node; the arm has ended")
    return nxt


def chc_predict_reversed(
    prefix: Sequence[int],
    graph: PathStarGraph,
    rng: np.random.Generator,
    target: int,
) -> int:
    """Next node of a reversed arm: the target first, then predecessors."""
    if not prefix:
        return target
    prev = prefix[-1]
    if prev not in graph.nodes:
        raise GraphError(f"node {prev} is not in the graph")
    if prev == graph.start:
        raise GraphError("reached the start node; the arm has ended")
    return graph.predecessor(prev)


def clever_hans(predict_target_at_end: bool = False) -> Predictor:
    """Predictor that dispatches on the sample's target variant."""

    def predict(sample: TokenizedSample, prefix: Sequence[int], rng: np.random.Generator) -> int:
        inst = sample.instance
        variant = sample.options.target_variant
        if variant is TargetVariant.REVERSED:
            return chc_predict_reversed(prefix, inst.graph, rng, inst.target)
        if variant is TargetVariant.LEADING:
            # the single target token sits where the leading node would be
            return chc_predict([inst.graph.start], inst.graph, rng)
        return chc_predict(prefix, inst.graph, rng, inst.target, predict_target_at_end)

    return predict


@dataclass(frozen=True)
class PositionReport:
    position_accuracy: tuple[float, ...]
    sequence_accuracy: float
    sample_count: int
    position_correct: tuple[int, ...] = ()
    sequence_correct: int = 0

    def rows(self) -> list[tuple[int, float]]:
        return [(i + 1, a) for i, a in enumerate(self.position_accuracy)]

    def render_table(self) -> str:
        lines = ["position  accuracy", "--------  --------"]
        lines += [f"{p:>8}  {a:8.4f}" for p, a in self.rows()]
        lines.append(f"{'sequence':>8}  {self.sequence_accuracy:8.4f}")
        return "\n".join(lines)

    def render_kv(self) -> str:
        lines = [f"samples={self.sample_count}"]
        lines += [f"pos{p}_accuracy={a:.6f}" for p, a in self.rows()]
        lines.append(f"sequence_accuracy={self.sequence_accuracy:.6f}")
        return "\n".join(lines)


def teacher_forced_eval(
    predictor: Predictor,
    dataset: Iterable[TokenizedSample],
    rng: np.random.Generator,
) -> PositionReport:
    """Score ``predictor`` one target position at a time on the true prefix."""
    correct: list[int] = []
    seq_ok = 0
    n = 0
    for sample in dataset:
        truth = list(sample.target_tokens)
        if len(correct) < len(truth):
            correct += [0] * (len(truth) - len(correct))
        all_ok = True
        for j, gold in enumerate(truth):
            hit = predictor(sample, truth[:j], rng) == gold
            correct[j] += hit
            all_ok &= hit
        seq_ok += all_ok
        n += 1
    if n == 0:
        return PositionReport((), 0.0, 0)
    return PositionReport(
        position_accuracy=tuple(c / n for c in correct),
        sequence_accuracy=seq_ok / n,
        sample_count=n,
        position_correct=tuple(correct),
        sequence_correct=seq_ok,
    )
