"""Serialization of task instances to token sequences, and back."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .graph import GraphError, PathStarGraph, TaskInstance


class TokenizeError(ValueError):
    pass


class PermMode(str, enum.Enum):
    EDGE = "edge"
    ARM = "arm"
    NONE = "none"


class QPosition(str, enum.Enum):
    START = "start"
    END = "end"


class TargetVariant(str, enum.Enum):
    FORWARD = "forward"
    REVERSED = "reversed"
    LEADING = "leading"


SPECIALS = ("|", "/", "=", "BOS", "EOS")


@dataclass(frozen=True)
class Vocabulary:
    node_count: int

    @property
    def edge_mark(self) -> int:
        return self.node_count

    @property
    def q_open(self) -> int:
        return self.node_count + 1

    @property
    def q_close(self) -> int:
        return self.node_count + 2

    @property
    def bos(self) -> int:
        return self.node_count + 3

    @property
    def eos(self) -> int:
        return self.node_count + 4

    def __len__(self) -> int:
        return self.node_count + len(SPECIALS)

    def is_node(self, tok: int) -> bool:
        return 0 <= tok < self.node_count

    # node ids are shown 1-based to match the worked examples
    def surface(self, tok: int) -> str:
        if self.is_node(tok):
            return str(tok + 1)
        if self.node_count <= tok < len(self):
            return SPECIALS[tok - self.node_count]
        raise TokenizeError(f"token id {tok} is outside the vocabulary")

    def lookup(self, word: str) -> int:
        if word in SPECIALS:
            return self.node_count + SPECIALS.index(word)
        try:
            tok = int(word) - 1
        except ValueError:
            raise TokenizeError(f"unknown token {word!r}") from None
        if not self.is_node(tok):
            raise TokenizeError(f"token {word!r} is out of vocabulary")
        return tok


@dataclass(frozen=True)
class TokenizationOptions:
    perm_mode: PermMode = PermMode.EDGE
    q_position: QPosition = QPosition.END
    target_variant: TargetVariant = TargetVariant.FORWARD
    edge_marker_count: int = 1
    include_bos_eos: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "perm_mode", PermMode(self.perm_mode))
        object.__setattr__(self, "q_position", QPosition(self.q_position))
        object.__setattr__(self, "target_variant", TargetVariant(self.target_variant))
        if self.edge_marker_count not in (1, 2):
            raise TokenizeError("edge_marker_count must be 1 or 2")

    @property
    def edge_width(self) -> int:
        return 2 + self.edge_marker_count


@dataclass(frozen=True)
class TokenizedSample:
    tokens: tuple[int, ...]
    prefix_len: int
    instance: TaskInstance
    options: TokenizationOptions

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.instance.graph.vocab_size)

    @property
    def target_tokens(self) -> tuple[int, ...]:
        tail = self.tokens[self.prefix_len :]
        if tail and tail[-1] == self.vocab.eos:
            tail = tail[:-1]
        return tail

    @property
    def has_target(self) -> bool:
        return bool(self.target_tokens)

    def prompt(self) -> tuple[int, ...]:
        """G and Q without BOS, target, or EOS."""
        start = 1 if self.options.include_bos_eos else 0
        return self.tokens[start : self.prefix_len]

    def edge_tokens(self) -> list[tuple[int, ...]]:
        g = self.graph_span()
        w = self.options.edge_width
        return [self.tokens[i : i + w] for i in range(g[0], g[1], w)]

    def graph_span(self) -> tuple[int, int]:
        start = 1 if self.options.include_bos_eos else 0
        g_len = self.instance.graph.D * (self.instance.graph.M - 1) * self.options.edge_width
        if self.options.q_position is QPosition.START:
            start += 4
        return start, start + g_len


def target_region(instance: TaskInstance, variant: TargetVariant) -> list[int]:
    arm = instance.target_arm
    if variant is TargetVariant.FORWARD:
        return arm
    if variant is TargetVariant.REVERSED:
        return arm[::-1]
    return [instance.leading]


def edge_order(
    instance: TaskInstance,
    options: TokenizationOptions,
    rng: np.random.Generator | None,
) -> list[tuple[int, int]]:
    graph = instance.graph
    if options.perm_mode is PermMode.NONE:
        return graph.edges()
    if rng is None:
        raise TokenizeError(f"{options.perm_mode.value}-wise permutation needs an rng")
    if options.perm_mode is PermMode.EDGE:
        edges = graph.edges()
        return [edges[i] for i in rng.permutation(len(edges))]
    return [e for d in rng.permutation(graph.D) for e in graph.arm_edges(int(d))]


def serialize(
    instance: TaskInstance,
    edges: Sequence[tuple[int, int]],
    options: TokenizationOptions,
    with_target: bool = True,
) -> TokenizedSample:
    """Lay out ``edges`` (already in their final order), Q, and the target region."""
    graph = instance.graph
    vocab = Vocabulary(graph.vocab_size)
    if sorted(edges) != sorted(graph.edges()):
        raise TokenizeError("edge list is not a permutation of the graph's edges")
    g: list[int] = []
    for u, v in edges:
        g += [u, v] + [vocab.edge_mark] * options.edge_marker_count
    q = [vocab.q_open, graph.start, instance.target, vocab.q_close]
    body = q + g if options.q_position is QPosition.START else g + q
    head = [vocab.bos] if options.include_bos_eos else []
    prefix = head + body
    tokens = list(prefix)
    if with_target:
        tokens += target_region(instance, options.target_variant)
        if options.include_bos_eos:
            tokens.append(vocab.eos)
    return TokenizedSample(tuple(tokens), len(prefix), instance, options)


def tokenize(
    instance: TaskInstance,
    options: TokenizationOptions,
    rng: np.random.Generator | None,
    with_target: bool = True,
) -> TokenizedSample:
    return serialize(instance, edge_order(instance, options, rng), options, with_target)


def detokenize(sample: TokenizedSample) -> str:
    vocab = sample.vocab
    return " ".join(vocab.surface(t) for t in sample.tokens)


def _graph_from_edges(edges: list[tuple[int, int]], start: int, vocab_size: int) -> PathStarGraph:
    succ: dict[int, list[int]] = {}
    indeg: dict[int, int] = {}
    for u, v in edges:
        succ.setdefault(u, []).append(v)
        indeg[v] = indeg.get(v, 0) + 1
    if any(c != 1 for c in indeg.values()) or start in indeg:
        raise TokenizeError("edges do not form a path-star graph")
    arms = []
    for lead in succ.get(start, []):
        arm = [lead]
        while arm[-1] in succ:
            nxt = succ[arm[-1]]
            if len(nxt) != 1:
                raise TokenizeError(f"node {arm[-1] + 1} branches off an arm")
            arm.append(nxt[0])
        arms.append(tuple(arm))
    if sum(len(a) for a in arms) != len(edges):
        raise TokenizeError("edges are not all reachable from the start node")
    try:
        return PathStarGraph(start, tuple(arms), vocab_size)
    except GraphError as exc:
        raise TokenizeError(str(exc)) from None


def parse_sample(
    line: str,
    vocab: Vocabulary,
    options: TokenizationOptions | None = None,
) -> TokenizedSample:
    """Rebuild a sample from its surface string.

    Q position, marker count, BOS/EOS and target variant are read off the
    line. The permutation mode cannot be seen in a single line; it is taken
    from ``options`` (the file header) and defaults to edge-wise.
    """
    toks = [vocab.lookup(w) for w in line.split()]
    if not toks:
        raise TokenizeError("empty line")
    bos_eos = toks[0] == vocab.bos
    try:
        q_open = toks.index(vocab.q_open)
        q_close = toks.index(vocab.q_close)
    except ValueError:
        raise TokenizeError("missing Q delimiters") from None
    if q_close != q_open + 3 or toks.count(vocab.q_open) != 1 or toks.count(vocab.q_close) != 1:
        raise TokenizeError("malformed Q: expected '/ s t ='")
    start, target = toks[q_open + 1], toks[q_open + 2]
    lead = 1 if bos_eos else 0
    if q_open == lead:
        q_pos = QPosition.START
        g_lo = q_close + 1
        g_hi = _graph_end(toks, g_lo, vocab)
        prefix_len = g_hi
    else:
        q_pos = QPosition.END
        g_lo, g_hi = lead, q_open
        prefix_len = q_close + 1
    edges, markers = _parse_edges(toks[g_lo:g_hi], vocab)

    tail = toks[prefix_len:]
    if bos_eos:
        if tail and tail[-1] == vocab.eos:
            tail = tail[:-1]
        elif tail:
            raise TokenizeError("target region without EOS")
    if vocab.eos in tail or any(not vocab.is_node(t) for t in tail):
        raise TokenizeError("target region must hold node tokens only")

    try:
        graph = _graph_from_edges(edges, start, vocab.node_count)
        instance = TaskInstance.for_target(graph, target)
    except GraphError as exc:
        raise TokenizeError(str(exc)) from None

    hint = options or TokenizationOptions()
    variant = _infer_variant(tail, instance, hint.target_variant)
    opts = replace(
        hint,
        q_position=q_pos,
        target_variant=variant,
        edge_marker_count=markers,
        include_bos_eos=bos_eos,
    )
    sample = TokenizedSample(tuple(toks), prefix_len, instance, opts)
    if tail and list(tail) != target_region(instance, variant):
        raise TokenizeError("target region does not match the arm named in Q")
    return sample


def _graph_end(toks: list[int], lo: int, vocab: Vocabulary) -> int:
    """End of the edge list when G follows Q: one past the last edge marker."""
    hi = lo
    for i in range(lo, len(toks)):
        if toks[i] == vocab.edge_mark:
            hi = i + 1
    return hi


def _parse_edges(g: list[int], vocab: Vocabulary) -> tuple[list[tuple[int, int]], int]:
    edges: list[tuple[int, int]] = []
    markers = None
    i = 0
    while i < len(g):
        j = i
        while j < len(g) and g[j] != vocab.edge_mark:
            j += 1
        k = j
        while k < len(g) and g[k] == vocab.edge_mark:
            k += 1
        nodes, n_marks = g[i:j], k - j
        if len(nodes) != 2 or n_marks == 0 or not all(vocab.is_node(v) for v in nodes):
            raise TokenizeError(f"malformed edge at graph offset {i}")
        if nodes[0] == nodes[1]:
            raise TokenizeError(f"duplicate node within edge at graph offset {i}")
        if markers is None:
            markers = n_marks
        if n_marks != markers or n_marks > 2:
            raise TokenizeError("inconsistent edge marker count")
        edges.append((nodes[0], nodes[1]))
        i = k
    if not edges:
        raise TokenizeError("no edges")
    return edges, markers


def _infer_variant(tail: list[int], instance: TaskInstance, default: TargetVariant) -> TargetVariant:
    if not tail:
        return default
    for v in (default, *TargetVariant):
        if list(tail) == target_region(instance, v):
            return v
    raise TokenizeError("target region does not match the arm named in Q")


def structured_expand(
    instance: TaskInstance,
    S: int,
    rng: np.random.Generator,
    options: TokenizationOptions,
) -> list[TokenizedSample]:
    """The sample itself plus ``S`` siblings on the same graph with other targets."""
    graph = instance.graph
    if not 1 <= S <= graph.D - 1:
        raise TokenizeError(f"S must be <= D-1 (got S={S}, D={graph.D})")
    others = [d for d in range(graph.D) if d != instance.target_arm_index]
    picks = rng.choice(others, size=S, replace=False)
    group = [instance] + [TaskInstance(graph, graph.arms[int(d)][-1], int(d)) for d in picks]
    return [tokenize(inst, options, rng) for inst in group]


def epoch_reshuffle(samples: Sequence[TokenizedSample], rng: np.random.Generator) -> list[TokenizedSample]:
    out = []
    for s in samples:
        if s.options.perm_mode is PermMode.NONE:
            out.append(s)
        else:
            out.append(tokenize(s.instance, s.options, rng, with_target=s.has_target))
    return out


def edge_multiset(sample: TokenizedSample) -> list[tuple[int, int]]:
    return sorted((e[0], e[1]) for e in sample.edge_tokens())


@dataclass(frozen=True)
class DatasetHeader:
    D: int
    M: int
    vocab_size: int
    options: TokenizationOptions
    seed: int
    structured: int = 0
    split: str = "train"
    extra: dict = field(default_factory=dict, compare=False)

    def render(self) -> str:
        o = self.options
        fields = [
            f"D={self.D}",
            f"M={self.M}",
            f"V={self.vocab_size}",
            f"perm={o.perm_mode.value}",
            f"q_pos={o.q_position.value}",
            f"variant={o.target_variant.value}",
            f"markers={o.edge_marker_count}",
            f"bos_eos={int(o.include_bos_eos)}",
            f"structured={self.structured}",
            f"seed={self.seed}",
            f"split={self.split}",
        ]
        return "# " + " ".join(fields)

    @classmethod
    def parse(cls, line: str) -> "DatasetHeader":
        if not line.startswith("#"):
            raise TokenizeError("dataset header must start with '#'")
        kv = dict(item.split("=", 1) for item in line[1:].split())
        try:
            options = TokenizationOptions(
                perm_mode=PermMode(kv["perm"]),
                q_position=QPosition(kv["q_pos"]),
                target_variant=TargetVariant(kv["variant"]),
                edge_marker_count=int(kv["markers"]),
                include_bos_eos=bool(int(kv.get("bos_eos", "1"))),
            )
            return cls(
                D=int(kv["D"]),
                M=int(kv["M"]),
                vocab_size=int(kv["V"]),
                options=options,
                seed=int(kv["seed"]),
                structured=int(kv.get("structured", 0)),
                split=kv.get("split", "train"),
            )
        except (KeyError, ValueError) as exc:
            raise TokenizeError(f"bad dataset header: {exc}") from None


def read_dataset(lines: Sequence[str]) -> tuple[DatasetHeader, list[TokenizedSample]]:
    lines = [ln.rstrip("\n") for ln in lines if ln.strip()]
    if not lines:
        raise TokenizeError("empty dataset")
    header = DatasetHeader.parse(lines[0])
    vocab = Vocabulary(header.vocab_size)
    samples = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            samples.append(parse_sample(line, vocab, header.options))
        except TokenizeError as exc:
            raise TokenizeError(f"line {n}: {exc}") from None
    return header, samples
