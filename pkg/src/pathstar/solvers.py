"""RASP programs that locate the leading node of the target arm.

Every program reads a BOS/EOS-free ``[Q, G]`` or ``[G, Q]`` sequence and
rewrites it so that some edge-sized window holds both the target ``t`` and
its leading node ``l_t``. The programs differ in how they route information
along the arms, which is what the layer counts measure:

=================  ====================================  ===============
name               strategy                              attention ops
=================  ====================================  ===============
back_target        walk ``t`` back through a scratch      O(M)
backward_targets   walk every final node back             O(M)
forward_start      walk every leading node forward        O(M)
log_doubling       pointer doubling on 4-token edges      O(log M)
arms_constant      fixed positional jump, arm-wise only   O(1)
causal             forward-only push/pull rules           O(M)
=================  ====================================  ===============
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .graph import TaskInstance, target_arm_oracle
from .rasp import ExecutionTrace, Machine, Pred, Seq, equals, is_true
from .tokenizer import PermMode, QPosition, TokenizedSample, Vocabulary

NULL_A = -99  # empty key-side lanes
NULL_B = -89  # empty query-side lanes; never equal to NULL_A so blanks cannot match blanks
VALID = -1    # anything above this is a real token or position

EQ = Pred.EQ


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class SolverInput:
    tokens: np.ndarray
    g_start: int
    q_position: QPosition
    marker_count: int
    D: int
    M: int
    vocab_size: int
    perm_mode: PermMode = PermMode.EDGE

    @property
    def stride(self) -> int:
        return 2 + self.marker_count

    @property
    def n_edges(self) -> int:
        return self.D * (self.M - 1)

    @property
    def q_start(self) -> int:
        return 0 if self.q_position is QPosition.START else self.n_edges * self.stride

    @classmethod
    def from_sample(cls, sample: TokenizedSample) -> "SolverInput":
        g = sample.instance.graph
        opts = sample.options
        return cls(
            tokens=np.asarray(sample.prompt(), dtype=np.int64),
            g_start=4 if opts.q_position is QPosition.START else 0,
            q_position=opts.q_position,
            marker_count=opts.edge_marker_count,
            D=g.D,
            M=g.M,
            vocab_size=g.vocab_size,
            perm_mode=opts.perm_mode,
        )


@dataclass
class SolverReport:
    name: str
    final_state: np.ndarray
    valid: bool
    kqv_count: int
    loop_iterations: int
    trace: ExecutionTrace = field(repr=False)
    in_regime: bool = True
    debug: dict | None = field(default=None, repr=False)


@dataclass
class Lanes:
    idx: Seq
    masked_x: Seq
    i_nodes: Seq
    j_nodes: Seq
    i_mask: Seq
    j_mask: Seq


def node_lanes(vm: Machine, inp: SolverInput) -> Lanes:
    """Positional helper lanes: ``Q`` masked out, and the i/j node slots of every edge."""
    seq = inp.tokens
    expected = 4 + inp.n_edges * inp.stride
    if len(seq) != expected:
        raise PreconditionError(f"malformed stride: expected {expected} tokens, got {len(seq)}")
    vocab = Vocabulary(inp.vocab_size)
    g = inp.g_start
    marks = seq[g + 2 : g + inp.n_edges * inp.stride : inp.stride]
    if not np.all(marks == vocab.edge_mark):
        raise PreconditionError(f"malformed stride: edges are not {inp.stride} tokens wide")

    idx = vm.indices(seq)
    rel = vm.shift(idx, -g, label="rel")
    in_g = vm.positional(rel, lambda r: (r >= 0) & (r < inp.n_edges * inp.stride), "in_g")
    residue = vm.positional(rel, lambda r: np.mod(r, inp.stride), "residue")
    i_mask = vm.positional(residue, lambda r: r == 0, "i_slot") & in_g
    j_mask = vm.positional(residue, lambda r: r == 1, "j_slot") & in_g
    masked_x = vm.where(in_g, seq, vm.full(seq, NULL_A))
    i_nodes = vm.where(i_mask, seq, vm.full(seq, NULL_A))
    j_nodes = vm.where(j_mask, seq, vm.full(seq, NULL_A))
    return Lanes(idx, masked_x, i_nodes, j_nodes, i_mask, j_mask)


def _broadcast_q(vm: Machine, inp: SolverInput, lanes: Lanes, offset: int, causal: bool = False) -> Seq:
    """Read one Q token (1 = start, 2 = target) into every position."""
    pos = vm.full(inp.tokens, inp.q_start + offset)
    return vm.kqv(lanes.idx, pos, inp.tokens, EQ, default=NULL_A, causal=causal, label=f"q[{offset}]")


def _final_slots(vm: Machine, lanes: Lanes) -> tuple[Seq, Seq, Seq]:
    # a node seen once in G is a final node
    counts = vm.sel_width(vm.select(lanes.masked_x, lanes.masked_x, EQ, label="counts"), label="counts")
    is_final = vm.positional(counts, lambda c: c == 1, "is_final")
    final_idx_slash = vm.where(is_final, vm.shift(lanes.idx, 1), vm.full(lanes.idx, NULL_A))
    is_final_slash = vm.kqv(vm.shift(lanes.idx, 1), lanes.idx, is_final, EQ, default=0, label="shift")
    return is_final, final_idx_slash, is_final_slash


def back_target(vm: Machine, inp: SolverInput, debug: dict | None = None) -> tuple[Seq, int]:
    seq = inp.tokens
    L = node_lanes(vm, inp)
    idx = L.idx
    write = vm.positional(idx, lambda i: i == 0, "scratch")
    blank = vm.full(seq, NULL_B)

    t_val = _broadcast_q(vm, inp, L, 2)
    target_idx = vm.kqv(L.j_nodes, t_val, idx, EQ, default=NULL_A, label="target_idx")
    cur_state = vm.where(write, t_val, seq)
    steps = max(inp.M - 2, 0)
    for step in range(steps):
        cur = vm.where(write, cur_state, blank)
        cur_idx = vm.kqv(L.j_nodes, cur, idx, EQ, default=NULL_B, label="j_pos")
        prev_i = vm.shift(cur_idx, -1)
        connecting = vm.kqv(idx, prev_i, L.i_nodes, EQ, default=NULL_B, label="prev_node")
        cur_state = vm.where(write, connecting, cur_state)
        if debug is not None:
            debug.setdefault("arm_markers", []).append((f"a{inp.M - 2 - step}", int(cur_state[0])))

    # hand the tracked node to the marker slot right after t
    tracked = vm.kqv(idx, vm.full(seq, 0), cur_state, EQ, default=NULL_A, label="read_scratch")
    slot = vm.seq_map(idx, vm.shift(target_idx, 1), lambda i, p: int(i == p), label="t_slash")
    cur_state = vm.where(slot, tracked, cur_state)
    if debug is not None:
        debug["tracked"] = int(tracked[0])
    return cur_state, steps


def backward_targets(vm: Machine, inp: SolverInput, debug: dict | None = None) -> tuple[Seq, int]:
    seq = inp.tokens
    L = node_lanes(vm, inp)
    idx = L.idx
    is_final, final_idx_slash, is_final_slash = _final_slots(vm, L)
    final_nodes = vm.where(is_final, L.j_nodes, vm.full(idx, NULL_B))
    connecting = vm.kqv(final_idx_slash, idx, final_nodes, EQ, default=NULL_B, label="shift")
    cur_state = seq
    steps = max(inp.M - 2, 0)
    for _ in range(steps):
        connecting_idxs = vm.kqv(L.j_nodes, connecting, idx, EQ, default=NULL_B, label="j_pos")
        connecting = vm.kqv(idx, vm.shift(connecting_idxs, -1), L.i_nodes, EQ, default=NULL_B, label="prev_node")
        cur_state = vm.where(is_final_slash, connecting, seq)
    cur_state = vm.where(is_final_slash, connecting, seq)
    return cur_state, steps


def forward_start(vm: Machine, inp: SolverInput, debug: dict | None = None) -> tuple[Seq, int]:
    seq = inp.tokens
    L = node_lanes(vm, inp)
    idx = L.idx
    s_val = _broadcast_q(vm, inp, L, 1)
    is_start = vm.seq_map(L.i_nodes, s_val, lambda a, b: int(a == b > VALID), label="is_start")
    start_idx = vm.where(is_start, idx, vm.full(idx, NULL_A))
    leading = vm.kqv(idx, vm.shift(start_idx, 1), L.j_nodes, EQ, default=NULL_B, label="leading")
    connecting = leading
    steps = max(inp.M - 2, 0)
    for _ in range(steps):
        connecting_idxs = vm.kqv(L.i_nodes, connecting, idx, EQ, default=NULL_B, label="i_pos")
        connecting = vm.kqv(idx, vm.shift(connecting_idxs, 1), L.j_nodes, EQ, default=NULL_B, label="next_node")
    cur_state = vm.where(is_start, connecting, seq)
    return cur_state, steps


def log_steps(M: int) -> int:
    return math.ceil(math.log2(M - 1)) if M > 2 else 0


def log_doubling(vm: Machine, inp: SolverInput, debug: dict | None = None) -> tuple[Seq, int]:
    """Pointer doubling over ``(i, j, k1, k2)`` edges.

    ``k1`` holds a node behind the edge and ``k2`` a node ahead of it. Each
    round, ``k1`` jumps to the ``k1`` of the edge whose original ``j`` equals
    it, and ``k2`` to the ``k2`` of the edge whose original ``i`` equals it,
    doubling the reach in both directions. Matching against the original
    lanes (not the moving ``k`` lanes) keeps every lookup single-valued.
    """
    seq = inp.tokens
    if inp.stride != 4:
        raise PreconditionError("log_doubling needs two edge markers per edge")
    L = node_lanes(vm, inp)
    idx = L.idx
    i_pos = vm.where(L.i_mask, idx, vm.full(idx, NULL_A))
    j_pos = vm.where(L.j_mask, idx, vm.full(idx, NULL_A))
    k1_pos = vm.kqv(idx, vm.shift(i_pos, 2), idx, EQ, default=NULL_B, label="k1_pos")
    k2_pos = vm.kqv(idx, vm.shift(j_pos, 2), idx, EQ, default=NULL_B, label="k2_pos")
    k1 = vm.kqv(k1_pos, idx, L.i_nodes, EQ, default=NULL_B, label="k1_init")
    k2 = vm.kqv(k2_pos, idx, L.j_nodes, EQ, default=NULL_B, label="k2_init")
    cur_state = seq
    steps = log_steps(inp.M)
    for _ in range(steps):
        back_pos = vm.kqv(L.j_nodes, k1, vm.shift(idx, 1), EQ, default=NULL_B, label="k1_link")
        new_k1 = vm.kqv(idx, back_pos, k1, EQ, default=NULL_B, label="k1_jump")
        k1 = vm.where(is_true(new_k1, VALID), new_k1, k1)

        ahead_pos = vm.kqv(L.i_nodes, k2, vm.shift(idx, 3), EQ, default=NULL_B, label="k2_link")
        new_k2 = vm.kqv(idx, ahead_pos, k2, EQ, default=NULL_B, label="k2_jump")
        k2 = vm.where(is_true(new_k2, VALID), new_k2, k2)

        cur_state = vm.where(is_true(k1, VALID), k1, seq)
        cur_state = vm.where(is_true(k2, VALID), k2, cur_state)
    if steps == 0:
        cur_state = vm.where(is_true(k1, VALID), k1, seq)
        cur_state = vm.where(is_true(k2, VALID), k2, cur_state)

    # one extra step: if j == some k1, take that edge's k2 into j
    conn = vm.kqv(k1, L.j_nodes, vm.shift(idx, 1), EQ, default=NULL_A, label="fixup_link")
    new_j = vm.kqv(idx, conn, k2, EQ, default=NULL_A, label="fixup_jump")
    j_nodes = vm.where(is_true(new_j, VALID), new_j, L.j_nodes)
    cur_state = vm.where(is_true(j_pos, VALID), j_nodes, cur_state)
    if debug is not None:
        debug["fixup_changed"] = int(np.sum(is_true(new_j, VALID)))
    return cur_state, steps


def arms_constant(vm: Machine, inp: SolverInput, debug: dict | None = None) -> tuple[Seq, int]:
    """Jump from each final node a fixed distance back to its leading node.

    Only correct when every arm's edges are contiguous and in order.
    """
    seq = inp.tokens
    if inp.stride != 3:
        raise PreconditionError("arms_constant needs one edge marker per edge")
    L = node_lanes(vm, inp)
    idx = L.idx
    is_final, final_idx_slash, is_final_slash = _final_slots(vm, L)
    if inp.M >= 3:
        # leading node is the i-node of the arm's second edge
        offset, lane = (inp.M - 3) * 3 + 1, L.i_nodes
    else:
        # one-node arms: the final node is the leading node
        offset, lane = 0, L.j_nodes
    leading_idx = vm.where(is_final, vm.shift(idx, -offset), vm.full(idx, NULL_B))
    leading = vm.kqv(idx, leading_idx, lane, EQ, default=NULL_B, label="jump")
    leading = vm.kqv(final_idx_slash, idx, leading, EQ, default=NULL_B, label="shift")
    cur_state = vm.where(is_final_slash, leading, seq)
    return cur_state, 0


def causal(vm: Machine, inp: SolverInput, debug: dict | None = None) -> tuple[Seq, int]:
    """Forward-only propagation of leading nodes, for causal attention.

    Each arm has one active edge whose j-slot holds the frontier node and
    whose marker slot holds the arm's leading node. Rule 1 pulls the next
    node from a connecting edge earlier in the sequence; rule 2 activates a
    connecting edge later in the sequence and pushes the leading node into
    its marker slot. An edge is activated at most once.
    """
    seq = inp.tokens
    if inp.q_position is not QPosition.START:
        raise PreconditionError("causal solver requires Q before G")
    if inp.stride != 3:
        raise PreconditionError("causal solver needs one edge marker per edge")
    L = node_lanes(vm, inp)
    idx = L.idx
    blank_a, blank_b = vm.full(idx, NULL_A), vm.full(idx, NULL_B)

    s_val = _broadcast_q(vm, inp, L, 1, causal=True)
    is_start = vm.seq_map(L.i_nodes, s_val, lambda a, b: int(a == b > VALID), label="is_start")
    start_idx = vm.where(is_start, idx, blank_a)
    leading_idx = vm.kqv(vm.shift(start_idx, 2), idx, vm.shift(idx, 1), EQ, default=NULL_A, causal=True)
    leading = vm.kqv(idx, leading_idx, L.j_nodes, EQ, default=NULL_B, causal=True)
    cur_state = vm.where(is_true(leading, VALID), leading, seq)

    cur_j_idx = vm.kqv(vm.shift(start_idx, 1), idx, vm.shift(idx, 1), EQ, default=NULL_A, causal=True)
    cur_k = leading
    cur_j = vm.where(is_true(cur_j_idx, VALID), L.j_nodes, blank_b)

    steps = inp.M - 1
    for _ in range(steps):
        # rule 1: the connecting edge is earlier, pull its j node forward
        is_before = vm.sel_width(vm.select(L.i_nodes, cur_j, EQ, causal=True, label="is_before"))
        conn_i_idx = vm.kqv(L.i_nodes, cur_j, idx, EQ, default=NULL_B, causal=True, label="r1_conn_i")
        conn_node = vm.kqv(vm.shift(idx, -1), conn_i_idx, L.j_nodes, EQ, default=NULL_B, causal=True, label="r1_pull")
        cur_j = vm.where(is_before, conn_node, cur_j)
        cur_state = vm.where(is_before, conn_node, cur_state)

        # rule 2: the connecting edge is later, push the leading node into it
        is_after = vm.sel_width(vm.select(cur_j, L.i_nodes, EQ, causal=True, label="is_after"))
        holder_idx = vm.kqv(cur_j, L.i_nodes, idx, EQ, default=NULL_A, causal=True, label="r2_holder")
        holder_at_k = vm.kqv(vm.shift(idx, 2), idx, holder_idx, EQ, default=NULL_A, causal=True, label="r2_to_k")
        pushed = vm.kqv(idx, vm.shift(holder_at_k, 1), cur_k, EQ, default=NULL_B, causal=True, label="r2_push")
        new_after = is_true(pushed, VALID)
        cur_k = vm.where(new_after, pushed, cur_k)

        j_idx_at_i = vm.where(is_after, vm.shift(idx, 1), blank_a)
        new_j_idx = vm.kqv(j_idx_at_i, idx, vm.shift(idx, 1), EQ, default=NULL_A, causal=True, label="r2_activate")
        new_j = vm.where(is_true(new_j_idx, VALID), L.j_nodes, blank_b)
        # never re-activate an edge, or a stale holder would rewind its frontier
        activate = is_true(new_j, VALID) & ~is_true(cur_j, VALID)
        cur_j = vm.where(activate, new_j, cur_j)
        cur_state = vm.where(new_after, cur_k, cur_state)
    return cur_state, steps


@dataclass(frozen=True)
class SolverSpec:
    name: str
    program: Callable
    markers: int
    perm_modes: frozenset
    q_positions: frozenset = frozenset(QPosition)
    causal: bool = False


SOLVERS: dict[str, SolverSpec] = {
    s.name: s
    for s in (
        SolverSpec("back_target", back_target, 1, frozenset({PermMode.EDGE, PermMode.ARM})),
        SolverSpec("backward_targets", backward_targets, 1, frozenset({PermMode.EDGE})),
        SolverSpec("forward_start", forward_start, 1, frozenset({PermMode.EDGE})),
        SolverSpec("log_doubling", log_doubling, 2, frozenset({PermMode.EDGE})),
        SolverSpec("arms_constant", arms_constant, 1, frozenset({PermMode.ARM, PermMode.NONE})),
        SolverSpec("causal", causal, 1, frozenset({PermMode.EDGE}), frozenset({QPosition.START}), True),
    )
}


def check_preconditions(name: str, inp: SolverInput) -> bool:
    """Raise on structural mismatches; return whether the permutation mode is in regime."""
    spec = SOLVERS[name]
    if inp.marker_count != spec.markers:
        raise PreconditionError(f"{name} needs {spec.markers} edge marker(s), data has {inp.marker_count}")
    if inp.q_position not in spec.q_positions:
        raise PreconditionError(f"{name} requires Q at the {'/'.join(q.value for q in spec.q_positions)}")
    return inp.perm_mode in spec.perm_modes


def validate_output(state: Seq, inp: SolverInput, instance: TaskInstance) -> bool:
    """True iff some edge window of G holds both the target and its leading node."""
    return bool(validity_windows(state, inp, instance))


def validity_windows(state: Seq, inp: SolverInput, instance: TaskInstance) -> list[tuple[int, ...]]:
    if len(state) != len(inp.tokens):
        raise ValueError("state length differs from input length")
    t = instance.target
    lead = target_arm_oracle(instance.graph, t)[1]
    w = inp.stride
    out = []
    for p in range(inp.g_start, inp.g_start + inp.n_edges * w, w):
        win = tuple(int(x) for x in state[p : p + w])
        if t in win and lead in win:
            out.append(win)
    return out


def run_solver(
    name: str,
    inp: SolverInput,
    instance: TaskInstance,
    debug: bool = False,
    audit_increments: bool = False,
) -> SolverReport:
    if name not in SOLVERS:
        raise KeyError(f"unknown solver {name!r}; choose from {sorted(SOLVERS)}")
    in_regime = check_preconditions(name, inp)
    vm = Machine()
    dbg: dict | None = {} if debug else None
    state, iters = SOLVERS[name].program(vm, inp, dbg)
    if audit_increments:
        dbg = dbg if dbg is not None else {}
        dbg["non_unit_offsets"] = [r.offset for r in vm.trace.non_unit_offsets()]
    return SolverReport(
        name=name,
        final_state=state,
        valid=validate_output(state, inp, instance),
        kqv_count=vm.trace.attention_ops,
        loop_iterations=iters,
        trace=vm.trace,
        in_regime=in_regime,
        debug=dbg,
    )


def solve_sample(name: str, sample: TokenizedSample, **kw) -> SolverReport:
    return run_solver(name, SolverInput.from_sample(sample), sample.instance, **kw)


def solve_back_target(inp: SolverInput, instance: TaskInstance, **kw) -> SolverReport:
    return run_solver("back_target", inp, instance, **kw)


def solve_backward_targets(inp: SolverInput, instance: TaskInstance, **kw) -> SolverReport:
    return run_solver("backward_targets", inp, instance, **kw)


def solve_forward_start(inp: SolverInput, instance: TaskInstance, **kw) -> SolverReport:
    return run_solver("forward_start", inp, instance, **kw)


def solve_log(inp: SolverInput, instance: TaskInstance, **kw) -> SolverReport:
    return run_solver("log_doubling", inp, instance, **kw)


def solve_arms_constant(inp: SolverInput, instance: TaskInstance, **kw) -> SolverReport:
    return run_solver("arms_constant", inp, instance, **kw)


def solve_causal(inp: SolverInput, instance: TaskInstance, **kw) -> SolverReport:
    return run_solver("causal", inp, instance, **kw)
