from collections import Counter
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ARM_CAPTION, EDGE_CAPTION
from pathstar.graph import TaskInstance, as_ids, fig1_graph, sample_graph, sample_instance
from pathstar.tokenizer import (
    DatasetHeader,
    PermMode,
    QPosition,
    TargetVariant,
    TokenizationOptions,
    TokenizeError,
    Vocabulary,
    detokenize,
    edge_multiset,
    epoch_reshuffle,
    parse_sample,
    read_dataset,
    structured_expand,
    tokenize,
)

ALL_OPTIONS = [
    TokenizationOptions(p, q, v, m, b)
    for p, q, v, m, b in product(PermMode, QPosition, TargetVariant, (1, 2), (True, False))
]


def test_vocabulary_size_and_specials():
    vocab = Vocabulary(10)
    assert len(vocab) == 15
    assert [vocab.surface(vocab.lookup(w)) for w in ("|", "/", "=", "BOS", "EOS")] == ["|", "/", "=", "BOS", "EOS"]
    assert vocab.surface(0) == "1"
    with pytest.raises(TokenizeError):
        vocab.lookup("11")
    with pytest.raises(TokenizeError):
        vocab.lookup("x")


def test_edge_caption(fig1_edge_sample):
    assert detokenize(fig1_edge_sample) == EDGE_CAPTION


def test_arm_caption(fig1_arm_sample):
    assert detokenize(fig1_arm_sample) == ARM_CAPTION


def test_parse_caption(fig1):
    s = parse_sample(EDGE_CAPTION, Vocabulary(10))
    assert len(s.edge_tokens()) == 9
    assert [x + 1 for x in s.target_tokens] == [4, 8, 2, 7]
    assert s.instance == fig1
    assert s.options.q_position is QPosition.END


def test_parse_detects_q_start():
    line = "BOS / 4 7 = 4 8 | 8 2 | 2 7 | 4 9 | 9 1 | 1 3 | 4 5 | 5 10 | 10 6 | 4 8 2 7 EOS"
    s = parse_sample(line, Vocabulary(10))
    assert s.options.q_position is QPosition.START
    assert detokenize(s) == line


@pytest.mark.parametrize(
    "line,msg",
    [
        ("BOS 9 | 10 6 | 8 2 | 2 7 | 1 3 | 4 8 | 4 5 | 5 10 | 4 9 | / 4 7 = 4 8 2 7 EOS", "malformed edge"),
        ("BOS 9 9 | 10 6 | 8 2 | 2 7 | 1 3 | 4 8 | 4 5 | 5 10 | 4 1 | / 4 7 = EOS", "duplicate node"),
        ("BOS 9 1 | 10 6 | 8 2 | 2 7 | 1 3 | 4 8 | 4 5 | 5 10 | 4 9 | 4 7 4 8 2 7 EOS", "missing Q delimiters"),
        ("BOS 9 1 | 10 6 | 8 2 | 2 7 | 1 3 | 4 8 | 4 5 | 5 10 | 4 11 | / 4 7 = EOS", "unknown token|out of vocabulary"),
    ],
)
def test_parse_errors(line, msg):
    with pytest.raises(TokenizeError, match=msg):
        parse_sample(line, Vocabulary(10))


def test_parse_rejects_wrong_target():
    bad = EDGE_CAPTION.replace("= 4 8 2 7", "= 4 9 1 3")
    with pytest.raises(TokenizeError):
        parse_sample(bad, Vocabulary(10))


def test_leading_only_length():
    inst = sample_instance(20, 2, 2, np.random.default_rng(0))
    s = tokenize(inst, TokenizationOptions(perm_mode=PermMode.NONE, target_variant=TargetVariant.LEADING), None)
    assert len(s.tokens) == 1 + 2 * 3 + 4 + 1 + 1
    assert s.target_tokens == (inst.leading,)


def test_prefix_only_string(fig1):
    s = tokenize(fig1, TokenizationOptions(perm_mode=PermMode.NONE), None, with_target=False)
    text = detokenize(s)
    assert text.endswith("/ 4 7 =")
    assert parse_sample(text, Vocabulary(10), s.options) == s


def test_permuting_needs_rng(fig1):
    with pytest.raises(TokenizeError):
        tokenize(fig1, TokenizationOptions(), None)


def test_arm_mode_keeps_arms_contiguous(rng):
    inst = sample_instance(100, 4, 5, rng)
    s = tokenize(inst, TokenizationOptions(perm_mode=PermMode.ARM), rng)
    edges = [tuple(e[:2]) for e in s.edge_tokens()]
    blocks = [edges[i : i + 4] for i in range(0, 16, 4)]
    assert sorted(blocks) == sorted(inst.graph.arm_edges(d) for d in range(4))


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(ALL_OPTIONS), st.integers(2, 5), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_round_trip_property(opts, D, M, seed):
    rng = np.random.default_rng(seed)
    s = tokenize(sample_instance(60, D, M, rng), opts, rng)
    back = parse_sample(detokenize(s), s.vocab, opts)
    assert back == s


def test_structured_fig1_covers_all_targets(fig1, rng):
    group = structured_expand(fig1, 2, rng, TokenizationOptions())
    assert {g.instance.target + 1 for g in group} == {7, 3, 6}
    assert len({tuple(edge_multiset(g)) for g in group}) == 1


def test_structured_d2_gives_both_pairs(rng):
    inst = sample_instance(50, 2, 4, rng)
    group = structured_expand(inst, 1, rng, TokenizationOptions())
    assert {g.instance.target for g in group} == set(inst.graph.finals)


@pytest.mark.parametrize("S", [0, 3, 4])
def test_structured_rejects_bad_s(S, rng):
    inst = sample_instance(50, 3, 3, rng)
    with pytest.raises(TokenizeError, match="S must be <= D-1"):
        structured_expand(inst, S, rng, TokenizationOptions())


def test_structured_uniform_alternatives(rng):
    g = sample_graph(100, 5, 3, rng)
    inst = TaskInstance(g, g.arms[0][-1], 0)
    counts = Counter()
    for _ in range(1000):
        for s in structured_expand(inst, 2, rng, TokenizationOptions(perm_mode=PermMode.NONE))[1:]:
            counts[s.instance.target_arm_index] += 1
    assert set(counts) == {1, 2, 3, 4}
    assert all(abs(c / 1000 - 0.5) < 0.08 for c in counts.values())  # each alternative in 2 of 4 slots


def test_epoch_reshuffle_none_is_identity(rng):
    samples = [tokenize(sample_instance(30, 3, 3, rng), TokenizationOptions(perm_mode=PermMode.NONE), None)]
    assert epoch_reshuffle(samples, rng) == samples


def test_epoch_reshuffle_replays_and_keeps_q(rng):
    s = [tokenize(sample_instance(30, 3, 4, rng), TokenizationOptions(), rng) for _ in range(5)]
    a = epoch_reshuffle(s, np.random.default_rng(9))
    b = epoch_reshuffle(s, np.random.default_rng(9))
    assert a == b
    for old, new in zip(s, a):
        assert old.target_tokens == new.target_tokens
        assert edge_multiset(old) == edge_multiset(new)


def test_epoch_reshuffle_covers_all_orders():
    g = sample_graph(10, 2, 3, np.random.default_rng(2))
    s = [tokenize(TaskInstance(g, g.arms[0][-1], 0), TokenizationOptions(), np.random.default_rng(0))]
    rng = np.random.default_rng(3)
    seen = {tuple(tuple(e) for e in epoch_reshuffle(s, rng)[0].edge_tokens()) for _ in range(10_000)}
    assert len(seen) == 24


def test_header_round_trip():
    h = DatasetHeader(3, 4, 100, TokenizationOptions(perm_mode=PermMode.ARM, edge_marker_count=2), 7, 2, "test")
    assert DatasetHeader.parse(h.render()) == h


def test_read_dataset_reports_line(fig1_edge_sample):
    h = DatasetHeader(3, 4, 10, TokenizationOptions(), 0)
    header, samples = read_dataset([h.render(), EDGE_CAPTION])
    assert samples == [fig1_edge_sample]
    with pytest.raises(TokenizeError, match="line 3"):
        read_dataset([h.render(), EDGE_CAPTION, "BOS 1 2 EOS"])
