import math

import numpy as np
import pytest

from pathstar.chc import PositionReport, chc_predict, chc_predict_reversed, clever_hans, teacher_forced_eval
from pathstar.graph import GraphError, as_ids, fig1_graph, sample_instance
from pathstar.tokenizer import PermMode, TargetVariant, TokenizationOptions, tokenize


def dataset(D, M, n, variant=TargetVariant.FORWARD, seed=0):
    rng = np.random.default_rng(seed)
    opts = TokenizationOptions(perm_mode=PermMode.NONE, target_variant=variant)
    return [tokenize(sample_instance(100, D, M, rng), opts, None) for _ in range(n)]


def test_edge_lookup_fig1(rng):
    g = fig1_graph()
    four, eight, two = as_ids([4, 8, 2])
    assert chc_predict([four, eight], g, rng) == two
    assert chc_predict([], g, rng) == four


def test_leading_guess_is_uniform():
    g = fig1_graph()
    rng = np.random.default_rng(0)
    draws = [chc_predict([g.start], g, rng) for _ in range(6000)]
    assert set(draws) == set(g.leading)
    hit = draws.count(as_ids([8])[0]) / 6000
    assert abs(hit - 1 / 3) < 4 * math.sqrt(2 / 9 / 6000)


def test_reversed_walk(rng):
    g = fig1_graph()
    seven, two, eight = as_ids([7, 2, 8])
    assert chc_predict_reversed([], g, rng, seven) == seven
    assert chc_predict_reversed([seven], g, rng, seven) == two
    assert chc_predict_reversed([seven, two], g, rng, seven) == eight


def test_errors(rng):
    g = fig1_graph()
    with pytest.raises(GraphError):
        chc_predict([g.start, 99], g, rng)
    with pytest.raises(GraphError):
        chc_predict([g.start, as_ids([7])[0]], g, rng)
    with pytest.raises(GraphError):
        chc_predict_reversed([g.start], g, rng, as_ids([7])[0])


def test_forward_pattern(rng):
    rep = teacher_forced_eval(clever_hans(), dataset(3, 5, 3000), rng)
    acc = rep.position_accuracy
    assert acc[0] == acc[2] == acc[3] == acc[4] == 1.0
    assert abs(acc[1] - 1 / 3) < 4 * math.sqrt(2 / 9 / 3000)
    assert rep.sequence_accuracy == acc[1]
    assert rep.sequence_accuracy <= min(acc)


def test_m2_sequence_is_the_leading_guess(rng):
    rep = teacher_forced_eval(clever_hans(), dataset(4, 2, 4000), rng)
    assert rep.position_accuracy[0] == 1.0
    assert abs(rep.sequence_accuracy - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 4000)


def test_reversed_is_perfect(rng):
    rep = teacher_forced_eval(clever_hans(), dataset(4, 6, 1000, TargetVariant.REVERSED), rng)
    assert rep.sequence_accuracy == 1.0


def test_target_at_end_does_not_change_the_pattern(rng):
    rep = teacher_forced_eval(clever_hans(predict_target_at_end=True), dataset(2, 4, 500), rng)
    assert rep.position_accuracy[3] == 1.0


def test_report_rendering():
    rep = PositionReport((1.0, 0.5), 0.5, 4, (4, 2), 2)
    assert "sequence_accuracy=0.500000" in rep.render_kv()
    assert rep.render_table().splitlines()[2].split() == ["1", "1.0000"]


def test_empty_dataset(rng):
    assert teacher_forced_eval(clever_hans(), [], rng).sample_count == 0
