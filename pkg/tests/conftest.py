import numpy as np
import pytest

from pathstar.graph import TaskInstance, as_ids, fig1_graph
from pathstar.tokenizer import PermMode, TokenizationOptions, serialize

EDGE_CAPTION = "BOS 9 1 | 10 6 | 8 2 | 2 7 | 1 3 | 4 8 | 4 5 | 5 10 | 4 9 | / 4 7 = 4 8 2 7 EOS"
ARM_CAPTION = "BOS 4 9 | 9 1 | 1 3 | 4 8 | 8 2 | 2 7 | 4 5 | 5 10 | 10 6 | / 4 7 = 4 8 2 7 EOS"


def caption_edges(caption: str) -> list[tuple[int, int]]:
    words = caption.split()
    g = words[1 : words.index("/")]
    return [tuple(as_ids([int(g[i]), int(g[i + 1])])) for i in range(0, len(g), 3)]


@pytest.fixture
def fig1():
    g = fig1_graph()
    return TaskInstance.for_target(g, as_ids([7])[0])


@pytest.fixture
def fig1_edge_sample(fig1):
    return serialize(fig1, caption_edges(EDGE_CAPTION), TokenizationOptions(perm_mode=PermMode.EDGE))


@pytest.fixture
def fig1_arm_sample(fig1):
    return serialize(fig1, caption_edges(ARM_CAPTION), TokenizationOptions(perm_mode=PermMode.ARM))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is not None:
        _criteria.setdefault(crit, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_criteria):
        outcomes = _criteria[crit]
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {crit}: {status} ({len(outcomes)} check(s))")
