from pathlib import Path

import numpy as np
import pytest

from cgbert import numerics as nx
from cgbert.fixture import make_corpus
from cgbert.text import build_vocab

FIXTURE = Path(__file__).parent / "data" / "toy_grammar.jsonl"


@pytest.fixture(scope="session")
def fixture_path():
    return FIXTURE


@pytest.fixture
def float64():
    with nx.precision(np.float64):
        yield


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(per_intent=4, seed=0)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab([(e.text, e.intent) for e in small_corpus])


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
