import pytest
import torch

from graphmoco.corpus import synth_corpus
from graphmoco.graph_encoder import build_function_encoder
from graphmoco.normalizer import build_vocab


@pytest.fixture(scope="session")
def tiny_corpus():
    return synth_corpus(10, 3, seed=0)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    return build_vocab(tiny_corpus)


@pytest.fixture()
def small_encoder(tiny_vocab):
    return build_function_encoder(
        tiny_vocab, seed=7, d=8, filters_per_size=8, hidden_dim=16, out_dim=32
    )


def make_small_encoder(vocab, seed=7, **overrides):
    kwargs = dict(d=8, filters_per_size=8, hidden_dim=16, out_dim=32)
    kwargs.update(overrides)
    return build_function_encoder(vocab, seed=seed, **kwargs)


_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if "test_acceptance.py" in report.nodeid and "test_criterion" in report.nodeid:
        _ACCEPTANCE_RESULTS[report.nodeid.split("::")[-1]] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{name}: {outcome}")
