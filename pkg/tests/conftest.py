"""Shared fixtures. Corpora are expensive to build, so they are
session-scoped: `small_corpus` for module-level laws, `default_corpus`
(the shipped 600-utterance recipe, seed 0) for the heavier end-to-end
checks and the separability oracle.
"""

import pytest

from bam.synth import generate_corpus

# filled by tests/test_acceptance.py, printed uncaptured at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_corpus")
    return generate_corpus(str(root), 100, seed=3)


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("default_corpus")
    return generate_corpus(str(root), 600, seed=0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
