import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from styleumt.corpus import StyleCorpus, build_vocabulary, generate_synthetic, task_labels

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_task():
    X, Y, task = generate_synthetic(3, n_sentences=300, lexicon_size=6, nouns_per_pair=2)
    return X, Y, task


@pytest.fixture(scope="session")
def small_vocab(small_task):
    X, Y, _ = small_task
    return build_vocabulary(X, Y)


def corpus_pair(xs, ys):
    src, tgt = task_labels()
    return StyleCorpus(src, tuple(tuple(s) for s in xs)), StyleCorpus(tgt, tuple(tuple(s) for s in ys))


def rng(seed=0):
    return np.random.default_rng(seed)
