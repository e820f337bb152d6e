import os
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

# filled by test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_experiment(tmp_path_factory):
    """The full toy run (seed 0): corpus, both detectors, trained generator, measurements.

    Shared by the acceptance criteria and the regularization-weight comparison.
    """
    from advpost.toy import ToySetup, run_toy, toy_corpus, train_toy_detectors

    t0 = time.perf_counter()
    setup = ToySetup(seed=0)
    corpus = toy_corpus(setup)
    detectors = train_toy_detectors(corpus, setup)
    out_dir = tmp_path_factory.mktemp("toy")
    result = run_toy(setup, out_dir=out_dir, corpus=corpus, detectors=detectors)
    return SimpleNamespace(setup=setup, corpus=corpus, detectors=detectors, result=result, out_dir=out_dir,
                           seconds=time.perf_counter() - t0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
