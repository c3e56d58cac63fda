import time

import numpy as np
import pytest

from ocrk.recognizer import ConvRecognizer, CurriculumConfig, TrainConfig, curriculum_train, load_dataset, train_char
from ocrk.synthdata import SynthConfig, generate_corpus
from ocrk.types import Alphabet

# Desk-scale training budget shared by the CTC and CHAR models.
WARMUP, EPOCHS = 5, 20


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    results = item.config._criteria
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        results[number] = (title, report.outcome, item.nodeid)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config._criteria
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, outcome, _ = results[number]
        status = "PASS" if outcome == "passed" else "FAIL" if outcome == "failed" else outcome.upper()
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")


@pytest.fixture(scope="session")
def alphabet():
    return Alphabet.default()


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The default corpus: 50-word vocabulary, 2000 train / 200 test words."""
    out = tmp_path_factory.mktemp("corpus")
    manifests = generate_corpus(SynthConfig(), out)
    return out, manifests


@pytest.fixture(scope="session")
def datasets(corpus, alphabet):
    _, manifests = corpus
    return load_dataset(manifests["train"].recognition, alphabet), load_dataset(manifests["test"].recognition, alphabet)


@pytest.fixture(scope="session")
def ctc_model(datasets, alphabet):
    from threadpoolctl import threadpool_limits

    train, _ = datasets
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        model = curriculum_train(train, CurriculumConfig(warmup_epochs=WARMUP, epochs=EPOCHS), alphabet, TrainConfig())
    model.train_seconds = time.perf_counter() - start
    return model


@pytest.fixture(scope="session")
def char_model(datasets, alphabet):
    from threadpoolctl import threadpool_limits

    train, _ = datasets
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        model = train_char(train, WARMUP + EPOCHS, 0.05, alphabet, TrainConfig(), decay_period=15)
    model.train_seconds = time.perf_counter() - start
    return model


@pytest.fixture(scope="session")
def untrained_model(alphabet):
    return ConvRecognizer(alphabet, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
