import numpy as np
import pytest

from cachelm.corpus import build_vocabulary, chunk_documents, tokenize
from cachelm.infoweight import compute_info_weights
from cachelm.lstm import LstmModel, TrainConfig, train
from cachelm.synthetic import toy_corpus

TOY_SEED = 0
TOY_CHUNK = 50
TOY_HIDDEN = 128


class Toy:
    """The desk-scale topical corpus with everything derived from it."""

    def __init__(self, seed=TOY_SEED):
        self.language, self.train_lines, self.valid_lines, self.test_lines = toy_corpus(seed)
        self.vocab = build_vocabulary(self.train_lines)
        self.train = tokenize(self.train_lines, self.vocab)
        self.valid = tokenize(self.valid_lines, self.vocab)
        self.test = tokenize(self.test_lines, self.vocab)
        self.iw = compute_info_weights(chunk_documents(self.train, TOY_CHUNK), self.vocab)


@pytest.fixture(scope="session")
def toy():
    return Toy()


@pytest.fixture(scope="session")
def toy_model(toy):
    config = TrainConfig(hidden_size=TOY_HIDDEN, seed=1)
    model = LstmModel.initialize(len(toy.vocab), config, toy.vocab)
    best, history = train(model, toy.train, toy.valid, config)
    best.history = history
    return best


def small_model(V=7, H=4, E=None, seed=0, scale=0.5, eos_id=None):
    config = TrainConfig(hidden_size=H, embedding_size=E or H, init_range=scale, seed=seed)
    model = LstmModel.initialize(V, config, rng=np.random.default_rng(seed))
    model.eos_id = V - 1 if eos_id is None else eos_id
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, echoed after the test summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
