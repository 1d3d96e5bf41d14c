from pathlib import Path

import numpy as np
import pytest

from podep.conllu import read_conllu
from podep.lexicon import build_lexicon
from podep.model import DropoutConfig, ModelConfig, Parser
from podep.parser_head import ScorerConfig
from podep.reader import ReaderConfig
from podep.tagger import TaggerConfig
from podep.training import TrainConfig, train

FIXTURES = Path(__file__).parent / "fixtures"
TOY = FIXTURES / "toy_train.conllu"


@pytest.fixture(scope="session")
def toy_corpus():
    return read_conllu(TOY)


@pytest.fixture(scope="session")
def toy_lexicon(toy_corpus):
    return build_lexicon(toy_corpus)


def micro_config(layers=1, pos=False, attention="soft", branch=None, dropout=0.0, hidden=5) -> ModelConfig:
    """A few-parameter float64 network for gradient checks."""
    return ModelConfig(
        reader=ReaderConfig(char_embed_dim=3, filter_spec=((1, 2), (2, 2), (3, 1)), projection_dim=4,
                            highway_layers=1),
        tagger=TaggerConfig(layers=layers, hidden=hidden, pos_head_enabled=pos, pos_branch_layer=branch),
        scorer=ScorerConfig(hidden=4, label_hidden=3, maxout_pieces=2, attention_mode=attention),
        dropout=DropoutConfig(dropout, dropout, dropout),
        dtype="float64",
    )


def randomize(model: Parser, seed: int, scale: float = 0.5) -> Parser:
    """Replace the tiny default init with O(1) values so gradients are not vanishingly small."""
    rng = np.random.default_rng(seed)
    for t in model.params:
        t.data = rng.standard_normal(t.shape) * scale
    return model


OVERFIT_TRAIN = TrainConfig(epochs=200, patience=200, seed=1, keep_best=False)


def overfit_config() -> ModelConfig:
    return ModelConfig.tiny(dropout=DropoutConfig(0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def overfit_result(toy_corpus):
    """The tiny model trained to memorize the 32-sentence fixture (shared, ~1-2 min)."""
    return train(overfit_config(), toy_corpus, toy_corpus, OVERFIT_TRAIN)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
