import pytest
from hypothesis import settings

from fewcap.config import TrainConfig
from fewcap.data import ToyGrammar, synth_data
from fewcap.pipeline import fit_scorers

settings.register_profile("fewcap", deadline=None, max_examples=50)
settings.load_profile("fewcap")


@pytest.fixture(scope="session")
def grammar():
    return ToyGrammar.default()


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory, grammar):
    """200-video toy corpus on disk; returns (records, directory)."""
    out = tmp_path_factory.mktemp("toy200")
    return synth_data(grammar, 200, 1, out), out


@pytest.fixture(scope="session")
def scorers(toy_corpus, grammar):
    records, _ = toy_corpus
    return fit_scorers(records, grammar.lexicon(), TrainConfig.desk())
