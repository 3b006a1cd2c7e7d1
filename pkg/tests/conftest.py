import numpy as np
import pytest

from qpa.detector import DetectorConfig, GcnModel
from qpa.features import ExtractorParams
from qpa.graph import GraphConfig
from qpa.harness import build_init_features, build_training_corpus, train_and_save
from qpa.sim.benign import BenignFamily

INIT_SEED = 11
FAMILY_SEED = 7


@pytest.fixture(scope="session")
def params():
    return ExtractorParams()


@pytest.fixture(scope="session")
def graph_cfg():
    return GraphConfig()


@pytest.fixture(scope="session")
def det_cfg():
    return DetectorConfig()


@pytest.fixture(scope="session")
def family():
    return BenignFamily(FAMILY_SEED)


@pytest.fixture(scope="session")
def init_features(params):
    """The standard 1000-image benign initialization set."""
    return build_init_features(params, 1000, INIT_SEED, 64, FAMILY_SEED)


@pytest.fixture(scope="session")
def small_init_features(params):
    """A 200-image init set for cheap store construction in unit tests."""
    return build_init_features(params, 200, INIT_SEED + 1, 64, FAMILY_SEED)


@pytest.fixture(scope="session")
def training_corpus(params, graph_cfg, init_features):
    return build_training_corpus(params, graph_cfg, init_features, seed=5)


@pytest.fixture(scope="session")
def trained_model(training_corpus, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "model.json"
    model, report = train_and_save(training_corpus, path, seed=0, epochs=250, learning_rate=1.0)
    model.report = report
    model.path = path
    return model
