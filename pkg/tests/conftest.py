import pytest

from roll.synth import build_corpus


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    build_corpus(root, n_scenes=8, n_episodes=2, seed=5)
    return root
