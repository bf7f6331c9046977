import numpy as np
import pytest

from trajdiff.engine import build_codec, train_model
from trajdiff.pca import canonicalize, fit_pca
from trajdiff.scenes import SceneParams, generate_scenario, write_corpus


@pytest.fixture(scope="session")
def small_corpus():
    return [generate_scenario(seed, SceneParams(n_agents=2)) for seed in range(150)]


@pytest.fixture(scope="session")
def small_pca(small_corpus):
    trajs = np.stack(
        [canonicalize(a.future, a.pose) for sc in small_corpus for a in sc.agents]
    )
    return fit_pca(trajs, 10)


@pytest.fixture(scope="session")
def small_model(small_corpus, small_pca):
    codec = build_codec(small_corpus, small_pca, sigma_data=0.5)
    return train_model(small_corpus, codec, steps=400, seed=13).model


@pytest.fixture(scope="session")
def artifacts_dir(tmp_path_factory, small_corpus, small_model):
    path = tmp_path_factory.mktemp("artifacts")
    write_corpus(path / "corpus.jsonl", small_corpus)
    small_model.save(path / "ckpt.json")
    return path
