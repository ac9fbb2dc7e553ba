import numpy as np
import pytest

from stacktier.learners import LearnerSpec
from stacktier.tabular import Dataset, generate_synthetic, SyntheticSpec


def make_dataset(n=80, d=4, pos=0.3, seed=0, sep=1.5):
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * pos))
    y = np.zeros(n, dtype=int)
    y[rng.permutation(n)[:n_pos]] = 1
    X = rng.normal(size=(n, d))
    X[y == 1, : max(1, d // 2)] += sep
    return Dataset.from_arrays(X, y)


@pytest.fixture
def small_ds():
    return make_dataset()


@pytest.fixture(scope="session")
def tiny_grids():
    """Cheap grids used wherever a full stack has to be fitted."""
    return {
        "random_forest": [LearnerSpec.create("random_forest", n_trees=10, max_depth=d)
                          for d in (3, None)],
        "gbm": [LearnerSpec.create("gbm", n_rounds=15, learning_rate=lr, max_depth=2)
                for lr in (0.1, 0.3)],
        "xgb": [LearnerSpec.create("xgb", n_rounds=15, learning_rate=0.3, max_depth=2)],
        "linear_svc": [LearnerSpec.create("linear_svc", C=c, epochs=5) for c in (0.1, 1.0)],
    }


@pytest.fixture(scope="session")
def tiny_combiners():
    return {"LR": LearnerSpec.create("logreg", l2=1e-3),
            "RF": LearnerSpec.create("random_forest", n_trees=15)}


@pytest.fixture(scope="session")
def synth_small():
    return generate_synthetic(SyntheticSpec(n_rows=200, n_features=6, n_informative=3, seed=5))
