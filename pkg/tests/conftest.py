import numpy as np
import pytest

from viewadapt.evalbench import crop_feature_matrix
from viewadapt.synthdata import DatasetConfig, generate_dataset


@pytest.fixture(scope="session")
def dataset():
    """The default desk-scale dataset, generated once per session."""
    return generate_dataset(DatasetConfig())


@pytest.fixture(scope="session")
def hog_matrix(dataset):
    return crop_feature_matrix(dataset, "hog")


@pytest.fixture(scope="session")
def channel_matrix(dataset):
    return crop_feature_matrix(dataset, "channels")


def auc(scores, labels):
    """Mann-Whitney AUC with ties counted half."""
    s = np.asarray(scores)
    pos, neg = s[np.asarray(labels) > 0], s[np.asarray(labels) < 0]
    return float(((pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum())
                 / (len(pos) * len(neg)))


@pytest.fixture(scope="session")
def model0(dataset, hog_matrix):
    """Linear HOG model trained on every elevation-0 crop."""
    from viewadapt.classifier import train_linear
    from viewadapt.geometry import CameraPose

    idx = dataset.select(elevation=0.0)
    return train_linear(hog_matrix[idx], dataset.labels(idx), seed=0, training_view=CameraPose(0.0))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
