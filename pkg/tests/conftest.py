import pytest

from tcmp import experiments as E


@pytest.fixture(scope="session")
def corpus():
    return E.corpus_dataset()


@pytest.fixture(scope="session")
def reference(tmp_path_factory):
    """The reference model trained once per session: ``(model, report)``."""
    path = tmp_path_factory.mktemp("reference") / "reference.ckpt"
    return E.train_reference(checkpoint_path=path)


@pytest.fixture(scope="session")
def stressor_suite(reference):
    return E.stressor_tracking(reference[0])
