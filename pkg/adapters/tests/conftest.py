import pytest

from meldrefine_adapters.media import make_smoke_clip


@pytest.fixture(scope="session")
def smoke_clips(tmp_path_factory):
    """The 3-clip smoke set every adapter is validated against."""
    root = tmp_path_factory.mktemp("smoke")
    return [
        make_smoke_clip(root / f"clip{i}", seed=10 + i, n_faces=2 + i % 2, speaking_lane=i % 2)
        for i in range(3)
    ]


@pytest.fixture(scope="session")
def vocab_file(tmp_path_factory):
    from meldrefine.transcript import Vocabulary

    path = tmp_path_factory.mktemp("vocab") / "vocab.json"
    Vocabulary.default().save(path)
    return path
