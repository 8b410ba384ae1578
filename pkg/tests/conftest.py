from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from tempest import fixtures

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("corpus")


@pytest.fixture(scope="session")
def mp3_files(corpus_dir) -> list[Path]:
    return fixtures.mp3_corpus(corpus_dir / "mp3")


@pytest.fixture(scope="session")
def opus_files(corpus_dir) -> list[Path]:
    return fixtures.opus_corpus(corpus_dir / "opus")


@pytest.fixture(scope="session")
def toy_manifest(corpus_dir) -> Path:
    return fixtures.toy_mp3_dataset(corpus_dir / "toy", per_class=16, frames=6)
