import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def fixture_images() -> list[tuple[str, str]]:
    paths = sorted((FIXTURES / "images").glob("*.png"))
    return [(p.stem, str(p)) for p in paths]


@pytest.fixture(scope="session")
def tiny_net_path(tmp_path_factory) -> str:
    from fixture_net import build_tiny_net_file

    path = tmp_path_factory.mktemp("model") / "tiny_net.pt"
    return build_tiny_net_file(path)
