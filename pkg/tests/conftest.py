import numpy as np
import pytest

from src.services.shapes import circle, sphere


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def unit_circle():
    return circle(1.0, 256)


@pytest.fixture(scope="session")
def unit_sphere():
    return sphere(2, 1.0, 257)


@pytest.fixture(autouse=True)
def _output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("MCFLAB_OUTPUT_ROOT", str(tmp_path / "runs"))
