import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from src.app import app
from src.services.shapes import circle, cylinder_profile
from src.utils.io import write_surface_csv


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert "running" in response.json()["message"]


def test_bundled_scenarios(client):
    response = client.get("/scenario/bundled")
    assert response.status_code == 200
    assert "spectral_suite" in response.json()["scenarios"]


def test_kernel_basis(client):
    response = client.get("/spectral/kernel-basis", params={"n": 2, "k": 1})
    body = response.json()
    assert response.status_code == 200
    assert body["dimension"] == 3 == len(body["elements"])


def test_kernel_basis_rejects_bad_k(client):
    assert client.get("/spectral/kernel-basis", params={"n": 2, "k": 5}).status_code == 400


def test_frequency_of_power(client):
    response = client.post("/spectral/frequency", json={"n": 2, "degree": 2.0, "radii": [1.0, 2.0]})
    body = response.json()
    assert body["success"]
    assert [row["U"] for row in body["rows"]] == pytest.approx([2.0, 2.0], rel=1e-8)


def test_frequency_at_origin_fails_softly(client):
    body = client.post("/spectral/frequency", json={"function": "hermite", "multi_index": [1], "n": 1,
                                                    "radii": [0.0]}).json()
    assert not body["success"]
    assert body["error"]


def test_dichotomy(client):
    body = client.post("/spectral/dichotomy", json={"lam": 0.0, "u0": 1.0, "du0": 1.0}).json()
    assert body["success"]
    assert body["verdict"] == "exponential"
    assert body["rows"][0]["r"] == pytest.approx(1.0)


def test_dichotomy_rejects_bad_interval(client):
    response = client.post("/spectral/dichotomy", json={"r0": 5.0, "r_max": 2.0})
    assert response.status_code == 400


def test_analyze_circle(client):
    radius = 1.3
    samples = circle(radius, 256).samples.tolist()
    body = client.post("/geometry/analyze", json={"samples": samples, "k": 0}).json()
    assert body["success"]
    assert body["n"] == 1
    assert body["gaussian_area"] == pytest.approx(2.0 * math.pi * radius * math.exp(-radius ** 2 / 4.0), rel=1e-6)
    assert body["max_mean_curvature"] == pytest.approx(1.0 / radius, rel=1e-8)
    assert body["cylinder_fit"]["measured_radius"] == pytest.approx(radius, rel=1e-6)


def test_analyze_clockwise_curve_fails_softly(client):
    samples = circle(1.0, 64).samples[::-1].tolist()
    body = client.post("/geometry/analyze", json={"samples": samples}).json()
    assert not body["success"]


def test_profile_needs_dimension(client):
    samples = cylinder_profile(2).samples.tolist()
    response = client.post("/geometry/analyze", json={"kind": "profile_of_revolution", "samples": samples})
    assert response.status_code == 400


def test_analyze_csv_upload(client, tmp_path):
    path = write_surface_csv(cylinder_profile(2), tmp_path / "cylinder.csv")
    with open(path, "rb") as f:
        response = client.post("/geometry/analyze-csv", files={"file": ("cylinder.csv", f, "text/csv")},
                               data={"n": "2", "ends": "free", "k": "1"})
    body = response.json()
    assert body["success"]
    assert body["cylinder_fit"]["measured_radius"] == pytest.approx(math.sqrt(2.0), abs=1e-6)


def test_analyze_csv_rejects_other_files(client):
    response = client.post("/geometry/analyze-csv", files={"file": ("notes.txt", b"x", "text/plain")})
    assert response.status_code == 400


def test_run_needs_exactly_one_source(client):
    assert client.post("/scenario/run", json={}).status_code == 400
    config = {"name": "x", "checks": [{"name": "rayleigh_bound"}]}
    assert client.post("/scenario/run", json={"bundled": "spectral_suite", "config": config}).status_code == 400


def test_run_inline_scenario(client):
    config = {"name": "api_smoke", "checks": [{"name": "synthetic_exponent"}, {"name": "rayleigh_bound"}]}
    body = client.post("/scenario/run", json={"config": config, "seed": 5}).json()
    assert body["success"]
    assert body["report"]["seed"] == 5
    assert [c["verdict"] for c in body["report"]["checks"]] == ["pass", "pass"]


def test_run_rejects_unknown_check(client):
    config = {"name": "x", "checks": [{"name": "bogus"}]}
    response = client.post("/scenario/run", json={"config": config})
    assert response.status_code == 400
    assert "checks[0].name" in response.json()["detail"]


def test_invalid_samples_are_unprocessable(client):
    assert client.post("/geometry/analyze", json={"samples": np.zeros((2, 2)).tolist()}).status_code == 422
