# test_api.py
import re

import pytest
from fastapi.testclient import TestClient

from app.main import app

BASE_URL = "/api/v1"


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_health_check(client):
    response = client.get("/")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "message": "Welcome to the ReservoirForge API v1.0.0!"}
    assert re.fullmatch(r"[0-9a-f]{32}", response.headers["X-Run-Id"]), "every response carries its run id"


# --- Mean field ---

def test_steady_state_u1(client):
    response = client.post(f"{BASE_URL}/meanfield/steady-state", json={"params": {"mu": 2.0, "kappa": 1.0}})
    assert response.status_code == 200, response.text
    body = response.json()
    assert body["phase"] == "u1"
    assert body["amp_signal"] == pytest.approx(1.0, abs=1e-9)
    assert body["pump_amp"]["im"] == pytest.approx(1.0, abs=1e-9)
    assert body["kappa"] == 1.0 and body["mu_cr"] == 1.0


def test_steady_state_markovian_kappa_is_null(client):
    response = client.post(f"{BASE_URL}/meanfield/steady-state", json={"params": {"mu": 0.5, "tau_r": 0.0}})
    assert response.status_code == 200
    assert response.json()["kappa"] is None


def test_steady_state_rejects_bad_params(client):
    response = client.post(f"{BASE_URL}/meanfield/steady-state", json={"params": {"gammaP": -1.0, "n_th_i": -2}})
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["error"] == "ParameterError"
    codes = {v["code"] for v in detail["violations"]}
    assert {"NonPositiveRate", "NegativeOccupancy"} <= codes


def test_steady_state_rejects_unknown_key(client):
    response = client.post(f"{BASE_URL}/meanfield/steady-state", json={"params": {"bogus": 1.0}})
    assert response.status_code == 422


def test_branch_out_of_regime(client):
    response = client.post(f"{BASE_URL}/meanfield/steady-state",
                           json={"params": {"mu": 0.5, "kappa": 1.0}, "phase": "u1"})
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "OutOfRegime"


def test_phase_diagram(client):
    payload = {"mu_grid": [0.0, 1.5], "kappa_grid": [0.2, 1.0]}
    response = client.post(f"{BASE_URL}/meanfield/phase-diagram", json=payload)
    assert response.status_code == 200
    rows = response.json()
    assert [(r["kappa"], r["mu"], r["phase"]) for r in rows] == [
        (0.2, 0.0, "disordered"), (0.2, 1.5, "u1xz2"), (1.0, 0.0, "disordered"), (1.0, 1.5, "u1"),
    ]
    assert all(r["max_re_lambda"] < 0 for r in rows)


def test_phase_diagram_bad_grid(client):
    response = client.post(f"{BASE_URL}/meanfield/phase-diagram", json={"mu_grid": [1.0, 0.5], "kappa_grid": [1.0]})
    assert response.status_code == 422
    assert response.json()["detail"]["violations"][0]["code"] == "BadGrid"


# --- Linear response ---

def test_eigenspectrum(client):
    response = client.post(f"{BASE_URL}/linres/eigenspectrum", json={"params": {"mu": 0.5, "kappa": 1.0}})
    assert response.status_code == 200
    body = response.json()
    assert len(body["eigenvalues"]) == len(body["labels"]) == 10
    assert body["stable"] and body["max_re"] < 0
    assert body["frame"] == "static"


def test_eigenflow(client):
    payload = {"kappa": 0.5, "mu_grid": [0.5, 1.5], "phases": ["disordered", "u1"]}
    response = client.post(f"{BASE_URL}/linres/eigenflow", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["mu_cr"] == 1.0
    errors = {(p["mu"], p["phase"]): p["error"] for p in body["points"]}
    assert errors[(0.5, "u1")] == "OutOfRegime"
    assert errors[(1.5, "u1")] is None


# --- Spectra ---

def test_variances_closed_form(client):
    payload = {"params": {"mu": 0.5, "kappa": 1.0}, "method": "closed-form"}
    response = client.post(f"{BASE_URL}/spectra/variances", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["quadratures"]["x+"]["normalized"] == pytest.approx(8.0 / 15.0, rel=1e-9)
    assert body["squeezed_label"] in ("x+", "y-")


def test_variances_unknown_method(client):
    response = client.post(f"{BASE_URL}/spectra/variances", json={"method": "guess"})
    assert response.status_code == 422


def test_negativity_with_comparator(client):
    payload = {"mu_grid": [0.3], "kappa_grid": [0.2], "markovian_comparator": True}
    response = client.post(f"{BASE_URL}/spectra/negativity", json=payload)
    assert response.status_code == 200
    rows = response.json()
    assert len(rows) == 2
    comparator = [r for r in rows if r["comparator"]]
    assert len(comparator) == 1 and comparator[0]["kappa"] is None
    assert all(r["e_n"] > 0 for r in rows)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
