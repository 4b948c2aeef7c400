import pathlib

import numpy as np
import pytest

import mlchain

FIXTURES = pathlib.Path(__file__).resolve().parents[2] / "fixtures"


def test_two_state_golden_value():
    report = mlchain.verify(FIXTURES / "two_state.json")
    assert report["format"] == "mlchain-report"
    assert report["version"] == mlchain.FORMAT_VERSION
    assert report["status"] == "Optimal"
    assert report["value"] == pytest.approx(2.0, abs=1e-9)


def test_problem_attributes_and_point_value():
    p = mlchain.load_problem(str(FIXTURES / "special" / "fixed_P_r.json"))
    assert (p.n_states, p.m_features) == (3, 2)
    assert p.problem_class == "ValueClosedForm"
    assert p.validate() == []
    report = mlchain.verify(p, gap=1e-9)
    x = np.array(report["witness"]["x"])
    assert p.value_at(x) == pytest.approx(report["value"], rel=1e-9)


def test_worked_example_bounds_only():
    report = mlchain.verify(FIXTURES / "worked_example" / "case2.json", bounds_only=True)
    ledger = report["ledger"]
    assert report["status"] == "BoundsOnly"
    assert ledger["hull_certified"]
    assert ledger["spectral_radius"] == pytest.approx(0.99, abs=0.01)


def test_ablation_keeps_the_optimum():
    path = FIXTURES / "special" / "fixed_none.json"
    full = mlchain.verify(path, gap=1e-9)
    ablated = mlchain.verify(path, gap=1e-9, ablate="v-tighten")
    assert ablated["value"] == pytest.approx(full["value"], rel=1e-6)


def test_interval_helpers():
    pmax = np.array([[0.6, 0.5], [0.4, 0.6]])
    assert mlchain.spectral_radius(pmax) == pytest.approx(0.6 + np.sqrt(0.2), abs=1e-9)
    assert not mlchain.is_interval_m_matrix(pmax, 0.97)
    eye = np.eye(2)
    lo, hi = mlchain.gauss_seidel(eye, eye, np.array([1.0, 2.0]), np.array([1.0, 3.0]),
                                  np.array([-10.0, -10.0]), np.array([10.0, 10.0]))
    assert list(lo) == [1.0, 2.0] and list(hi) == [1.0, 3.0]
    assert mlchain.sigmoid_envelope_gap(-6.0, 6.0, 8) <= 0.05


def test_check_model_on_a_linear_fixture():
    rep = mlchain.check_model(FIXTURES / "worked_example" / "identity6.json", np.zeros(6), np.ones(6), samples=20)
    assert rep["passed"] and rep["max_deviation"] <= 1e-9


def test_errors_surface_as_exceptions(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "mlchain-problem"}')
    with pytest.raises(mlchain.Error, match="version"):
        mlchain.load_problem(str(bad))
    with pytest.raises(mlchain.Error):
        mlchain.load_problem(str(tmp_path / "missing.json"))
