import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikereset.model import (InvalidParams, Model, UnknownFamily, make_builtin_model, model_from_config,
                              validate_model)


def test_linear_default_values(linear):
    assert linear.f0 == 1.0 and linear.f1 == -1.0 and linear.h0 == 1.0
    assert linear.h1prime == pytest.approx(-1.0, abs=1e-12)
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(linear.f(x), 1 - 2 * x)
    np.testing.assert_allclose(linear.h(x), 1 - x)


def test_linear_other_params():
    m = make_builtin_model("linear", [2.0, -0.5, 3.0])
    assert (m.f0, m.f1, m.h0) == (2.0, -0.5, 3.0)
    assert m.h1prime == pytest.approx(-3.0, abs=1e-12)


@pytest.mark.parametrize("params", [(1.0, 1.0, 1.0), (0.0, -1.0, 1.0), (1.0, -1.0, 0.0), (1.0, -1.0, -2.0)])
def test_linear_rejects_inadmissible(params):
    with pytest.raises(InvalidParams):
        make_builtin_model("linear", params)


def test_unknown_family():
    with pytest.raises(UnknownFamily):
        make_builtin_model("cubic-spline", [1, 2, 3])


def test_quadratic_h_family():
    m = make_builtin_model("quadratic-h", [1.0, -1.0, 1.0, 0.5])
    assert m.h1prime == pytest.approx(-1.5)
    assert validate_model(m).ok
    with pytest.raises(InvalidParams):
        make_builtin_model("quadratic-h", [1.0, -1.0, 1.0, -1.0])


def test_custom_poly_family():
    # f = 1 - 3x, h = 2 - 2x
    m = make_builtin_model("custom-poly", [2, 1.0, -3.0, 2.0, -2.0])
    assert (m.f0, m.f1, m.h0) == (1.0, -2.0, 2.0)
    with pytest.raises(InvalidParams):
        make_builtin_model("custom-poly", [5, 1.0, 2.0])


def test_validate_flags_double_root():
    m = Model(f=lambda x: 1 - 2 * np.asarray(x), h=lambda x: (1 - np.asarray(x)) ** 2)
    rep = validate_model(m, 1000)
    assert not rep.ok
    assert "h'(1)!=0" in [v[0] for v in rep.violations]


def test_validate_flags_negative_f0():
    m = Model(f=lambda x: -1.0 + 0 * np.asarray(x), h=lambda x: 1 - np.asarray(x))
    rep = validate_model(m, 10)
    assert "f(0)>0" in [v[0] for v in rep.violations]


def test_validate_flags_h_sign_change():
    m = Model(f=lambda x: 1 - 2 * np.asarray(x), h=lambda x: (1 - np.asarray(x)) * (np.asarray(x) - 0.5))
    names = [v[0] for v in validate_model(m).violations]
    assert "h(x)>0" in names


def test_validate_grid_size():
    with pytest.raises(ValueError):
        validate_model(make_builtin_model(), 1)


def test_model_from_config():
    m = model_from_config({"family": "linear", "params": [2.0, -1.0, 1.0]})
    assert m.f0 == 2.0


@settings(max_examples=40, deadline=None)
@given(f0=st.floats(0.1, 5), f1=st.floats(-5, -0.1), h0=st.floats(0.1, 5))
def test_accepted_models_have_positive_h(f0, f1, h0):
    m = make_builtin_model("linear", (f0, f1, h0))
    grid = np.linspace(0, 1 - 1e-6, 10_000)
    assert np.min(m.h(grid)) > 0
    assert m.f0 == pytest.approx(f0, abs=1e-12)
    assert m.f1 == pytest.approx(f1, abs=1e-12)
    assert m.h1prime == pytest.approx(-h0, abs=1e-12)
