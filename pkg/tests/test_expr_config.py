import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from obstaclelab.config import RunConfig, load_config
from obstaclelab.expr import Expression, ExpressionError

BASE = {"dim": 2, "box": [[-1, 1], [-1, 1]], "h": 0.125, "boundary": "0.5*x1^2"}


def ev(text, t=None, *coords):
    return Expression(text).evaluate(t, coords)


def test_precedence_and_power():
    assert ev("0.5*x1^2", None, np.array(3.0)) == 4.5
    assert ev("2^3^2") == 2.0**9
    assert ev("-x1^2", None, np.array(2.0)) == -4.0
    assert ev("2**3") == 8.0
    assert ev("1 - 2 / 4 + 3 * 2") == 6.5


def test_functions_and_constants():
    x = np.array([-1.0, 0.5, 2.0])
    assert np.array_equal(ev("max(x1, 0)", None, x), [0.0, 0.5, 2.0])
    assert np.array_equal(ev("min(x1, 1, 0.7)", None, x), [-1.0, 0.5, 0.7])
    assert np.array_equal(ev("abs(x1)", None, x), [1.0, 0.5, 2.0])
    assert ev("pi") == pytest.approx(np.pi) and ev("e") == pytest.approx(np.e)


def test_time_and_broadcast():
    e = Expression("t + 0*x1")
    assert e.uses_time
    x, y = np.meshgrid(np.arange(3.0), np.arange(2.0), indexing="ij")
    assert np.array_equal(e.schedule()(0.5, x, y), np.full((3, 2), 0.5))
    assert np.array_equal(Expression("1").spatial()(x, y), np.ones((3, 2)))
    with pytest.raises(ExpressionError):
        Expression("t").evaluate(None, (x,))


@pytest.mark.parametrize("bad", ["__import__('os')", "x1.real", "x4", "sin(x1)", "x1 if t else 0",
                                 "[1, 2]", "max(x1)", "abs(x1, x2)", "x1 // 2", "'a'", "True",
                                 "max(x1, key=1)", "1 +"])
def test_rejects(bad):
    with pytest.raises(ExpressionError):
        Expression(bad)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_matches_python_arithmetic(a, b):
    got = ev(f"({a!r})*x1 - ({b!r})*x2 + max(x1, x2)", None, np.array(a), np.array(b))
    assert got == pytest.approx(a * a - b * b + max(a, b), abs=1e-9)


def test_config_roundtrip(tmp_path):
    d = dict(BASE, thresholds={"rho_reg": 0.04}, omega="auto", t_values={"start": 0, "stop": 1,
                                                                           "count": 3})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    cfg = load_config(p)
    g = cfg.grid()
    assert g.extent == (17, 17)
    assert cfg.threshold_obj().rho_reg == 0.04
    assert cfg.radii_list() == [4.0, 2.0, 1.0]
    assert 1.5 < cfg.omega_for(g) < 2
    assert cfg.t_list() == [0.0, 0.5, 1.0]
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("patch", [{"dim": 4}, {"box": [[-1, 1]]}, {"boundary": "x9"},
                                   {"thresholds": {"rho": 1}}, {"seedless": False},
                                   {"colour": "red"}])
def test_config_rejects(patch):
    with pytest.raises(ValueError):
        RunConfig.from_dict(dict(BASE, **patch))
