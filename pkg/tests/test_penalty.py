import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmfnl.errors import ParameterError, PenaltyDomainError
from rmfnl.penalty import KINDS, Penalty, derivative, make_penalty, tangent_offset, value

ALL = [make_penalty(k) for k in KINDS] + [
    make_penalty("lsp", 0.3), make_penalty("geman", 2.0), make_penalty("laplace", 0.5),
    make_penalty("mcp", 2.0, 0.1), make_penalty("scad", 3.7, 0.01)]
BREAKS = {"mcp": lambda p: [p.theta], "scad": lambda p: [1.0, p.theta]}


def test_lsp_values():
    p = make_penalty("lsp")
    assert value(p, 0.0) == 0.0
    assert value(p, 1.0) == pytest.approx(math.log(2), abs=1e-12)


def test_geman_values():
    p = make_penalty("geman", 0.5)
    assert value(p, 0.5) == pytest.approx(0.5)
    assert derivative(p, 0.0) == pytest.approx(2.0)


def test_laplace_derivative_at_zero():
    assert derivative(make_penalty("laplace"), 0.0) == pytest.approx(1.0)


def test_mcp_flat_branch():
    p = make_penalty("mcp", 1.0, 0.05)
    assert value(p, 2.0) == pytest.approx(0.6)


def test_l1_derivative_is_one():
    p = make_penalty("l1")
    a = np.linspace(0, 100, 1001)
    assert np.all(derivative(p, a) == 1.0)
    assert tangent_offset(p, 5.0) == 0.0


def test_tangent_offset_values():
    assert tangent_offset(make_penalty("lsp"), 1.0) == pytest.approx(math.log(2) - 0.5)
    for p in ALL:
        assert tangent_offset(p, 0.0) == 0.0


def test_defaults():
    assert make_penalty("lsp").theta == 1.0
    assert make_penalty("scad").theta == 2.5
    assert make_penalty("mcp").delta == 0.05


@pytest.mark.parametrize("p", ALL, ids=str)
def test_negative_argument_rejected(p):
    with pytest.raises(PenaltyDomainError):
        value(p, -0.1)
    with pytest.raises(PenaltyDomainError):
        derivative(p, np.array([1.0, -1.0]))
    with pytest.raises(PenaltyDomainError):
        tangent_offset(p, -2.0)


def test_parameter_validation():
    with pytest.raises(ParameterError):
        make_penalty("scad", 2.0)
    with pytest.raises(ParameterError):
        make_penalty("lsp", 0.0)
    with pytest.raises(ParameterError):
        make_penalty("mcp", 1.0, 0.0)
    with pytest.raises(ParameterError):
        make_penalty("huber")
    assert Penalty("LSP").kind == "lsp"


def test_scalar_and_array_outputs():
    p = make_penalty("lsp")
    assert isinstance(value(p, 1.0), float)
    assert value(p, np.array([0.0, 1.0])).shape == (2,)


@pytest.mark.parametrize("p", ALL, ids=str)
def test_zero_increasing_concave(p):
    a = np.linspace(0.0, 10.0, 1000)
    v = value(p, a)
    d = derivative(p, a)
    assert v[0] == 0.0
    assert np.all(np.diff(v) > 0)
    assert np.all(d > 0)
    assert np.all(np.diff(d) <= 1e-15)


@pytest.mark.parametrize("p", ALL, ids=str)
def test_majorization_pairs(p):
    rng = np.random.default_rng(7)
    alpha, beta = rng.uniform(0, 10, (2, 200))
    bound = derivative(p, beta) * alpha + tangent_offset(p, beta)
    assert np.all(value(p, alpha) <= bound + 1e-12)
    np.testing.assert_allclose(derivative(p, beta) * beta + tangent_offset(p, beta),
                               value(p, beta), atol=1e-9)


@given(st.sampled_from(ALL), st.floats(0, 50), st.floats(0, 50))
def test_majorization_property(p, alpha, beta):
    assert value(p, alpha) <= derivative(p, beta) * alpha + tangent_offset(p, beta) + 1e-12


@pytest.mark.parametrize("p", ALL, ids=str)
def test_derivative_matches_finite_differences(p):
    a = np.linspace(0.05, 9.95, 200)
    breaks = BREAKS.get(p.kind, lambda p: [])(p)
    a = a[np.all([np.abs(a - b) > 3e-3 for b in breaks] or [True], axis=0)]
    h = 1e-3
    fd = (8 * (value(p, a + h) - value(p, a - h)) - (value(p, a + 2 * h) - value(p, a - 2 * h))) / (12 * h)
    # the absolute floor only matters where phi' itself is below ~1e-8
    np.testing.assert_allclose(fd, derivative(p, a), rtol=1e-6, atol=1e-13)


@pytest.mark.parametrize("p", [x for x in ALL if x.kind in BREAKS], ids=str)
def test_one_sided_differences_at_breakpoints(p):
    h = 1e-7
    for b in BREAKS[p.kind](p):
        left = (value(p, b) - value(p, b - h)) / h
        right = (value(p, b + h) - value(p, b)) / h
        # left branch at the breakpoint itself
        assert derivative(p, b) == pytest.approx(left, rel=1e-5)
        assert derivative(p, b + 1e-9) == pytest.approx(right, rel=1e-5, abs=1e-6)
