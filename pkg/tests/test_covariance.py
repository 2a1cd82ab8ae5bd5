import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmslift.correlators import CorrelatorKernel, smear
from kmslift.covariance import (
    AlgebraElement,
    EmbeddingMorphism,
    QuasiFreeState,
    alpha_apply,
    commutation_check,
    compose,
    generator_deviation,
    observable_class,
    project_element,
    state_pullback,
)
from kmslift.errors import ChartError
from kmslift.geometry import PLANE, TWO_PI, Chart, Diamond, SpacetimePoint
from kmslift.smearing import bump_pair_in, pushforward_pi_inv

CYL = Chart.cylinder()
THERMAL = QuasiFreeState.plane(CorrelatorKernel.plane_thermal(1.0))


def random_function(rng, chart=PLANE):
    t0 = rng.uniform(-1, 1)
    x0 = rng.uniform(0, TWO_PI) if chart.is_cylinder else rng.uniform(-3, 3)
    d = Diamond(SpacetimePoint(t0, x0, chart), 0.5, 0.5)
    du, dv = rng.uniform(-0.1, 0.1, 2)
    ru, rv = rng.uniform(0.2, 0.35, 2)
    return bump_pair_in(d, du, dv, ru, rv, amplitude=rng.uniform(0.5, 2.0))


def random_element(rng, chart=PLANE, degree=None):
    k = rng.integers(1, 4) if degree is None else degree
    return AlgebraElement(tuple(random_function(rng, chart) for _ in range(k)), chart)


def test_identity_is_exact():
    rng = np.random.default_rng(0)
    for chart in (PLANE, CYL):
        a = random_element(rng, chart)
        assert alpha_apply(EmbeddingMorphism.identity(chart), a) == a
        assert EmbeddingMorphism.identity(chart).is_identity


def test_alpha_is_multiplicative():
    rng = np.random.default_rng(1)
    psi = EmbeddingMorphism.lift(TWO_PI, 1, 0.4)
    a, b = random_element(rng, CYL), random_element(rng, CYL)
    assert alpha_apply(psi, a * b) == alpha_apply(psi, a) * alpha_apply(psi, b)


def test_branch_one_shifts_support_by_period():
    rng = np.random.default_rng(2)
    a = random_element(rng, CYL, 1)
    f0 = alpha_apply(EmbeddingMorphism.lift(TWO_PI, 0), a).generators[0]
    f1 = alpha_apply(EmbeddingMorphism.lift(TWO_PI, 1), a).generators[0]
    assert f1.region.center.x - f0.region.center.x == pytest.approx(TWO_PI)
    assert f1.region.center.t == f0.region.center.t


def test_compose_examples():
    psi = EmbeddingMorphism.plane_map(2, 0.3)
    assert compose(EmbeddingMorphism.identity(), psi) == psi
    assert compose(psi, EmbeddingMorphism.identity()) == psi
    three = compose(EmbeddingMorphism.plane_map(1), EmbeddingMorphism.plane_map(2))
    assert three.branch.n == 3 and three.time_shift.tau == 0.0
    lifted = compose(EmbeddingMorphism.plane_map(1, 0.5), EmbeddingMorphism.lift(TWO_PI, 2, 0.25))
    assert lifted.source == CYL and lifted.target == PLANE
    assert lifted.branch.n == 3 and lifted.time_shift.tau == pytest.approx(0.75)


def test_compose_rejects_mismatched_charts():
    with pytest.raises(ChartError):
        compose(EmbeddingMorphism.lift(), EmbeddingMorphism.plane_map(1))
    with pytest.raises(ChartError):
        alpha_apply(EmbeddingMorphism.lift(), random_element(np.random.default_rng(3), PLANE))
    with pytest.raises(ChartError):
        lift = EmbeddingMorphism.lift()
        EmbeddingMorphism(lift.branch, lift.time_shift, PLANE, CYL)


def test_compose_is_associative():
    a = EmbeddingMorphism.lift(TWO_PI, -1, 0.2)
    b = EmbeddingMorphism.plane_map(2, -0.7)
    c = EmbeddingMorphism.plane_map(-4, 1.1)
    assert compose(c, compose(b, a)) == compose(compose(c, b), a)


def test_composition_law_on_random_elements():
    rng = np.random.default_rng(4)
    for _ in range(20):
        psi = EmbeddingMorphism.lift(TWO_PI, int(rng.integers(-2, 3)), rng.uniform(-2, 2))
        psi2 = EmbeddingMorphism.plane_map(int(rng.integers(-2, 3)), rng.uniform(-2, 2))
        a = random_element(rng, CYL)
        lhs = alpha_apply(psi2, alpha_apply(psi, a))
        rhs = alpha_apply(compose(psi2, psi), a)
        assert generator_deviation(lhs, rhs) < 1e-12


def test_generator_deviation_detects_differences():
    rng = np.random.default_rng(5)
    a = random_element(rng, PLANE, 2)
    assert generator_deviation(a, a) == 0.0
    assert generator_deviation(a, random_element(rng, PLANE, 1)) == math.inf
    b = alpha_apply(EmbeddingMorphism.plane_map(0, 0.05), a)
    assert generator_deviation(a, b) > 1e-3


def test_commutation_examples():
    rng = np.random.default_rng(6)
    f = random_function(rng, CYL)
    ok, dev = commutation_check(f, 0.0)
    assert ok and dev == 0.0
    ok, dev = commutation_check(f, 0.3, grid=50)
    assert ok and dev < 1e-12
    ok1, dev1 = commutation_check(f, 0.3, branch=1)
    assert ok1 and dev1 < 1e-12
    with pytest.raises(ChartError):
        commutation_check(random_function(rng), 0.3)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.integers(-3, 3), st.integers(0, 2**32 - 1))
def test_commutation_property(tau, branch, seed):
    f = random_function(np.random.default_rng(seed), CYL)
    ok, dev = commutation_check(f, tau, branch)
    assert ok, dev


def test_state_normalised_and_two_point():
    rng = np.random.default_rng(7)
    omega_c = state_pullback(THERMAL, EmbeddingMorphism.lift())
    assert omega_c.evaluate(AlgebraElement.unit(CYL)) == 1
    assert THERMAL.evaluate(AlgebraElement.unit()) == 1
    f, g = random_function(rng, CYL), random_function(rng, CYL)
    a = AlgebraElement.field(f) * AlgebraElement.field(g)
    direct = smear(THERMAL.kernel, pushforward_pi_inv(f, 0), pushforward_pi_inv(g, 0), 0.0)
    assert abs(omega_c.evaluate(a) - direct) <= 1e-12 * abs(direct)
    assert omega_c.label == "omega_c"
    assert omega_c.evaluate(AlgebraElement.field(f)) == 0


def test_wick_pairing_for_degree_four():
    rng = np.random.default_rng(8)
    fs = [random_function(rng) for _ in range(4)]
    a = AlgebraElement(tuple(fs))
    w = THERMAL.two_point
    expect = w(fs[0], fs[1]) * w(fs[2], fs[3]) + w(fs[0], fs[2]) * w(fs[1], fs[3]) \
        + w(fs[0], fs[3]) * w(fs[1], fs[2])
    assert THERMAL.evaluate(a) == pytest.approx(expect, rel=1e-13)


def test_branch_independence_of_pullback():
    rng = np.random.default_rng(9)
    omega0 = state_pullback(THERMAL, EmbeddingMorphism.lift(TWO_PI, 0))
    omega1 = state_pullback(THERMAL, EmbeddingMorphism.lift(TWO_PI, 1))
    for _ in range(20):
        a = random_element(rng, CYL, 2)
        v0, v1 = omega0.evaluate(a), omega1.evaluate(a)
        assert abs(v0 - v1) < 1e-10 * max(1.0, abs(v0))


def test_pullback_contravariance():
    rng = np.random.default_rng(10)
    for _ in range(10):
        psi = EmbeddingMorphism.lift(TWO_PI, int(rng.integers(-1, 2)), rng.uniform(-1, 1))
        psi2 = EmbeddingMorphism.plane_map(int(rng.integers(-1, 2)), rng.uniform(-1, 1))
        a = random_element(rng, CYL, 2)
        once = state_pullback(THERMAL, compose(psi2, psi))
        twice = state_pullback(state_pullback(THERMAL, psi2), psi)
        assert abs(once.evaluate(a) - twice.evaluate(a)) < 1e-10


def test_pullback_chart_mismatch():
    omega_c = state_pullback(THERMAL, EmbeddingMorphism.lift())
    with pytest.raises(ChartError):
        state_pullback(omega_c, EmbeddingMorphism.lift())
    with pytest.raises(ChartError):
        omega_c.evaluate(random_element(np.random.default_rng(11), PLANE, 2))


def test_positivity_transported():
    rng = np.random.default_rng(12)
    omega_c = state_pullback(THERMAL, EmbeddingMorphism.lift(TWO_PI, 1))
    for _ in range(50):
        f = random_function(rng, CYL)
        assert THERMAL.positivity(pushforward_pi_inv(f, 1)) >= -1e-12
        assert omega_c.positivity(f) >= -1e-12


def test_observable_class():
    rng = np.random.default_rng(13)
    a = random_element(rng, PLANE, 2)
    assert observable_class(a, TWO_PI, 0) == [a]
    members = observable_class(a, TWO_PI, 2)
    assert len(members) == 5
    base = members[2]
    for n, m in zip(range(-2, 3), members):
        for f, g in zip(m.generators, base.generators):
            assert f.region.center.x - g.region.center.x == pytest.approx(n * TWO_PI)
        assert generator_deviation(project_element(m), project_element(base)) < 1e-12
    vals = [THERMAL.evaluate(m) for m in members]
    assert max(abs(v - vals[0]) for v in vals) < 1e-10
    with pytest.raises(ChartError):
        observable_class(random_element(rng, CYL, 1))


def test_adjoint_reverses_order():
    rng = np.random.default_rng(14)
    a = AlgebraElement(tuple(random_function(rng) for _ in range(3)), PLANE, 2 + 1j)
    b = a.adjoint()
    assert b.generators == a.generators[::-1]
    assert b.coefficient == 2 - 1j
    assert b.adjoint() == a
