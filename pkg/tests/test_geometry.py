import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmslift.errors import ChartError, EmbeddingError
from kmslift.geometry import (
    PLANE,
    TWO_PI,
    Chart,
    CoveringMap,
    DeckTransformation,
    Diamond,
    NullCoords,
    SpacetimePoint,
    TimeTranslation,
    branch_order,
    deck_apply,
    from_null,
    to_null,
    wrap_coordinate,
)

CYL = Chart.cylinder()
reals = st.floats(-50, 50, allow_nan=False)


@pytest.mark.parametrize("t,x,U,V", [(0, 0, 0, 0), (1, 1, 0, 2), (2, -1, 3, 1)])
def test_to_null_examples(t, x, U, V):
    assert to_null(SpacetimePoint(t, x)) == NullCoords(U, V)


@given(reals, reals)
def test_null_round_trip(t, x):
    # dyadic values make t -+ x and the halving exact
    t, x = round(t * 64) / 64, round(x * 64) / 64
    p = SpacetimePoint(t, x)
    assert from_null(to_null(p)) == p


def test_cylinder_points_are_wrapped():
    p = SpacetimePoint(0.0, -1.0, CYL)
    assert 0 <= p.x < TWO_PI
    assert p.x == pytest.approx(TWO_PI - 1.0)
    assert SpacetimePoint(0.0, 3 * TWO_PI + 0.5, CYL).x == pytest.approx(0.5)


@given(reals)
def test_wrap_lands_in_half_open_period(x):
    r = wrap_coordinate(x, TWO_PI)
    assert 0.0 <= r < TWO_PI
    assert wrap_coordinate(r, TWO_PI) == r


def test_wrap_tiny_negative_does_not_return_period():
    assert wrap_coordinate(-1e-18, TWO_PI) == 0.0


def test_chart_rejects_bad_period():
    with pytest.raises(ValueError):
        Chart.cylinder(0.0)
    with pytest.raises(ValueError):
        Chart.cylinder(math.inf)


def test_deck_examples():
    p = SpacetimePoint(1.0, 0.3)
    assert deck_apply(DeckTransformation(0), p) == p
    q = deck_apply(DeckTransformation(2), p)
    assert q.t == 1.0 and q.x == pytest.approx(0.3 + 4 * math.pi)


@given(st.integers(-10, 10), st.integers(-10, 10), reals, reals)
def test_deck_group_law(m, n, t, x):
    p = SpacetimePoint(t, x)
    two = deck_apply(DeckTransformation(m), deck_apply(DeckTransformation(n), p))
    one = deck_apply(DeckTransformation(m + n), p)
    assert two.t == one.t
    assert two.x == pytest.approx(one.x, abs=1e-12)
    assert DeckTransformation(m).compose(DeckTransformation(n)) == DeckTransformation(m + n)


def test_deck_rejects_cylinder_points():
    with pytest.raises(ChartError):
        deck_apply(DeckTransformation(1), SpacetimePoint(0, 1, CYL))


def test_deck_index_must_be_integer():
    with pytest.raises(ValueError):
        DeckTransformation(0.5)


def test_pi_invariant_under_deck():
    rng = np.random.default_rng(7)
    pi = CoveringMap()
    for t, x in rng.uniform(-20, 20, size=(1000, 2)):
        p = SpacetimePoint(t, x)
        base = pi(p)
        for n in range(-10, 11):
            q = pi(deck_apply(DeckTransformation(n), p))
            assert q.t == base.t
            # wrapped values agree up to the rounding of x + nL
            d = abs(q.x - base.x)
            assert min(d, TWO_PI - d) < 1e-12


@settings(max_examples=200)
@given(reals, reals, st.floats(-10, 10))
def test_time_translation_commutes_with_pi(t, x, tau):
    pi = CoveringMap()
    p = SpacetimePoint(t, x)
    assert pi(TimeTranslation(tau)(p)) == TimeTranslation(tau)(pi(p))


def test_time_translation_group():
    assert TimeTranslation(0.25).compose(TimeTranslation(0.5)) == TimeTranslation(0.75)
    assert TimeTranslation(1.5).inverse() == TimeTranslation(-1.5)


def test_preimage_examples():
    d = Diamond(SpacetimePoint(0.0, 1.0, CYL), 0.5, 0.5)
    sheets = CoveringMap().preimage_diamonds(d, 3)
    xs = sorted(s.center.x for s in sheets)
    assert xs == pytest.approx([1 - TWO_PI, 1.0, 1 + TWO_PI])
    assert all(s.chart == PLANE for s in sheets)
    one = CoveringMap().preimage_diamonds(d, 1)
    assert len(one) == 1 and one[0].half_u == 0.5 and one[0].half_v == 0.5
    for i, a in enumerate(sheets):
        for b in sheets[i + 1:]:
            assert a.disjoint(b)


def test_preimages_project_back():
    pi = CoveringMap()
    d = Diamond(SpacetimePoint(0.3, 5.9, CYL), 0.7, 0.2)
    for s in pi.preimage_diamonds(d, 5):
        back = pi.project_diamond(s)
        assert back.center.t == d.center.t
        assert back.center.x == pytest.approx(d.center.x, abs=1e-12)


def test_branch_order():
    assert branch_order(5) == [0, 1, -1, 2, -2]


def test_too_large_cylinder_diamond_rejected():
    with pytest.raises(EmbeddingError):
        Diamond(SpacetimePoint(0, 0, CYL), 3.5, 3.0)
    with pytest.raises(ValueError):
        CoveringMap().preimage_diamonds(Diamond(SpacetimePoint(0, 0, CYL), 0.5, 0.5), 0)


def test_diamond_membership_matches_null_bounds():
    d = Diamond(SpacetimePoint(0.2, 1.0), 0.5, 0.3)
    rng = np.random.default_rng(3)
    for t, x in rng.uniform(-1, 2, size=(500, 2)):
        p = SpacetimePoint(t, x)
        c, q = d.null_center, to_null(p)
        assert (p in d) == (abs(q.U - c.U) < 0.5 and abs(q.V - c.V) < 0.3)


def test_membership_deck_invariant():
    pi = CoveringMap()
    base = Diamond(SpacetimePoint(0.0, 1.0, CYL), 0.5, 0.5)
    rng = np.random.default_rng(11)
    for n in (-2, -1, 1, 2):
        d0, dn = pi.lift_diamond(base, 0), pi.lift_diamond(base, n)
        for t, x in rng.uniform(-1, 3, size=(200, 2)):
            p = SpacetimePoint(t, x)
            assert (p in d0) == (deck_apply(DeckTransformation(n), p) in dn)


def test_cylinder_membership_across_the_seam():
    d = Diamond(SpacetimePoint(0.0, 0.1, CYL), 0.5, 0.5)
    assert SpacetimePoint(0.0, TWO_PI - 0.2, CYL) in d
    assert SpacetimePoint(0.0, 2.0, CYL) not in d


def test_membership_rejects_other_chart():
    with pytest.raises(ChartError):
        SpacetimePoint(0, 0) in Diamond(SpacetimePoint(0, 0, CYL), 0.5, 0.5)


def test_disjoint_on_cylinder_wraps():
    a = Diamond(SpacetimePoint(0.0, 0.1, CYL), 0.4, 0.4)
    b = Diamond(SpacetimePoint(0.0, TWO_PI - 0.1, CYL), 0.4, 0.4)
    c = Diamond(SpacetimePoint(0.0, 3.0, CYL), 0.4, 0.4)
    assert not a.disjoint(b)
    assert a.disjoint(c)
