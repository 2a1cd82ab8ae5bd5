"""End-to-end acceptance criteria; each test prints a PASS/FAIL line in the summary."""

import math
import time

import numpy as np
import pytest

from kmslift import cli
from kmslift.correlators import (
    CorrelatorKernel,
    SeriesSpec,
    cot_series,
    dd_cylinder_closed,
    dd_image_sum,
    dd_plane_thermal,
    dd_plane_vacuum,
    dd_thermal_images,
    periodization_delta,
    periodization_discrepancy,
)
from kmslift.covariance import (
    AlgebraElement,
    EmbeddingMorphism,
    QuasiFreeState,
    alpha_apply,
    commutation_check,
    compose,
    generator_deviation,
    state_pullback,
)
from kmslift.geometry import PLANE, TWO_PI, Chart, Diamond, SpacetimePoint
from kmslift.kms import (
    bandwidth_cutoff,
    correlator_timeseries,
    kms_check,
    lifted_kms_check,
    positive_frequency_check,
    time_grid,
)
from kmslift.smearing import bump_pair_in, pushforward_pi_inv

L = TWO_PI
CYL = Chart.cylinder(L)
CT_TIMES = np.linspace(-2.0, 2.0, 9)


def bump_pair(rng, region):
    out = []
    for _ in range(2):
        du, dv = rng.uniform(-0.1, 0.1, 2)
        ru, rv = rng.uniform(0.2, 0.35, 2)
        out.append(bump_pair_in(region, du, dv, ru, rv))
    return out


@pytest.mark.acceptance(1, "image sum converges to the closed cylinder kernel")
def test_image_sum_convergence():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    deltas = rng.uniform(0.01, 0.99, 100) * L
    eps = 1e-12
    worst = 0.0
    for d in deltas:
        exact = dd_cylinder_closed(d, L, eps)
        got = dd_image_sum(d, L, eps, SeriesSpec(10_000, "integral"))
        worst = max(worst, abs(got - exact) / abs(exact))
    assert worst < 1e-8
    Ns = [100, 316, 1000, 3162, 10_000, 31_623, 100_000]
    slopes = []
    for d in deltas[:10]:
        exact = dd_cylinder_closed(d, L, eps)
        errs = [abs(dd_image_sum(d, L, eps, SeriesSpec(N, "none")) - exact) / abs(exact) for N in Ns]
        slopes.append(np.polyfit(np.log(Ns), np.log(errs), 1)[0])
    assert max(abs(s + 1) for s in slopes) <= 0.1
    assert time.perf_counter() - start < 10


@pytest.mark.acceptance(2, "cotangent partial fractions")
def test_cotangent_identity():
    assert abs(cot_series(math.pi / 4, 1000, "integral") - 1) < 1e-7
    rng = np.random.default_rng(202)
    for z in rng.uniform(0.01, math.pi - 0.01, 20):
        assert abs(cot_series(z, 1000, "integral") - 1 / math.tan(z)) < 1e-7


@pytest.mark.acceptance(3, "periodisation and image sum differ by an affine function of t, t'")
def test_periodization_discrepancy():
    t, tp = np.meshgrid(np.linspace(0.1, 2.9, 20), np.linspace(-2.9, -0.1, 20), indexing="ij")
    x, xp, eps, h = 0.4, 0.1, 1e-6, 1e-3
    rep = periodization_discrepancy(t, tp, x, xp, L, eps, fd_step=h)
    assert rep.max_residual < 1e-10
    assert rep.max_second_derivative < 1e-6
    d0 = periodization_delta(t, tp, x, xp, L, eps)
    d2p = (periodization_delta(t, tp + h, x, xp, L, eps) - 2 * d0
           + periodization_delta(t, tp - h, x, xp, L, eps)) / (h * h)
    assert np.max(np.abs(d2p)) < 1e-6


@pytest.mark.acceptance(4, "thermal kernel equals its imaginary-time image sum")
def test_thermal_construction():
    rng = np.random.default_rng(404)
    eps = 1e-10
    for _ in range(50):
        # for delta >> beta the kernel is exponentially small against the image terms
        beta = rng.uniform(0.3, 5.0)
        delta = rng.uniform(0.02, 2.0) * beta
        exact = dd_plane_thermal(delta, beta, eps)
        oracle = dd_thermal_images(delta, beta, eps, SeriesSpec(10_000, "integral"))
        assert abs(exact - oracle) < 1e-8 * abs(exact)
    # (pi delta / beta)^2 / 3 stays below 1e-6 for |delta| <= 0.5 at beta = 1e3
    for delta in (0.1, 0.25, 0.5, -0.5):
        rel = abs(dd_plane_thermal(delta, 1e3, 1e-12) / dd_plane_vacuum(delta, 1e-12) - 1)
        assert rel < 1e-6


@pytest.mark.acceptance(5, "KMS detailed balance on the plane")
def test_plane_kms():
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    region = Diamond(SpacetimePoint(0.0, 1.0), 0.5, 0.5)
    pairs = [bump_pair(rng, region) for _ in range(3)]
    for beta in (0.5, 1.0, 2.0):
        state = QuasiFreeState.plane(CorrelatorKernel.plane_thermal(beta))
        times = time_grid(2.0 + 4.0 * beta, 0.005)
        for f, g in pairs:
            report = kms_check(state, f, g, times, tolerance=1e-4, ct_times=CT_TIMES)
            assert report.max_residual < 1e-4
            assert report.complex_time_residual < 1e-5
    assert time.perf_counter() - start < 60


@pytest.mark.acceptance(6, "pulled-back cylinder state satisfies KMS on every branch")
def test_lifted_kms():
    rng = np.random.default_rng(606)
    region = Diamond(SpacetimePoint(0.0, 2.0, CYL), 0.5, 0.5)
    f, g = bump_pair(rng, region)
    times = time_grid(6.0, 0.005)
    reports = {}
    for n in (-1, 0, 1):
        report, pipeline = lifted_kms_check(f, g, 1.0, n, tolerance=1e-4, times=times, ct_times=CT_TIMES)
        assert report.max_residual < 1e-4
        assert report.complex_time_residual < 1e-5
        assert pipeline < 1e-12
        reports[n] = report
    ref = reports[0]
    for n in (-1, 1):
        r = reports[n]
        assert np.array_equal(r.frequencies, ref.frequencies)
        assert np.max(np.abs(r.residuals - ref.residuals)) < 1e-10
        assert abs(r.max_residual - ref.max_residual) < 1e-10
        assert abs(r.complex_time_residual - ref.complex_time_residual) < 1e-10


@pytest.mark.acceptance(7, "functor laws, diagram commutation, pullback contravariance, positivity")
def test_functor_laws():
    rng = np.random.default_rng(707)
    omega_p = QuasiFreeState.plane(CorrelatorKernel.plane_thermal(1.0))
    worst_comp = worst_diag = worst_pull = 0.0
    for _ in range(50):
        c = Diamond(SpacetimePoint(rng.uniform(-1, 1), rng.uniform(0, L), CYL), 0.5, 0.5)
        p = Diamond(SpacetimePoint(rng.uniform(-1, 1), rng.uniform(-3, 3)), 0.5, 0.5)
        fc, gc = bump_pair(rng, c)
        fp, gp = bump_pair(rng, p)
        a_c = AlgebraElement.field(fc) * AlgebraElement.field(gc)
        a_p = AlgebraElement.field(fp) * AlgebraElement.field(gp)
        n1, n2 = (int(k) for k in rng.integers(-2, 3, 2))
        t1, t2 = rng.uniform(-2, 2, 2)

        assert alpha_apply(EmbeddingMorphism.identity(PLANE), a_p) == a_p
        assert alpha_apply(EmbeddingMorphism.identity(CYL), a_c) == a_c

        lift = EmbeddingMorphism.lift(L, n1, t1)
        shift = EmbeddingMorphism.plane_map(n2, t2, L)
        worst_comp = max(worst_comp, generator_deviation(
            alpha_apply(compose(shift, lift), a_c), alpha_apply(shift, alpha_apply(lift, a_c))))
        worst_diag = max(worst_diag, commutation_check(fc, t1, n1)[1])

        once = state_pullback(omega_p, compose(shift, lift)).evaluate(a_c)
        twice = state_pullback(state_pullback(omega_p, shift), lift).evaluate(a_c)
        worst_pull = max(worst_pull, abs(once - twice))

        omega_c = state_pullback(omega_p, EmbeddingMorphism.lift(L, n1))
        if omega_p.positivity(pushforward_pi_inv(fc, n1)) >= 0:
            assert omega_c.positivity(fc) >= -1e-12
    assert worst_comp < 1e-12
    assert worst_diag < 1e-12
    assert worst_pull < 1e-10


@pytest.mark.acceptance(8, "vacuum correlator carries only positive frequencies")
def test_vacuum_positive_frequency():
    rng = np.random.default_rng(808)
    region = Diamond(SpacetimePoint(0.0, 1.0), 0.5, 0.5)
    state = QuasiFreeState.plane(CorrelatorKernel.plane_vacuum())
    times = time_grid(30.0, 0.01)
    for _ in range(2):
        f, g = bump_pair(rng, region)
        C, _ = correlator_timeseries(state, f, g, times, decay_tol=1e-3)
        assert positive_frequency_check(times, C, bandwidth_cutoff(f, g)) < 1e-4


@pytest.mark.acceptance(9, "every CLI command is byte-for-byte reproducible")
def test_cli_determinism(tmp_path):
    commands = [
        ["w2-table"],
        ["images-converge", "--tail-correction"],
        ["kms-verify", "--beta", "1"],
        ["kms-verify", "--kernel", "plane-vacuum"],
        ["functor-check"],
    ]
    for k, argv in enumerate(commands):
        blobs = []
        for rep in range(2):
            path = tmp_path / f"{k}-{rep}"
            cli.main([*argv, "--seed", "9", "--out", str(path)])
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1], argv
