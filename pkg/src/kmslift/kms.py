"""KMS verification for quasi-free states.

Two independent routes are provided.  The frequency route samples

    C(t)  = omega(Phi(f) alpha_t Phi(g)),    Ct(t) = omega(alpha_t Phi(g) Phi(f))

on a uniform grid and tests detailed balance  Ct^(w) = exp(-beta w) C^(w)
with transforms  h^(w) = int h(t) exp(-i w t) dt.  The complex-time route
continues the smeared kernel directly and compares C(t) with Ct(t - i beta),
and, inside the strip, C(t + i s) with Ct(t + i s - i beta).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correlators import CorrelatorKernel, smear_series
from .covariance import AlgebraElement, EmbeddingMorphism, QuasiFreeState, alpha_apply, state_pullback
from .errors import ChartError
from .geometry import TWO_PI
from .smearing import DEFAULT_ORDER, TestFunction2D, check_decay, fourier_transform, pushforward_pi_inv

DEFAULT_TOLERANCE = 1e-4
NOISE_FLOOR = 1e-8


@dataclass(frozen=True)
class KMSReport:
    """Outcome of a KMS verification.

    ``residuals`` are given on ``frequencies``, the part of the transform grid
    where |C^| exceeds the noise floor.  ``passed`` requires both residuals to
    be within ``tolerance``.
    """

    frequencies: np.ndarray
    residuals: np.ndarray
    max_residual: float
    complex_time_residual: float
    tolerance: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.residuals < 0):
            raise ValueError("residuals must be non-negative")

    @property
    def passed(self) -> bool:
        return bool(self.max_residual <= self.tolerance and self.complex_time_residual <= self.tolerance)

    def with_complex_time(self, residual: float, **extra) -> "KMSReport":
        meta = dict(self.metadata, **extra)
        return KMSReport(self.frequencies, self.residuals, self.max_residual, float(residual),
                         self.tolerance, meta)

    def to_dict(self) -> dict:
        return {
            "frequencies": self.frequencies.tolist(),
            "residuals": self.residuals.tolist(),
            "maxResidual": self.max_residual,
            "complexTimeResidual": self.complex_time_residual,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "metadata": self.metadata,
        }


def time_grid(half_width: float, step: float) -> np.ndarray:
    """Symmetric uniform grid -half_width .. half_width."""
    if not (half_width > 0 and step > 0):
        raise ValueError("grid half-width and step must be positive")
    n = int(round(half_width / step))
    return step * np.arange(-n, n + 1)


def _grid_step(times) -> float:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 3:
        raise ValueError("need a one-dimensional time grid with at least three points")
    steps = np.diff(times)
    step = float(np.mean(steps))
    if not (step > 0 and np.allclose(steps, step, rtol=1e-9, atol=0.0)):
        raise ValueError("time grid must be uniform and increasing")
    return step


def correlator_timeseries(state: QuasiFreeState, f: TestFunction2D, g: TestFunction2D, times,
                          decay_tol: float = 1e-10):
    """(C, Ct) on ``times``; the translated g is built through the state's algebra.

    Raises TruncationError when either series has not decayed to
    ``decay_tol`` times its peak at both ends of the grid.
    """
    times = np.asarray(times, dtype=float)
    A = AlgebraElement.field(f)
    chart = state.chart
    period = chart.period if chart.is_cylinder else TWO_PI
    C_elems, Ct_elems = [], []
    for t in times:
        if chart.is_cylinder:
            shift = EmbeddingMorphism.cylinder_shift(float(t), period)
        else:
            shift = EmbeddingMorphism.plane_map(0, float(t))
        B = alpha_apply(shift, AlgebraElement.field(g))
        C_elems.append(A * B)
        Ct_elems.append(B * A)
    C = state.evaluate_many(C_elems)
    Ct = state.evaluate_many(Ct_elems)
    check_decay(C, decay_tol, "C(t)")
    check_decay(Ct, decay_tol, "Ct(t)")
    return C, Ct


def detailed_balance_check(times, C, Ct, beta: float, tolerance: float = DEFAULT_TOLERANCE,
                           noise_floor: float = NOISE_FLOOR, decay_tol: float = 1e-10) -> KMSReport:
    """Residual |Ct^ - exp(-beta w) C^| / max|C^| where |C^| > noise_floor * max|C^|."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    step = _grid_step(times)
    t0 = float(np.asarray(times)[0])
    sc = fourier_transform(C, step, t0, decay_tol=decay_tol)
    sct = fourier_transform(Ct, step, t0, decay_tol=decay_tol)
    mag = np.abs(sc.amplitudes)
    peak = float(mag.max())
    if peak < 1e-14:
        raise ValueError("empty signal: max |C^| below 1e-14")
    band = mag > noise_floor * peak
    w = sc.frequencies[band]
    with np.errstate(over="ignore"):
        r = np.abs(sct.amplitudes[band] - np.exp(-beta * w) * sc.amplitudes[band]) / peak
    return KMSReport(w, r, float(r.max()), 0.0, float(tolerance), {
        "beta": float(beta),
        "grid_step": step,
        "grid_points": int(np.size(times)),
        "noise_floor": noise_floor,
    })


def complex_time_check(kernel: CorrelatorKernel, f: TestFunction2D, g: TestFunction2D, times,
                       order: int = DEFAULT_ORDER, interior: bool = True) -> float:
    """max |C(t) - Ct(t - i beta)| / max |C| over ``times``.

    With ``interior`` the comparison is repeated one third of the way into
    the strip, C(t + i beta/3) against Ct(t + i beta/3 - i beta), and the
    larger deviation is returned.
    """
    if not kernel.thermal:
        raise ValueError("complex-time continuation needs a thermal kernel")
    beta = kernel.beta
    t = np.asarray(times, dtype=float)
    C = smear_series(kernel, f, g, -t, order)
    Ct = smear_series(kernel, g, f, t - 1j * beta, order)
    scale = float(np.max(np.abs(C)))
    dev = float(np.max(np.abs(C - Ct)))
    if interior:
        s = beta / 3.0
        Ci = smear_series(kernel, f, g, -t - 1j * s, order)
        Cti = smear_series(kernel, g, f, t + 1j * s - 1j * beta, order)
        dev = max(dev, float(np.max(np.abs(Ci - Cti))))
    return dev / scale


def positive_frequency_check(times, C, cutoff: float, decay_tol: float = 1e-3):
    """Largest |C^(w)| / max|C^| over w < -cutoff (zero for vacuum data)."""
    step = _grid_step(times)
    s = fourier_transform(C, step, float(np.asarray(times)[0]), decay_tol=decay_tol)
    mag = np.abs(s.amplitudes)
    low = s.frequencies < -cutoff
    return float(mag[low].max() / mag.max()) if np.any(low) else 0.0


def bandwidth_cutoff(*fs: TestFunction2D) -> float:
    """Frequency scale of the smearing functions, 1 / smallest bump radius."""
    r = min(min(f.u.radius, f.v.radius) for f in fs)
    return 1.0 / r


def kms_check(state: QuasiFreeState, f: TestFunction2D, g: TestFunction2D, times,
              tolerance: float = DEFAULT_TOLERANCE, ct_times=None) -> KMSReport:
    """Detailed balance on ``times`` plus complex-time continuation on ``ct_times``."""
    if state.parent is not None:
        raise ValueError("use lifted_kms_check for pulled-back states")
    kernel = state.kernel
    C, Ct = correlator_timeseries(state, f, g, times)
    report = detailed_balance_check(times, C, Ct, kernel.beta, tolerance)
    ct_times = np.linspace(-2.0, 2.0, 9) if ct_times is None else ct_times
    dev = complex_time_check(kernel, f, g, ct_times, state.order)
    return report.with_complex_time(dev, kernel=kernel.describe(), f=f.describe(), g=g.describe())


def lifted_kms_check(f_c: TestFunction2D, g_c: TestFunction2D, beta: float, branch: int = 0,
                     tolerance: float = DEFAULT_TOLERANCE, times=None, ct_times=None,
                     order: int = DEFAULT_ORDER):
    """KMS for the cylinder state pulled back from the plane thermal state.

    The cylinder-side series are evaluated through the pulled-back state on
    cylinder elements; the plane-side series smear the pushed-forward test
    functions directly.  Returns ``(report, deviation)`` where ``deviation``
    is the largest pointwise difference between the two pipelines.
    """
    if not (f_c.chart.is_cylinder and g_c.chart == f_c.chart):
        raise ChartError("lifted KMS check takes two test functions on the same cylinder")
    L = f_c.chart.period
    kernel = CorrelatorKernel.plane_thermal(beta)
    omega_p = QuasiFreeState.plane(kernel, order)
    omega_c = state_pullback(omega_p, EmbeddingMorphism.lift(L, branch))
    times = time_grid(2.0 + 4.0 * beta, 0.005) if times is None else np.asarray(times, float)

    C, Ct = correlator_timeseries(omega_c, f_c, g_c, times)

    f_p = pushforward_pi_inv(f_c, branch)
    g_p = pushforward_pi_inv(g_c, branch)
    Cp = smear_series(kernel, f_p, g_p, -times, order)
    Ctp = smear_series(kernel, g_p, f_p, times, order)
    deviation = float(max(np.max(np.abs(C - Cp)), np.max(np.abs(Ct - Ctp))))

    report = detailed_balance_check(times, C, Ct, beta, tolerance)
    ct_times = np.linspace(-2.0, 2.0, 9) if ct_times is None else ct_times
    dev = complex_time_check(kernel, f_p, g_p, ct_times, order)
    report = report.with_complex_time(
        dev, kernel=kernel.describe(), branch=int(branch), period=L,
        f=f_c.describe(), g=g_c.describe(), pipeline_deviation=deviation,
    )
    return report, deviation
