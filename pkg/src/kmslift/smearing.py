"""Compactly supported test functions and the maps that push them around.

Test functions are products of one-dimensional exponential bumps in the null
coordinates U = t - x and V = t + x.  Integrals against them use composite
Gauss-Legendre quadrature with one panel per half of each bump support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ChartError, TruncationError
from .geometry import (
    PLANE,
    Chart,
    CoveringMap,
    DeckTransformation,
    Diamond,
    SpacetimePoint,
    wrap_coordinate,
)

DEFAULT_ORDER = 64


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    if order < 1:
        raise ValueError("quadrature order must be positive")
    x, w = np.polynomial.legendre.leggauss(order)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def panel_rule(lo, hi, order: int):
    """Gauss-Legendre nodes/weights on [lo, hi]; ``lo``/``hi`` may be arrays.

    Returned arrays carry a trailing axis of length ``order``.
    """
    x, w = gauss_legendre(order)
    lo = np.asarray(lo)[..., None]
    hi = np.asarray(hi)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def _unit_bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si * si))
    return out


def _unit_bump_derivatives(s):
    """phi and its first three derivatives, phi = exp(-1/(1-s^2)); zero off (-1, 1)."""
    s = np.asarray(s, dtype=float)
    s2 = s * s
    inside = s2 < 1.0
    q = 1.0 / (1.0 - np.where(inside, s2, 0.0))
    phi = np.where(inside, np.exp(-q), 0.0)
    # derivatives of q = 1/(1 - s^2)
    qq = q * q
    qqq = qq * q
    q1 = 2.0 * s * qq
    q2 = 2.0 * qq + 8.0 * s2 * qqq
    q3 = (24.0 + 48.0 * s2 * q) * s * qqq
    return [phi, -q1 * phi, (q1 * q1 - q2) * phi, ((3.0 * q2 - q1 * q1) * q1 - q3) * phi]


def _unit_bump_integral() -> float:
    x, w = panel_rule(np.array([-1.0, 0.0]), np.array([0.0, 1.0]), 128)
    return float(np.sum(w * _unit_bump(x)))


UNIT_BUMP_INTEGRAL = _unit_bump_integral()


@dataclass(frozen=True)
class BumpFunction:
    """amplitude * exp(-1/(1 - s^2)), s = (y - center)/radius, zero for |s| >= 1."""

    center: float
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("bump radius must be positive")
        for name in ("center", "radius", "amplitude"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"bump {name} must be finite")

    def __call__(self, y):
        return self.amplitude * _unit_bump((np.asarray(y, dtype=float) - self.center) / self.radius)

    def derivatives(self, y):
        """Value and first three derivatives at ``y``."""
        d = _unit_bump_derivatives((np.asarray(y, dtype=float) - self.center) / self.radius)
        a, r = self.amplitude, self.radius
        return tuple(a * dk / r**k for k, dk in enumerate(d))

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.radius, self.center + self.radius

    def integral(self) -> float:
        return self.amplitude * self.radius * UNIT_BUMP_INTEGRAL

    def shifted(self, d: float) -> "BumpFunction":
        return BumpFunction(self.center + d, self.radius, self.amplitude)

    def scaled(self, c: float) -> "BumpFunction":
        return BumpFunction(self.center, self.radius, self.amplitude * c)

    def rule(self, order: int = DEFAULT_ORDER):
        """Quadrature nodes and weights covering the support, split at the centre."""
        lo, hi = self.support
        y, w = panel_rule(np.array([lo, self.center]), np.array([self.center, hi]), order)
        return y.ravel(), w.ravel()


@dataclass(frozen=True)
class TestFunction2D:
    """f(t, x) = u(t - x) * v(t + x), supported inside ``region``.

    On a cylinder the bump centres are chart coordinates measured in the same
    sheet as the region centre.
    """

    u: BumpFunction
    v: BumpFunction
    region: Diamond

    __test__ = False  # not a pytest class

    def __post_init__(self):
        c = self.region.null_center
        slack = 1e-12 * (1.0 + abs(c.U) + abs(c.V))
        if abs(self.u.center - c.U) + self.u.radius > self.region.half_u + slack:
            raise ValueError("U support leaves the region")
        if abs(self.v.center - c.V) + self.v.radius > self.region.half_v + slack:
            raise ValueError("V support leaves the region")

    @property
    def chart(self) -> Chart:
        return self.region.chart

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = self.region.representative_x(x)
        return self.u(t - x) * self.v(t + x)

    def integral(self) -> float:
        """Integral over dt dx; the null-coordinate Jacobian is 1/2."""
        return 0.5 * self.u.integral() * self.v.integral()

    def scaled(self, c: float) -> "TestFunction2D":
        return TestFunction2D(self.u.scaled(c), self.v, self.region)

    def translated(self, dt: float = 0.0, dx: float = 0.0, chart: Chart | None = None) -> "TestFunction2D":
        """Shift by (dt, dx) in chart coordinates, optionally relabelling the chart."""
        chart = self.chart if chart is None else chart
        c = self.region.center
        region = Diamond(SpacetimePoint(c.t + dt, c.x + dx, chart), self.region.half_u, self.region.half_v)
        # cylinder centres are wrapped; keep the bumps in the same sheet as the region
        wrap = (c.x + dx) - region.center.x
        return TestFunction2D(
            self.u.shifted(dt - dx + wrap),
            self.v.shifted(dt + dx - wrap),
            region,
        )

    def describe(self) -> dict:
        c = self.region.center
        return {
            "chart": str(self.chart),
            "u": [self.u.center, self.u.radius, self.u.amplitude],
            "v": [self.v.center, self.v.radius, self.v.amplitude],
            "region": [c.t, c.x, self.region.half_u, self.region.half_v],
        }


def bump_pair_in(region: Diamond, du: float, dv: float, radius_u: float, radius_v: float,
                 amplitude: float = 1.0) -> TestFunction2D:
    """Test function centred at the region's null centre offset by (du, dv)."""
    c = region.null_center
    return TestFunction2D(
        BumpFunction(c.U + du, radius_u, amplitude),
        BumpFunction(c.V + dv, radius_v, 1.0),
        region,
    )


def _branch_index(branch) -> int:
    return branch.n if isinstance(branch, DeckTransformation) else int(branch)


def pushforward_pi_inv(f_c: TestFunction2D, branch=0) -> TestFunction2D:
    """Push a cylinder test function onto sheet ``branch`` of the plane.

    The result satisfies f_p(q) = f_c(pi(q)) on the lifted diamond and
    vanishes elsewhere.
    """
    if not f_c.chart.is_cylinder:
        raise ChartError("pushforward_pi_inv takes a cylinder test function")
    n = _branch_index(branch)
    shift = n * f_c.chart.period
    region = CoveringMap(f_c.chart.period).lift_diamond(f_c.region, n)
    return TestFunction2D(f_c.u.shifted(-shift), f_c.v.shifted(shift), region)


def pushforward_deck(f_p: TestFunction2D, gamma) -> TestFunction2D:
    """(gamma_n)_* f on the plane: support moves by n L in x."""
    if f_p.chart.is_cylinder:
        raise ChartError("deck pushforward acts on plane test functions")
    if not isinstance(gamma, DeckTransformation):
        raise TypeError("expected a DeckTransformation")
    return f_p.translated(0.0, gamma.shift)


def pushforward_time(f: TestFunction2D, tau: float) -> TestFunction2D:
    """Lambda(tau)_* f = f o Lambda(-tau); both null centres move by +tau."""
    return f.translated(float(tau), 0.0)


def project_to_cylinder(f_p: TestFunction2D, period: float) -> TestFunction2D:
    """The cylinder test function whose lift through the matching sheet is ``f_p``."""
    if f_p.chart.is_cylinder:
        raise ChartError("expected a plane test function")
    x = f_p.region.center.x
    dx = wrap_coordinate(x, period) - x
    return f_p.translated(0.0, dx, chart=Chart.cylinder(period))


@dataclass(frozen=True)
class SpectralSample:
    """Samples of a Fourier transform on a uniform, ascending frequency grid."""

    frequencies: np.ndarray
    amplitudes: np.ndarray
    step: float

    def __post_init__(self):
        if self.frequencies.shape != self.amplitudes.shape:
            raise ValueError("frequency and amplitude arrays differ in shape")
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("non-finite spectral amplitudes")


def check_decay(h, tol: float, what: str = "series"):
    """Raise TruncationError unless both ends of ``h`` are below tol * max|h|."""
    h = np.asarray(h)
    peak = np.max(np.abs(h)) if h.size else 0.0
    if peak == 0.0:
        return
    ends = max(abs(h[0]), abs(h[-1]))
    if ends > tol * peak:
        raise TruncationError(
            f"{what} has not decayed at the grid ends: |end|/max = {ends / peak:.3e} > {tol:.1e}"
        )


def fourier_transform(h, step: float, t0: float | None = None, frequencies=None,
                      decay_tol: float = 1e-12) -> SpectralSample:
    """Riemann-sum approximation of  hhat(w) = int h(t) exp(-i w t) dt.

    ``h`` is sampled at t_j = t0 + j*step; by default the grid is centred on
    zero.  Without explicit ``frequencies`` the transform is evaluated on the
    FFT grid 2 pi k / (N step), shifted to ascending order.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 1 or h.size < 2:
        raise ValueError("expected a one-dimensional series with at least two samples")
    if not step > 0:
        raise ValueError("grid step must be positive")
    check_decay(h, decay_tol)
    n = h.size
    if t0 is None:
        t0 = -0.5 * (n - 1) * step
    if frequencies is None:
        k = np.fft.fftshift(np.fft.fftfreq(n))
        omega = 2.0 * np.pi * k / step
        spectrum = np.fft.fftshift(np.fft.fft(h))
        amps = step * np.exp(-1j * omega * t0) * spectrum
        return SpectralSample(omega, amps, 2.0 * np.pi / (n * step))
    omega = np.asarray(frequencies, dtype=float)
    t = t0 + step * np.arange(n)
    amps = step * (np.exp(-1j * np.outer(omega, t)) @ h)
    d = float(omega[1] - omega[0]) if omega.size > 1 else 0.0
    return SpectralSample(omega, amps, d)
