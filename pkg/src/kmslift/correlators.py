"""Two-point structures of the massless scalar on the plane and the cylinder.

Conventions
-----------
Separations are ``delta = U - U'`` (or ``V - V'``); every evaluator takes an
explicit regulator ``eps > 0`` and evaluates at ``delta - i*eps``.  Logarithms
are principal-branch, one per chiral factor.

Besides the logarithmic Wightman functions there are their twice
differentiated (chiral) forms, -1/(4 pi (delta - i eps)^2) and relatives.
These are the convergent objects for image sums and are the kernels that
states use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AnalyticityError, ChartError, PrecisionError, SingularityError
from .geometry import TWO_PI
from .smearing import DEFAULT_ORDER, BumpFunction, TestFunction2D, gauss_legendre, panel_rule

FOUR_PI = 4.0 * math.pi
INV_4PI = 1.0 / FOUR_PI


def csch2(w):
    """1/sinh(w)^2 without overflow for large |Re w|."""
    w = np.asarray(w, dtype=complex)
    sgn = np.where(w.real >= 0, 1.0, -1.0)
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        m = np.expm1(-2.0 * sgn * w)
        return 4.0 * (m + 1.0) / (m * m)


def csc2(w):
    """1/sin(w)^2, via csc^2(w) = -csch^2(i w)."""
    return -csch2(1j * np.asarray(w, dtype=complex))


def check_epsilon(eps: float) -> float:
    eps = float(eps)
    if not (eps > 0 and math.isfinite(eps)):
        raise ValueError(f"epsilon must be a positive finite number, got {eps}")
    return eps


@dataclass(frozen=True)
class SeriesSpec:
    """Truncation ``n_terms`` for symmetric lattice sums and the tail model."""

    n_terms: int = 10_000
    tail: str = "integral"  # "none" or "integral"

    def __post_init__(self):
        if int(self.n_terms) != self.n_terms or self.n_terms < 1:
            raise ValueError("series truncation must be an integer >= 1")
        if self.tail not in ("none", "integral"):
            raise ValueError(f"unknown tail correction {self.tail!r}")

    @property
    def corrected(self) -> bool:
        return self.tail == "integral"


# ---------------------------------------------------------------------------
# Euler-Maclaurin tails


def _rising(p: int, j: int) -> int:
    out = 1
    for k in range(j):
        out *= p + k
    return out


def em_tail(pieces, start):
    """Euler-Maclaurin estimate of  sum_{n >= start} sum_i coef_i (alpha_i n + c_i)^(-p_i).

    ``pieces`` is a list of ``(coef, alpha, c, p)``.  For p = 1 the divergent
    parts of the integrals must cancel across pieces (sum of coef/alpha = 0).
    Corrections are kept through the fifth derivative.
    """
    a = float(start)
    total = 0.0
    for coef, alpha, c, p in pieces:
        w = alpha * a + c
        if p == 1:
            integral = -np.log(w) / alpha
        else:
            integral = w ** (1 - p) / (alpha * (p - 1))

        def deriv(j):
            return (-1) ** j * _rising(p, j) * alpha**j * w ** (-p - j)

        total = total + coef * (
            integral + 0.5 * deriv(0) - deriv(1) / 12.0 + deriv(3) / 720.0 - deriv(5) / 30240.0
        )
    return total


# ---------------------------------------------------------------------------
# Closed forms


def w2_plane_vacuum(dU, dV, eps: float):
    """-(1/4 pi) [ln(dU - i eps) + ln(dV - i eps)]."""
    eps = check_epsilon(eps)
    zu = np.asarray(dU, dtype=complex) - 1j * eps
    zv = np.asarray(dV, dtype=complex) - 1j * eps
    return -INV_4PI * (np.log(zu) + np.log(zv))


def _cyl_log_factor(d, L, eps):
    q = np.exp(-2j * math.pi * (np.asarray(d, dtype=complex) - 1j * eps) / L)
    f = 1.0 - q
    if np.any(f == 0):
        raise SingularityError("separation on the periodic light cone")
    return np.log(f)


def w2_cylinder_vacuum(dU, dV, L: float, eps: float):
    """-(1/4 pi) ln{(1 - e^{-2 pi i (dU - i eps)/L}) (1 - e^{-2 pi i (dV - i eps)/L})}.

    The logarithm is taken factor by factor.
    """
    eps = check_epsilon(eps)
    return -INV_4PI * (_cyl_log_factor(dU, L, eps) + _cyl_log_factor(dV, L, eps))


def w2_images_closed(dU, dV, L: float, eps: float):
    """Image-sum closed form -(1/4 pi) ln{sin(pi(dU - i eps)/L) sin(pi(dV - i eps)/L)}."""
    eps = check_epsilon(eps)
    su = np.sin(math.pi * (np.asarray(dU, dtype=complex) - 1j * eps) / L)
    sv = np.sin(math.pi * (np.asarray(dV, dtype=complex) - 1j * eps) / L)
    return -INV_4PI * (np.log(su) + np.log(sv))


def dd_plane_vacuum(delta, eps: float):
    """-1 / (4 pi (delta - i eps)^2)."""
    eps = check_epsilon(eps)
    z = np.asarray(delta, dtype=complex) - 1j * eps
    if np.any(z == 0):
        raise SingularityError("coincident points")
    return -INV_4PI / (z * z)


def dd_cylinder_closed(delta, L: float, eps: float):
    """-(1/4 pi) (pi/L)^2 / sin^2(pi (delta - i eps)/L)."""
    eps = check_epsilon(eps)
    w = math.pi * (np.asarray(delta, dtype=complex) - 1j * eps) / L
    if np.any(np.sin(w) == 0):
        raise SingularityError("separation on the image lattice")
    return -INV_4PI * (math.pi / L) ** 2 * csc2(w)


def dd_plane_thermal(delta, beta: float, eps: float):
    """-(1/4 pi) (pi/beta)^2 / sinh^2(pi (delta - i eps)/beta)."""
    eps = check_epsilon(eps)
    if not beta > 0:
        raise ValueError("beta must be positive")
    if math.isinf(beta):
        return dd_plane_vacuum(delta, eps)
    w = math.pi * (np.asarray(delta, dtype=complex) - 1j * eps) / beta
    if np.any(w == 0):
        raise SingularityError("separation on the thermal lattice")
    return -INV_4PI * (math.pi / beta) ** 2 * csch2(w)


# ---------------------------------------------------------------------------
# Series


def _check_off_lattice(z, spacing, what):
    r = np.asarray(z) / spacing
    if np.any(np.abs(r - np.round(r)) == 0):
        raise SingularityError(f"argument on the {what} lattice")


def dd_image_sum(delta, L: float, eps: float, spec: SeriesSpec = SeriesSpec()):
    """Spatial image sum  sum_{|n| <= N} -1/(4 pi (delta - n L - i eps)^2).

    With ``spec.tail == "integral"`` the remainder |n| > N is added through
    its Euler-Maclaurin expansion.
    """
    eps = check_epsilon(eps)
    z = np.asarray(delta, dtype=complex) - 1j * eps
    _check_off_lattice(z, L, "image")
    N = spec.n_terms
    n = np.arange(-N, N + 1, dtype=float)
    flat = z.reshape(-1)
    total = np.empty(flat.shape, dtype=complex)
    # chunk to bound memory for large N
    for i in range(flat.size):
        d = flat[i] - n * L
        total[i] = _pairwise_sum(1.0 / (d * d))
    total = total.reshape(z.shape)
    if spec.corrected:
        total = total + em_tail([(1.0, L, -z, 2), (1.0, L, z, 2)], N + 1)
    return -INV_4PI * total


def _pairwise_sum(terms):
    """Order-independent pairwise reduction (numpy's sum is pairwise on contiguous data)."""
    return np.sum(np.ascontiguousarray(terms))


def dd_thermal_images(delta, beta: float, eps: float, spec: SeriesSpec = SeriesSpec()):
    """Imaginary-time periodisation  sum_n -1/(4 pi (delta - i n beta - i eps)^2).

    This is the independent route to ``dd_plane_thermal``.
    """
    eps = check_epsilon(eps)
    z = np.asarray(delta, dtype=complex) - 1j * eps
    N = spec.n_terms
    n = np.arange(-N, N + 1, dtype=float)
    flat = z.reshape(-1)
    total = np.empty(flat.shape, dtype=complex)
    for i in range(flat.size):
        d = flat[i] - 1j * beta * n
        if np.any(d == 0):
            raise SingularityError("argument on the thermal lattice")
        total[i] = _pairwise_sum(1.0 / (d * d))
    total = total.reshape(z.shape)
    if spec.corrected:
        total = total + em_tail([(1.0, -1j * beta, z, 2), (1.0, 1j * beta, z, 2)], N + 1)
    return -INV_4PI * total


def cot_series(z, K: int, tail: str = "none"):
    """Partial fraction  1/z + 2z sum_{k=1}^{K} 1/(z^2 - k^2 pi^2)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if tail not in ("none", "integral"):
        raise ValueError(f"unknown tail {tail!r}")
    z = np.asarray(z, dtype=complex)
    _check_off_lattice(z, math.pi, "cotangent pole")
    k = np.arange(1, K + 1, dtype=float)
    flat = z.reshape(-1)
    out = np.empty(flat.shape, dtype=complex)
    for i in range(flat.size):
        zi = flat[i]
        out[i] = 1.0 / zi + 2.0 * zi * _pairwise_sum(1.0 / (zi * zi - (k * math.pi) ** 2))
    out = out.reshape(z.shape)
    if tail == "integral":
        # 2z/(z^2 - k^2 pi^2) = -1/(pi k - z) + 1/(pi k + z)
        out = out + em_tail([(-1.0, math.pi, -z, 1), (1.0, math.pi, z, 1)], K + 1)
    return out


def _thermal_cylinder_terms(beta: float, L: float) -> int:
    """Spatial images needed for the sinh kernel to fall below double precision."""
    return max(2, int(math.ceil(45.0 * beta / (2.0 * math.pi * L))) + 2)


def dd_cylinder_thermal(delta, beta: float, L: float, eps: float, spec: SeriesSpec | None = None):
    """Spatial image sum of the thermal plane kernel over x -> x + m L.

    Terms decay like exp(-2 pi |m| L / beta); the tail beyond N is summed as
    a geometric series of the asymptotic form.  ``spec=None`` picks N so the
    truncation is below double precision.
    """
    eps = check_epsilon(eps)
    if math.isinf(beta):
        return dd_image_sum(delta, L, eps, spec or SeriesSpec())
    z = np.asarray(delta, dtype=complex) - 1j * eps
    N = spec.n_terms if spec is not None else _thermal_cylinder_terms(beta, L)
    corrected = spec.corrected if spec is not None else True
    flat = z.reshape(-1)
    out = np.empty(flat.shape, dtype=complex)
    m = np.arange(-N, N + 1, dtype=float)
    a = math.pi / beta
    for i in range(flat.size):
        w = a * (flat[i] - m * L)
        if np.any(w == 0):
            raise SingularityError("argument on the doubly periodic lattice")
        out[i] = _pairwise_sum(csch2(w))
    out = out.reshape(z.shape)
    if corrected:
        q = math.exp(-2.0 * a * L)
        geo = q ** (N + 1) / (1.0 - q)
        out = out + 4.0 * geo * (np.exp(2.0 * a * z) + np.exp(-2.0 * a * z))
    return -INV_4PI * a * a * out


def cylinder_thermal_zero_mode(beta: float, L: float) -> float:
    """Constant 1/(2 L beta) separating the spatial image sum of the thermal
    kernel from the vacuum cylinder kernel as beta -> infinity."""
    return 1.0 / (2.0 * L * beta)


# ---------------------------------------------------------------------------
# Discrepancy between periodic quantisation and the image closed form


def periodization_delta(t, tp, x, xp, L: float, eps: float):
    """w2_cylinder_vacuum minus the log-sine image expression on a grid."""
    t, tp, x, xp = (np.asarray(a, dtype=float) for a in (t, tp, x, xp))
    dU = (t - x) - (tp - xp)
    dV = (t + x) - (tp + xp)
    return w2_cylinder_vacuum(dU, dV, L, eps) - w2_images_closed(dU, dV, L, eps)


def predicted_periodization_delta(t, tp, x, xp, L: float, eps: float):
    """-(1/4 pi)[ln 4 + i(pi - theta_U/2 - theta_V/2)], theta = 2 pi (delta - i eps)/L."""
    t, tp, x, xp = (np.asarray(a, dtype=float) for a in (t, tp, x, xp))
    dU = (t - x) - (tp - xp)
    dV = (t + x) - (tp + xp)
    th_u = 2 * math.pi * (dU - 1j * eps) / L
    th_v = 2 * math.pi * (dV - 1j * eps) / L
    return -INV_4PI * (math.log(4.0) + 1j * (math.pi - 0.5 * th_u - 0.5 * th_v))


@dataclass(frozen=True)
class DiscrepancyReport:
    coefficients: tuple[complex, complex, complex]  # a + b t + c t'
    max_residual: float
    max_second_derivative: float
    n_points: int


def periodization_discrepancy(t, tp, x, xp, L: float = TWO_PI, eps: float = 1e-6,
                              fd_step: float = 1e-3) -> DiscrepancyReport:
    """Fit the discrepancy by a + b t + c t' and report the worst residual.

    Also reports the largest centred second t-difference of the discrepancy.
    """
    t, tp, x, xp = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, tp, x, xp)))
    t, tp, x, xp = (a.ravel() for a in (t, tp, x, xp))
    if t.size < 3:
        raise ValueError("need at least three grid points to fit three coefficients")
    design = np.column_stack([np.ones_like(t), t, tp]).astype(complex)
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("degenerate grid: t and t' do not span an affine model")
    delta = periodization_delta(t, tp, x, xp, L, eps)
    coef, *_ = np.linalg.lstsq(design, delta, rcond=None)
    resid = np.max(np.abs(design @ coef - delta))
    h = fd_step
    d2 = (periodization_delta(t + h, tp, x, xp, L, eps) - 2 * delta
          + periodization_delta(t - h, tp, x, xp, L, eps)) / (h * h)
    return DiscrepancyReport(tuple(complex(c) for c in coef), float(resid),
                             float(np.max(np.abs(d2))), int(t.size))


# ---------------------------------------------------------------------------
# Kernels


def _csch2_regular(w, a):
    """a^2 csch^2(a w) - 1/w^2, via its Laurent series when |a w| is small."""
    x = a * w
    small = np.abs(x) < 0.05
    out = np.empty(np.shape(w), dtype=complex)
    xs = x[small]
    x2 = xs * xs
    out[small] = a * a * (-1.0 / 3.0 + x2 * (1.0 / 15.0 + x2 * (-2.0 / 189.0 + x2 / 675.0)))
    wb = w[~small]
    out[~small] = a * a * csch2(a * wb) - 1.0 / (wb * wb)
    return out


def _csc2_regular(w, a):
    """a^2 csc^2(a w) - 1/w^2."""
    x = a * w
    small = np.abs(x) < 0.05
    out = np.empty(np.shape(w), dtype=complex)
    xs = x[small]
    x2 = xs * xs
    out[small] = a * a * (1.0 / 3.0 + x2 * (1.0 / 15.0 + x2 * (2.0 / 189.0 + x2 / 675.0)))
    wb = w[~small]
    out[~small] = a * a * csc2(a * wb) - 1.0 / (wb * wb)
    return out


KINDS = ("plane-vacuum", "cylinder-vacuum", "plane-thermal", "cylinder-thermal", "image-series")


@dataclass(frozen=True)
class CorrelatorKernel:
    """A translation-invariant two-point kernel K(dt, dx) = k(dU) + k(dV).

    ``k`` is analytic in the strip -beta < Im z < 0 (lower half plane at
    beta = inf) with double poles -1/(4 pi (z - p)^2) on the lattice
    p = m L + i n beta.  ``log=True`` selects the undifferentiated
    logarithmic Wightman function instead of its chiral derivative; only the
    vacuum kinds have one.
    """

    kind: str
    beta: float = math.inf
    period: float | None = None
    series: SeriesSpec | None = None
    log: bool = False
    epsilon: float = 1e-10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        check_epsilon(self.epsilon)
        thermal = self.kind in ("plane-thermal", "cylinder-thermal")
        if thermal and math.isinf(self.beta):
            raise ValueError(f"{self.kind} needs a finite beta")
        if not thermal and not math.isinf(self.beta):
            raise ValueError(f"{self.kind} is a vacuum kernel; beta must be inf")
        periodic = self.kind in ("cylinder-vacuum", "cylinder-thermal", "image-series")
        if periodic and not (self.period and self.period > 0):
            raise ValueError(f"{self.kind} needs a positive period")
        if not periodic and self.period is not None:
            raise ValueError(f"{self.kind} is not periodic")
        if self.log and self.kind not in ("plane-vacuum", "cylinder-vacuum"):
            raise ValueError("logarithmic form only exists for the vacuum kernels")
        if self.kind == "image-series" and self.series is None:
            object.__setattr__(self, "series", SeriesSpec())

    # -- constructors ------------------------------------------------------

    @classmethod
    def plane_vacuum(cls, log=False, epsilon=1e-10):
        return cls("plane-vacuum", log=log, epsilon=epsilon)

    @classmethod
    def cylinder_vacuum(cls, L=TWO_PI, log=False, epsilon=1e-10):
        return cls("cylinder-vacuum", period=float(L), log=log, epsilon=epsilon)

    @classmethod
    def plane_thermal(cls, beta, epsilon=1e-10):
        return cls("plane-thermal", beta=float(beta), epsilon=epsilon)

    @classmethod
    def cylinder_thermal(cls, beta, L=TWO_PI, epsilon=1e-10):
        return cls("cylinder-thermal", beta=float(beta), period=float(L), epsilon=epsilon)

    @classmethod
    def image_series(cls, L=TWO_PI, spec=SeriesSpec(), epsilon=1e-10):
        return cls("image-series", period=float(L), series=spec, epsilon=epsilon)

    # -- evaluation --------------------------------------------------------

    @property
    def is_cylinder(self) -> bool:
        return self.period is not None

    @property
    def thermal(self) -> bool:
        return not math.isinf(self.beta)

    def chiral(self, z):
        """k(z) at complex z, no regulator added."""
        z = np.asarray(z, dtype=complex)
        L, beta = self.period, self.beta
        if self.log:
            if self.kind == "plane-vacuum":
                return -INV_4PI * np.log(z)
            return -INV_4PI * np.log(1.0 - np.exp(-2j * math.pi * z / L))
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            if self.kind == "plane-vacuum":
                return -INV_4PI / (z * z)
            if self.kind == "cylinder-vacuum":
                return -INV_4PI * (math.pi / L) ** 2 * csc2(math.pi * z / L)
            if self.kind == "plane-thermal":
                return -INV_4PI * (math.pi / beta) ** 2 * csch2(math.pi * z / beta)
            if self.kind == "cylinder-thermal":
                return self._cylinder_thermal_terms(z, exclude=None)
            return self._image_series_terms(z, exclude=None)

    def __call__(self, dt, dx, eps: float | None = None):
        """K(dt, dx) = k(dt - dx - i eps) + k(dt + dx - i eps)."""
        eps = self.epsilon if eps is None else check_epsilon(eps)
        dt = np.asarray(dt, dtype=complex)
        dx = np.asarray(dx, dtype=float)
        return self.chiral(dt - dx - 1j * eps) + self.chiral(dt + dx - 1j * eps)

    def _cylinder_thermal_terms(self, z, exclude):
        """Sum over spatial images of the sinh kernel; ``exclude`` drops one image per entry."""
        L, a = self.period, math.pi / self.beta
        N = _thermal_cylinder_terms(self.beta, L)
        m = np.arange(-N, N + 1, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = csch2(a * (z[..., None] - m * L))
        if exclude is not None:
            terms = np.where(m == exclude[..., None], 0.0, terms)
        q = math.exp(-2.0 * a * L)
        geo = q ** (N + 1) / (1.0 - q)
        tail = 4.0 * geo * (np.exp(2.0 * a * z) + np.exp(-2.0 * a * z))
        return -INV_4PI * a * a * (terms.sum(axis=-1) + tail)

    def _image_series_terms(self, z, exclude, explicit=None):
        """Image sum at ``z`` with the image ``exclude`` removed.

        Only the ``explicit`` innermost images are summed term by term; the
        rest of the truncated sum is the Euler-Maclaurin difference, which is
        exact to roundoff once the images are far from ``z``.
        """
        L, spec = self.period, self.series
        N = spec.n_terms
        K = N if explicit is None else min(N, explicit)
        n = np.arange(-K, K + 1, dtype=float)
        flat = z.reshape(-1)
        ex = None if exclude is None else np.broadcast_to(exclude, z.shape).reshape(-1)
        total = np.empty(flat.shape, dtype=complex)
        block = max(1, 2**22 // n.size)
        for i in range(0, flat.size, block):
            d = flat[i:i + block, None] - n * L
            terms = 1.0 / (d * d)
            if ex is not None:
                terms = np.where(n == ex[i:i + block, None], 0.0, terms)
            total[i:i + block] = terms.sum(axis=-1)
        total = total.reshape(z.shape)
        pieces = [(1.0, L, -z, 2), (1.0, L, z, 2)]
        if K < N:
            total = total + em_tail(pieces, K + 1) - em_tail(pieces, N + 1)
        if spec.corrected:
            total = total + em_tail(pieces, N + 1)
        return -INV_4PI * total

    # -- pole structure used by the smearing quadrature --------------------

    def poles(self, re_lo, re_hi, im_lo, im_hi) -> np.ndarray:
        """Lattice singularities inside the box."""
        if self.is_cylinder:
            L = self.period
            ms = np.arange(math.floor(re_lo / L), math.ceil(re_hi / L) + 1)
            re = ms * L
        else:
            re = np.array([0.0])
        re = re[(re >= re_lo) & (re <= re_hi)]
        if self.thermal:
            b = self.beta
            ns = np.arange(math.floor(im_lo / b), math.ceil(im_hi / b) + 1)
            im = ns * b
        else:
            im = np.array([0.0])
        im = im[(im >= im_lo) & (im <= im_hi)]
        return (re[:, None] + 1j * im[None, :]).ravel()

    def regular(self, z, poles):
        """k(z) minus the double-pole parts at ``poles``, stable near each pole."""
        z = np.asarray(z, dtype=complex)
        poles = np.asarray(poles, dtype=complex)
        if poles.size == 0:
            return self.chiral(z)
        diff = z[..., None] - poles
        dist = np.abs(diff)
        nearest = np.argmin(dist, axis=-1)
        w = np.take_along_axis(diff, nearest[..., None], axis=-1)[..., 0]
        p0 = poles[nearest]
        own = np.arange(poles.size) == nearest[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv2 = np.where(own, 0.0, -INV_4PI / (diff * diff))
        others = inv2.sum(axis=-1)
        near = self._near_regular(w, p0)
        return near - others

    def _near_regular(self, w, p0):
        """k(p0 + w) + 1/(4 pi w^2): everything except the pole at p0."""
        if self.kind == "plane-vacuum":
            return np.zeros_like(w)
        if self.kind == "cylinder-vacuum":
            return -INV_4PI * _csc2_regular(w, math.pi / self.period)
        if self.kind == "plane-thermal":
            return -INV_4PI * _csch2_regular(w, math.pi / self.beta)
        z = p0 + w
        m0 = np.round(p0.real / self.period)
        if self.kind == "image-series":
            return self._image_series_terms(z, exclude=m0, explicit=64)
        own = -INV_4PI * _csch2_regular(w, math.pi / self.beta)
        return self._cylinder_thermal_terms(z, exclude=m0) + own

    def describe(self) -> dict:
        return {"kind": self.kind, "beta": self.beta, "period": self.period,
                "log": self.log, "epsilon": self.epsilon}


# ---------------------------------------------------------------------------
# Smearing


def _correlation(a: BumpFunction, b: BumpFunction, w, order: int):
    """rho(w) = int a(y) b(y - w) dy and its first three derivatives.

    The overlap of the supports is split at both bump centres so every panel
    integrand is analytic inside.
    """
    w = np.asarray(w, dtype=float)
    a_lo, a_hi = a.support
    b_lo, b_hi = b.support
    lo = np.maximum(a_lo, b_lo + w)
    hi = np.maximum(np.minimum(a_hi, b_hi + w), lo)
    m1 = np.clip(np.minimum(a.center, b.center + w), lo, hi)
    m2 = np.clip(np.maximum(a.center, b.center + w), lo, hi)
    out = [np.zeros(w.shape) for _ in range(4)]
    for p_lo, p_hi in ((lo, m1), (m1, m2), (m2, hi)):
        y, V = panel_rule(p_lo, p_hi, order)
        va = V * a(y)
        for k, dk in enumerate(b.derivatives(y - w[..., None])):
            # d^k/dw^k b(y - w) = (-1)^k b^(k)(y - w)
            out[k] += (-1) ** k * np.sum(va * dk, axis=-1)
    return out


def _remainder_integrand(rho, v, zeta, derivs, width, a, b, x0, inner):
    """(rho - T2) / (v - zeta)^2 with v = w - x0.

    Next to x0 the difference rho - T2 is mostly cancellation, so there the
    remainder comes from its integral form
    (v^3 / 2) int_0^1 (1 - s)^2 rho'''(x0 + s v) ds.
    """
    r0, r1, r2 = derivs[:3]
    rem = rho - r0 - r1 * v - 0.5 * r2 * v * v
    close = np.abs(v) < TAYLOR_ZONE * width
    if np.any(close):
        vc = v[close]
        xc = np.broadcast_to(x0, v.shape)[close]
        r3 = _correlation(a, b, xc[:, None] + _REM_S[None, :] * vc[:, None], inner)[3]
        rem = np.array(rem, dtype=float)
        rem[close] = 0.5 * vc**3 * (r3 @ _REM_W)
    return rem / (v - zeta) ** 2


def _inverse_square_moments(A, B, zeta):
    """int_A^B v^k / (v - zeta)^2 dv for k = 0, 1, 2."""
    rA = 1.0 / (A - zeta)
    rB = 1.0 / (B - zeta)
    logs = np.log(B - zeta) - np.log(A - zeta)
    m0 = rA - rB
    m1 = logs - zeta * rB + zeta * rA
    m2 = (B - A) + 2.0 * zeta * logs - zeta * zeta * rB + zeta * zeta * rA
    return m0, m1, m2


def _graded_remainder(a, b, edges, x0, zeta, derivs, order, inner, width):
    """int (rho - T2)/(w - x0 - zeta)^2 dw on panels graded geometrically from x0.

    The first panel has width |zeta|; each further panel doubles.
    """
    span = edges[-1] - edges[0]
    h0 = abs(zeta)
    steps = h0 * 2.0 ** np.arange(0, int(np.ceil(np.log2(span / h0))) + 1)
    pts = np.concatenate([edges, [x0], x0 - steps, x0 + steps])
    pts = np.unique(np.clip(pts, edges[0], edges[-1]))
    w, W = panel_rule(pts[:-1], pts[1:], order)
    w, W = w.ravel(), W.ravel()
    rho = _correlation(a, b, w, inner)[0]
    return np.sum(W * _remainder_integrand(rho, w - x0, zeta, derivs, width, a, b, x0, inner))


SIDE_NUDGE = 1e-13

# within this fraction of the width of x0 the Taylor remainder is integrated
# directly rather than formed by subtraction
TAYLOR_ZONE = 3e-3
_REM_S, _REM_W = gauss_legendre(8)
_REM_S = 0.5 * (_REM_S + 1.0)
_REM_W = 0.5 * _REM_W * (1.0 - _REM_S) ** 2

# poles closer than this fraction of the z-range width are subtracted
NEAR_POLE = 0.25


def _chiral_smear(kernel: CorrelatorKernel, a: BumpFunction, b: BumpFunction, shifts, order: int):
    """I(s) = int int a(y) k(y - y' + s) b(y') dy dy' for an array of shifts s.

    With w = y - y' this is  int rho(w) k(w + s) dw,  rho the cross-correlation
    of a and b.  rho is smooth but not analytic where support ends meet, so
    the w rule is split there.  Double poles of k close to the integration
    range are subtracted and integrated semi-analytically: the quadratic
    Taylor polynomial of rho at the nearest real point is integrated in closed
    form and the remainder by the same rule.
    """
    shifts = np.asarray(shifts, dtype=complex).ravel()
    # k depends on y - y' only: work relative to b's centre so the rounding
    # of the nodes does not depend on where the pair sits (e.g. on the deck branch)
    a = BumpFunction(a.center - b.center, a.radius, a.amplitude)
    b = BumpFunction(0.0, b.radius, b.amplitude)
    a_lo, a_hi = a.support
    b_lo, b_hi = b.support
    width = (a_hi - a_lo) + (b_hi - b_lo)
    # smearing takes the epsilon -> 0+ boundary value; the nudge only picks
    # the side from which pole rows are approached (inside the strip)
    eps = SIDE_NUDGE * width
    if kernel.thermal:
        nudge = np.where(shifts.imag > -0.5 * kernel.beta, -1j * eps, 1j * eps)
    else:
        nudge = np.full(shifts.shape, -1j * eps)
    se_all = shifts + nudge
    if kernel.log:
        y, W = a.rule(order)
        yp, Wp = b.rule(order)
        return _log_smear(kernel, y, yp, W * a(y), Wp * b(yp), se_all, width)

    inner = 2 * order
    edges = np.sort([a_lo - b_hi, a_lo - b_lo, a_hi - b_hi, a_hi - b_lo])
    w, W = panel_rule(edges[:-1], edges[1:], order)
    w, W = w.ravel(), W.ravel()
    rho = _correlation(a, b, w, inner)[0]
    wrho = W * rho

    # only poles close to the z-range need subtracting
    z_lo = edges[0] + se_all.real
    z_hi = edges[-1] + se_all.real
    poles = kernel.poles(z_lo.min() - width, z_hi.max() + width,
                         se_all.imag.min() - width, se_all.imag.max() + width)
    gap = np.maximum(0.0, np.maximum(z_lo[:, None] - poles.real, poles.real - z_hi[:, None]))
    near = np.hypot(gap, se_all.imag[:, None] - poles.imag) < NEAR_POLE * width
    groups = {}
    for i, key in enumerate(map(bytes, np.packbits(near, axis=1))):
        groups.setdefault(key, []).append(i)

    out = np.empty(shifts.shape, dtype=complex)
    chunk = max(1, int(2e6 // w.size))
    for idx in groups.values():
        idx = np.array(idx)
        P = poles[near[idx[0]]]
        for start in range(0, idx.size, chunk):
            sel = idx[start:start + chunk]
            se = se_all[sel]
            z = w[None, :] + se[:, None]
            val = (kernel.regular(z, P) if P.size else kernel.chiral(z)) @ wrho
            for p in P:
                c = p - se
                x0 = np.clip(c.real, edges[0], edges[-1])
                zeta = c - x0
                derivs = _correlation(a, b, x0, inner)
                v = w[None, :] - x0[:, None]
                total = (W * _remainder_integrand(rho, v, zeta[:, None], [d[:, None] for d in derivs],
                                                  width, a, b, x0[:, None], inner)).sum(axis=1)
                # the fixed rule misses a pole at moderate distance from the
                # real axis: grade towards x0 there
                eta = np.abs(zeta)
                for k in np.flatnonzero((eta > 1e-8 * width) & (eta < 0.05 * width)):
                    total[k] = _graded_remainder(a, b, edges, x0[k], zeta[k],
                                                 [d[k] for d in derivs], order, inner, width)
                r0, r1, r2 = derivs[:3]
                m0, m1, m2 = _inverse_square_moments(edges[0] - x0, edges[-1] - x0, zeta)
                total = total + r0 * m0 + r1 * m1 + 0.5 * r2 * m2
                val = val - INV_4PI * total
            out[sel] = val
    return out


def _log_smear(kernel, y, yp, wa, wb, se, width):
    z = y[None, :, None] - yp[None, None, :] + se[:, None, None]
    re_lo, re_hi = z.real.min(), z.real.max()
    poles = kernel.poles(re_lo - 1.0, re_hi + 1.0, -1.0, 1.0)
    if poles.size:
        gap = np.min(np.abs(z[..., None] - poles))
        if gap < 0.05 * width:
            raise AnalyticityError(
                "logarithmic kernel smeared across its branch point; use the chiral derivative kernel"
            )
    return (kernel.chiral(z) @ wb) @ wa


def _check_strip(kernel: CorrelatorKernel, shifts):
    im = np.imag(np.asarray(shifts, dtype=complex))
    tol = 1e-12 * (1.0 if math.isinf(kernel.beta) else kernel.beta)
    if np.any(im > tol):
        raise AnalyticityError("time shift has positive imaginary part; kernel not analytic there")
    if kernel.thermal and np.any(im < -kernel.beta - tol):
        raise AnalyticityError(f"time shift below -i beta = -i{kernel.beta}")
    if kernel.log and np.any(im != 0):
        raise AnalyticityError("logarithmic kernels are evaluated at real time only")


def _check_charts(kernel: CorrelatorKernel, f: TestFunction2D, g: TestFunction2D):
    if f.chart != g.chart:
        raise ChartError(f"test functions on different charts: {f.chart} vs {g.chart}")
    if f.chart.is_cylinder:
        if not kernel.is_cylinder or kernel.period != f.chart.period:
            raise ChartError(f"{kernel.kind} kernel cannot smear functions on {f.chart}")
    elif kernel.is_cylinder:
        # a periodic kernel may be smeared with plane functions: that is its lift
        pass


def smear_series(kernel: CorrelatorKernel, f: TestFunction2D, g: TestFunction2D, shifts,
                 order: int = DEFAULT_ORDER):
    """Vectorised ``smear`` over many time shifts (no convergence cross-check)."""
    _check_charts(kernel, f, g)
    shifts = np.asarray(shifts, dtype=complex)
    _check_strip(kernel, shifts)
    iu = _chiral_smear(kernel, f.u, g.u, shifts, order)
    iv = _chiral_smear(kernel, f.v, g.v, shifts, order)
    return (0.25 * (iu * f.v.integral() * g.v.integral() + iv * f.u.integral() * g.u.integral())
            ).reshape(shifts.shape)


def smear_scale(f: TestFunction2D, g: TestFunction2D) -> float:
    """Typical magnitude of a smeared pairing: |int f int g| / (4 pi w^2), w the support width."""
    width = 2.0 * (f.u.radius + g.u.radius + f.v.radius + g.v.radius)
    return abs(f.integral() * g.integral()) * INV_4PI / (width * width)


def smear(kernel: CorrelatorKernel, f: TestFunction2D, g: TestFunction2D, time_shift=0.0,
          order: int = DEFAULT_ORDER, check: bool = True) -> complex:
    """int int f(p) K(dt + time_shift, dx) g(p') dp dp'.

    Pole rows of the kernel met by the integration are treated as boundary
    values approached from inside the analyticity strip, so real shifts give
    the i-epsilon Wightman pairing and a shift of -i beta gives the opposite
    boundary.  With ``check`` the value is recomputed at half order; a
    disagreement above 1e-8 times max(|value|, smear_scale(f, g)) raises
    PrecisionError.
    """
    value = complex(smear_series(kernel, f, g, np.array([time_shift]), order)[0])
    if check:
        low = complex(smear_series(kernel, f, g, np.array([time_shift]), max(order // 2, 1))[0])
        if abs(value - low) > 1e-8 * max(abs(value), smear_scale(f, g)):
            raise PrecisionError(
                f"order {order} and {order // 2} disagree: {value} vs {low}"
            )
    return value
