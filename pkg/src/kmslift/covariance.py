"""Smeared-field monomials, the automorphisms induced by embeddings, and
quasi-free states with pullback along those embeddings.

Morphisms come in three families, all built from a deck index n and a time
shift tau:

* plane -> plane: (t, x) -> (t + tau, x + n L)
* cylinder -> plane: the branch-n lift of the covering map followed by a time shift
* cylinder -> cylinder: a time shift (n must be 0)

An embedding acts on algebra elements by pushing every generator's test
function forward.  A state on the target pulls back to a state on the source
by evaluating on pushed-forward elements.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .correlators import CorrelatorKernel, smear, smear_series
from .errors import ChartError
from .geometry import PLANE, TWO_PI, Chart, DeckTransformation, TimeTranslation
from .smearing import (
    DEFAULT_ORDER,
    TestFunction2D,
    project_to_cylinder,
    pushforward_deck,
    pushforward_pi_inv,
    pushforward_time,
)


@dataclass(frozen=True)
class EmbeddingMorphism:
    """Deck branch plus time shift between two charts."""

    branch: DeckTransformation
    time_shift: TimeTranslation
    source: Chart
    target: Chart

    def __post_init__(self):
        if self.target.is_cylinder and not self.source.is_cylinder:
            raise ChartError("no embedding of the plane into a cylinder")
        if self.source.is_cylinder:
            if self.source.period != self.branch.period:
                raise ChartError("branch period differs from the source cylinder period")
            if self.target.is_cylinder:
                if self.target != self.source:
                    raise ChartError("cylinder morphisms must preserve the period")
                if self.branch.n != 0:
                    raise ChartError("deck branches act trivially on a cylinder; use n = 0")

    @classmethod
    def identity(cls, chart: Chart = PLANE) -> "EmbeddingMorphism":
        period = chart.period if chart.is_cylinder else TWO_PI
        return cls(DeckTransformation(0, period), TimeTranslation(0.0), chart, chart)

    @classmethod
    def lift(cls, period: float = TWO_PI, branch: int = 0, tau: float = 0.0) -> "EmbeddingMorphism":
        """Branch ``branch`` of the inverse covering map, then a time shift."""
        return cls(DeckTransformation(branch, period), TimeTranslation(tau),
                   Chart.cylinder(period), PLANE)

    @classmethod
    def plane_map(cls, n: int = 0, tau: float = 0.0, period: float = TWO_PI) -> "EmbeddingMorphism":
        return cls(DeckTransformation(n, period), TimeTranslation(tau), PLANE, PLANE)

    @classmethod
    def cylinder_shift(cls, tau: float, period: float = TWO_PI) -> "EmbeddingMorphism":
        return cls(DeckTransformation(0, period), TimeTranslation(tau),
                   Chart.cylinder(period), Chart.cylinder(period))

    @property
    def is_identity(self) -> bool:
        return self.source == self.target and self.branch.n == 0 and self.time_shift.tau == 0.0

    def push(self, f: TestFunction2D) -> TestFunction2D:
        """psi_* f."""
        if f.chart != self.source:
            raise ChartError(f"test function on {f.chart}, morphism expects {self.source}")
        out = pushforward_time(f, self.time_shift.tau) if self.time_shift.tau else f
        if self.source.is_cylinder and not self.target.is_cylinder:
            return pushforward_pi_inv(out, self.branch.n)
        if self.branch.n:
            return pushforward_deck(out, self.branch)
        return out

    def describe(self) -> dict:
        return {"branch": self.branch.n, "tau": self.time_shift.tau,
                "source": str(self.source), "target": str(self.target)}


def compose(psi2: EmbeddingMorphism, psi1: EmbeddingMorphism) -> EmbeddingMorphism:
    """psi2 o psi1; the target of psi1 must be the source of psi2."""
    if psi1.target != psi2.source:
        raise ChartError(f"cannot compose: {psi1.target} -> ... but next map starts on {psi2.source}")
    period = psi1.branch.period
    if psi2.branch.n and psi2.branch.period != period:
        raise ChartError("deck periods differ")
    return EmbeddingMorphism(
        DeckTransformation(psi1.branch.n + psi2.branch.n, period),
        psi1.time_shift.compose(psi2.time_shift),
        psi1.source,
        psi2.target,
    )


@dataclass(frozen=True)
class AlgebraElement:
    """coefficient * Phi(f_1) ... Phi(f_k); no generators means a multiple of the unit."""

    generators: tuple[TestFunction2D, ...] = ()
    chart: Chart = PLANE
    coefficient: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        for f in self.generators:
            if not isinstance(f, TestFunction2D):
                raise TypeError("generators must be TestFunction2D instances")
            if f.chart != self.chart:
                raise ChartError(f"generator on {f.chart} in an element on {self.chart}")

    @classmethod
    def unit(cls, chart: Chart = PLANE) -> "AlgebraElement":
        return cls((), chart)

    @classmethod
    def field(cls, f: TestFunction2D) -> "AlgebraElement":
        """Phi(f)."""
        return cls((f,), f.chart)

    @property
    def degree(self) -> int:
        return len(self.generators)

    def __mul__(self, other: "AlgebraElement") -> "AlgebraElement":
        if not isinstance(other, AlgebraElement):
            return NotImplemented
        if other.chart != self.chart:
            raise ChartError("product of elements on different charts")
        return AlgebraElement(self.generators + other.generators, self.chart,
                              self.coefficient * other.coefficient)

    def adjoint(self) -> "AlgebraElement":
        """Real test functions give self-adjoint fields, so the order reverses."""
        return AlgebraElement(self.generators[::-1], self.chart, np.conj(self.coefficient))


def alpha_apply(psi: EmbeddingMorphism, a: AlgebraElement) -> AlgebraElement:
    """alpha_psi(a): push every generator forward, keeping the order."""
    if a.chart != psi.source:
        raise ChartError(f"element on {a.chart}, morphism expects {psi.source}")
    return AlgebraElement(tuple(psi.push(f) for f in a.generators), psi.target, a.coefficient)


def _sample_grid(fs, n: int):
    """An n x n (t, x) grid covering the chart-coordinate supports of ``fs``."""
    half = [0.5 * (f.region.half_u + f.region.half_v) for f in fs]
    lo_t = min(f.region.center.t - h for f, h in zip(fs, half))
    hi_t = max(f.region.center.t + h for f, h in zip(fs, half))
    lo_x = min(f.region.center.x - h for f, h in zip(fs, half))
    hi_x = max(f.region.center.x + h for f, h in zip(fs, half))
    return np.meshgrid(np.linspace(lo_t, hi_t, n), np.linspace(lo_x, hi_x, n), indexing="ij")


def generator_deviation(a: AlgebraElement, b: AlgebraElement, grid: int = 50) -> float:
    """Max pointwise difference between corresponding generators on a sample grid."""
    if a.chart != b.chart or a.degree != b.degree:
        return float("inf")
    worst = 0.0
    for f, g in zip(a.generators, b.generators):
        t, x = _sample_grid([f, g], grid)
        worst = max(worst, float(np.max(np.abs(f(t, x) - g(t, x)))))
    return worst


def commutation_check(f_c: TestFunction2D, tau: float, branch: int = 0, grid: int = 50):
    """Compare lift-after-cylinder-shift with plane-shift-after-lift for Phi(f_c).

    Returns ``(ok, deviation)`` where ``deviation`` is the largest pointwise
    difference of the resulting plane test functions on a ``grid`` x ``grid``
    sample and ``ok`` means it is at most 1e-12.
    """
    if not f_c.chart.is_cylinder:
        raise ChartError("commutation check takes a cylinder test function")
    if not np.isfinite(tau):
        raise ValueError("time shift must be finite")
    L = f_c.chart.period
    a = AlgebraElement.field(f_c)
    lift = EmbeddingMorphism.lift(L, branch)
    lhs = alpha_apply(lift, alpha_apply(EmbeddingMorphism.cylinder_shift(tau, L), a))
    rhs = alpha_apply(EmbeddingMorphism.plane_map(0, tau, L), alpha_apply(lift, a))
    dev = generator_deviation(lhs, rhs, grid)
    return dev <= 1e-12, dev


def _pairings(idx):
    """Perfect matchings of ``idx`` as lists of ordered pairs (i < j)."""
    if not idx:
        yield []
        return
    first, rest = idx[0], idx[1:]
    for k, other in enumerate(rest):
        for tail in _pairings(rest[:k] + rest[k + 1:]):
            yield [(first, other)] + tail


@dataclass(frozen=True)
class QuasiFreeState:
    """Gaussian state fixed by its two-point kernel, or pulled back from one.

    A root state evaluates Phi(f)Phi(g) as ``smear(kernel, f, g)`` and higher
    even monomials by Wick pairing.  A pulled-back state evaluates ``a`` as
    ``parent.evaluate(alpha_apply(morphism, a))``.
    """

    kernel: CorrelatorKernel
    chart: Chart = PLANE
    label: str = "custom"
    parent: "QuasiFreeState | None" = None
    morphism: EmbeddingMorphism | None = None
    order: int = DEFAULT_ORDER
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if (self.parent is None) != (self.morphism is None):
            raise ValueError("a pulled-back state needs both parent and morphism")
        if self.parent is None and self.kernel.is_cylinder != self.chart.is_cylinder:
            raise ChartError(f"{self.kernel.kind} kernel on {self.chart}")

    @classmethod
    def plane(cls, kernel: CorrelatorKernel, order: int = DEFAULT_ORDER) -> "QuasiFreeState":
        return cls(kernel, PLANE, "omega_p", order=order)

    def two_point(self, f: TestFunction2D, g: TestFunction2D) -> complex:
        """omega(Phi(f) Phi(g))."""
        if self.parent is not None:
            return self.parent.two_point(self.morphism.push(f), self.morphism.push(g))
        key = (f, g)
        if key not in self._cache:
            self._cache[key] = smear(self.kernel, f, g, 0.0, order=self.order)
        return self._cache[key]

    def evaluate(self, a: AlgebraElement) -> complex:
        if a.chart != self.chart:
            raise ChartError(f"element on {a.chart}, state lives on {self.chart}")
        if self.parent is not None:
            return self.parent.evaluate(alpha_apply(self.morphism, a))
        n = a.degree
        if n == 0:
            return complex(a.coefficient)
        if n % 2:
            return 0j
        gens = a.generators
        total = 0j
        for pairing in _pairings(list(range(n))):
            term = 1.0 + 0j
            for i, j in pairing:
                term *= self.two_point(gens[i], gens[j])
            total += term
        return complex(a.coefficient * total)

    def evaluate_many(self, elements) -> np.ndarray:
        """Evaluate a batch of elements.

        Degree-2 elements whose generators are time translates of a common
        pair are smeared in one vectorised pass: translating the first
        generator by a and the second by b is a kernel time shift of a - b.
        """
        elements = list(elements)
        if self.parent is not None:
            return self.parent.evaluate_many([alpha_apply(self.morphism, a) for a in elements])
        out = np.empty(len(elements), dtype=complex)
        groups = defaultdict(list)
        for i, a in enumerate(elements):
            if a.chart != self.chart:
                raise ChartError(f"element on {a.chart}, state lives on {self.chart}")
            if a.degree == 2:
                f, g = a.generators
                groups[(_translation_class(f), _translation_class(g))].append(i)
            else:
                out[i] = self.evaluate(a)
        for idx in groups.values():
            f0, g0 = elements[idx[0]].generators
            shifts = np.array([_time_offset(elements[i].generators[0], f0)
                               - _time_offset(elements[i].generators[1], g0) for i in idx])
            vals = smear_series(self.kernel, f0, g0, shifts, order=self.order)
            for k, i in enumerate(idx):
                out[i] = elements[i].coefficient * vals[k]
        return out

    def positivity(self, f: TestFunction2D) -> float:
        """Re omega(Phi(f)* Phi(f))."""
        a = AlgebraElement.field(f)
        return float(self.evaluate(a.adjoint() * a).real)

    def describe(self) -> dict:
        out = {"label": self.label, "chart": str(self.chart), "kernel": self.kernel.describe()}
        if self.morphism is not None:
            out["morphism"] = self.morphism.describe()
        return out


def _translation_class(g: TestFunction2D):
    """Key shared by test functions that differ only by a time translation."""
    return (g.chart, g.u.radius, g.u.amplitude, g.v.radius, g.v.amplitude,
            round(g.v.center - g.u.center, 12), round(g.region.center.x, 12),
            g.region.half_u, g.region.half_v)


def _time_offset(g: TestFunction2D, ref: TestFunction2D) -> float:
    return 0.5 * ((g.u.center - ref.u.center) + (g.v.center - ref.v.center))


def state_pullback(omega: QuasiFreeState, psi: EmbeddingMorphism) -> QuasiFreeState:
    """alpha_psi^* omega, a state on the source chart of ``psi``."""
    if psi.target != omega.chart:
        raise ChartError(f"state on {omega.chart}, morphism lands on {psi.target}")
    label = "omega_c" if psi.source.is_cylinder and not psi.target.is_cylinder else "custom"
    return QuasiFreeState(omega.kernel, psi.source, label, parent=omega, morphism=psi,
                          order=omega.order)


def observable_class(a: AlgebraElement, period: float = TWO_PI, max_branch: int = 1) -> list[AlgebraElement]:
    """Deck-orbit representatives alpha_{gamma_n}(a) for n = -max_branch .. max_branch."""
    if a.chart.is_cylinder:
        raise ChartError("observable classes are formed on the plane")
    if max_branch < 0:
        raise ValueError("max_branch must be non-negative")
    return [a if n == 0 else alpha_apply(EmbeddingMorphism.plane_map(n, 0.0, period), a)
            for n in range(-max_branch, max_branch + 1)]


def project_element(a: AlgebraElement, period: float = TWO_PI) -> AlgebraElement:
    """The cylinder element whose generators lift to those of ``a``."""
    if a.chart.is_cylinder:
        raise ChartError("expected a plane element")
    return AlgebraElement(tuple(project_to_cylinder(f, period) for f in a.generators),
                          Chart.cylinder(period), a.coefficient)
