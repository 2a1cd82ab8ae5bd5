"""Points, null coordinates and diamonds on the plane and on the cylinder.

The plane is R x R with coordinates (t, x). The cylinder is R x S^1 obtained
by identifying x with x + L. The covering map forgets the winding, deck
transformations translate by multiples of L, and time translations shift t.
All objects are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartError, EmbeddingError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Chart:
    """Either the plane (``period is None``) or a cylinder of period L."""

    period: float | None = None

    def __post_init__(self):
        if self.period is not None and not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError(f"cylinder period must be positive and finite, got {self.period}")

    @classmethod
    def plane(cls) -> "Chart":
        return cls(None)

    @classmethod
    def cylinder(cls, period: float = TWO_PI) -> "Chart":
        return cls(float(period))

    @property
    def is_cylinder(self) -> bool:
        return self.period is not None

    def __str__(self):
        return "plane" if self.period is None else f"cylinder(L={self.period:.17g})"


PLANE = Chart.plane()


def wrap_coordinate(x: float, period: float) -> float:
    """Floored modulo onto [0, period)."""
    r = x % period
    # x % L can round up to L for tiny negative x
    if r >= period:
        r = 0.0
    return float(r)


@dataclass(frozen=True)
class NullCoords:
    U: float
    V: float


@dataclass(frozen=True)
class SpacetimePoint:
    """A point (t, x). Cylinder points are stored with 0 <= x < L."""

    t: float
    x: float
    chart: Chart = PLANE

    def __post_init__(self):
        if self.chart.is_cylinder:
            object.__setattr__(self, "x", wrap_coordinate(float(self.x), self.chart.period))


def to_null(p: SpacetimePoint) -> NullCoords:
    return NullCoords(p.t - p.x, p.t + p.x)


def from_null(n: NullCoords, chart: Chart = PLANE) -> SpacetimePoint:
    return SpacetimePoint(0.5 * (n.U + n.V), 0.5 * (n.V - n.U), chart)


@dataclass(frozen=True)
class TimeTranslation:
    """Lambda(tau): (t, x) -> (t + tau, x), on either chart."""

    tau: float = 0.0

    def __call__(self, p: SpacetimePoint) -> SpacetimePoint:
        return SpacetimePoint(p.t + self.tau, p.x, p.chart)

    def compose(self, other: "TimeTranslation") -> "TimeTranslation":
        return TimeTranslation(self.tau + other.tau)

    def inverse(self) -> "TimeTranslation":
        return TimeTranslation(-self.tau)


@dataclass(frozen=True)
class DeckTransformation:
    """gamma_n: (t, x) -> (t, x + n L) on the plane."""

    n: int = 0
    period: float = TWO_PI

    def __post_init__(self):
        if int(self.n) != self.n:
            raise ValueError("deck index must be an integer")
        object.__setattr__(self, "n", int(self.n))

    @property
    def shift(self) -> float:
        return self.n * self.period

    def __call__(self, p: SpacetimePoint) -> SpacetimePoint:
        return deck_apply(self, p)

    def compose(self, other: "DeckTransformation") -> "DeckTransformation":
        if other.period != self.period:
            raise ValueError("cannot compose deck transformations of different periods")
        return DeckTransformation(self.n + other.n, self.period)

    def inverse(self) -> "DeckTransformation":
        return DeckTransformation(-self.n, self.period)


def deck_apply(gamma: DeckTransformation, p: SpacetimePoint) -> SpacetimePoint:
    if p.chart.is_cylinder:
        raise ChartError("deck transformations act on plane points only")
    return SpacetimePoint(p.t, p.x + gamma.shift, PLANE)


@dataclass(frozen=True)
class CoveringMap:
    """pi: R x R -> R x S^1, (t, x) -> (t, x mod L)."""

    period: float = TWO_PI

    @property
    def cylinder(self) -> Chart:
        return Chart.cylinder(self.period)

    def __call__(self, p: SpacetimePoint) -> SpacetimePoint:
        if p.chart.is_cylinder:
            raise ChartError("covering map takes plane points")
        return SpacetimePoint(p.t, p.x, self.cylinder)

    def lift(self, p: SpacetimePoint, branch: int = 0) -> SpacetimePoint:
        """The preimage of a cylinder point on sheet ``branch``."""
        self._check_cylinder(p.chart)
        return SpacetimePoint(p.t, p.x + branch * self.period, PLANE)

    def project_diamond(self, d: "Diamond") -> "Diamond":
        if d.chart.is_cylinder:
            raise ChartError("project_diamond takes a plane diamond")
        out = Diamond(self(d.center), d.half_u, d.half_v)
        return out

    def lift_diamond(self, d: "Diamond", branch: int = 0) -> "Diamond":
        self._check_cylinder(d.chart)
        return Diamond(self.lift(d.center, branch), d.half_u, d.half_v)

    def preimage_diamonds(self, d: "Diamond", count: int) -> list["Diamond"]:
        """The sheets D_0, D_1, D_-1, D_2, ... over a cylinder diamond.

        Only the first ``count`` sheets of the infinite family are returned.
        """
        self._check_cylinder(d.chart)
        if count < 1:
            raise ValueError("count must be at least 1")
        return [self.lift_diamond(d, n) for n in branch_order(count)]

    def _check_cylinder(self, chart: Chart):
        if not chart.is_cylinder:
            raise ChartError("expected a cylinder object")
        if chart.period != self.period:
            raise ChartError(f"period mismatch: {chart.period} vs {self.period}")


def branch_order(count: int) -> list[int]:
    """0, 1, -1, 2, -2, ... truncated to ``count`` entries."""
    out = [0]
    k = 1
    while len(out) < count:
        out.append(k)
        if len(out) < count:
            out.append(-k)
        k += 1
    return out


@dataclass(frozen=True)
class Diamond:
    """Open causal diamond |U - U_c| < half_u, |V - V_c| < half_v.

    On a cylinder the spatial extent ``half_u + half_v`` must stay below the
    period so that the diamond sits inside a single covering chart.
    """

    center: SpacetimePoint
    half_u: float
    half_v: float
    chart: Chart = field(init=False)

    def __post_init__(self):
        if not (self.half_u > 0 and self.half_v > 0):
            raise ValueError("diamond null half-widths must be positive")
        object.__setattr__(self, "chart", self.center.chart)
        if self.chart.is_cylinder and self.spatial_extent >= self.chart.period:
            raise EmbeddingError(
                f"diamond spatial extent {self.spatial_extent} >= period {self.chart.period}; "
                "not embeddable in one chart"
            )

    @property
    def spatial_extent(self) -> float:
        return self.half_u + self.half_v

    @property
    def null_center(self) -> NullCoords:
        return to_null(self.center)

    def representative_x(self, x):
        """Chart coordinate of ``x`` nearest to the diamond centre (cylinder only)."""
        x = np.asarray(x, dtype=float)
        if not self.chart.is_cylinder:
            return x
        L = self.chart.period
        return x - L * np.round((x - self.center.x) / L)

    def contains(self, p: SpacetimePoint) -> bool:
        if p.chart != self.chart:
            raise ChartError(f"point on {p.chart} tested against diamond on {self.chart}")
        x = float(self.representative_x(p.x))
        c = self.null_center
        return abs((p.t - x) - c.U) < self.half_u and abs((p.t + x) - c.V) < self.half_v

    def __contains__(self, p: SpacetimePoint) -> bool:
        return self.contains(p)

    def translated(self, dt: float = 0.0, dx: float = 0.0) -> "Diamond":
        c = SpacetimePoint(self.center.t + dt, self.center.x + dx, self.chart)
        return Diamond(c, self.half_u, self.half_v)

    def disjoint(self, other: "Diamond") -> bool:
        """Conservative test via the bounding null rectangles (same chart)."""
        if other.chart != self.chart:
            raise ChartError("diamonds on different charts")
        a, b = self.null_center, other.null_center
        windings = [0]
        if self.chart.is_cylinder:
            L = self.chart.period
            k = round((other.center.x - self.center.x) / L)
            windings = [k - 1, k, k + 1]
        for k in windings:
            # move the other diamond by -k L in x
            shift = k * self.chart.period if k else 0.0
            du, dv = a.U - b.U - shift, a.V - b.V + shift
            if abs(du) < self.half_u + other.half_u and abs(dv) < self.half_v + other.half_v:
                return False
        return True
