"""Uniform annulus grid, radial profiles and boundary-condition records."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, UsageError


class Side(str, Enum):
    INNER = "inner"  # r = 1 - epsilon, the free boundary
    OUTER = "outer"  # r = 1, the vessel wall


class BCKind(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    ROBIN = "robin"


@dataclass(frozen=True)
class Grid:
    """Nodes r_i = 1 - eps + i h on [1 - eps, 1] with h = eps / (N - 1)."""

    epsilon: float
    N: int = settings.grid_n
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("grid epsilon must lie in (0, 1)", epsilon=self.epsilon)
        if self.N < settings.grid_min_nodes or self.N % 2 == 0:
            raise ConfigError(
                f"grid needs an odd number of nodes >= {settings.grid_min_nodes}", N=self.N
            )
        nodes = np.linspace(1.0 - self.epsilon, 1.0, self.N)
        nodes[0] = 1.0 - self.epsilon
        nodes[-1] = 1.0
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def h(self) -> float:
        return self.epsilon / (self.N - 1)

    @property
    def r_inner(self) -> float:
        return float(self.nodes[0])

    @property
    def interior(self) -> slice:
        return slice(1, self.N - 1)

    def same_as(self, other: "Grid") -> bool:
        return self.N == other.N and self.epsilon == other.epsilon

    def require_same(self, other: "Grid", what: str = "fields") -> None:
        if not self.same_as(other):
            raise UsageError(
                f"{what} live on different grids",
                left=(self.epsilon, self.N),
                right=(other.epsilon, other.N),
            )

    def field(self, values, name: str = "") -> "RadialField":
        return RadialField(self, np.asarray(values, dtype=float), name)


@dataclass(frozen=True, eq=False)
class RadialField:
    """A scalar profile sampled on a Grid."""

    grid: Grid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.N,):
            raise UsageError(
                "field length does not match grid", length=values.shape, N=self.grid.N
            )
        if not np.all(np.isfinite(values)):
            raise UsageError("field holds non-finite values", name=self.name)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def inner(self) -> float:
        return float(self.values[0])

    @property
    def outer(self) -> float:
        return float(self.values[-1])

    def derivative(self) -> np.ndarray:
        """Centered interior differences, one-sided three-point at both ends."""
        return np.gradient(self.values, self.grid.h, edge_order=2)

    def second_derivative(self) -> np.ndarray:
        h = self.grid.h
        u = self.values
        d2 = np.empty_like(u)
        d2[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
        d2[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h**2
        d2[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / h**2
        return d2

    def inner_derivative(self) -> float:
        u, h = self.values, self.grid.h
        return float((-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h))

    def outer_derivative(self) -> float:
        u, h = self.values, self.grid.h
        return float((3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h))

    def resample(self, grid: Grid) -> "RadialField":
        """Carry the profile to another annulus through s = (r - (1 - eps)) / eps."""
        s_old = (self.grid.nodes - self.grid.r_inner) / self.grid.epsilon
        s_new = (grid.nodes - grid.r_inner) / grid.epsilon
        return RadialField(grid, np.interp(s_new, s_old, self.values), self.name)


@dataclass(frozen=True)
class BoundaryCondition:
    """a*u + b*u' = g, where u' is the coordinate derivative d/dr on either side."""

    kind: BCKind
    side: Side
    a: float
    b: float
    g: float = 0.0

    def __post_init__(self):
        if self.a == 0.0 and self.b == 0.0:
            raise ConfigError("boundary condition needs (a, b) != (0, 0)", side=self.side)
        if self.kind is BCKind.ROBIN and self.b == 0.0:
            raise ConfigError("Robin condition needs a derivative coefficient", side=self.side)
        if self.kind is BCKind.DIRICHLET and self.b != 0.0:
            raise ConfigError("Dirichlet condition carries no derivative term", side=self.side)
        if self.kind is BCKind.NEUMANN and self.a != 0.0:
            raise ConfigError("Neumann condition carries no value term", side=self.side)

    @classmethod
    def dirichlet(cls, side: Side, value: float) -> "BoundaryCondition":
        return cls(BCKind.DIRICHLET, side, 1.0, 0.0, float(value))

    @classmethod
    def neumann(cls, side: Side, slope: float = 0.0) -> "BoundaryCondition":
        return cls(BCKind.NEUMANN, side, 0.0, 1.0, float(slope))

    @classmethod
    def robin(cls, side: Side, a: float, b: float, g: float) -> "BoundaryCondition":
        return cls(BCKind.ROBIN, side, float(a), float(b), float(g))

    @classmethod
    def transfer(cls, beta: float, g: float) -> "BoundaryCondition":
        """The free-boundary form -u' + beta*u = g at r = 1 - eps."""
        return cls.robin(Side.INNER, beta, -1.0, g)

    def residual(self, u: RadialField) -> float:
        if self.side is Side.INNER:
            value, slope = u.inner, u.inner_derivative()
        else:
            value, slope = u.outer, u.outer_derivative()
        return self.a * value + self.b * slope - self.g


def check_pair(inner: BoundaryCondition, outer: BoundaryCondition, n: int) -> Optional[str]:
    """Return a reason when the pair leaves the operator singular."""
    if inner.side is not Side.INNER or outer.side is not Side.OUTER:
        return "boundary conditions must be given as (inner, outer)"
    if n == 0 and inner.kind is BCKind.NEUMANN and outer.kind is BCKind.NEUMANN:
        return "Neumann-Neumann problem for L_0 determines u only up to a constant"
    return None
