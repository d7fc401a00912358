"""
Uniform 1D grid truncated to [-L, L], grid functions with zero extension,
and the first/second-order difference operators built on them.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Tuple, Union

import numpy as np

from .exceptions import GridMismatchError, InvalidParamsError

logger = logging.getLogger(__name__)

DEFAULT_RADIUS = 8.0


@dataclass(frozen=True)
class Grid:
    """
    Nodes k*h for every integer k with |k*h| <= radius.

    The origin is always a node, so the node count is odd. Index 0 of a
    values array corresponds to the node -half_count*h.
    """

    h: float
    radius: float = DEFAULT_RADIUS
    count: int = field(init=False)

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InvalidParamsError(f"Grid spacing must be positive, got h={self.h}")
        if self.radius < self.h:
            raise InvalidParamsError(f"Grid radius {self.radius} is smaller than h={self.h}")
        # tolerate radius/h landing a hair below an integer
        half = int(math.floor(self.radius / self.h + 1e-9))
        object.__setattr__(self, "count", 2 * half + 1)

    @property
    def half_count(self) -> int:
        return self.count // 2

    @property
    def indices(self) -> np.ndarray:
        """Signed node indices k, from -half_count to half_count."""
        return np.arange(-self.half_count, self.half_count + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.indices * self.h

    def position(self, k: int) -> int:
        """Array position of signed node index k."""
        return k + self.half_count

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.count))

    def sample(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        """Evaluate a vectorized function at the grid nodes."""
        return GridFunction(self, np.broadcast_to(fn(self.nodes), (self.count,)))

    def same_as(self, other: "Grid") -> bool:
        return self.count == other.count and self.h == other.h


class GridFunction:
    """
    Immutable real values on a Grid; identically zero outside [-L, L].
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        array = np.array(values, dtype=float)
        if array.shape != (grid.count,):
            raise GridMismatchError(
                f"Expected {grid.count} values for grid h={grid.h}, got shape {array.shape}"
            )
        if not np.all(np.isfinite(array)):
            raise InvalidParamsError("Grid function values must be finite")
        array.flags.writeable = False
        self.grid = grid
        self.values = array

    @classmethod
    def _trusted(cls, grid: Grid, array: np.ndarray) -> "GridFunction":
        # internal constructor for operator outputs, skips the finiteness scan
        obj = cls.__new__(cls)
        array.flags.writeable = False
        obj.grid = grid
        obj.values = array
        return obj

    def at(self, k: int) -> float:
        """Value at signed node index k, zero outside the stored range."""
        pos = self.grid.position(k)
        if 0 <= pos < self.grid.count:
            return float(self.values[pos])
        return 0.0

    def _check(self, other: "GridFunction"):
        if not self.grid.same_as(other.grid):
            raise GridMismatchError(
                f"Grid mismatch: h={self.grid.h}/{other.grid.h}, "
                f"count={self.grid.count}/{other.grid.count}"
            )

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction._trusted(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction._trusted(self.grid, self.values - other.values)

    def __mul__(self, scale: Union[float, np.ndarray]) -> "GridFunction":
        return GridFunction._trusted(self.grid, self.values * scale)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction._trusted(self.grid, -self.values)

    def __repr__(self) -> str:
        return f"GridFunction(h={self.grid.h}, count={self.grid.count})"


def check_same_grid(grid: Grid, phi: GridFunction):
    if not grid.same_as(phi.grid):
        raise GridMismatchError(
            f"Operand on grid h={phi.grid.h} (count={phi.grid.count}) "
            f"does not match h={grid.h} (count={grid.count})"
        )


def shifted_values(values: np.ndarray, k: int) -> np.ndarray:
    """result[i] = values[i + k], zero where i + k leaves the array."""
    n = values.shape[-1]
    out = np.zeros_like(values)
    if k == 0:
        out[...] = values
    elif 0 < k < n:
        out[..., : n - k] = values[..., k:]
    elif -n < k < 0:
        out[..., -k:] = values[..., : n + k]
    return out


def shift(phi: GridFunction, k: int) -> GridFunction:
    """phi(x + k*h) with zero extension."""
    return GridFunction._trusted(phi.grid, shifted_values(phi.values, int(k)))


def forward_diff(phi: GridFunction, sign: int = 1) -> GridFunction:
    """(phi(x + sign*h) - phi(x)) / (sign*h); sign=-1 gives the backward difference."""
    if sign not in (1, -1):
        raise InvalidParamsError(f"sign must be +1 or -1, got {sign}")
    step = sign * phi.grid.h
    return GridFunction._trusted(phi.grid, (shifted_values(phi.values, sign) - phi.values) / step)


def symmetric_diff(phi: GridFunction) -> GridFunction:
    """Average of the forward and backward differences (central difference)."""
    v = phi.values
    return GridFunction._trusted(
        phi.grid, (shifted_values(v, 1) - shifted_values(v, -1)) / (2.0 * phi.grid.h)
    )


def second_diff(phi: GridFunction) -> GridFunction:
    """delta_h delta_{-h} phi, the three-point second difference."""
    v = phi.values
    h2 = phi.grid.h * phi.grid.h
    return GridFunction._trusted(
        phi.grid, (shifted_values(v, 1) - 2.0 * v + shifted_values(v, -1)) / h2
    )


def inner(phi: GridFunction, psi: GridFunction) -> float:
    """l2(G_h) inner product h * sum(phi * psi)."""
    phi._check(psi)
    return float(phi.grid.h * np.dot(phi.values, psi.values))


def norms(phi: GridFunction) -> Tuple[float, float]:
    """Return (l2, sup) with l2 = sqrt(h * sum(values^2))."""
    v = phi.values
    l2 = math.sqrt(phi.grid.h * float(np.dot(v, v)))
    sup = float(np.max(np.abs(v))) if v.size else 0.0
    return l2, sup
