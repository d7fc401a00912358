"""
Fully discrete time steppers: the explicit scheme and the implicit-explicit
(IMEX) scheme, the CFL bound of the explicit one, and the banded operator
D_n = I - tau (L~^h + I^h_delta) solved at every IMEX step.
"""

import enum
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import linalg as splinalg

from .exceptions import (
    CflViolationError,
    DeltaTooLargeError,
    InvalidParamsError,
    ResolutionMismatchError,
    SingularMatrixError,
)
from .grid import Grid, GridFunction, check_same_grid, norms
from .levy import CellCoefficients, LevyMeasure, varsigma
from .noise import BinnedIncrements, NoisePath, bin_increments
from .operators import (
    Coefficients,
    apply_Ih_delta,
    apply_Ih_deltac,
    apply_Itilde_deltac,
    apply_Lh,
    apply_Nh,
    jump_drift_stencil,
    shift_sum,
    small_jump_weights,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SchemeKind(str, enum.Enum):
    EXPLICIT = "explicit"
    IMEX = "imex"


@dataclass(frozen=True)
class ErrorRegion:
    """Nodes used for error norms: the full grid or |x| <= inner_radius."""

    inner_radius: Optional[float] = None

    @classmethod
    def parse(cls, text: str) -> "ErrorRegion":
        text = str(text).strip().lower()
        if text in ("full", "fullgrid", ""):
            return cls()
        try:
            return cls(float(text))
        except ValueError:
            raise InvalidParamsError(f"Error region must be 'full' or a radius, got {text!r}") from None

    def mask(self, grid: Grid) -> np.ndarray:
        if self.inner_radius is None:
            return np.ones(grid.count, dtype=bool)
        return np.abs(grid.nodes) <= self.inner_radius + 1e-12

    def __str__(self) -> str:
        return "full" if self.inner_radius is None else f"{self.inner_radius:g}"


@dataclass(frozen=True)
class SchemeConfig:
    h: float
    tau: float
    T: float
    delta: float
    scheme: SchemeKind = SchemeKind.EXPLICIT
    compensator_cancellation: bool = True
    error_region: ErrorRegion = field(default_factory=ErrorRegion)

    def __post_init__(self):
        object.__setattr__(self, "scheme", SchemeKind(self.scheme))
        if not self.h > 0:
            raise InvalidParamsError(f"h must be positive, got {self.h}")
        if not 0 < self.delta <= 1:
            raise InvalidParamsError(f"delta must lie in (0, 1], got {self.delta}")
        if self.steps < 1:
            raise InvalidParamsError(f"T={self.T} is not a positive integer multiple of tau={self.tau}")

    @property
    def steps(self) -> int:
        if not self.tau > 0:
            return -1
        ratio = self.T / self.tau
        n = int(round(ratio))
        return n if abs(ratio - n) <= 1e-9 * max(1.0, ratio) else -1


@dataclass(frozen=True)
class Forcing:
    """
    Free terms f(t, x), g^rho(t, x) and o(t, x, z); None means zero.
    """

    f: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    g: Tuple[Optional[Callable[[float, np.ndarray], np.ndarray]], ...] = ()
    o: Optional[Callable[[float, np.ndarray, float], np.ndarray]] = None

    def f_at(self, grid: Grid, t: float) -> Optional[np.ndarray]:
        if self.f is None:
            return None
        return np.broadcast_to(self.f(t, grid.nodes), (grid.count,))

    def g_at(self, grid: Grid, t: float, channel: int) -> Optional[np.ndarray]:
        if channel >= len(self.g) or self.g[channel] is None:
            return None
        return np.broadcast_to(self.g[channel](t, grid.nodes), (grid.count,))

    def jump_increment(
        self, grid: Grid, t: float, sizes: np.ndarray, m: LevyMeasure, tau: float, eps: float
    ) -> Optional[np.ndarray]:
        """sum_j o(t, x, z_j) over the step's jumps minus tau * int_{eps<=|z|<=Z} o pi(dz)."""
        if self.o is None:
            return None
        x = grid.nodes
        out = np.zeros(grid.count)
        for z in sizes:
            out += self.o(t, x, float(z))
        radius = m.support_radius
        if eps < radius:
            for lo, hi in ((eps, radius), (-radius, -eps)):
                comp, _ = integrate.quad_vec(lambda z: self.o(t, x, z) * m.density(z), lo, hi)
                out -= tau * comp
        return out


NO_FORCING = Forcing()


def cfl_rhs(
    c: Coefficients,
    m: LevyMeasure,
    delta: float,
    noise_measure: Optional[LevyMeasure] = None,
    kappa: Optional[float] = None,
    times: Sequence[float] = (0.0,),
) -> float:
    """
    (kappa - s(delta)) / (2 sup|a11| + s1(delta))^2, the bound on d*tau/h^2.

    kappa defaults to the coercivity margin of the coefficients. Both the
    margin and sup|a11| are taken over the sample `times`.
    """
    s1, _, s = varsigma(m, delta, noise_measure)
    if c.is_constant:
        times = (0.0,)
    if kappa is None:
        kappa = min(c.kappa(t) for t in times)
    sup_a11 = max(c.sup_a11(t) for t in times)
    if s >= kappa:
        raise DeltaTooLargeError(f"s(delta)={s:.6g} is not below kappa={kappa:.6g} for delta={delta}")
    return (kappa - s) / (2.0 * sup_a11 + s1) ** 2


def check_cfl(
    config: SchemeConfig, c: Coefficients, m: LevyMeasure, noise_measure: Optional[LevyMeasure] = None
) -> float:
    """
    Raise CflViolationError unless tau/h^2 is strictly below the bound
    evaluated at every step start t_0 .. t_{steps-1}.
    """
    times = config.tau * np.arange(config.steps)
    bound = cfl_rhs(c, m, config.delta, noise_measure, times=times)
    ratio = config.tau / config.h**2
    if not ratio < bound:
        raise CflViolationError(f"tau/h^2={ratio:.6g} is not below the CFL bound {bound:.6g} (h={config.h})")
    return bound


def _shift_matrix(n: int, r: int) -> sparse.spmatrix:
    # row i picks column i + r; rows whose column leaves the grid stay empty
    return sparse.eye(n, k=r, format="csr")


class BandedOperator:
    """
    D_n = I - tau (L~^h_{t_n} + I^h_delta) as a sparse banded matrix with a
    lazily computed LU factorization (natural ordering keeps the band).
    One operator may be shared by worker threads; the SuperLU handle is
    guarded by a lock.
    """

    def __init__(self, matrix: sparse.spmatrix, bandwidth: int, tau: float, t: float):
        self.matrix = sparse.csc_matrix(matrix)
        self.bandwidth = bandwidth
        self.tau = tau
        self.t = t
        self._lu = None
        self._lock = threading.Lock()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def diagonal_dominance(self) -> float:
        """min_i |D_ii| - sum_{j != i} |D_ij|; positive means strictly dominant."""
        absolute = abs(self.matrix)
        diag = np.abs(self.matrix.diagonal())
        off = np.asarray(absolute.sum(axis=1)).ravel() - diag
        return float(np.min(diag - off))

    def factorize(self) -> "BandedOperator":
        with self._lock:
            if self._lu is None:
                try:
                    self._lu = splinalg.splu(self.matrix, permc_spec="NATURAL")
                except RuntimeError as e:
                    raise SingularMatrixError(f"Implicit step matrix is singular: {e}") from e
        return self

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def solve(self, y: np.ndarray) -> np.ndarray:
        self.factorize()
        with self._lock:
            x = self._lu.solve(np.asarray(y, dtype=float))
        residual = np.linalg.norm(self.matrix @ x - y)
        scale = np.linalg.norm(y)
        if not np.all(np.isfinite(x)) or residual > RESIDUAL_TOL * scale:
            raise SingularMatrixError(f"Implicit solve residual {residual:.3e} exceeds tolerance (|y|={scale:.3e})")
        return x


def imex_matrix(
    c: Coefficients,
    cc: CellCoefficients,
    tau: float,
    t: float,
) -> BandedOperator:
    """Assemble D_n = I - tau (L~^h_t + I^h_delta) with zero extension at the boundary."""
    grid = c.grid
    if cc.h != grid.h:
        raise InvalidParamsError(f"Cell tables for h={cc.h} do not match grid h={grid.h}")
    n, h = grid.count, grid.h
    eye = sparse.identity(n, format="csr")
    up, down = _shift_matrix(n, 1), _shift_matrix(n, -1)
    second = (up - 2.0 * eye + down) / (h * h)

    def diag(value):
        return sparse.diags(np.broadcast_to(value, (n,)).astype(float))

    operator = diag(c.sample(c.a11, t)) @ second
    operator = operator + diag(c.sample(c.a10, t)) @ ((up - eye) / h)
    operator = operator + diag(c.sample(c.a01, t)) @ ((eye - down) / h)
    operator = operator + diag(c.sample(c.a00, t))
    operator = operator - cc.total_first_moment * (up - down) / (2.0 * h)
    operator = operator - cc.total_mass * eye

    weights = small_jump_weights(cc)
    for r, w in weights.items():
        operator = operator + w * (_shift_matrix(n, r) @ second)

    bandwidth = 1 + max([abs(r) for r in weights] + [0])
    result = BandedOperator(eye - tau * operator, bandwidth=bandwidth, tau=tau, t=t)
    dominance = result.diagonal_dominance()
    if dominance <= 0:
        logger.warning(f"Implicit matrix at h={h}, tau={tau} is not diagonally dominant ({dominance:.3e})")
    else:
        logger.debug(f"Implicit matrix h={h} tau={tau}: bandwidth={bandwidth}, dominance={dominance:.3e}")
    return result


def _stochastic_terms(
    u: GridFunction,
    c: Coefficients,
    cc: CellCoefficients,
    inc: BinnedIncrements,
    n: int,
    forcing: Forcing,
    cancel: bool,
) -> np.ndarray:
    """Wiener, small-jump, large-jump and o(z) terms of step n, evaluated at t_{n-1}."""
    grid = u.grid
    t = (n - 1) * inc.tau
    out = np.zeros(grid.count)

    for rho in range(len(c.channels)):
        dw = inc.wiener[n - 1, rho]
        term = apply_Nh(c, t, rho, u).values
        g = forcing.g_at(grid, t, rho)
        if g is not None:
            term = term + g
        out += term * dw

    for k, dp in inc.small_step(n - 1).items():
        if dp != 0:
            out += dp * jump_drift_stencil(cc, u, k).values

    jumps = inc.jumps_in_step(n - 1)
    o_term = forcing.jump_increment(grid, t, jumps, cc.measure, inc.tau, inc.eps)
    if o_term is not None:
        out += o_term

    weights = inc.large_raw_step(n - 1) if cancel else inc.large_compensated_step(n - 1)
    if weights:
        out += shift_sum(u, weights).values - math.fsum(weights.values()) * u.values
    return out


def _check_increments(grid: Grid, cc: CellCoefficients, inc: BinnedIncrements, n: int):
    if inc.h != grid.h or cc.h != grid.h:
        raise ResolutionMismatchError(f"Increments (h={inc.h}) and cells (h={cc.h}) do not match grid h={grid.h}")
    if not 1 <= n <= inc.steps:
        raise InvalidParamsError(f"Step n={n} outside 1..{inc.steps}")


def step_explicit(
    state: GridFunction,
    c: Coefficients,
    cc: CellCoefficients,
    inc: BinnedIncrements,
    n: int,
    forcing: Forcing = NO_FORCING,
    compensator_cancellation: bool = True,
) -> GridFunction:
    """One explicit step from t_{n-1} to t_n."""
    check_same_grid(c.grid, state)
    _check_increments(state.grid, cc, inc, n)
    tau = inc.tau
    t = (n - 1) * tau
    u = state
    drift = (
        apply_Lh(c, t, u).values
        + apply_Ih_delta(cc, u).values
        + apply_Ih_deltac(cc, u, include_jump_drift=not compensator_cancellation).values
    )
    f = forcing.f_at(u.grid, t)
    if f is not None:
        drift = drift + f
    out = u.values + tau * drift + _stochastic_terms(u, c, cc, inc, n, forcing, compensator_cancellation)
    return GridFunction._trusted(u.grid, out)


def step_imex(
    state: GridFunction,
    c: Coefficients,
    cc: CellCoefficients,
    inc: BinnedIncrements,
    n: int,
    forcing: Forcing = NO_FORCING,
    compensator_cancellation: bool = True,
    operator: Optional[BandedOperator] = None,
) -> GridFunction:
    """
    One IMEX step: solve D_n v_n = y with the stochastic part of y dropped
    on the first step. From n = 2 on, compensator cancellation lets raw
    counts drive the large jumps and leaves out the explicit zeta_bar
    shifts; the step is the same as the compensated one.

    A prebuilt `operator` is reused only for constant coefficients.
    """
    check_same_grid(c.grid, state)
    _check_increments(state.grid, cc, inc, n)
    tau = inc.tau
    t_n = n * tau
    v = state
    y = v.values.copy()
    if n > 1 and compensator_cancellation:
        # zeta_bar shifts cancel against the raw-count compensator, the mass term remains
        y += tau * cc.total_mass * v.values
    else:
        y += tau * apply_Itilde_deltac(cc, v).values
    f = forcing.f_at(v.grid, t_n)
    if f is not None:
        y += tau * f
    if n > 1:
        y += _stochastic_terms(v, c, cc, inc, n, forcing, compensator_cancellation)
    elif forcing.o is not None:
        y += forcing.jump_increment(v.grid, 0.0, inc.jumps_in_step(0), cc.measure, tau, inc.eps)

    if operator is None or not c.is_constant:
        operator = imex_matrix(c, cc, tau, t_n)
    elif operator.tau != tau or operator.shape[0] != v.grid.count:
        raise ResolutionMismatchError(f"Prebuilt operator (tau={operator.tau}) does not match tau={tau}")
    return GridFunction._trusted(v.grid, operator.solve(y))


@dataclass
class Trajectory:
    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    def state(self, n: int) -> GridFunction:
        return GridFunction(self.grid, self.values[n])

    def max_l2(self) -> float:
        return max(norms(self.state(n))[0] for n in range(len(self)))


def iterate(
    config: SchemeConfig,
    c: Coefficients,
    cc: CellCoefficients,
    increments: BinnedIncrements,
    initial: GridFunction,
    forcing: Forcing = NO_FORCING,
    operator: Optional[BandedOperator] = None,
) -> Iterator[Tuple[int, float, GridFunction]]:
    """
    Yield (n, t_n, state) for n = 0..steps without storing the trajectory.
    The CFL condition is not checked here; see run().
    """
    check_same_grid(c.grid, initial)
    if increments.steps != config.steps or abs(increments.tau - config.tau) > 1e-12 * config.tau:
        raise ResolutionMismatchError(
            f"Increments have {increments.steps} steps of {increments.tau}, "
            f"config needs {config.steps} of {config.tau}"
        )
    cancel = config.compensator_cancellation
    if config.scheme is SchemeKind.IMEX and operator is None and c.is_constant:
        operator = imex_matrix(c, cc, config.tau, config.tau).factorize()

    state = initial
    yield 0, 0.0, state
    for n in range(1, config.steps + 1):
        if config.scheme is SchemeKind.EXPLICIT:
            state = step_explicit(state, c, cc, increments, n, forcing, cancel)
        else:
            state = step_imex(state, c, cc, increments, n, forcing, cancel, operator)
        yield n, n * config.tau, state


def run(
    config: SchemeConfig,
    c: Coefficients,
    m: LevyMeasure,
    cc: CellCoefficients,
    path: NoisePath,
    initial: GridFunction,
    forcing: Forcing = NO_FORCING,
    increments: Optional[BinnedIncrements] = None,
) -> Trajectory:
    """
    Run one scheme over (0, T] and keep every state.

    The explicit scheme checks its CFL condition once before stepping.
    """
    if config.scheme is SchemeKind.EXPLICIT:
        check_cfl(config, c, m)
    if increments is None:
        increments = bin_increments(path, cc, config.tau)
    values = np.empty((config.steps + 1, initial.grid.count))
    times = np.empty(config.steps + 1)
    for n, t, state in iterate(config, c, cc, increments, initial, forcing):
        values[n] = state.values
        times[n] = t
    return Trajectory(grid=initial.grid, times=times, values=values)

