"""
Discrete spatial operators of the schemes: the local operators L^h and N^h,
the small- and large-jump parts of the nonlocal drift, their split forms used
by the implicit-explicit scheme, the jump-noise stencil and an FFT-backed
weighted shift sum.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Tuple, Union

import numpy as np
from scipy import signal

from .exceptions import GridMismatchError, InvalidParamsError, ParabolicityError
from .grid import (
    Grid,
    GridFunction,
    check_same_grid,
    forward_diff,
    second_diff,
    shifted_values,
    symmetric_diff,
)
from .levy import CellCoefficients

logger = logging.getLogger(__name__)

FFT_CROSSOVER = 8

CoefficientField = Union[float, Callable[[float, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class NoiseChannel:
    """sigma^{1,rho} multiplies delta_h, sigma^{0,rho} the identity."""

    sigma1: CoefficientField = 0.0
    sigma0: CoefficientField = 0.0


@dataclass(frozen=True)
class Coefficients:
    """
    Coefficients of L and N^rho sampled on a grid.

    Each field is either a constant or a callable (t, x) -> array evaluated
    at the grid nodes. Parabolicity 2a^11 - sum sigma1^2 >= kappa > 0 is
    checked at t = 0 when the object is built.
    """

    grid: Grid
    a11: CoefficientField = 0.0
    a10: CoefficientField = 0.0
    a01: CoefficientField = 0.0
    a00: CoefficientField = 0.0
    channels: Tuple[NoiseChannel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        kappa = self.kappa(0.0)
        if not kappa > 0:
            raise ParabolicityError(f"2a11 - sum(sigma1^2) must be positive, minimum is {kappa}")

    def sample(self, value: CoefficientField, t: float):
        if callable(value):
            samples = np.broadcast_to(value(t, self.grid.nodes), (self.grid.count,)).astype(float)
            if not np.all(np.isfinite(samples)):
                raise InvalidParamsError(f"Coefficient samples at t={t} are not finite")
            return samples
        return float(value)

    @property
    def is_constant(self) -> bool:
        fields = [self.a11, self.a10, self.a01, self.a00]
        for ch in self.channels:
            fields.extend((ch.sigma1, ch.sigma0))
        return not any(callable(f) for f in fields)

    def kappa(self, t: float = 0.0) -> float:
        """Smallest value over the grid of 2a11 - sum_rho (sigma1^rho)^2."""
        margin = 2.0 * np.asarray(self.sample(self.a11, t), dtype=float)
        for ch in self.channels:
            margin = margin - np.asarray(self.sample(ch.sigma1, t), dtype=float) ** 2
        return float(np.min(margin))

    def sup_a11(self, t: float = 0.0) -> float:
        return float(np.max(np.abs(self.sample(self.a11, t))))


def _check_cells(cc: CellCoefficients, phi: GridFunction):
    if cc.h != phi.grid.h:
        raise GridMismatchError(f"Cell tables built for h={cc.h}, operand has h={phi.grid.h}")


def _is_zero(value) -> bool:
    return not callable(value) and np.isscalar(value) and value == 0


def _shift_sum_values(values: np.ndarray, cells: np.ndarray, weights: np.ndarray, method: str) -> np.ndarray:
    keep = weights != 0
    cells, weights = cells[keep], weights[keep]
    n = values.shape[0]
    out = np.zeros(n)
    if cells.size == 0:
        return out
    if method == "auto":
        method = "fft" if cells.size > FFT_CROSSOVER else "direct"
    if method == "direct":
        for k, w in zip(cells, weights):
            out += w * shifted_values(values, int(k))
        return out
    if method != "fft":
        raise InvalidParamsError(f"Unknown shift-sum method: {method}")

    kmin, kmax = int(cells.min()), int(cells.max())
    width = kmax - kmin + 1
    kernel = np.zeros(width)
    np.add.at(kernel, cells - kmin, weights)
    full = signal.fftconvolve(values, kernel[::-1], mode="full")
    positions = np.arange(n) + kmin + width - 1
    valid = (positions >= 0) & (positions < full.shape[0])
    out[valid] = full[positions[valid]]
    return out


def shift_sum(phi: GridFunction, weights: Mapping[int, float], method: str = "auto") -> GridFunction:
    """
    sum_k weights[k] * phi(x + k*h), zero extension.

    method="auto" uses direct summation up to FFT_CROSSOVER nonzero
    weights and zero-padded FFT convolution above it.
    """
    if weights:
        cells = np.fromiter(weights.keys(), dtype=np.int64, count=len(weights))
        w = np.fromiter(weights.values(), dtype=float, count=len(weights))
    else:
        cells, w = np.zeros(0, dtype=np.int64), np.zeros(0)
    return GridFunction._trusted(phi.grid, _shift_sum_values(phi.values, cells, w, method))


def apply_Lh(c: Coefficients, t: float, phi: GridFunction) -> GridFunction:
    """a11 d_h d_-h phi + a10 d_h phi + a01 d_-h phi + a00 phi."""
    check_same_grid(c.grid, phi)
    out = np.zeros(phi.grid.count)
    if not _is_zero(c.a11):
        out += c.sample(c.a11, t) * second_diff(phi).values
    if not _is_zero(c.a10):
        out += c.sample(c.a10, t) * forward_diff(phi, 1).values
    if not _is_zero(c.a01):
        out += c.sample(c.a01, t) * forward_diff(phi, -1).values
    if not _is_zero(c.a00):
        out += c.sample(c.a00, t) * phi.values
    return GridFunction._trusted(phi.grid, out)


def apply_Nh(c: Coefficients, t: float, channel: int, phi: GridFunction) -> GridFunction:
    """sigma1 d_h phi + sigma0 phi for Wiener channel `channel`."""
    check_same_grid(c.grid, phi)
    ch = c.channels[channel]
    out = np.zeros(phi.grid.count)
    if not _is_zero(ch.sigma1):
        out += c.sample(ch.sigma1, t) * forward_diff(phi, 1).values
    if not _is_zero(ch.sigma0):
        out += c.sample(ch.sigma0, t) * phi.values
    return GridFunction._trusted(phi.grid, out)


def small_jump_weights(cc: CellCoefficients) -> Dict[int, float]:
    """Shift r -> sum over cells k and legs l landing on r of theta_bar_l * zeta_k."""
    weights: Dict[int, float] = {}
    for k in cc.small_cells:
        zeta = cc.zeta[k]
        if zeta == 0:
            continue
        part = cc.partitions[k]
        for r, tb in zip(part.indices, part.theta_bar):
            weights[r] = weights.get(r, 0.0) + tb * zeta
    return weights


def apply_Ih_delta(cc: CellCoefficients, phi: GridFunction) -> GridFunction:
    """Small-jump drift: second differences placed along each jump segment."""
    _check_cells(cc, phi)
    return shift_sum(second_diff(phi), small_jump_weights(cc), method="direct")


def apply_Ih_deltac(cc: CellCoefficients, phi: GridFunction, include_jump_drift: bool = True) -> GridFunction:
    """
    Large-jump drift sum_k (phi(x + h k) - phi(x)) zeta_bar_k - sum_k xi_bar_k d^h phi.

    include_jump_drift=False drops the zeta_bar part, which cancels against
    the compensator when raw jump counts drive the scheme.
    """
    _check_cells(cc, phi)
    out = -cc.total_first_moment * symmetric_diff(phi).values
    if include_jump_drift:
        out = out + shift_sum(phi, cc.zeta_bar).values - cc.total_mass * phi.values
    return GridFunction._trusted(phi.grid, out)


def apply_Ltilde(
    c: Coefficients,
    cc: CellCoefficients,
    t: float,
    phi: GridFunction,
    include_jump_drift: bool = True,
) -> GridFunction:
    """L^h minus the large-jump mass and first-moment terms (implicit part)."""
    _check_cells(cc, phi)
    out = apply_Lh(c, t, phi).values - cc.total_first_moment * symmetric_diff(phi).values
    if include_jump_drift:
        out = out - cc.total_mass * phi.values
    return GridFunction._trusted(phi.grid, out)


def apply_Itilde_deltac(cc: CellCoefficients, phi: GridFunction) -> GridFunction:
    """sum_k phi(x + h k) zeta_bar_k (explicit part)."""
    _check_cells(cc, phi)
    return shift_sum(phi, cc.zeta_bar)


def jump_drift_stencil(cc: CellCoefficients, phi: GridFunction, k: int) -> GridFunction:
    """sum_l theta_tilde_l * d_h phi(x + h r_l) along the segment to cell k."""
    _check_cells(cc, phi)
    part = cc.partition(k)
    diff = forward_diff(phi, 1).values
    out = np.zeros(phi.grid.count)
    for r, tt in zip(part.indices, part.theta_tilde):
        out += tt * shifted_values(diff, r)
    return GridFunction._trusted(phi.grid, out)
