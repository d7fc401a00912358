"""
Tempered-stable Levy measure and the per-cell discretization data derived
from it: cell masses and moments, the small-jump moment functionals, and the
segment partitions used to place second differences along a jump.
"""

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import integrate, special

from .exceptions import (
    InvalidParamsError,
    NonIntegrableError,
    QuadratureFailureError,
    UnknownCellError,
)

logger = logging.getLogger(__name__)

QUAD_ABS_TOL = 1e-10
QUAD_REL_TOL = 1e-12
QUAD_LIMIT = 200


@dataclass(frozen=True)
class LevyMeasure:
    """
    Two-sided tempered-stable density

        c_-/+ * exp(-beta_-/+ |z|) * |z|^(-1 - alpha_-/+)   for z < 0 / z > 0,

    truncated to [-support_radius, support_radius]. A side with c = 0
    carries no mass, which gives the zero measure used by the heat tests.
    """

    c_minus: float = 1.0
    c_plus: float = 1.0
    beta_minus: float = 1.0
    beta_plus: float = 1.0
    alpha_minus: float = 1.1
    alpha_plus: float = 1.1
    support_radius: float = 3.0

    def __post_init__(self):
        for name in ("c_minus", "c_plus", "beta_minus", "beta_plus"):
            if getattr(self, name) < 0:
                raise InvalidParamsError(f"{name} must be nonnegative, got {getattr(self, name)}")
        for name in ("alpha_minus", "alpha_plus"):
            if not 0 < getattr(self, name) < 2:
                raise InvalidParamsError(f"{name} must lie in (0, 2), got {getattr(self, name)}")
        if not self.support_radius > 0:
            raise InvalidParamsError(f"support_radius must be positive, got {self.support_radius}")

    @classmethod
    def zero(cls, support_radius: float = 3.0) -> "LevyMeasure":
        return cls(c_minus=0.0, c_plus=0.0, support_radius=support_radius)

    @property
    def is_zero(self) -> bool:
        return self.c_minus == 0 and self.c_plus == 0

    @property
    def is_symmetric(self) -> bool:
        return (
            self.c_minus == self.c_plus
            and self.beta_minus == self.beta_plus
            and self.alpha_minus == self.alpha_plus
        )

    def side(self, positive: bool) -> Tuple[float, float, float]:
        """(c, beta, alpha) for the positive or negative half-line."""
        if positive:
            return self.c_plus, self.beta_plus, self.alpha_plus
        return self.c_minus, self.beta_minus, self.alpha_minus

    def density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        a = np.abs(z)
        inside = (a > 0) & (a <= self.support_radius)
        for positive, mask in ((True, inside & (z > 0)), (False, inside & (z < 0))):
            c, beta, alpha = self.side(positive)
            if c > 0:
                out[mask] = c * np.exp(-beta * a[mask]) * a[mask] ** (-1.0 - alpha)
        return out

    def to_dict(self) -> Dict[str, float]:
        return {
            "c_minus": self.c_minus,
            "c_plus": self.c_plus,
            "beta_minus": self.beta_minus,
            "beta_plus": self.beta_plus,
            "alpha_minus": self.alpha_minus,
            "alpha_plus": self.alpha_plus,
            "support_radius": self.support_radius,
        }


def _radial_integral(c: float, beta: float, alpha: float, power: int, a: float, b: float) -> float:
    """c * int_a^b y^(power-1-alpha) exp(-beta y) dy for 0 <= a < b."""
    if c == 0 or b <= a:
        return 0.0
    exponent = power - 1.0 - alpha
    if a == 0:
        if exponent <= -1.0:
            raise NonIntegrableError(
                f"int y^{power} pi(dy) diverges at the origin (alpha={alpha}, power={power})"
            )
        # QAWS: algebraic endpoint weight y^exponent handled analytically
        result = integrate.quad(
            lambda y: math.exp(-beta * y),
            0.0,
            b,
            weight="alg",
            wvar=(exponent, 0.0),
            epsabs=QUAD_ABS_TOL,
            epsrel=QUAD_REL_TOL,
            limit=QUAD_LIMIT,
            full_output=1,
        )
    else:
        result = integrate.quad(
            lambda y: y**exponent * math.exp(-beta * y),
            a,
            b,
            epsabs=QUAD_ABS_TOL,
            epsrel=QUAD_REL_TOL,
            limit=QUAD_LIMIT,
            full_output=1,
        )
    value, abserr = result[0], result[1]
    if len(result) > 3 and abserr > max(QUAD_ABS_TOL, 1e-8 * abs(value)):
        raise QuadratureFailureError(
            f"Quadrature on [{a}, {b}] (power={power}) failed: {result[3]} (abserr={abserr})"
        )
    return c * value


def measure_integral(m: LevyMeasure, lo: float, hi: float, power: int) -> float:
    """
    int_lo^hi z^power pi(dz) over the closed interval [lo, hi].

    Pieces touching the origin use an algebraic-weight rule; the integral
    is rejected with NonIntegrableError when it diverges there.
    """
    if power not in (0, 1, 2):
        raise InvalidParamsError(f"power must be 0, 1 or 2, got {power}")
    if lo > hi:
        raise InvalidParamsError(f"Empty interval: lo={lo} > hi={hi}")
    lo = max(lo, -m.support_radius)
    hi = min(hi, m.support_radius)
    if lo >= hi:
        return 0.0

    total = 0.0
    if hi > 0:
        c, beta, alpha = m.side(True)
        total += _radial_integral(c, beta, alpha, power, max(lo, 0.0), hi)
    if lo < 0:
        c, beta, alpha = m.side(False)
        # z = -y on the negative half-line
        total += (-1) ** power * _radial_integral(c, beta, alpha, power, max(-hi, 0.0), -lo)
    return total


def incomplete_gamma_moment(m: LevyMeasure, delta: float) -> float:
    """
    Closed form of int_{|z|<=delta} z^2 pi(dz):
    sum over sides of c * beta^(alpha-2) * gamma_lower(2-alpha, beta*delta).
    """
    delta = min(delta, m.support_radius)
    total = 0.0
    for positive in (True, False):
        c, beta, alpha = m.side(positive)
        if c == 0:
            continue
        s = 2.0 - alpha
        if beta == 0:
            total += c * delta**s / s
        else:
            total += c * beta ** (-s) * special.gammainc(s, beta * delta) * special.gamma(s)
    return float(total)


def varsigma(
    m: LevyMeasure, delta: float, noise_measure: Optional[LevyMeasure] = None
) -> Tuple[float, float, float]:
    """
    Small-jump second moments (s1, s2, s1 + s2) over |z| <= delta.

    s1 comes from the drift measure, s2 from the noise measure, which
    defaults to the drift measure.
    """
    if not 0 < delta <= 1:
        raise InvalidParamsError(f"delta must lie in (0, 1], got {delta}")
    s1 = measure_integral(m, -delta, delta, 2)
    s2 = s1 if noise_measure is None else measure_integral(noise_measure, -delta, delta, 2)
    return s1, s2, s1 + s2


@dataclass(frozen=True)
class SegmentPartition:
    """
    Cells crossed by the segment {theta*h*k : theta in [0, 1]}.

    indices[l-1] is the cell visited for theta in (theta[l-1], theta[l]).
    """

    k: int
    chi: int
    indices: Tuple[int, ...]
    theta: np.ndarray
    theta_bar: np.ndarray
    theta_tilde: np.ndarray


def segment_partition(h: float, k: int) -> SegmentPartition:
    """Partition of [0, 1] by the cells the segment from 0 to h*k passes through."""
    k = int(k)
    n = abs(k)
    if n == 0:
        theta = np.array([0.0, 1.0])
        indices: Tuple[int, ...] = (0,)
    else:
        step = 1 if k > 0 else -1
        inner_breaks = (np.arange(1, n + 1) - 0.5) / n
        theta = np.concatenate(([0.0], inner_breaks, [1.0]))
        indices = tuple(step * j for j in range(n + 1))
    lower, upper = theta[:-1], theta[1:]
    widths = upper - lower
    # int_lower^upper (1 - theta) dtheta, product form keeps the sum at 1/2 to rounding
    theta_bar = widths * (1.0 - 0.5 * (upper + lower))
    return SegmentPartition(
        k=k,
        chi=len(indices),
        indices=indices,
        theta=theta,
        theta_bar=theta_bar,
        theta_tilde=widths,
    )


@dataclass
class CellCoefficients:
    """
    Per-(h, delta) tables: zeta[k] second moments over the small part of
    cell k, zeta_bar[k] masses and xi_bar[k] truncated first moments over the
    large part, plus the segment partition of every small-jump cell.
    """

    measure: LevyMeasure
    h: float
    delta: float
    zeta: Dict[int, float]
    zeta_bar: Dict[int, float]
    xi_bar: Dict[int, float]
    partitions: Dict[int, SegmentPartition]
    _moment_cache: Dict[float, Dict[int, float]] = field(default_factory=dict, repr=False, compare=False)
    _moment_lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def small_cells(self) -> Tuple[int, ...]:
        return tuple(sorted(self.zeta))

    @property
    def large_cells(self) -> Tuple[int, ...]:
        return tuple(sorted(self.zeta_bar))

    @property
    def total_mass(self) -> float:
        """pi({delta < |z| <= Z})."""
        return math.fsum(self.zeta_bar.values())

    @property
    def total_first_moment(self) -> float:
        """int_{delta < |z| <= 1} z pi(dz)."""
        return math.fsum(self.xi_bar.values())

    def cell_bounds(self, k: int) -> Tuple[float, float]:
        return (k - 0.5) * self.h, (k + 0.5) * self.h

    def small_piece(self, k: int) -> Optional[Tuple[float, float]]:
        lo, hi = self.cell_bounds(k)
        a, b = max(lo, -self.delta), min(hi, self.delta)
        return (a, b) if a < b else None

    def small_jump_first_moments(self, eps: float) -> Dict[int, float]:
        """int over B_k intersected with {|z| >= eps} of z pi(dz), for each small cell."""
        with self._moment_lock:
            cached = self._moment_cache.get(eps)
            if cached is not None:
                return cached
            moments = {}
            for k in self.small_cells:
                a, b = self.small_piece(k)
                value = 0.0
                if b > eps:
                    value += measure_integral(self.measure, max(a, eps), b, 1)
                if a < -eps:
                    value += measure_integral(self.measure, a, min(b, -eps), 1)
                moments[k] = value
            self._moment_cache[eps] = moments
            return moments

    def partition(self, k: int) -> SegmentPartition:
        try:
            return self.partitions[k]
        except KeyError:
            raise UnknownCellError(f"No segment partition for cell k={k} at h={self.h}") from None

    def to_json(self) -> str:
        return json.dumps(
            {
                "h": self.h,
                "delta": self.delta,
                "measure": self.measure.to_dict(),
                "zeta": {str(k): repr(v) for k, v in self.zeta.items()},
                "zeta_bar": {str(k): repr(v) for k, v in self.zeta_bar.items()},
                "xi_bar": {str(k): repr(v) for k, v in self.xi_bar.items()},
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CellCoefficients":
        data = json.loads(text)
        h = float(data["h"])

        def table(name):
            return {int(k): float(v) for k, v in data[name].items()}

        zeta = table("zeta")
        return cls(
            measure=LevyMeasure(**data["measure"]),
            h=h,
            delta=float(data["delta"]),
            zeta=zeta,
            zeta_bar=table("zeta_bar"),
            xi_bar=table("xi_bar"),
            partitions={k: segment_partition(h, k) for k in zeta},
        )


def _large_pieces(lo: float, hi: float, delta: float, radius: float):
    """Parts of the cell (lo, hi] with |z| > delta, clipped to the support."""
    pieces = []
    a, b = max(lo, delta), min(hi, radius)
    if a < b:
        pieces.append((a, b))
    a, b = max(lo, -radius), min(hi, -delta)
    if a < b:
        pieces.append((a, b))
    return pieces


def build_cell_coefficients(m: LevyMeasure, h: float, delta: float) -> CellCoefficients:
    """
    Tabulate the cell data for cells A_k = ((k - 1/2)h, (k + 1/2)h].
    """
    if not h > 0:
        raise InvalidParamsError(f"h must be positive, got {h}")
    if not 0 < delta <= 1:
        raise InvalidParamsError(f"delta must lie in (0, 1], got {delta}")

    radius = m.support_radius
    kmax = int(math.ceil(radius / h + 0.5))
    zeta: Dict[int, float] = {}
    zeta_bar: Dict[int, float] = {}
    xi_bar: Dict[int, float] = {}
    partitions: Dict[int, SegmentPartition] = {}

    for k in range(-kmax, kmax + 1):
        lo, hi = (k - 0.5) * h, (k + 0.5) * h
        a, b = max(lo, -delta, -radius), min(hi, delta, radius)
        if a < b:
            zeta[k] = measure_integral(m, a, b, 2)
            partitions[k] = segment_partition(h, k)

        pieces = _large_pieces(lo, hi, delta, radius)
        if pieces:
            zeta_bar[k] = sum(measure_integral(m, a, b, 0) for a, b in pieces)
            first = 0.0
            for a, b in pieces:
                a1, b1 = max(a, -1.0), min(b, 1.0)
                if a1 < b1:
                    first += measure_integral(m, a1, b1, 1)
            xi_bar[k] = first

    logger.debug(
        f"Cell coefficients h={h} delta={delta}: {len(zeta)} small cells, "
        f"{len(zeta_bar)} large cells"
    )
    return CellCoefficients(
        measure=m,
        h=h,
        delta=delta,
        zeta=zeta,
        zeta_bar=zeta_bar,
        xi_bar=xi_bar,
        partitions=partitions,
    )
