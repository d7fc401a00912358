"""
Random inputs of one replication: Wiener increments, the compound-Poisson
jumps with |z| >= eps, and the Brownian surrogate for jumps below eps.
Paths are generated once at the finest time step, binned into per-cell
martingale increments for a given h, and coarsened to larger steps.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np
from scipy import sparse

from .exceptions import (
    IndivisibleFactorError,
    InvalidParamsError,
    ResolutionMismatchError,
    TimeNotOnGridError,
)
from .levy import CellCoefficients, LevyMeasure, measure_integral

logger = logging.getLogger(__name__)

DEFAULT_EPS = 2.0**-8

_DUMP_MAGIC = b"SIDEFD01"
_DUMP_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("seed", "<u8"),
        ("stream", "<u8"),
        ("steps", "<i8"),
        ("channels", "<i8"),
        ("jumps", "<i8"),
        ("tau_fine", "<f8"),
        ("T", "<f8"),
        ("eps", "<f8"),
        ("small_variance", "<f8"),
        ("intensity", "<f8"),
        ("compensator_mean", "<f8"),
    ]
)


def _steps_of(total: float, step: float) -> int:
    """Integer number of `step`s in `total`, or -1 if it is not an integer."""
    ratio = total / step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        return -1
    return n


@dataclass(frozen=True, eq=False)
class NoisePath:
    """
    One realization at the finest step tau_fine.

    wiener has shape (steps, channels); small_jump_wiener holds the
    N(0, small_variance * tau_fine) increments standing in for jumps with
    |z| < eps; jump_times are increasing in (0, T].
    """

    T: float
    tau_fine: float
    eps: float
    seed: int
    stream: int
    wiener: np.ndarray
    small_variance: float
    small_jump_wiener: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    intensity: float
    compensator_mean: float

    @property
    def steps(self) -> int:
        return self.wiener.shape[0]

    @property
    def channels(self) -> int:
        return self.wiener.shape[1]

    def fine_index(self, t: float) -> int:
        n = int(round(t / self.tau_fine))
        if abs(t - n * self.tau_fine) > 1e-9 * max(1.0, abs(t)) or not 0 <= n <= self.steps:
            raise TimeNotOnGridError(f"t={t} is not a multiple of tau_fine={self.tau_fine} in [0, T]")
        return n

    def wiener_at(self, t: float, channel: int = 0) -> float:
        n = self.fine_index(t)
        return float(np.sum(self.wiener[:n, channel]))

    def surrogate_at(self, t: float) -> float:
        n = self.fine_index(t)
        return float(np.sum(self.small_jump_wiener[:n]))

    def jump_sum_at(self, t: float) -> float:
        """Sum of jump sizes with time <= t (jumps at t belong to (t_{n-1}, t_n])."""
        n = self.fine_index(t)
        stop = np.searchsorted(self.jump_times, n * self.tau_fine + 1e-12 * self.tau_fine, side="right")
        return float(np.sum(self.jump_sizes[:stop]))

    def dump(self, path: Union[str, Path]):
        """Write a little-endian binary image: header, wiener, surrogate, jump times, jump sizes."""
        header = np.zeros(1, dtype=_DUMP_HEADER)
        header[0] = (
            _DUMP_MAGIC,
            self.seed,
            self.stream,
            self.steps,
            self.channels,
            self.jump_times.size,
            self.tau_fine,
            self.T,
            self.eps,
            self.small_variance,
            self.intensity,
            self.compensator_mean,
        )
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            for array in (self.wiener, self.small_jump_wiener, self.jump_times, self.jump_sizes):
                fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
        logger.debug(f"Dumped noise path seed={self.seed} stream={self.stream} to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NoisePath":
        raw = Path(path).read_bytes()
        header = np.frombuffer(raw[: _DUMP_HEADER.itemsize], dtype=_DUMP_HEADER)[0]
        if header["magic"] != _DUMP_MAGIC:
            raise InvalidParamsError(f"{path} is not a noise path dump")
        steps, channels, jumps = int(header["steps"]), int(header["channels"]), int(header["jumps"])
        body = np.frombuffer(raw[_DUMP_HEADER.itemsize :], dtype="<f8")
        cuts = np.cumsum([steps * channels, steps, jumps])
        return cls(
            T=float(header["T"]),
            tau_fine=float(header["tau_fine"]),
            eps=float(header["eps"]),
            seed=int(header["seed"]),
            stream=int(header["stream"]),
            wiener=body[: cuts[0]].reshape(steps, channels).copy(),
            small_variance=float(header["small_variance"]),
            small_jump_wiener=body[cuts[0] : cuts[1]].copy(),
            jump_times=body[cuts[1] : cuts[2]].copy(),
            jump_sizes=body[cuts[2] :].copy(),
            intensity=float(header["intensity"]),
            compensator_mean=float(header["compensator_mean"]),
        )


def replication_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for replication `stream` under a common base seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


def jump_intensities(m: LevyMeasure, eps: float) -> Dict[str, float]:
    """Masses of {eps <= z <= Z} and {-Z <= z <= -eps}."""
    radius = m.support_radius
    if eps >= radius:
        return {"plus": 0.0, "minus": 0.0}
    return {
        "plus": measure_integral(m, eps, radius, 0),
        "minus": measure_integral(m, -radius, -eps, 0),
    }


def _sample_magnitudes(
    c: float, beta: float, alpha: float, eps: float, radius: float, rng: np.random.Generator, n: int
) -> np.ndarray:
    """
    Draw n values from y^(-1-alpha) exp(-beta y) on [eps, radius]: Pareto(eps, alpha)
    proposals accepted with probability exp(-beta (y - eps)).
    """
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        batch = max(2 * need, 16)
        proposal = eps * (1.0 - rng.random(batch)) ** (-1.0 / alpha)
        accept = (proposal <= radius) & (rng.random(batch) < np.exp(-beta * (proposal - eps)))
        taken = proposal[accept][:need]
        out[filled : filled + taken.size] = taken
        filled += taken.size
    return out


def sample_jump_sizes(m: LevyMeasure, eps: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """n i.i.d. jump sizes from pi restricted to eps <= |z| <= Z, normalized."""
    if eps <= 0:
        raise InvalidParamsError(f"eps must be positive, got {eps}")
    masses = jump_intensities(m, eps)
    total = masses["plus"] + masses["minus"]
    if n == 0 or total == 0:
        return np.zeros(0)
    positive = rng.random(n) < masses["plus"] / total
    sizes = np.empty(n)
    n_plus = int(np.count_nonzero(positive))
    c, beta, alpha = m.side(True)
    sizes[positive] = _sample_magnitudes(c, beta, alpha, eps, m.support_radius, rng, n_plus)
    c, beta, alpha = m.side(False)
    sizes[~positive] = -_sample_magnitudes(c, beta, alpha, eps, m.support_radius, rng, n - n_plus)
    return sizes


def sample_jump_size(m: LevyMeasure, eps: float, rng: np.random.Generator) -> float:
    """One jump size; the side is picked in proportion to its mass."""
    sizes = sample_jump_sizes(m, eps, rng, 1)
    if sizes.size == 0:
        raise InvalidParamsError("Measure has no mass above eps")
    return float(sizes[0])


def simulate_path(
    m: LevyMeasure,
    T: float,
    tau_fine: float,
    eps: float = DEFAULT_EPS,
    seed: int = 0,
    stream: int = 0,
    channels: int = 1,
) -> NoisePath:
    """
    Generate one noise path. The draw order is fixed (Wiener, surrogate,
    jump count, times, sides, sizes), so a (seed, stream) pair is reproducible
    bit for bit.
    """
    if not (eps > 0 and tau_fine > 0 and T > 0):
        raise InvalidParamsError(f"Need eps, tau_fine, T > 0 (got {eps}, {tau_fine}, {T})")
    steps = _steps_of(T, tau_fine)
    if steps < 0:
        raise InvalidParamsError(f"tau_fine={tau_fine} does not divide T={T}")
    if channels < 1:
        raise InvalidParamsError(f"Need at least one Wiener channel, got {channels}")

    rng = replication_rng(seed, stream)
    wiener = rng.normal(0.0, math.sqrt(tau_fine), size=(steps, channels))
    small_variance = measure_integral(m, -eps, eps, 2)
    small = rng.normal(0.0, math.sqrt(small_variance * tau_fine), size=steps)

    masses = jump_intensities(m, eps)
    intensity = masses["plus"] + masses["minus"]
    count = int(rng.poisson(intensity * T)) if intensity > 0 else 0
    # T - U with U uniform on [0, T) lands in (0, T]
    times = np.sort(T - rng.uniform(0.0, T, size=count))
    sizes = sample_jump_sizes(m, eps, rng, count)

    radius = m.support_radius
    compensator_mean = 0.0
    if eps < radius:
        compensator_mean = measure_integral(m, eps, radius, 1) + measure_integral(m, -radius, -eps, 1)

    return NoisePath(
        T=T,
        tau_fine=tau_fine,
        eps=eps,
        seed=int(seed),
        stream=int(stream),
        wiener=wiener,
        small_variance=small_variance,
        small_jump_wiener=small,
        jump_times=times,
        jump_sizes=sizes,
        intensity=intensity,
        compensator_mean=compensator_mean,
    )


@dataclass(frozen=True, eq=False)
class BinnedIncrements:
    """
    Per-step, per-cell increments of one path at spacing h and step tau.

    small_sums[n, j] is the signed sum of jumps eps <= |z| <= delta of step n
    in cell small_cells[j]; the compensated small increment subtracts
    small_compensator and adds the Brownian surrogate to cell 0.
    large_raw[n, j] counts jumps |z| > delta in cell large_cells[j].
    """

    h: float
    tau: float
    delta: float
    eps: float
    small_cells: np.ndarray
    small_sums: np.ndarray
    small_compensator: np.ndarray
    surrogate: np.ndarray
    large_cells: np.ndarray
    large_raw: sparse.csr_matrix
    large_mass: np.ndarray
    wiener: np.ndarray
    jump_steps: np.ndarray
    jump_sizes: np.ndarray

    @property
    def steps(self) -> int:
        return self.small_sums.shape[0]

    @property
    def origin_column(self) -> int:
        return int(np.searchsorted(self.small_cells, 0))

    @property
    def small(self) -> np.ndarray:
        """Compensated small-jump increments, shape (steps, len(small_cells))."""
        out = self.small_sums - self.small_compensator
        out[:, self.origin_column] += self.surrogate
        return out

    def small_step(self, n: int) -> Dict[int, float]:
        row = self.small_sums[n] - self.small_compensator
        row[self.origin_column] += self.surrogate[n]
        return {int(k): float(v) for k, v in zip(self.small_cells, row)}

    def large_raw_step(self, n: int) -> Dict[int, float]:
        start, stop = self.large_raw.indptr[n], self.large_raw.indptr[n + 1]
        cols = self.large_raw.indices[start:stop]
        vals = self.large_raw.data[start:stop]
        return {int(self.large_cells[j]): float(v) for j, v in zip(cols, vals) if v != 0}

    def large_compensated_step(self, n: int) -> Dict[int, float]:
        row = np.asarray(self.large_raw[n].todense()).ravel() - self.tau * self.large_mass
        return {int(k): float(v) for k, v in zip(self.large_cells, row)}

    @property
    def large_compensated(self) -> np.ndarray:
        return self.large_raw.toarray() - self.tau * self.large_mass

    def jumps_in_step(self, n: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.jump_steps, [n, n + 1])
        return self.jump_sizes[lo:hi]


def _cell_of(z: np.ndarray, h: float) -> np.ndarray:
    # (k - 1/2)h < z <= (k + 1/2)h
    return np.ceil(np.round(z / h - 0.5, 12)).astype(np.int64)


def bin_increments(path: NoisePath, cc: CellCoefficients, tau: float) -> BinnedIncrements:
    """Histogram one path into the cells of cc at time step tau."""
    factor = _steps_of(tau, path.tau_fine)
    if factor < 0 or path.steps % factor:
        raise ResolutionMismatchError(
            f"tau={tau} is not a multiple of tau_fine={path.tau_fine} dividing {path.steps} steps"
        )
    if path.eps >= cc.delta:
        raise InvalidParamsError(f"eps={path.eps} must be smaller than delta={cc.delta}")
    steps = path.steps // factor

    step_of = np.ceil(np.round(path.jump_times / tau, 12)).astype(np.int64) - 1
    step_of = np.clip(step_of, 0, steps - 1)
    cells = _cell_of(path.jump_sizes, cc.h)
    is_small = np.abs(path.jump_sizes) <= cc.delta

    small_cells = np.array(cc.small_cells, dtype=np.int64)
    small_sums = np.zeros((steps, small_cells.size))
    columns = np.searchsorted(small_cells, cells[is_small])
    np.add.at(small_sums, (step_of[is_small], columns), path.jump_sizes[is_small])

    moments = cc.small_jump_first_moments(path.eps)
    small_compensator = tau * np.array([moments[int(k)] for k in small_cells])

    large_cells = np.array(cc.large_cells, dtype=np.int64)
    large = ~is_small
    large_raw = sparse.csr_matrix(
        (
            np.ones(int(np.count_nonzero(large)), dtype=np.int64),
            (step_of[large], np.searchsorted(large_cells, cells[large])),
        ),
        shape=(steps, large_cells.size),
    )
    large_mass = np.array([cc.zeta_bar[int(k)] for k in large_cells])

    return BinnedIncrements(
        h=cc.h,
        tau=tau,
        delta=cc.delta,
        eps=path.eps,
        small_cells=small_cells,
        small_sums=small_sums,
        small_compensator=small_compensator,
        surrogate=path.small_jump_wiener.reshape(steps, factor).sum(axis=1),
        large_cells=large_cells,
        large_raw=large_raw,
        large_mass=large_mass,
        wiener=path.wiener.reshape(steps, factor, path.channels).sum(axis=1),
        jump_steps=step_of,
        jump_sizes=path.jump_sizes,
    )


def coarsen(b: BinnedIncrements, factor: int) -> BinnedIncrements:
    """Sum increments over blocks of `factor` consecutive steps."""
    if factor < 1 or b.steps % factor:
        raise IndivisibleFactorError(f"factor={factor} does not divide {b.steps} steps")
    if factor == 1:
        return b
    steps = b.steps // factor
    fine = np.arange(b.steps)
    aggregate = sparse.csr_matrix(
        (np.ones(b.steps, dtype=np.int64), (fine // factor, fine)), shape=(steps, b.steps)
    )
    return BinnedIncrements(
        h=b.h,
        tau=b.tau * factor,
        delta=b.delta,
        eps=b.eps,
        small_cells=b.small_cells,
        small_sums=b.small_sums.reshape(steps, factor, -1).sum(axis=1),
        small_compensator=b.small_compensator * factor,
        surrogate=b.surrogate.reshape(steps, factor).sum(axis=1),
        large_cells=b.large_cells,
        large_raw=sparse.csr_matrix(aggregate @ b.large_raw),
        large_mass=b.large_mass,
        wiener=b.wiener.reshape(steps, factor, -1).sum(axis=1),
        jump_steps=b.jump_steps // factor,
        jump_sizes=b.jump_sizes,
    )
