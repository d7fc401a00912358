"""
Convergence study: seeded Monte Carlo over replications, one coupled noise
path per replication shared by every resolution, strong error statistics
against the exact benchmark solution, slope fits and report files.
"""

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .benchmark import BenchmarkParams, exact_on_grid, initial_condition, reported_constants
from .exceptions import InvalidParamsError, SideFdError, StudyIoError
from .grid import Grid, GridFunction
from .levy import CellCoefficients, build_cell_coefficients
from .noise import bin_increments, coarsen, simulate_path
from .operators import Coefficients
from .schemes import (
    BandedOperator,
    ErrorRegion,
    SchemeConfig,
    SchemeKind,
    check_cfl,
    imex_matrix,
    iterate,
)

logger = logging.getLogger(__name__)

DEFAULT_H_LIST = tuple(2.0**-k for k in range(2, 8))

ERROR_COLUMNS = [
    "scheme",
    "h",
    "tau",
    "M",
    "mean_sq_sup",
    "se_sup",
    "mean_sq_l2",
    "se_l2",
    "active_small_cells",
    "failures",
]
SLOPE_COLUMNS = ["scheme", "norm", "slope", "intercept", "ci_low", "ci_high", "points"]


@dataclass(frozen=True)
class TauRule:
    """tau = h^2, or one explicit tau per entry of the h list."""

    taus: Optional[Tuple[float, ...]] = None

    @classmethod
    def parse(cls, text: str) -> "TauRule":
        text = str(text).strip()
        if text == "h2":
            return cls()
        if text.startswith("list:"):
            try:
                return cls(tuple(parse_spacing(v) for v in text[5:].split(",") if v.strip()))
            except ValueError:
                raise InvalidParamsError(f"Bad tau list: {text!r}") from None
        raise InvalidParamsError(f"tau rule must be 'h2' or 'list:...', got {text!r}")

    def taus_for(self, h_list: Sequence[float]) -> Tuple[float, ...]:
        if self.taus is None:
            return tuple(h * h for h in h_list)
        if len(self.taus) != len(h_list):
            raise InvalidParamsError(f"{len(self.taus)} taus given for {len(h_list)} spacings")
        return self.taus

    def __str__(self) -> str:
        if self.taus is None:
            return "h2"
        return "list:" + ",".join(f"{t:g}" for t in self.taus)


def parse_spacing(text: str) -> float:
    """Accept '0.25', '2^-2' or '2**-2'."""
    text = text.strip().replace("**", "^")
    if "^" in text:
        base, exponent = text.split("^", 1)
        return float(base) ** float(exponent)
    return float(text)


@dataclass(frozen=True)
class StudyConfig:
    params: BenchmarkParams = field(default_factory=BenchmarkParams)
    h_list: Tuple[float, ...] = DEFAULT_H_LIST
    tau_rule: TauRule = field(default_factory=TauRule)
    replications: int = 200
    schemes: Tuple[SchemeKind, ...] = (SchemeKind.EXPLICIT, SchemeKind.IMEX)
    base_seed: int = 0
    threads: int = 1
    output_dir: Path = Path("results")
    error_region: ErrorRegion = field(default_factory=ErrorRegion)
    compensator_cancellation: bool = True

    def __post_init__(self):
        h_list = tuple(sorted((float(h) for h in self.h_list), reverse=True))
        if len(set(h_list)) != len(h_list) or any(not h > 0 for h in h_list):
            raise InvalidParamsError(f"h_list must hold distinct positive spacings, got {self.h_list}")
        object.__setattr__(self, "h_list", h_list)
        object.__setattr__(self, "schemes", tuple(SchemeKind(s) for s in self.schemes))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.replications < 1:
            raise InvalidParamsError(f"Need at least one replication, got {self.replications}")
        if self.threads < 1:
            raise InvalidParamsError(f"Need at least one thread, got {self.threads}")
        if self.base_seed < 0:
            raise InvalidParamsError(f"Seed must be nonnegative, got {self.base_seed}")

    @property
    def taus(self) -> Tuple[float, ...]:
        return self.tau_rule.taus_for(self.h_list)

    @property
    def tau_fine(self) -> float:
        return min(self.taus) if self.h_list else self.params.T

    def scheme_config(self, h: float, tau: float, scheme: SchemeKind) -> SchemeConfig:
        return SchemeConfig(
            h=h,
            tau=tau,
            T=self.params.T,
            delta=self.params.delta,
            scheme=scheme,
            compensator_cancellation=self.compensator_cancellation,
            error_region=self.error_region,
        )


@dataclass(frozen=True)
class ErrorRow:
    scheme: SchemeKind
    h: float
    tau: float
    M: int
    mean_sq_sup: float
    se_sup: float
    mean_sq_l2: float
    se_l2: float
    active_small_cells: int
    failures: int

    def as_record(self) -> List[str]:
        return [
            self.scheme.value,
            format_float(self.h),
            format_float(self.tau),
            str(self.M),
            format_float(self.mean_sq_sup),
            format_float(self.se_sup),
            format_float(self.mean_sq_l2),
            format_float(self.se_l2),
            str(self.active_small_cells),
            str(self.failures),
        ]


@dataclass(frozen=True)
class SlopeFit:
    scheme: str
    norm: str
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    points: int

    def as_record(self) -> List[str]:
        return [
            self.scheme,
            self.norm,
            format_float(self.slope),
            format_float(self.intercept),
            format_float(self.ci_low),
            format_float(self.ci_high),
            str(self.points),
        ]


@dataclass
class ErrorReport:
    rows: List[ErrorRow] = field(default_factory=list)
    slopes: List[SlopeFit] = field(default_factory=list)
    constants: Dict[str, float] = field(default_factory=dict)

    def rows_for(self, scheme: SchemeKind) -> List[ErrorRow]:
        return [r for r in self.rows if r.scheme is scheme]


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def fit_slope(h_values: Sequence[float], errors: Sequence[float], scheme: str = "", norm: str = "") -> SlopeFit:
    """
    Least squares fit of log2(error) against log2(h) with a 95% band on the
    slope. Fewer than three points give an undefined band.
    """
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = (h > 0) & (e > 0) & np.isfinite(e)
    x, y = np.log2(h[keep]), np.log2(e[keep])
    if x.size < 2:
        return SlopeFit(scheme, norm, math.nan, math.nan, math.nan, math.nan, int(x.size))
    fit = stats.linregress(x, y)
    half = math.nan
    if x.size > 2:
        half = float(stats.t.ppf(0.975, x.size - 2) * fit.stderr)
    return SlopeFit(
        scheme=scheme,
        norm=norm,
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        ci_low=float(fit.slope) - half,
        ci_high=float(fit.slope) + half,
        points=int(x.size),
    )


@dataclass
class _Resolution:
    """Per-h data shared read-only by every worker."""

    grid: Grid
    tau: float
    cells: CellCoefficients
    coefficients: Coefficients
    initial: GridFunction
    mask: np.ndarray
    operator: Optional[BandedOperator] = None


def _prepare(cfg: StudyConfig) -> Dict[float, _Resolution]:
    p = cfg.params
    resolutions = {}
    for h, tau in zip(cfg.h_list, cfg.taus):
        grid = Grid(h=h, radius=p.radius)
        cells = build_cell_coefficients(p.measure, h, p.delta)
        coefficients = p.coefficients(grid)
        resolution = _Resolution(
            grid=grid,
            tau=tau,
            cells=cells,
            coefficients=coefficients,
            initial=initial_condition(p, grid),
            mask=cfg.error_region.mask(grid),
        )
        if SchemeKind.IMEX in cfg.schemes:
            resolution.operator = imex_matrix(coefficients, cells, tau, tau).factorize()
        cells.small_jump_first_moments(p.eps)
        logger.info(
            f"h={h:g}: {grid.count} nodes, tau={tau:g}, {len(cells.small_cells)} small-jump cells, "
            f"{len(cells.large_cells)} large-jump cells"
        )
        resolutions[h] = resolution
    return resolutions


def _run_replication(
    cfg: StudyConfig, resolutions: Dict[float, _Resolution], r: int
) -> Dict[Tuple[SchemeKind, float], Optional[Tuple[float, float]]]:
    """(scheme, h) -> (max_n sup^2, max_n l2^2), or None when that run failed."""
    p = cfg.params
    path = simulate_path(p.measure, p.T, cfg.tau_fine, eps=p.eps, seed=cfg.base_seed, stream=r)
    out: Dict[Tuple[SchemeKind, float], Optional[Tuple[float, float]]] = {}
    for h, res in resolutions.items():
        factor = int(round(res.tau / cfg.tau_fine))
        increments = coarsen(bin_increments(path, res.cells, cfg.tau_fine), factor)
        exact = exact_on_grid(p, res.grid, path, res.tau)
        for scheme in cfg.schemes:
            try:
                sup_sq, l2_sq = 0.0, 0.0
                for n, _, state in iterate(
                    cfg.scheme_config(h, res.tau, scheme),
                    res.coefficients,
                    res.cells,
                    increments,
                    res.initial,
                    operator=res.operator,
                ):
                    err = (exact[n] - state.values)[res.mask]
                    sup_sq = max(sup_sq, float(np.max(np.abs(err))) ** 2 if err.size else 0.0)
                    l2_sq = max(l2_sq, h * float(np.dot(err, err)))
                if not (math.isfinite(sup_sq) and math.isfinite(l2_sq)):
                    raise InvalidParamsError(f"non-finite error (sup^2={sup_sq})")
                out[(scheme, h)] = (sup_sq, l2_sq)
            except SideFdError as e:
                logger.error(f"Replication {r}, {scheme.value} at h={h:g} failed: {e}")
                out[(scheme, h)] = None
    logger.debug(f"Replication {r} done ({path.jump_times.size} jumps)")
    return out


def _mean_and_se(values: np.ndarray) -> Tuple[float, float]:
    if values.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, se


def _validate(cfg: StudyConfig):
    """Build every scheme config and check the CFL bound before any cell table is computed."""
    for h, tau in zip(cfg.h_list, cfg.taus):
        ratio = tau / cfg.tau_fine
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise InvalidParamsError(f"tau={tau:g} is not a multiple of the finest step {cfg.tau_fine:g}")
        for scheme in cfg.schemes:
            config = cfg.scheme_config(h, tau, scheme)
            if scheme is SchemeKind.EXPLICIT:
                coefficients = cfg.params.coefficients(Grid(h=h, radius=cfg.params.radius))
                bound = check_cfl(config, coefficients, cfg.params.measure)
                logger.info(f"h={h:g}: tau/h^2={tau / h**2:.6g} below CFL bound {bound:.6g}")


def run_study(cfg: StudyConfig) -> ErrorReport:
    """
    Run every replication on a thread pool and reduce in replication order,
    so the report does not depend on the thread count.
    """
    started = time.time()
    report = ErrorReport(constants=reported_constants(cfg.params))
    c = report.constants
    logger.info(
        f"varsigma1={c['varsigma1']:.6g} (printed {c['printed_varsigma1']}), "
        f"CFL rhs={c['cfl_rhs']:.6g} with kappa={c['kappa']:.6g} / {c['cfl_rhs_printed_kappa']:.6g} "
        f"with kappa={c['printed_kappa']} (printed {c['printed_cfl_rhs']}), "
        f"intensity={c['intensity']:.6g} (printed {c['printed_intensity']})"
    )
    if not cfg.schemes or not cfg.h_list:
        logger.info("No schemes or spacings selected, nothing to run")
        return report

    _validate(cfg)
    resolutions = _prepare(cfg)

    logger.info(
        f"Running {cfg.replications} replications on {cfg.threads} thread(s), "
        f"schemes={[s.value for s in cfg.schemes]}, h={list(cfg.h_list)}"
    )
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [pool.submit(_run_replication, cfg, resolutions, r) for r in range(cfg.replications)]
        results = [f.result() for f in futures]

    for scheme in cfg.schemes:
        for h, res in resolutions.items():
            ok = [res_r[(scheme, h)] for res_r in results if res_r[(scheme, h)] is not None]
            sup = np.array([v[0] for v in ok])
            l2 = np.array([v[1] for v in ok])
            mean_sup, se_sup = _mean_and_se(sup)
            mean_l2, se_l2 = _mean_and_se(l2)
            failures = cfg.replications - len(ok)
            if failures:
                logger.warning(f"{scheme.value} at h={h:g}: {failures} of {cfg.replications} replications failed")
            report.rows.append(
                ErrorRow(
                    scheme=scheme,
                    h=h,
                    tau=res.tau,
                    M=len(ok),
                    mean_sq_sup=mean_sup,
                    se_sup=se_sup,
                    mean_sq_l2=mean_l2,
                    se_l2=se_l2,
                    active_small_cells=sum(1 for k in res.cells.small_cells if res.cells.zeta[k] > 0),
                    failures=failures,
                )
            )
    report.slopes = fit_report_slopes(report.rows)
    for s in report.slopes:
        logger.info(f"{s.scheme} {s.norm}: slope={s.slope:.4f} [{s.ci_low:.4f}, {s.ci_high:.4f}]")
    logger.info(f"Study finished in {time.time() - started:.1f}s")
    return report


def fit_report_slopes(rows: Sequence[ErrorRow]) -> List[SlopeFit]:
    """One fit per (scheme, norm) of the RMS error against h."""
    slopes = []
    schemes = []
    for row in rows:
        if row.scheme not in schemes:
            schemes.append(row.scheme)
    for scheme in schemes:
        mine = [r for r in rows if r.scheme is scheme]
        hs = [r.h for r in mine]
        for norm, values in (("sup", [r.mean_sq_sup for r in mine]), ("l2", [r.mean_sq_l2 for r in mine])):
            slopes.append(fit_slope(hs, np.sqrt(values), scheme=scheme.value, norm=norm))
    return slopes


def read_error_rows(path: Union[str, Path]) -> List[ErrorRow]:
    """Parse an errors.csv written by emit()."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            ErrorRow(
                scheme=SchemeKind(rec["scheme"]),
                h=float(rec["h"]),
                tau=float(rec["tau"]),
                M=int(rec["M"]),
                mean_sq_sup=float(rec["mean_sq_sup"]),
                se_sup=float(rec["se_sup"]),
                mean_sq_l2=float(rec["mean_sq_l2"]),
                se_l2=float(rec["se_l2"]),
                active_small_cells=int(rec["active_small_cells"]),
                failures=int(rec["failures"]),
            )
            for rec in reader
        ]


def _plot(report: ErrorReport, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    try:
        all_h = []
        for scheme in dict.fromkeys(r.scheme for r in report.rows):
            rows = report.rows_for(scheme)
            hs = np.array([r.h for r in rows])
            all_h.extend(hs)
            for norm, values, marker in (
                ("sup", [r.mean_sq_sup for r in rows], "o"),
                ("l2", [r.mean_sq_l2 for r in rows], "s"),
            ):
                values = np.array(values, dtype=float)
                # non-positive or NaN errors are not drawn
                values[~(values > 0)] = np.nan
                ax.plot(np.log2(hs), 0.5 * np.log2(values), marker=marker, label=f"{scheme.value} {norm}")
        if all_h:
            x = np.log2(np.array(sorted(set(all_h))))
            anchor = [0.5 * math.log2(r.mean_sq_sup) for r in report.rows if r.mean_sq_sup > 0]
            offset = max(anchor) - x.max() + 0.5 if anchor else 0.0
            ax.plot(x, x + offset, "k--", linewidth=1, label="slope 1")
        ax.set_xlabel("log2 h")
        ax.set_ylabel("log2 RMS error")
        ax.grid(True, alpha=0.3)
        if all_h:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg")
    finally:
        plt.close(fig)


def emit(report: ErrorReport, out_dir: Union[str, Path]) -> List[Path]:
    """Write errors.csv, slopes.csv and roc.svg; raises StudyIoError on any I/O failure."""
    out_dir = Path(out_dir)
    written = [out_dir / "errors.csv", out_dir / "slopes.csv", out_dir / "roc.svg"]
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(written[0], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ERROR_COLUMNS)
            writer.writerows(row.as_record() for row in report.rows)
        with open(written[1], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SLOPE_COLUMNS)
            writer.writerows(s.as_record() for s in report.slopes)
        _plot(report, written[2])
    except OSError as e:
        logger.error(f"Failed to write study outputs to {out_dir}: {e}")
        raise StudyIoError(f"Cannot write study outputs to {out_dir}: {e}") from e
    logger.info(f"Wrote {', '.join(str(p) for p in written)}")
    return written
