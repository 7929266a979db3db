"""
Parameter sweeps, exponential-decay fits and bracket estimates of the
critical parameters p_c (PCA death curves) and q_c (bootstrap percolation).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import config
from .bp_engine import UpdateFamily, healthy_estimate, infection_time_curve
from .correspondence import ca_to_bp
from .errors import DegenerateFitError, DomainError, MonotonicityError
from .pca_engine import Box, CurvePoint, exhaustive_theta, theta_curve, theta_estimate
from .random_fields import mix_seed
from .rates import Curve, LinearCurve, Probability, as_weight, dirac
from .upset_algebra import Neighborhood, UpFamily

logger = logging.getLogger(__name__)
console_logger = config.console_logger

# Rows with fewer positive replicas than this are too noisy to fit
MIN_POSITIVE_COUNT = 10
MIN_FIT_ROWS = 5
# Slope magnitude below which a fit counts as flat
FLAT_SLOPE = 1e-9

Model = Union[Curve, UpdateFamily]


# === Sweeps ===

@dataclass
class SweepRow:
    parameter: float
    horizon: int
    estimate: float
    stderr: float
    replicas: int
    seed: int


@dataclass
class SweepResult:
    """theta_n(p) rows for PCA curves, P(origin healthy at t) rows for BP families."""
    kind: str
    rows: List[SweepRow] = field(default_factory=list)

    def curve(self, parameter: float) -> List[CurvePoint]:
        """Rows at one parameter as curve points, ready for ``fit_decay``."""
        return [CurvePoint(r.horizon, r.estimate, r.stderr, r.replicas)
                for r in self.rows if r.parameter == parameter]


def _theta_rows(curve: Curve, index: int, p: Probability, horizons: Sequence[int],
                replicas: int, seed: int, exhaustive: bool) -> List[SweepRow]:
    measure = curve.at(p)
    x = float(as_weight(p))
    cell_seed = mix_seed(seed, index)
    rows = []
    if exhaustive:
        for n in horizons:
            rows.append(SweepRow(x, n, float(exhaustive_theta(measure, n)), 0.0, 0, cell_seed))
        return rows
    points = theta_curve(measure, max(horizons), replicas, cell_seed, workers=1).points
    for n in horizons:
        rows.append(SweepRow(x, n, points[n].estimate, points[n].stderr, replicas, cell_seed))
    return rows


def _healthy_rows(X: UpdateFamily, index: int, q: Probability, horizons: Sequence[int],
                  replicas: int, seed: int) -> List[SweepRow]:
    cell_seed = mix_seed(seed, index)
    points = infection_time_curve(X, q, None, max(horizons), replicas, cell_seed, workers=1).points
    return [SweepRow(float(as_weight(q)), t, points[t].estimate, points[t].stderr, replicas, cell_seed)
            for t in horizons]


def sweep(model: Model, grid: Sequence[Probability], horizons: Sequence[int],
          replicas: int, seed: int, exhaustive: bool = False,
          workers: Optional[int] = None) -> SweepResult:
    """
    One row per (parameter, horizon). Grid cells run on the worker pool with
    seeds mixed from the grid index, so results do not depend on the pool size.
    """
    if not grid or not horizons:
        raise DomainError("sweep needs a nonempty grid and horizon list")
    horizons = sorted(set(int(n) for n in horizons))
    if isinstance(model, UpdateFamily):
        if exhaustive:
            raise DomainError("exhaustive sweeps are available for PCA curves only")
        kind = "healthy"
        for q in grid:
            if not 0 <= float(as_weight(q)) <= 1:
                raise DomainError(f"q = {q} outside [0, 1]")
        cells = config.run_parallel(
            lambda item: _healthy_rows(model, item[0], item[1], horizons, replicas, seed),
            list(enumerate(grid)), workers)
    else:
        kind = "theta"
        if horizons[0] < 1 and not exhaustive:
            raise DomainError("theta horizons must be >= 1")
        for p in grid:
            model.check(p)
        cells = config.run_parallel(
            lambda item: _theta_rows(model, item[0], item[1], horizons, replicas, seed, exhaustive),
            list(enumerate(grid)), workers)
    rows = sorted((row for cell in cells for row in cell), key=lambda r: (r.parameter, r.horizon))
    logger.info(f"sweep ({kind}): {len(grid)} parameters x {len(horizons)} horizons")
    return SweepResult(kind, rows)


# === Exponential decay ===

@dataclass
class DecayFit:
    c: float
    C: float
    t_min: int
    t_max: int
    r_squared: float
    rows_used: int

    @property
    def decaying(self) -> bool:
        return self.c > FLAT_SLOPE and self.C > 0


def _usable(point: CurvePoint) -> bool:
    if point.estimate <= 0:
        return False
    # replicas == 0 marks exact rows
    return point.replicas == 0 or round(point.estimate * point.replicas) >= MIN_POSITIVE_COUNT


def fit_decay(points: Sequence[CurvePoint], t_min: int = 1) -> DecayFit:
    """
    Least squares of log(estimate) against t: estimate ~ C * exp(-c t).

    Rows before ``t_min`` are left out; theta_0 = 1 and the first steps carry
    a transient that the exponential does not describe.
    """
    points = [pt for pt in points if pt.t >= t_min]
    usable = [pt for pt in points if _usable(pt)]
    if len(usable) < MIN_FIT_ROWS:
        if points and all(pt.estimate == 0 for pt in points if pt.t > 0):
            raise DegenerateFitError("decay faster than resolvable: every estimate past t=0 is zero")
        raise DegenerateFitError(
            f"{len(usable)} usable rows, need {MIN_FIT_ROWS} with estimate > 0 "
            f"and at least {MIN_POSITIVE_COUNT} positive replicas")
    t = np.array([pt.t for pt in usable], dtype=np.float64)
    y = np.log(np.array([pt.estimate for pt in usable], dtype=np.float64))
    slope, intercept = np.polyfit(t, y, 1)
    residual = y - (slope * t + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 if ss_tot == 0 else 1.0 - float((residual ** 2).sum()) / ss_tot
    fit = DecayFit(float(-slope), float(math.exp(intercept)), int(t.min()), int(t.max()),
                   r_squared, len(usable))
    if not fit.decaying:
        logger.warning(f"fit over t={fit.t_min}..{fit.t_max} is not decaying (c={fit.c:.3g})")
    return fit


# === Critical parameters ===

@dataclass
class CriticalEstimate:
    """
    Bracket [lower, upper] around a critical parameter from a finite-size
    proxy. The proxy holds at ``upper`` and fails at ``lower``; when it holds
    (or fails) across the whole range the bracket collapses to one endpoint.
    """
    lower: float
    upper: float
    lower_proxy: float
    upper_proxy: float
    proxy: str
    horizon: int
    threshold: float
    replicas: int
    seed: int
    width: Optional[int] = None
    note: str = ""
    evaluations: List[Tuple[float, float, float]] = field(default_factory=list)

    @property
    def collapsed(self) -> bool:
        return self.lower == self.upper

    def __str__(self) -> str:
        text = f"[{self.lower:.6f}, {self.upper:.6f}] ({self.proxy}, T={self.horizon})"
        return f"{text}: {self.note}" if self.note else text


Proxy = Callable[[float], Tuple[float, float]]


def _check_monotone(evaluations: List[Tuple[float, float, float]], increasing: bool) -> None:
    """
    Proxy values must be monotone in the parameter up to 4 standard errors.
    Infinite readings carry no error estimate and are not compared.
    """
    ordered = sorted(evaluations)
    for (a, va, sa), (b, vb, sb) in zip(ordered, ordered[1:]):
        if not (math.isfinite(va) and math.isfinite(vb)):
            continue
        drop = va - vb if increasing else vb - va
        if drop > 4 * math.hypot(sa, sb) + 1e-12:
            raise MonotonicityError(
                f"proxy not monotone between {a:.6f} ({va:.4f}) and {b:.6f} ({vb:.4f})")


def _bisect(proxy: Proxy, lo: float, hi: float, tolerance: float, threshold: float,
            increasing: bool) -> Tuple[float, float, float, float, str, list]:
    """
    Bisect on "proxy crosses the threshold". For an increasing proxy the
    threshold is exceeded above the critical point, for a decreasing one
    below it.
    """
    if tolerance <= 0:
        raise DomainError(f"tolerance must be positive, got {tolerance}")
    evaluations = []

    def above(x: float) -> Tuple[bool, float]:
        value, se = proxy(x)
        evaluations.append((x, value, se))
        return value > threshold, value

    lo_above, lo_value = above(lo)
    hi_above, hi_value = above(hi)
    if increasing and not hi_above:
        return hi, hi, hi_value, hi_value, "no transition in range", evaluations
    if increasing and lo_above:
        return lo, lo, lo_value, lo_value, "proxy already exceeds the threshold at the lower endpoint", evaluations
    if not increasing and lo_above and hi_above:
        return hi, hi, hi_value, hi_value, "no transition in range", evaluations
    if not increasing and not lo_above:
        return lo, lo, lo_value, lo_value, "proxy already below the threshold at the lower endpoint", evaluations

    while hi - lo > tolerance:
        mid = (lo + hi) / 2
        mid_above, mid_value = above(mid)
        if mid_above == increasing:
            hi, hi_value = mid, mid_value
        else:
            lo, lo_value = mid, mid_value
    _check_monotone(evaluations, increasing)
    return lo, hi, lo_value, hi_value, "", evaluations


# === Finite-size proxies ===

PROXIES = ("bend", "threshold")


def _proxy_kind(proxy: Optional[str]) -> str:
    kind = str(config.get_setting('critical_proxy', 'bend') if proxy is None else proxy)
    if kind not in PROXIES:
        raise DomainError(f"unknown proxy {kind!r}, expected one of {', '.join(PROXIES)}")
    return kind


def bend_horizons(T: int) -> Tuple[int, int, int]:
    """Horizons t1 < t2 < T at which the bend proxy reads a survival curve."""
    if T < 3:
        raise DomainError(f"the bend proxy needs T >= 3, got {T}")
    t1 = max(1, T // 4)
    t2 = max(t1 + 1, T // 2)
    return t1, t2, T


def _log_variance(point: CurvePoint) -> float:
    if point.replicas == 0:
        return 0.0
    return (1 - point.estimate) / (point.estimate * point.replicas)


def bend(points: Sequence[CurvePoint]) -> Tuple[float, float]:
    """
    Log-log curvature of a survival curve read at three horizons, with a
    delta-method standard error.

    The value is the slope of log(estimate) against log(t) over the second
    interval minus the slope over the first: negative for exponential decay,
    positive for a curve levelling off, near zero for a power law. A curve that
    dies out (or keeps fewer than MIN_POSITIVE_COUNT replicas) reads -inf; a
    curve that does not move at all reads +inf.
    """
    if len(points) != 3:
        raise DomainError(f"bend reads three curve points, got {len(points)}")
    first, middle, last = points
    if not 0 < first.t < middle.t < last.t:
        raise DomainError(f"bend horizons must satisfy 0 < t1 < t2 < t3, got "
                          f"{first.t}, {middle.t}, {last.t}")
    if not all(_usable(pt) for pt in points):
        return -math.inf, 0.0
    if first.estimate == middle.estimate == last.estimate:
        return math.inf, 0.0
    logs = [math.log(pt.estimate) for pt in points]
    a = math.log(middle.t / first.t)
    b = math.log(last.t / middle.t)
    value = (logs[2] - logs[1]) / b - (logs[1] - logs[0]) / a
    variance = (_log_variance(first) / a ** 2 + _log_variance(middle) * (1 / a + 1 / b) ** 2
                + _log_variance(last) / b ** 2)
    return value, math.sqrt(variance)


def estimate_pc(curve: Curve, T: Optional[int] = None, width: Optional[int] = None,
                replicas: Optional[int] = None, tolerance: float = 0.005, seed: int = 0,
                threshold: Optional[float] = None, workers: Optional[int] = None,
                proxy: Optional[str] = None) -> CriticalEstimate:
    """
    Bracket p_c by bisection on a finite-size proxy, all evaluations sharing
    one seed.

    ``proxy="bend"`` reads theta_t(p) at three horizons up to T and looks for
    the sign change of the log-log curvature. ``proxy="threshold"`` asks
    whether theta_T(p) exceeds ``threshold``; a finite horizon overestimates
    survival below p_c, so that bracket is biased low.
    """
    T = int(T or config.get_setting('default_horizon', 256))
    width = int(width or config.get_setting('default_width', 512))
    replicas = int(replicas or config.get_setting('default_replicas', 10000))
    kind = _proxy_kind(proxy)
    lo, hi = float(curve.p_lo), float(curve.p_hi)

    if kind == "bend":
        horizons = bend_horizons(T)
        threshold = 0.0 if threshold is None else float(threshold)
        proxy_name = f"bend of theta_t(p) at t={','.join(map(str, horizons))} > {threshold}"
        bias = "finite-size proxy, corrections to scaling at small T"

        def evaluate(p: float) -> Tuple[float, float]:
            points = theta_curve(curve.at(p), T, replicas, seed, width=width, workers=workers).points
            return bend([points[t] for t in horizons])
    else:
        threshold = float(config.get_setting('proxy_threshold', 0.05) if threshold is None else threshold)
        proxy_name = f"theta_T(p) > {threshold}"
        bias = "finite-size proxy, biased towards lower p_c"

        def evaluate(p: float) -> Tuple[float, float]:
            return theta_estimate(curve.at(p), T, replicas, seed, width=width, workers=workers)

    if not curve.at((lo + hi) / 2).is_absorbing:
        # all-zero is never invariant, so no parameter in range has it as the unique invariant law
        logger.info("curve is non-absorbing, p_c sits at the upper endpoint")
        return CriticalEstimate(hi, hi, 1.0, 1.0, proxy_name, T, threshold, replicas, seed, width,
                                note="non-absorbing: all-zero is not invariant")

    lower, upper, lv, uv, note, evaluations = _bisect(evaluate, lo, hi, tolerance, threshold, True)
    result = CriticalEstimate(lower, upper, lv, uv, proxy_name, T, threshold, replicas, seed,
                              width, note or bias, evaluations)
    console_logger.info(f"📈 p_c bracket {result}")
    return result


def estimate_qc(X: UpdateFamily, T: Optional[int] = None, window: Optional[Box] = None,
                replicas: Optional[int] = None, tolerance: float = 0.005, seed: int = 0,
                threshold: Optional[float] = None, workers: Optional[int] = None,
                proxy: Optional[str] = None) -> CriticalEstimate:
    """
    Bracket q_c by bisection on a finite-size proxy of P(origin healthy at t).

    ``proxy="bend"`` looks for the sign change of the log-log curvature of the
    healthy curve; ``proxy="threshold"`` asks whether
    P(origin healthy at T) / (1 - q) exceeds ``threshold``. Without ``window``
    the curve is evaluated on Z^D through the backward cone.
    """
    T = int(T or config.get_setting('default_horizon', 256))
    replicas = int(replicas or config.get_setting('default_replicas', 10000))
    kind = _proxy_kind(proxy)

    def healthy_points(q: float, horizons: Sequence[int]) -> List[CurvePoint]:
        if window is None:
            return [healthy_estimate(X, q, t, replicas, seed, workers) for t in horizons]
        curve = infection_time_curve(X, q, window, max(horizons), replicas, seed, workers)
        return [curve.points[t] for t in horizons]

    if kind == "bend":
        horizons = bend_horizons(T)
        threshold = 0.0 if threshold is None else float(threshold)
        proxy_name = f"bend of P(healthy at t) at t={','.join(map(str, horizons))} > {threshold}"

        def evaluate(q: float) -> Tuple[float, float]:
            return bend(healthy_points(q, horizons))
    else:
        threshold = float(config.get_setting('proxy_threshold', 0.05) if threshold is None else threshold)
        proxy_name = f"P(healthy at T | healthy at 0) > {threshold}"

        def evaluate(q: float) -> Tuple[float, float]:
            if q >= 1:
                return 0.0, 0.0
            point = healthy_points(q, [T])[0]
            return point.estimate / (1 - q), point.stderr / (1 - q)

    lower, upper, lv, uv, note, evaluations = _bisect(evaluate, 0.0, 1.0, tolerance, threshold, False)
    result = CriticalEstimate(lower, upper, lv, uv, proxy_name, T, threshold, replicas, seed,
                              None, note, evaluations)
    console_logger.info(f"📉 q_c bracket {result}")
    return result


@dataclass
class DualityReport:
    pc: CriticalEstimate
    qc: CriticalEstimate
    family: UpdateFamily
    slack: float

    @property
    def mapped(self) -> Tuple[float, float]:
        """The p_c bracket sent through p -> 1 - p."""
        return 1 - self.pc.upper, 1 - self.pc.lower

    @property
    def passed(self) -> bool:
        lo, hi = self.mapped
        return max(lo, self.qc.lower) - self.slack <= min(hi, self.qc.upper) + self.slack

    def summary(self) -> str:
        lo, hi = self.mapped
        verdict = "overlap" if self.passed else "NO overlap"
        return (f"1 - p_c in [{lo:.6f}, {hi:.6f}], q_c in [{self.qc.lower:.6f}, {self.qc.upper:.6f}]: "
                f"{verdict} (slack {self.slack})")


def duality_check(nbhd: Neighborhood, U: UpFamily, T: Optional[int] = None,
                  width: Optional[int] = None, replicas: Optional[int] = None,
                  tolerance: float = 0.005, seed: int = 0, slack: Optional[float] = None,
                  workers: Optional[int] = None, proxy: Optional[str] = None) -> DualityReport:
    """
    Compare q_c of the dual family ca_to_bp(U) with 1 - p_c of U with death,
    after widening both brackets by ``slack``. Both brackets use the same proxy.
    """
    slack = float(config.get_setting('duality_slack', 0.02) if slack is None else slack)
    X = ca_to_bp(nbhd, U)
    pc = estimate_pc(LinearCurve(dirac(U)), T, width, replicas, tolerance, seed,
                     workers=workers, proxy=proxy)
    qc = estimate_qc(X, T, None, replicas, tolerance, seed, workers=workers, proxy=proxy)
    report = DualityReport(pc, qc, X, slack)
    log = console_logger.info if report.passed else console_logger.error
    log(f"{'✅' if report.passed else '❌'} duality: {report.summary()}")
    return report
