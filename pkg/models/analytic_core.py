import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Callable, Dict, Iterable, Optional, Tuple, Union

import numpy as np
from scipy import integrate, special

from .errors import (
    ConditioningError,
    DegenerateCorrelationError,
    InvalidParameterError,
    QuadratureError,
    UndefinedOffError,
    UnreliableTailError,
)
from .params import ModelParams

logger = logging.getLogger(__name__)

WINDOW_SIGMAS = 12.0
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200
# log of the smallest tail mass whose conditional mean is still representable
TAIL_LOG_FLOOR = -700.0
_SCAN_POINTS = 1025
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SharpeNoise:
    """Standard deviation of the full-sample Sharpe estimate."""

    sigma_tot: float

    def slice_variance(self, n_buckets: int) -> float:
        return n_buckets * self.sigma_tot ** 2

    def sigma_slice(self, n_buckets: int) -> float:
        return math.sqrt(self.slice_variance(n_buckets))


@dataclass(frozen=True)
class OverfitReport:
    p_clear: float
    e_sr_given_clear: float
    poof: Optional[float]
    e_srm_given_accept: Optional[float]
    e_in: float
    e_out: float
    off: float
    poa: float
    off_asymptote: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class Sidedness(str, Enum):
    ONE_SIDED = "one-sided"
    TWO_SIDED = "two-sided"

    @classmethod
    def parse(cls, value: Union[str, "Sidedness"]) -> "Sidedness":
        if isinstance(value, cls):
            return value
        aliases = {"one": cls.ONE_SIDED, "two": cls.TWO_SIDED}
        text = str(value).strip().lower()
        if text in aliases:
            return aliases[text]
        try:
            return cls(text)
        except ValueError:
            raise InvalidParameterError("--sides", "must be one of one, two, one-sided, two-sided") from None


def sharpe_noise_scale(params: ModelParams) -> SharpeNoise:
    """
    Standard deviation of the annualized Sharpe estimated over the whole backtest.

    Args:
    params (ModelParams): Model parameters; only sr_true, t_years and days_per_year matter.

    Returns:
    SharpeNoise: sigma_tot with sigma_tot^2 = (1 + SR_daily^2 / 2) / T.
    """
    variance = 1.0 / params.t_years
    if params.include_sr_correction:
        variance *= 1.0 + params.sr_daily ** 2 / 2.0
    return SharpeNoise(sigma_tot=math.sqrt(variance))


def prob_clear(params: ModelParams) -> float:
    """Probability that the realized Sharpe clears the threshold."""
    sigma = sharpe_noise_scale(params).sigma_tot
    return float(special.ndtr((params.sr_true - params.theta) / sigma))


def truncated_normal_mean_above(mean: float, sd: float, lower: float) -> float:
    """
    Mean of N(mean, sd) conditioned on exceeding `lower`.

    The inverse Mills ratio is evaluated in log space. If it still overflows, the
    leading asymptotic term lower + sd^2 / (lower - mean) is returned. That fallback is
    flagged by a WARNING on the models.analytic_core logger, the only signal callers get.

    Args:
    mean (float): Mean of the untruncated normal.
    sd (float): Standard deviation, > 0.
    lower (float): Truncation point; -inf means no truncation.

    Returns:
    float: The conditional mean, never below max(mean, lower).
    """
    if not sd > 0 or not math.isfinite(sd):
        raise InvalidParameterError("sd", "must be a finite number > 0")
    if math.isnan(lower) or lower == math.inf:
        raise InvalidParameterError("lower", "must be a real number below +inf")
    if lower == -math.inf:
        return float(mean)
    z = (lower - mean) / sd
    log_mills = -0.5 * z * z - _LOG_SQRT_2PI - special.log_ndtr(-z)
    mills = math.exp(log_mills) if math.isfinite(log_mills) else math.inf
    if not math.isfinite(mills):
        logger.warning("inverse Mills ratio overflowed at z=%.3g, using asymptotic tail mean", z)
        return float(lower + sd * sd / (lower - mean))
    return float(max(mean + sd * mills, lower, mean))


@dataclass(frozen=True)
class _ConditionedDensity:
    """Log-density of SR_m conditioned on SR < theta, with the constants it needs."""

    theta: float
    sr_true: float
    mean_m: float
    sigma: float
    corr: float
    cond_sd: float
    log_p_below: float

    def log_pdf(self, y: Union[float, np.ndarray]) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = (y - self.mean_m) / self.sigma
        arg = (self.theta - self.sr_true - self.corr * (y - self.mean_m)) / self.cond_sd
        return -0.5 * z * z - math.log(self.sigma) - _LOG_SQRT_2PI + special.log_ndtr(arg) - self.log_p_below

    def log_pdf_scalar(self, y: float) -> float:
        z = (y - self.mean_m) / self.sigma
        arg = (self.theta - self.sr_true - self.corr * (y - self.mean_m)) / self.cond_sd
        return -0.5 * z * z - math.log(self.sigma) - _LOG_SQRT_2PI + float(special.log_ndtr(arg)) - self.log_p_below

    @property
    def shift(self) -> float:
        # where SR_m sits when SR sits right at the threshold
        return self.corr * (self.theta - self.sr_true)

    @property
    def step_center(self) -> Optional[float]:
        if self.corr == 0.0:
            return None
        return self.mean_m + (self.theta - self.sr_true) / self.corr

    def window(self) -> Tuple[float, float]:
        half = WINDOW_SIGMAS * self.sigma
        return (self.mean_m - half + min(0.0, self.shift), self.mean_m + half + max(0.0, self.shift))

    def breakpoints(self) -> Tuple[float, ...]:
        points = [self.theta, self.mean_m + self.shift]
        if self.step_center is not None:
            points.append(self.step_center)
        return tuple(points)


def _conditioned_density(params: ModelParams) -> _ConditionedDensity:
    if not 0.0 < params.f < 1.0:
        raise DegenerateCorrelationError(
            "--f",
            "must satisfy 0 < f < 1 for the conditioned density "
            "(f = 0 leaves SR_m = SR, f = 1 reflects it to -SR)",
        )
    sigma = sharpe_noise_scale(params).sigma_tot
    log_p_below = float(special.log_ndtr((params.theta - params.sr_true) / sigma))
    if not log_p_below > TAIL_LOG_FLOOR:
        raise ConditioningError(
            "conditioning event SR < theta has vanishing probability",
            diagnostics={"theta": params.theta, "sr_true": params.sr_true, "sigma_tot": sigma,
                         "log_p_below": log_p_below},
        )
    corr = params.correlation
    return _ConditionedDensity(
        theta=params.theta,
        sr_true=params.sr_true,
        mean_m=corr * params.sr_true,
        sigma=sigma,
        corr=corr,
        cond_sd=2.0 * sigma * math.sqrt(params.f * (1.0 - params.f)),
        log_p_below=log_p_below,
    )


def _quad(func: Callable[[float], float], lower: float, upper: float, points: Iterable[float],
          what: str) -> Tuple[float, float]:
    inner = sorted({p for p in points if lower < p < upper})
    result = integrate.quad(
        func, lower, upper,
        points=inner or None,
        epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT,
        full_output=1,
    )
    if len(result) > 3:
        raise QuadratureError(
            f"{what}: quadrature did not converge",
            diagnostics={"lower": lower, "upper": upper, "value": result[0], "abserr": result[1],
                         "message": result[3], "evaluations": result[2].get("neval")},
        )
    return result[0], result[1]


@dataclass(frozen=True)
class _TailMoments:
    log_mass: float
    mean: float
    abserr: float


def _tail_moments(density: _ConditionedDensity, lower: float) -> _TailMoments:
    # Integrate rho / peak so that tiny tails keep full relative precision.
    lo, hi = density.window()
    a = max(lower, lo)
    b = max(hi, a + WINDOW_SIGMAS * density.sigma)
    scan = np.concatenate([np.linspace(a, b, _SCAN_POINTS),
                           [p for p in density.breakpoints() if a <= p <= b]])
    log_ref = float(np.max(density.log_pdf(scan)))
    if not math.isfinite(log_ref):
        return _TailMoments(log_mass=-math.inf, mean=math.nan, abserr=0.0)

    def weight(y: float) -> float:
        return math.exp(density.log_pdf_scalar(y) - log_ref)

    mass, err = _quad(weight, a, b, density.breakpoints(), "conditioned density mass")
    if not mass > 0:
        return _TailMoments(log_mass=-math.inf, mean=math.nan, abserr=err)
    first, _ = _quad(lambda y: y * weight(y), a, b, density.breakpoints(), "conditioned density mean")
    return _TailMoments(log_mass=log_ref + math.log(mass), mean=first / mass, abserr=err * math.exp(log_ref))


def rho_pdf(y: Union[float, np.ndarray], params: ModelParams) -> Union[float, np.ndarray]:
    """
    Density of the tweaked Sharpe SR_m given that the original realization missed the threshold.

    The Gaussian factor uses exp(-(y - (1-2f) SR_t)^2 / (2 sigma^2)); this is the form under
    which the density integrates to one and matches the bivariate-Gaussian construction.

    Args:
    y (float | ndarray): Point(s) at which to evaluate.
    params (ModelParams): Model parameters with 0 < f < 1.

    Returns:
    float | ndarray: rho(y), same shape as y.
    """
    density = _conditioned_density(params)
    values = np.exp(density.log_pdf(y))
    return float(values) if np.ndim(values) == 0 else values


def rho_total_mass(params: ModelParams) -> float:
    """Integral of rho over the whole line; one up to quadrature error."""
    return math.exp(_tail_moments(_conditioned_density(params), -math.inf).log_mass)


def rho_tail_prob(params: ModelParams) -> float:
    """PoOF: probability a single tweak lifts a sub-threshold realization above theta."""
    moments = _tail_moments(_conditioned_density(params), params.theta)
    return float(min(1.0, max(0.0, math.exp(moments.log_mass))))


def rho_tail_mean(params: ModelParams, lower: Optional[float] = None) -> float:
    """
    Conditional mean of SR_m above `lower` under rho.

    Args:
    params (ModelParams): Model parameters with 0 < f < 1.
    lower (float, optional): Tail start; defaults to theta. Pass -inf for the mean of rho itself.

    Returns:
    float: E_rho(SR_m | SR_m > lower).
    """
    lower = params.theta if lower is None else lower
    density = _conditioned_density(params)
    moments = _tail_moments(density, lower)
    if not moments.log_mass > TAIL_LOG_FLOOR:
        raise UnreliableTailError(
            "tail mass of rho above the threshold is too small for a conditional mean",
            diagnostics={"log_tail_mass": moments.log_mass, "floor": TAIL_LOG_FLOOR,
                         "lower": lower, **params.to_dict()},
        )
    if lower == -math.inf:
        return float(moments.mean)
    return float(max(moments.mean, lower))


def overfit_report(params: ModelParams) -> OverfitReport:
    """
    Closed-form in-sample / out-of-sample expectations and the overfitting factor.

    A researcher presents a realization that clears theta as is; otherwise they keep
    tweaking until a tweak clears it. Tweaked strategies keep (1-2f) of the true Sharpe.
    """
    sr, theta, f = params.sr_true, params.theta, params.f
    sigma = sharpe_noise_scale(params).sigma_tot
    if f >= 0.5 and sr > 0:
        logger.warning("f=%.4g >= 1/2: the out-of-sample denominator can cross zero", f)

    p_clear = prob_clear(params)
    p_below = 1.0 - p_clear
    e_clear = truncated_normal_mean_above(sr, sigma, theta)
    try:
        poof: Optional[float] = rho_tail_prob(params)
        e_accept: Optional[float] = rho_tail_mean(params)
    except ConditioningError:
        logger.info("SR < theta is numerically impossible at theta=%.4g; tweak branch skipped", theta)
        poof = e_accept = None

    e_in = p_clear * e_clear + (p_below * e_accept if e_accept is not None else 0.0)
    e_out = p_clear * sr + p_below * (1.0 - 2.0 * f) * sr
    if e_out == 0.0:
        raise UndefinedOffError(
            "expected out-of-sample Sharpe is zero, OFF is undefined",
            diagnostics={"e_in": e_in, **params.to_dict()},
        )
    poa = p_clear + (1.0 - p_clear) * (poof if poof is not None else 0.0)
    denominator = (1.0 - 2.0 * f) * sr
    return OverfitReport(
        p_clear=p_clear,
        e_sr_given_clear=e_clear,
        poof=poof,
        e_srm_given_accept=e_accept,
        e_in=e_in,
        e_out=e_out,
        off=e_in / e_out,
        poa=poa,
        off_asymptote=theta / denominator if denominator != 0.0 else None,
    )


def significance_z(confidence: float, sides: Union[str, Sidedness] = Sidedness.TWO_SIDED) -> float:
    if not 0.0 < confidence < 1.0:
        raise InvalidParameterError("--confidence", "must satisfy 0 < confidence < 1")
    sides = Sidedness.parse(sides)
    tail = 1.0 - confidence
    if sides is Sidedness.TWO_SIDED:
        tail /= 2.0
    return float(-special.ndtri(tail))


def min_backtest_years(sr: float, confidence: float,
                       sides: Union[str, Sidedness] = Sidedness.TWO_SIDED) -> float:
    """
    Shortest backtest for which a Sharpe of `sr` is significant at `confidence`.

    Uses sigma_SR = 1 / sqrt(T) (no daily correction), so T = (z / sr)^2.
    """
    if not math.isfinite(sr) or sr == 0.0:
        raise InvalidParameterError("--sr", "must be finite and nonzero")
    z = significance_z(confidence, sides)
    return (z / sr) ** 2
