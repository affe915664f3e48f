"""Monte Carlo simulation of the PnL process and of the researcher's tweaks.

Two sampling modes are offered. Path level simulates daily returns of the drifted
Brownian PnL and recomputes Sharpe ratios from the (sign-flipped) series. Gaussian
slice draws the N per-slice Sharpe ratios directly from their normal law.

Ensembles are cut into fixed-size blocks of paths. Block b draws from a Philox
stream keyed by (seed, b), and blocks are reduced in index order, so estimates do
not depend on the number of worker threads.
"""

import dataclasses
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.estimate_tracker import Estimate, EstimateTracker

from .analytic_core import sharpe_noise_scale
from .errors import (
    AttemptsExhaustedError,
    DegenerateSeriesError,
    FlipCountError,
    InvalidParameterError,
    SliceTooThinError,
    UndefinedOffError,
)
from .params import DAYS_PER_YEAR, ModelParams

logger = logging.getLogger(__name__)

DEFAULT_DAILY_VOL = 0.01
DEFAULT_MIN_DAYS_PER_SLICE = 20
DEFAULT_MAX_ATTEMPTS = 10_000
MAX_EXHAUSTED_SHARE = 0.001
GAUSSIAN_BLOCK_SIZE = 4096
PATH_BLOCK_SIZE = 256
_MAX_REDRAW_ROUNDS = 10_000

State = Dict[str, np.ndarray]


class SimulationMode(str, Enum):
    PATH_LEVEL = "path-level"
    GAUSSIAN_SLICE = "gaussian-slice"


class BinningScheme(str, Enum):
    CONTIGUOUS = "contiguous"
    STRIDED = "strided"
    RANDOM = "random-assignment"


class RetryPolicy(str, Enum):
    # new binning of the same realization per attempt
    REBIN = "rebin"
    # discard the realization; redraw one below theta, then tweak it
    REDRAW = "redraw"


@dataclass(frozen=True)
class PathConfig:
    """
    Simulation settings for one ensemble.

    Args:
    model (ModelParams): The analytic parameter set being simulated.
    n_buckets (int): Number of slices N.
    daily_vol (float): Daily return volatility; Sharpe estimates do not depend on it.
    seed (int): Master seed, unsigned 64-bit.
    mode (SimulationMode): path-level or gaussian-slice.
    min_days_per_slice (int): Fewest trading days a path-level slice may hold.
    """

    model: ModelParams
    n_buckets: int
    daily_vol: float = DEFAULT_DAILY_VOL
    seed: int = 0
    mode: SimulationMode = SimulationMode.PATH_LEVEL
    min_days_per_slice: int = DEFAULT_MIN_DAYS_PER_SLICE

    def __post_init__(self):
        object.__setattr__(self, "mode", _parse_enum(SimulationMode, self.mode, "--mode"))
        if isinstance(self.n_buckets, bool) or int(self.n_buckets) != self.n_buckets or self.n_buckets < 1:
            raise InvalidParameterError("--n-buckets", "must be an integer >= 1")
        object.__setattr__(self, "n_buckets", int(self.n_buckets))
        if not math.isfinite(self.daily_vol) or self.daily_vol <= 0:
            raise InvalidParameterError("--daily-vol", "must be a finite number > 0")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise InvalidParameterError("--seed", "must be an integer in [0, 2**64)")
        object.__setattr__(self, "seed", int(self.seed))
        if int(self.min_days_per_slice) != self.min_days_per_slice or self.min_days_per_slice < 1:
            raise InvalidParameterError("--min-days-per-slice", "must be an integer >= 1")

    @property
    def usable_days(self) -> int:
        """Path length truncated to the largest multiple of N."""
        n_days = self.model.n_days
        return n_days - n_days % self.n_buckets

    @property
    def days_per_slice(self) -> int:
        return self.usable_days // self.n_buckets

    def with_model(self, model: ModelParams) -> "PathConfig":
        return self if model == self.model else dataclasses.replace(self, model=model)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_buckets": self.n_buckets,
            "daily_vol": self.daily_vol,
            "seed": self.seed,
            "mode": self.mode.value,
            "min_days_per_slice": self.min_days_per_slice,
        }


@dataclass(frozen=True, eq=False)
class SliceSet:
    """Per-slice Sharpe ratios of one path together with a flip mask (0-based slice indices)."""

    slice_sharpes: np.ndarray
    flip_mask: np.ndarray
    original_sr: float
    modified_sr: float
    bucket_days: Optional[np.ndarray] = None

    @classmethod
    def from_sharpes(cls, sharpes: Sequence[float], flip_mask: Sequence[int] = (),
                     bucket_days: Optional[np.ndarray] = None) -> "SliceSet":
        sharpes = np.asarray(sharpes, dtype=float)
        mask = np.sort(np.asarray(flip_mask, dtype=np.int64))
        if mask.size and (mask[0] < 0 or mask[-1] >= sharpes.size or np.unique(mask).size != mask.size):
            raise InvalidParameterError("flip_mask", f"must hold distinct slice indices in [0, {sharpes.size})")
        original = float(np.mean(sharpes))
        modified = original - 2.0 / sharpes.size * float(np.sum(sharpes[mask]))
        return cls(sharpes, mask, original, modified, bucket_days)

    @property
    def n_buckets(self) -> int:
        return int(self.slice_sharpes.size)

    @property
    def improved(self) -> bool:
        return self.modified_sr > self.original_sr

    def with_flips(self, flip_mask: Sequence[int]) -> "SliceSet":
        return SliceSet.from_sharpes(self.slice_sharpes, flip_mask, self.bucket_days)


@dataclass(frozen=True)
class McResult:
    n_paths: int
    estimates: Dict[str, Estimate]
    seed: int
    attempts_histogram: Dict[int, int] = field(default_factory=dict)
    absent: Tuple[str, ...] = ()
    exhausted: int = 0
    policy: str = ""
    tracker: Optional[EstimateTracker] = field(default=None, repr=False, compare=False)

    def records(self) -> List[Dict[str, Any]]:
        """One row per metric, in estimation order."""
        return [{"metric": name, "mean": est.mean, "se": est.se} for name, est in self.estimates.items()]

    def display(self):
        if self.tracker is not None:
            self.tracker.display_estimates(f"Monte Carlo ({self.policy}, {self.n_paths} paths)")


def _parse_enum(enum_type, value, flag: str):
    if isinstance(value, enum_type):
        return value
    try:
        return enum_type(value)
    except ValueError:
        choices = ", ".join(member.value for member in enum_type)
        raise InvalidParameterError(flag, f"must be one of {choices}") from None


def flip_count(f: float, n_buckets: int) -> int:
    """round(f*N) to the nearest integer, ties up; a tweak needs at least one slice."""
    count = math.floor(f * n_buckets + 0.5 + 1e-9)
    if count < 1:
        raise FlipCountError("--f", f"round(f*N) must be >= 1 (f={f:g}, N={n_buckets})")
    return min(count, n_buckets)


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for substream `stream` of master seed `seed`."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def simulate_daily_pnl(config: PathConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Daily returns of dPnL = mu dt + sigma dW over the backtest.

    Args:
    config (PathConfig): Path-level configuration.
    rng (Generator, optional): Source of randomness; defaults to substream 0 of config.seed.

    Returns:
    ndarray: t_years * days_per_year returns r_d = mu_daily + daily_vol * g_d.
    """
    if config.mode is not SimulationMode.PATH_LEVEL:
        raise InvalidParameterError("--mode", "daily PnL is only simulated in path-level mode")
    rng = rng if rng is not None else generator(config.seed)
    mu_daily = config.model.sr_daily * config.daily_vol
    return mu_daily + config.daily_vol * rng.standard_normal(config.model.n_days)


def realized_sharpe(returns: Sequence[float], days_per_year: int = DAYS_PER_YEAR) -> float:
    """Annualized Sharpe of a daily series; population (1/n) standard deviation."""
    returns = np.asarray(returns, dtype=float)
    if returns.ndim != 1 or returns.size < 2:
        raise InvalidParameterError("returns", "must be a series of at least 2 observations")
    mean = float(np.mean(returns))
    sd = float(np.std(returns))
    if not sd > 1e-12 * abs(mean):
        raise DegenerateSeriesError("return series has zero variance", diagnostics={"mean": mean, "std": sd})
    return mean / sd * math.sqrt(days_per_year)


def _assign_days(usable: int, n_buckets: int, scheme: BinningScheme,
                 rng: Optional[np.random.Generator]) -> np.ndarray:
    days = np.arange(usable)
    per = usable // n_buckets
    if scheme is BinningScheme.CONTIGUOUS:
        return days.reshape(n_buckets, per)
    if scheme is BinningScheme.STRIDED:
        return days.reshape(per, n_buckets).T
    if rng is None:
        raise InvalidParameterError("rng", "random-assignment binning needs a generator")
    return rng.permutation(usable).reshape(n_buckets, per)


def slice_sharpes(returns: Sequence[float], n_buckets: int,
                  scheme: Union[BinningScheme, str] = BinningScheme.CONTIGUOUS,
                  rng: Optional[np.random.Generator] = None,
                  days_per_year: int = DAYS_PER_YEAR,
                  min_days_per_slice: int = DEFAULT_MIN_DAYS_PER_SLICE) -> SliceSet:
    """
    Split a daily series into N equal buckets and compute each bucket's Sharpe.

    The series is truncated to the largest multiple of N. Contiguous buckets follow
    the calendar; strided buckets take every N-th day (N=5 groups days by weekday);
    random assignment shuffles days into buckets.
    """
    scheme = _parse_enum(BinningScheme, scheme, "--scheme")
    returns = np.asarray(returns, dtype=float)
    usable = returns.size - returns.size % n_buckets
    per = usable // n_buckets
    if per < min_days_per_slice:
        raise SliceTooThinError(
            "--n-buckets",
            f"each slice needs at least {min_days_per_slice} days, got {per} ({returns.size} days / N={n_buckets})",
        )
    bucket_days = _assign_days(usable, n_buckets, scheme, rng)
    buckets = returns[bucket_days]
    sd = buckets.std(axis=1)
    if not np.all(sd > 0):
        raise DegenerateSeriesError("a slice has zero variance", diagnostics={"slice_std": sd.tolist()})
    sharpes = buckets.mean(axis=1) / sd * math.sqrt(days_per_year)
    return SliceSet.from_sharpes(sharpes, bucket_days=bucket_days)


def flip_series(returns: Sequence[float], slice_set: SliceSet) -> np.ndarray:
    """The daily series with the returns of every flipped slice negated."""
    if slice_set.bucket_days is None:
        raise InvalidParameterError("slice_set", "needs the day assignment of a path-level slicing")
    flipped = np.array(returns, dtype=float)
    days = slice_set.bucket_days[slice_set.flip_mask].ravel()
    flipped[days] = -flipped[days]
    return flipped


def choose_flips_random(n_buckets: int, f: float, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random subset of round(f*N) slice indices."""
    count = flip_count(f, n_buckets)
    return np.sort(rng.choice(n_buckets, size=count, replace=False))


def choose_flips_maximal(slices: Union[SliceSet, Sequence[float]], f: float) -> np.ndarray:
    """
    The round(f*N) slices whose flip maximizes the modified Sharpe.

    Flipping slice i changes the Sharpe by -2 SR_i / N, so the lowest slice Sharpes
    are flipped; ties go to the lower index.
    """
    sharpes = slices.slice_sharpes if isinstance(slices, SliceSet) else np.asarray(slices, dtype=float)
    count = flip_count(f, sharpes.size)
    return np.sort(np.argsort(sharpes, kind="stable")[:count])


def sample_slice_sharpes_gaussian(params: ModelParams, n_buckets: int, rng: np.random.Generator) -> SliceSet:
    """N independent slice Sharpes from N(SR_t, sqrt(N) * sigma_tot)."""
    scale = sharpe_noise_scale(params).sigma_slice(n_buckets)
    return SliceSet.from_sharpes(rng.normal(params.sr_true, scale, n_buckets))


def _random_masks(rng: np.random.Generator, size: int, n_buckets: int, count: int) -> np.ndarray:
    return np.argsort(rng.random((size, n_buckets)), axis=1)[:, :count]


def _take(state: State, index) -> State:
    return {key: value[index] for key, value in state.items()}


def _concat(states: List[State]) -> State:
    return {key: np.concatenate([state[key] for state in states]) for key in states[0]}


class _GaussianSliceSampler:
    block_size = GAUSSIAN_BLOCK_SIZE

    def __init__(self, config: PathConfig):
        self.n_buckets = config.n_buckets
        self.sr_true = config.model.sr_true
        self.scale = sharpe_noise_scale(config.model).sigma_slice(config.n_buckets)

    def draw(self, rng: np.random.Generator, size: int) -> State:
        slices = self.sr_true + self.scale * rng.standard_normal((size, self.n_buckets))
        return {"slices": slices, "sr": slices.mean(axis=1)}

    def tweak(self, state: State, rng: np.random.Generator, count: int, rebin: bool = False) -> np.ndarray:
        slices = state["slices"]
        if rebin:
            # iid Gaussians re-centred on the realized mean follow their law given that mean
            fresh = self.sr_true + self.scale * rng.standard_normal(slices.shape)
            slices = fresh - fresh.mean(axis=1, keepdims=True) + state["sr"][:, None]
        mask = _random_masks(rng, len(slices), self.n_buckets, count)
        return state["sr"] - 2.0 / self.n_buckets * np.take_along_axis(slices, mask, axis=1).sum(axis=1)

    def maximal(self, state: State, count: int) -> np.ndarray:
        lowest = np.partition(state["slices"], count - 1, axis=1)[:, :count]
        return state["sr"] - 2.0 / self.n_buckets * lowest.sum(axis=1)


class _PathLevelSampler:
    block_size = PATH_BLOCK_SIZE

    def __init__(self, config: PathConfig):
        if config.days_per_slice < config.min_days_per_slice:
            raise SliceTooThinError(
                "--n-buckets",
                f"each slice needs at least {config.min_days_per_slice} days, got {config.days_per_slice} "
                f"({config.model.n_days} days / N={config.n_buckets})",
            )
        self.n_buckets = config.n_buckets
        self.per = config.days_per_slice
        self.length = config.usable_days
        self.vol = config.daily_vol
        self.mu = config.model.sr_daily * config.daily_vol
        self.annualize = math.sqrt(config.model.days_per_year)

    def _sharpe(self, mean: np.ndarray, m2: np.ndarray) -> np.ndarray:
        return mean / np.sqrt(m2 - mean * mean) * self.annualize

    def draw(self, rng: np.random.Generator, size: int) -> State:
        returns = self.mu + self.vol * rng.standard_normal((size, self.length))
        buckets = returns.reshape(size, self.n_buckets, self.per)
        mean = returns.mean(axis=1)
        m2 = np.mean(returns * returns, axis=1)
        return {
            "returns": returns,
            "mean": mean,
            "m2": m2,
            "bucket_sum": buckets.sum(axis=2),
            "sr": self._sharpe(mean, m2),
        }

    def _flipped(self, state: State, flipped_sum: np.ndarray) -> np.ndarray:
        # negation leaves the second moment unchanged
        mean = state["mean"] - 2.0 * flipped_sum / self.length
        return self._sharpe(mean, state["m2"])

    def tweak(self, state: State, rng: np.random.Generator, count: int, rebin: bool = False) -> np.ndarray:
        size = len(state["sr"])
        if rebin:
            n_flipped = count * self.per
            keys = rng.random((size, self.length))
            days = np.argpartition(keys, n_flipped - 1, axis=1)[:, :n_flipped]
            flipped = np.take_along_axis(state["returns"], days, axis=1).sum(axis=1)
        else:
            mask = _random_masks(rng, size, self.n_buckets, count)
            flipped = np.take_along_axis(state["bucket_sum"], mask, axis=1).sum(axis=1)
        return self._flipped(state, flipped)

    def maximal(self, state: State, count: int) -> np.ndarray:
        # the recomputed Sharpe rises as the flipped sum falls, so the lowest bucket sums win
        lowest = np.partition(state["bucket_sum"], count - 1, axis=1)[:, :count]
        return self._flipped(state, lowest.sum(axis=1))


def _sampler(config: PathConfig):
    if config.mode is SimulationMode.GAUSSIAN_SLICE:
        return _GaussianSliceSampler(config)
    return _PathLevelSampler(config)


def _run_blocks(block_fn: Callable[[np.random.Generator, int], State], seed: int, n_paths: int,
                block_size: int, workers: int) -> List[State]:
    blocks = [(index, min(block_size, n_paths - index * block_size))
              for index in range(math.ceil(n_paths / block_size))]

    def run(block: Tuple[int, int]) -> State:
        index, size = block
        return block_fn(generator(seed, index), size)

    if workers <= 1 or len(blocks) == 1:
        return [run(block) for block in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, blocks))


def _check_paths(n_paths: int, workers: int):
    if isinstance(n_paths, bool) or int(n_paths) != n_paths or n_paths < 1:
        raise InvalidParameterError("--n-paths", "must be an integer >= 1")
    if int(workers) != workers or workers < 1:
        raise InvalidParameterError("--workers", "must be an integer >= 1")


def _ratio_estimate(numerator: np.ndarray, denominator: np.ndarray, ratio_denominator: float) -> Estimate:
    """Delta-method standard error of mean(numerator) / ratio_denominator."""
    ratio = float(np.mean(numerator)) / ratio_denominator
    if numerator.size < 2:
        return Estimate(ratio, 0.0)
    residual = numerator - ratio * denominator
    se = float(np.std(residual, ddof=1)) / math.sqrt(numerator.size) / abs(ratio_denominator)
    return Estimate(ratio, se)


def run_one_off(params: ModelParams, config: PathConfig, n_paths: int, workers: int = 1) -> McResult:
    """
    One tweak per path: estimate PoOF, PoA and the SR / SR_m correlation.

    Every path receives one random tweak so that the correlation is measured over the
    unconditioned ensemble; PoOF only looks at paths that missed the threshold.

    Args:
    params (ModelParams): Model being simulated (replaces config.model).
    config (PathConfig): Simulation settings.
    n_paths (int): Ensemble size.
    workers (int): Worker threads; results do not depend on it.

    Returns:
    McResult: Estimates for p_clear, poof, poa, corr_sr_srm and e_srm_given_accept.
    """
    _check_paths(n_paths, workers)
    config = config.with_model(params)
    count = flip_count(params.f, config.n_buckets)
    sampler = _sampler(config)

    def block(rng: np.random.Generator, size: int) -> State:
        state = sampler.draw(rng, size)
        return {"sr": state["sr"], "srm": sampler.tweak(state, rng, count)}

    results = _concat(_run_blocks(block, config.seed, n_paths, sampler.block_size, workers))
    sr, srm = results["sr"], results["srm"]
    theta = params.theta
    clear = sr > theta
    below = ~clear

    tracker = EstimateTracker()
    tracker.update_samples("p_clear", clear)
    absent = []
    if below.any():
        tracker.update_samples("poof", srm[below] > theta)
    else:
        absent.append("poof")
    tracker.update_samples("poa", clear | (below & (srm > theta)))
    accepted = below & (srm > theta)
    if accepted.any():
        tracker.update_samples("e_srm_given_accept", srm[accepted])
    else:
        absent.append("e_srm_given_accept")
    if n_paths > 2 and np.std(sr) > 0 and np.std(srm) > 0:
        r = float(np.corrcoef(sr, srm)[0, 1])
        tracker.set_estimate("corr_sr_srm", r, (1.0 - r * r) / math.sqrt(n_paths - 1))
    else:
        absent.append("corr_sr_srm")
    if absent:
        logger.info("metrics without data: %s", ", ".join(absent))

    return McResult(n_paths=n_paths, estimates=tracker.get_estimates(), seed=config.seed, tracker=tracker,
                    absent=tuple(absent), policy="one-off")


def _draw_below(sampler, rng: np.random.Generator, size: int, theta: float) -> State:
    parts: List[State] = []
    have = 0
    for _ in range(_MAX_REDRAW_ROUNDS):
        fresh = sampler.draw(rng, max(size - have, 64))
        kept = _take(fresh, fresh["sr"] <= theta)
        parts.append(kept)
        have += len(kept["sr"])
        if have >= size:
            return _take(_concat(parts), slice(0, size))
    raise AttemptsExhaustedError(
        "could not draw realizations below the threshold",
        diagnostics={"theta": theta, "wanted": size, "drawn_below": have},
    )


def _until_clear_estimates(params: ModelParams, in_sample: np.ndarray, clear: np.ndarray,
                           tracker: EstimateTracker) -> None:
    sr, f = params.sr_true, params.f
    n = in_sample.size
    tracker.update_samples("p_clear", clear)
    tracker.update_samples("e_in", in_sample)
    p_clear = tracker.get_estimate("p_clear")
    e_out = p_clear.mean * sr + (1.0 - p_clear.mean) * (1.0 - 2.0 * f) * sr
    tracker.set_estimate("e_out", e_out, abs(2.0 * f * sr) * p_clear.se)
    if e_out == 0.0:
        raise UndefinedOffError("empirical out-of-sample Sharpe is zero", diagnostics={"n_paths": n})
    out_of_sample = np.where(clear, sr, (1.0 - 2.0 * f) * sr)
    off = _ratio_estimate(in_sample, out_of_sample, e_out)
    tracker.set_estimate("off", off.mean, off.se)


def run_until_clear(params: ModelParams, config: PathConfig, n_paths: int,
                    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                    retry: Union[RetryPolicy, str] = RetryPolicy.REDRAW,
                    workers: int = 1) -> McResult:
    """
    Researcher keeps tweaking a sub-threshold strategy until it clears theta.

    The first attempt flips slices of the contiguous binning. Later attempts either
    discard the realization for a fresh one below theta (REDRAW) or re-bin the same
    realization at random (REBIN). REBIN only moves SR_m by about
    2 sqrt(f(1-f)) sigma_tot around the path's SR, so paths far below theta exhaust
    max_attempts. An accepted tweak keeps (1-2f) SR_t out of sample whatever the
    attempt count.

    Args:
    params (ModelParams): Model being simulated.
    config (PathConfig): Simulation settings.
    n_paths (int): Ensemble size.
    max_attempts (int): Tweak attempts before a path counts as exhausted.
    retry (RetryPolicy): How attempts after the first are generated.
    workers (int): Worker threads.

    Returns:
    McResult: e_in, e_out, off, p_clear, mean_attempts and the attempts histogram.
    """
    _check_paths(n_paths, workers)
    if int(max_attempts) != max_attempts or max_attempts < 1:
        raise InvalidParameterError("--max-attempts", "must be an integer >= 1")
    retry = _parse_enum(RetryPolicy, retry, "--retry")
    config = config.with_model(params)
    count = flip_count(params.f, config.n_buckets)
    sampler = _sampler(config)
    theta = params.theta

    def block(rng: np.random.Generator, size: int) -> State:
        state = sampler.draw(rng, size)
        in_sample = state["sr"].copy()
        clear = in_sample > theta
        attempts = np.zeros(size, dtype=np.int64)
        active = np.flatnonzero(~clear)
        current = _take(state, active)
        attempt = 0
        while active.size and attempt < max_attempts:
            attempt += 1
            if retry is RetryPolicy.REDRAW and attempt > 1:
                current = _draw_below(sampler, rng, active.size, theta)
            rebin = retry is RetryPolicy.REBIN and attempt > 1
            srm = sampler.tweak(current, rng, count, rebin=rebin)
            success = srm > theta
            in_sample[active[success]] = srm[success]
            attempts[active[success]] = attempt
            active = active[~success]
            current = _take(current, ~success)
        exhausted = np.zeros(size, dtype=bool)
        exhausted[active] = True
        attempts[active] = max_attempts
        return {"in_sample": in_sample, "clear": clear, "attempts": attempts, "exhausted": exhausted}

    results = _concat(_run_blocks(block, config.seed, n_paths, sampler.block_size, workers))
    exhausted = results["exhausted"]
    n_exhausted = int(exhausted.sum())
    if n_exhausted > MAX_EXHAUSTED_SHARE * n_paths:
        raise AttemptsExhaustedError(
            f"{n_exhausted} of {n_paths} paths never cleared theta within {max_attempts} attempts",
            diagnostics={"exhausted": n_exhausted, "n_paths": n_paths, "max_attempts": max_attempts},
        )
    if n_exhausted:
        logger.warning("%d paths exhausted %d attempts and are left out of the estimates", n_exhausted, max_attempts)

    valid = ~exhausted
    tracker = EstimateTracker()
    _until_clear_estimates(params, results["in_sample"][valid], results["clear"][valid], tracker)
    tracker.update_samples("mean_attempts", results["attempts"][valid])
    histogram = Counter(int(a) for a in results["attempts"])
    return McResult(n_paths=n_paths, estimates=tracker.get_estimates(), seed=config.seed, tracker=tracker,
                    attempts_histogram=dict(sorted(histogram.items())), exhausted=n_exhausted,
                    policy=f"until-clear/{retry.value}")


def run_maximal(params: ModelParams, config: PathConfig, n_paths: int, workers: int = 1) -> McResult:
    """
    Researcher who always maximally overfits a sub-threshold strategy.

    Paths above theta are presented as is. Others flip the round(f*N) slices with the
    lowest Sharpe (gaussian slices) or the lowest return sum (path level, where that
    maximizes the recomputed Sharpe); the tweak is kept only if it improves the
    in-sample Sharpe. Unlike random tweaks, the outcome depends on N.
    """
    _check_paths(n_paths, workers)
    config = config.with_model(params)
    count = flip_count(params.f, config.n_buckets)
    sampler = _sampler(config)
    theta, sr_true = params.theta, params.sr_true

    def block(rng: np.random.Generator, size: int) -> State:
        state = sampler.draw(rng, size)
        return {"sr": state["sr"], "srm": sampler.maximal(state, count)}

    results = _concat(_run_blocks(block, config.seed, n_paths, sampler.block_size, workers))
    sr, srm = results["sr"], results["srm"]
    clear = sr > theta
    tweaked = ~clear & (srm > sr)
    in_sample = np.where(tweaked, srm, sr)
    out_of_sample = np.where(tweaked, (1.0 - 2.0 * params.f) * sr_true, sr_true)

    tracker = EstimateTracker()
    tracker.update_samples("p_clear", clear)
    tracker.update_samples("e_in", in_sample)
    tracker.update_samples("e_out", out_of_sample)
    e_out = float(np.mean(out_of_sample))
    if e_out == 0.0:
        raise UndefinedOffError("empirical out-of-sample Sharpe is zero", diagnostics={"n_paths": n_paths})
    off = _ratio_estimate(in_sample, out_of_sample, e_out)
    tracker.set_estimate("off", off.mean, off.se)
    tracker.update_samples("poa", in_sample > theta)
    absent: Tuple[str, ...] = ()
    if (~clear).any():
        tracker.update_samples("p_improved", (srm > sr)[~clear])
    else:
        absent = ("p_improved",)
    return McResult(n_paths=n_paths, estimates=tracker.get_estimates(), seed=config.seed, tracker=tracker,
                    absent=absent, policy="maximal")
