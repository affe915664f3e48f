"""Parameter sweeps, figure presets and Monte Carlo cross-checks of the closed forms."""
import dataclasses
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from models import __version__
from models.analytic_core import OverfitReport, overfit_report
from models.errors import InvalidParameterError, OfflabError
from models.mc_engine import (
    DEFAULT_MAX_ATTEMPTS,
    McResult,
    PathConfig,
    RetryPolicy,
    run_one_off,
    run_until_clear,
)
from models.params import ModelParams

logger = logging.getLogger(__name__)

SWEEPABLE = ("sr_true", "theta", "f", "t_years")
REPORT_METRICS = tuple(f.name for f in dataclasses.fields(OverfitReport))
DEFAULT_METRICS = ("off", "poof", "poa", "off_asymptote")
# |z| above this counts as a disagreement between simulation and closed form
Z_PASS = 4.0


@dataclass(frozen=True)
class GridAxis:
    name: str
    start: float
    stop: float
    count: int

    def __post_init__(self):
        if self.name not in SWEEPABLE:
            raise InvalidParameterError("--axis", f"cannot sweep {self.name!r}; choose from {', '.join(SWEEPABLE)}")
        if int(self.count) != self.count or self.count < 2:
            raise InvalidParameterError("--axis", "an axis needs at least 2 points")
        if not (math.isfinite(self.start) and math.isfinite(self.stop)):
            raise InvalidParameterError("--axis", "axis bounds must be finite")

    @classmethod
    def parse(cls, text: str) -> "GridAxis":
        """Parse NAME:START:STOP:COUNT; dashes in NAME are accepted."""
        parts = text.split(":")
        if len(parts) != 4:
            raise InvalidParameterError("--axis", f"expected NAME:START:STOP:COUNT, got {text!r}")
        name = parts[0].strip().replace("-", "_")
        try:
            return cls(name, float(parts[1]), float(parts[2]), int(parts[3]))
        except ValueError:
            raise InvalidParameterError("--axis", f"non-numeric bound or count in {text!r}") from None

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, int(self.count))


@dataclass(frozen=True)
class McOverlay:
    """Monte Carlo run added to every grid point."""

    config: PathConfig
    n_paths: int
    policy: str = "one-off"
    retry: RetryPolicy = RetryPolicy.REDRAW
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if self.policy not in ("one-off", "until-clear"):
            raise InvalidParameterError("--policy", "grid overlays support one-off and until-clear")


@dataclass(frozen=True)
class GridSpec:
    fixed: ModelParams
    axes: Tuple[GridAxis, ...]
    metrics: Tuple[str, ...] = DEFAULT_METRICS
    mc_overlay: Optional[McOverlay] = None
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if not 1 <= len(self.axes) <= 2:
            raise InvalidParameterError("--axis", "a grid sweeps one or two axes")
        if len({axis.name for axis in self.axes}) != len(self.axes):
            raise InvalidParameterError("--axis", "axes must sweep different parameters")
        unknown = [m for m in self.metrics if m not in REPORT_METRICS]
        if unknown or not self.metrics:
            raise InvalidParameterError("--metrics", f"choose from {', '.join(REPORT_METRICS)}")
        for axis in self.axes:
            values = axis.values()
            if axis.name == "f" and (values.min() <= 0.0 or values.max() >= 0.5):
                raise InvalidParameterError("--axis", "swept f must stay inside (0, 1/2)")
            if axis.name == "t_years" and values.min() <= 0.0:
                raise InvalidParameterError("--axis", "swept t_years must stay > 0")

    def points(self) -> List[Dict[str, float]]:
        """Grid points in row order; the first axis varies slowest."""
        names = [axis.name for axis in self.axes]
        return [dict(zip(names, map(float, combo)))
                for combo in itertools.product(*(axis.values() for axis in self.axes))]


@dataclass
class GridResult:
    rows: List[Dict[str, Any]]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def derived_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for sub-run `index` of a master seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def _mc_columns(result: McResult) -> Dict[str, Optional[float]]:
    columns: Dict[str, Optional[float]] = {}
    for metric, estimate in result.estimates.items():
        columns[f"mc_{metric}"] = estimate.mean
        columns[f"mc_{metric}_se"] = estimate.se
    for metric in result.absent:
        columns[f"mc_{metric}"] = None
        columns[f"mc_{metric}_se"] = None
    return columns


def _run_overlay(overlay: McOverlay, params: ModelParams, index: int) -> McResult:
    config = dataclasses.replace(overlay.config, model=params, seed=derived_seed(overlay.config.seed, index))
    if overlay.policy == "until-clear":
        return run_until_clear(params, config, overlay.n_paths, max_attempts=overlay.max_attempts,
                               retry=overlay.retry)
    return run_one_off(params, config, overlay.n_paths)


def _evaluate_point(spec: GridSpec, index: int, point: Dict[str, float]) -> Dict[str, Any]:
    row: Dict[str, Any] = {"grid_index": index, **point}
    row.update({metric: None for metric in spec.metrics})
    try:
        params = spec.fixed.replace(**point)
        report = overfit_report(params)
        for metric in spec.metrics:
            row[metric] = getattr(report, metric)
        if spec.mc_overlay is not None:
            row.update(_mc_columns(_run_overlay(spec.mc_overlay, params, index)))
        row["status"] = "ok"
        row["message"] = ""
    except OfflabError as exc:
        logger.info("grid point %d %s failed: %s", index, point, exc)
        row["status"] = exc.code
        row["message"] = str(exc)
    return row


def grid_evaluate(spec: GridSpec, workers: int = 1) -> GridResult:
    """
    Evaluate the closed-form report over every grid point.

    A point that fails keeps its row: metric cells are None and `status` holds the
    error code. Rows come back in grid order whatever the worker count.

    Args:
    spec (GridSpec): Fixed parameters, swept axes, metrics and optional MC overlay.
    workers (int): Threads evaluating grid points.

    Returns:
    GridResult: Rows plus run metadata.
    """
    if int(workers) != workers or workers < 1:
        raise InvalidParameterError("--workers", "must be an integer >= 1")
    points = spec.points()
    logger.info("evaluating %d grid points over %s", len(points), ", ".join(a.name for a in spec.axes))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda item: _evaluate_point(spec, *item), enumerate(points)))
    failed = sum(row["status"] != "ok" for row in rows)
    if failed:
        logger.warning("%d of %d grid points failed", failed, len(rows))

    overlay = spec.mc_overlay
    metadata = {
        "grid": spec.name,
        "axes": [dataclasses.asdict(axis) for axis in spec.axes],
        "metrics": list(spec.metrics),
        "fixed": spec.fixed.to_dict(),
        "seed": overlay.config.seed if overlay is not None else None,
        "mc_paths": overlay.n_paths if overlay is not None else None,
        "failed_points": failed,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    return GridResult(rows=rows, metadata=metadata)


def _sharpe_by_years(name: str, metrics: Tuple[str, ...]) -> GridSpec:
    return GridSpec(
        fixed=ModelParams(sr_true=0.4, theta=0.7, f=0.025, t_years=20.0, include_sr_correction=False),
        axes=(GridAxis("sr_true", 0.3, 0.6, 4), GridAxis("t_years", 2.0, 100.0, 21)),
        metrics=metrics,
        name=name,
    )


def _figure_4() -> GridSpec:
    return GridSpec(
        fixed=ModelParams(sr_true=0.4, theta=0.7, f=0.05, t_years=20.0, include_sr_correction=False),
        axes=(GridAxis("sr_true", 0.3, 0.6, 4), GridAxis("f", 0.01, 0.10, 19)),
        metrics=("off", "poof", "poa"),
        name="figure-4",
    )


def _figure_5() -> GridSpec:
    return GridSpec(
        fixed=ModelParams(sr_true=0.5, theta=0.7, f=0.05, t_years=20.0, include_sr_correction=False),
        axes=(GridAxis("theta", 0.5, 0.8, 4), GridAxis("f", 0.01, 0.10, 19)),
        metrics=("off", "poof", "poa"),
        name="figure-5",
    )


FIGURE_PRESETS: Dict[str, Callable[[], GridSpec]] = {
    # OFF against backtest length, with the large-T asymptote alongside
    "figure-2": lambda: _sharpe_by_years("figure-2", ("off", "off_asymptote", "poof", "poa")),
    "figure-3": lambda: _sharpe_by_years("figure-3", ("poof", "poa")),
    "figure-4": _figure_4,
    "figure-5": _figure_5,
}


def preset(name: str, **overrides: Any) -> GridSpec:
    try:
        spec = FIGURE_PRESETS[name]()
    except KeyError:
        raise InvalidParameterError("--preset", f"choose from {', '.join(FIGURE_PRESETS)}") from None
    return dataclasses.replace(spec, **overrides) if overrides else spec


@dataclass(frozen=True)
class ComparisonRow:
    metric: str
    analytic: Optional[float]
    mc: Optional[float]
    se: Optional[float]
    z: Optional[float]

    @property
    def passed(self) -> bool:
        return self.z is None or abs(self.z) < Z_PASS


@dataclass
class ComparisonReport:
    rows: List[ComparisonRow]
    params: ModelParams
    n_paths: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def records(self) -> List[Dict[str, Any]]:
        return [{**dataclasses.asdict(row), "passed": row.passed} for row in self.rows]


def _compare(metric: str, analytic: Optional[float], result: McResult, key: Optional[str] = None) -> ComparisonRow:
    estimate = result.estimates.get(key or metric)
    if analytic is None or estimate is None:
        return ComparisonRow(metric, analytic, estimate.mean if estimate else None,
                             estimate.se if estimate else None, None)
    return ComparisonRow(metric, analytic, estimate.mean, estimate.se, estimate.z_score(analytic))


def mc_vs_analytic(params: ModelParams, config: PathConfig, n_paths: int, workers: int = 1,
                   until_clear: bool = True) -> ComparisonReport:
    """
    Run the Monte Carlo engine and line its estimates up against the closed forms.

    One-off tweaks check p_clear, poof, poa, the SR / SR_m correlation and the mean of
    accepted tweaks. Until-clear with fresh redraws checks e_in, e_out and off.
    """
    report = overfit_report(params)
    config = config.with_model(params)
    try:
        one_off = run_one_off(params, config, n_paths, workers=workers)
        rows = [
            _compare("p_clear", report.p_clear, one_off),
            _compare("poof", report.poof, one_off),
            _compare("poa", report.poa, one_off),
            _compare("corr_sr_srm", params.correlation, one_off),
            _compare("e_srm_given_accept", report.e_srm_given_accept, one_off),
        ]
        if until_clear:
            retry_config = dataclasses.replace(config, seed=derived_seed(config.seed, 1))
            repeated = run_until_clear(params, retry_config, n_paths, retry=RetryPolicy.REDRAW, workers=workers)
            rows += [
                _compare("e_in", report.e_in, repeated),
                _compare("e_out", report.e_out, repeated),
                _compare("off", report.off, repeated),
            ]
    except OfflabError:
        logger.error("cross-check failed at %s with %s", params.to_dict(), config.to_dict())
        raise
    comparison = ComparisonReport(rows=rows, params=params, n_paths=n_paths, seed=config.seed)
    for row in comparison.rows:
        if not row.passed:
            logger.warning("%s: simulation %.6g vs closed form %.6g (z=%.2f)", row.metric, row.mc, row.analytic, row.z)
    return comparison


def compare_poof_across_buckets(params: ModelParams, config: PathConfig,
                                bucket_counts: Sequence[int] = (20, 100), n_paths: int = 100_000,
                                workers: int = 1) -> ComparisonReport:
    """
    Random-tweak PoOF at several slice counts.

    Random flips leave PoOF independent of N; each count is compared against the
    closed form and the first against the last.
    """
    if len(bucket_counts) < 2:
        raise InvalidParameterError("--n-buckets", "need at least two slice counts to compare")
    analytic = overfit_report(params).poof
    rows: List[ComparisonRow] = []
    estimates = []
    for index, n_buckets in enumerate(bucket_counts):
        bucket_config = dataclasses.replace(config, model=params, n_buckets=int(n_buckets),
                                            seed=derived_seed(config.seed, index))
        result = run_one_off(params, bucket_config, n_paths, workers=workers)
        rows.append(_compare(f"poof[N={n_buckets}]", analytic, result, key="poof"))
        estimates.append(result.estimates.get("poof"))
    first, last = estimates[0], estimates[-1]
    if first is not None and last is not None:
        gap = first.mean - last.mean
        se = math.hypot(first.se, last.se)
        z = gap / se if se > 0 else (0.0 if gap == 0 else math.copysign(math.inf, gap))
        rows.append(ComparisonRow(f"poof[N={bucket_counts[0]}]-poof[N={bucket_counts[-1]}]", 0.0, gap, se, z))
    return ComparisonReport(rows=rows, params=params, n_paths=n_paths, seed=config.seed)


def grid_axes(specs: Sequence[Union[str, GridAxis]]) -> Tuple[GridAxis, ...]:
    return tuple(spec if isinstance(spec, GridAxis) else GridAxis.parse(spec) for spec in specs)
