import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

import numpy as np
from rich.table import Table

from .console_utils import console


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float

    def z_score(self, reference: float) -> float:
        """Distance to `reference` in standard errors."""
        gap = self.mean - reference
        if self.se > 0:
            return gap / self.se
        return 0.0 if gap == 0 else math.copysign(math.inf, gap)


class EstimateTracker:
    def __init__(self):
        self.samples: Dict[str, List[np.ndarray]] = {}
        self.derived: Dict[str, Estimate] = {}

    def update_samples(self, metric: str, values: Iterable[float]):
        """
        Append per-path samples for a metric.

        Chunks are kept in arrival order, so feeding blocks in path-index order
        gives a reduction that does not depend on how the blocks were scheduled.

        Args:
        metric (str): The metric name, e.g. 'poof'.
        values (Iterable[float]): Per-path values (indicators for probabilities).
        """
        self.samples.setdefault(metric, []).append(np.asarray(values, dtype=float).ravel())

    def set_estimate(self, metric: str, mean: float, se: float):
        """Record an estimate that is not a plain sample mean (ratios, correlations)."""
        self.derived[metric] = Estimate(float(mean), float(se))

    def get_samples(self, metric: str) -> np.ndarray:
        chunks = self.samples.get(metric, [])
        return np.concatenate(chunks) if chunks else np.empty(0)

    def sample_count(self, metric: str) -> int:
        return sum(chunk.size for chunk in self.samples.get(metric, []))

    def get_estimate(self, metric: str) -> Optional[Estimate]:
        if metric in self.derived:
            return self.derived[metric]
        values = self.get_samples(metric)
        if values.size == 0:
            return None
        se = float(np.std(values, ddof=1)) / math.sqrt(values.size) if values.size > 1 else 0.0
        return Estimate(float(np.mean(values)), se)

    def get_estimates(self) -> Dict[str, Estimate]:
        """
        Get the estimate of every tracked metric.

        Returns:
        Dict[str, Estimate]: Mean and standard error per metric, sample metrics first.
        """
        estimates = {}
        for metric in list(self.samples) + list(self.derived):
            estimate = self.get_estimate(metric)
            if estimate is not None:
                estimates[metric] = estimate
        return estimates

    def display_estimates(self, title: str = "Monte Carlo Estimates"):
        table = Table(title=title)
        table.add_column("Metric", style="cyan", no_wrap=True)
        table.add_column("Mean", style="magenta")
        table.add_column("Std. Error", style="green")
        table.add_column("Samples", style="white")

        for metric, estimate in self.get_estimates().items():
            count = self.sample_count(metric)
            table.add_row(metric, f"{estimate.mean:.6g}", f"{estimate.se:.3g}", str(count) if count else "-")

        console.print(table)
