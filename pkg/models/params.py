import dataclasses
import math
import numbers
from dataclasses import dataclass
from typing import Any, Dict

from .errors import InvalidParameterError

DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class ModelParams:
    """The analytic parameter set of the tweak model.

    The drift and volatility of the PnL process enter only through their ratio,
    so the true Sharpe ratio is the sole description of the strategy.

    Args:
    sr_true (float): Annualized true Sharpe ratio SR_t.
    theta (float): Annualized Sharpe threshold the committee requires.
    f (float): Fraction of slices whose sign a tweak flips, 0 <= f <= 1.
    t_years (float): Backtest length in years.
    days_per_year (int): Trading days per year.
    include_sr_correction (bool): Keep the SR_daily^2 / 2 term of the Sharpe noise.
    """

    sr_true: float
    theta: float
    f: float
    t_years: float
    days_per_year: int = DAYS_PER_YEAR
    include_sr_correction: bool = True

    def __post_init__(self):
        for name in ("sr_true", "theta", "f", "t_years"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, numbers.Real):
                raise InvalidParameterError(_flag(name), f"must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise InvalidParameterError(_flag(name), "must be finite")
        if self.t_years <= 0:
            raise InvalidParameterError("--t-years", "must be > 0")
        if not 0.0 <= self.f <= 1.0:
            raise InvalidParameterError("--f", "must satisfy 0 <= f <= 1")
        if int(self.days_per_year) != self.days_per_year or self.days_per_year < 1:
            raise InvalidParameterError("--days-per-year", "must be an integer >= 1")

    @property
    def sr_daily(self) -> float:
        return self.sr_true / math.sqrt(self.days_per_year)

    @property
    def correlation(self) -> float:
        """Correlation between the original and a tweaked PnL."""
        return 1.0 - 2.0 * self.f

    @property
    def n_days(self) -> int:
        return int(round(self.t_years * self.days_per_year))

    def replace(self, **changes: Any) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")
