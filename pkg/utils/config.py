import os
from typing import Any, Callable, Dict, List, Optional

from dotenv import load_dotenv

from models.errors import InvalidParameterError

# Load environment variables from .env file
load_dotenv()

MODEL_FLAGS = [
    {"flag": "--sr-true", "type": "float", "description": "True annualized Sharpe ratio SR_t."},
    {"flag": "--theta", "type": "float", "description": "Annualized Sharpe threshold the committee requires."},
    {"flag": "--f", "type": "float", "description": "Fraction of slices a tweak flips, 0 <= f <= 1."},
    {"flag": "--t-years", "type": "float", "description": "Backtest length in years."},
    {"flag": "--days-per-year", "type": "int", "description": "Trading days per year."},
    {"flag": "--sr-correction", "type": "choice", "choices": ["on", "off"],
     "description": "Keep the SR_daily^2/2 term of the Sharpe noise."},
]

SIMULATION_FLAGS = [
    {"flag": "--n-buckets", "type": "int", "description": "Number of PnL slices N."},
    {"flag": "--n-paths", "type": "int", "description": "Monte Carlo ensemble size."},
    {"flag": "--mode", "type": "choice", "choices": ["path-level", "gaussian-slice"],
     "description": "Simulate daily returns or draw slice Sharpes directly."},
    {"flag": "--daily-vol", "type": "float", "description": "Daily return volatility (Sharpe-scale invariant)."},
    {"flag": "--min-days-per-slice", "type": "int", "description": "Fewest days a path-level slice may hold."},
    {"flag": "--seed", "type": "int", "description": "Master seed; defaults to OFFLAB_SEED."},
    {"flag": "--workers", "type": "int", "description": "Worker threads; results do not depend on it."},
]

SUBCOMMAND_FLAGS = {
    "density": [
        {"flag": "--y", "type": "float", "multiple": True, "description": "Point(s) at which to evaluate rho."},
        {"flag": "--y-grid", "type": "float", "count": 3, "description": "START STOP COUNT grid of points."},
    ],
    "min-years": [
        {"flag": "--sr", "type": "float", "description": "Annualized Sharpe ratio to certify."},
        {"flag": "--confidence", "type": "float", "description": "Confidence level in (0, 1)."},
        {"flag": "--sides", "type": "choice", "choices": ["one", "two", "one-sided", "two-sided"],
         "description": "One- or two-sided significance."},
    ],
    "simulate": [
        {"flag": "--policy", "type": "choice", "choices": ["one-off", "until-clear", "maximal"],
         "description": "Researcher behaviour to simulate."},
        {"flag": "--retry", "type": "choice", "choices": ["rebin", "redraw"],
         "description": "How until-clear generates attempts after the first."},
        {"flag": "--max-attempts", "type": "int", "description": "Until-clear attempts before a path is exhausted."},
    ],
    "grid": [
        {"flag": "--preset", "type": "choice", "choices": ["figure-2", "figure-3", "figure-4", "figure-5"],
         "description": "Named figure grid."},
        {"flag": "--axis", "type": "str", "append": True,
         "description": "Swept axis NAME:START:STOP:COUNT (repeat for a second axis)."},
        {"flag": "--metrics", "type": "str", "multiple": True, "description": "Report fields to emit."},
        {"flag": "--mc-paths", "type": "int", "description": "Overlay a one-off Monte Carlo run per grid point."},
    ],
}

OUTPUT_FLAGS = [
    {"flag": "--output", "type": "str", "description": "Output file; standard output when omitted."},
    {"flag": "--format", "type": "choice", "choices": ["json", "csv"], "description": "Artifact format."},
    {"flag": "--config", "type": "str", "description": "key=value file; flags override its values."},
    {"flag": "--stamp", "type": "switch", "description": "Add a wall-clock timestamp to the metadata."},
]

DEFAULTS: Dict[str, Any] = {
    "sr_true": 0.4,
    "theta": 0.7,
    "f": 0.05,
    "t_years": 20.0,
    "days_per_year": 252,
    "sr_correction": "on",
    "n_buckets": 40,
    "n_paths": 100_000,
    "mode": "gaussian-slice",
    "daily_vol": 0.01,
    "min_days_per_slice": 20,
    "confidence": 0.999,
    "sides": "two",
    "policy": "one-off",
    "retry": "redraw",
    "max_attempts": 10_000,
    "format": "json",
}

# self-check point: cheap enough to finish well under a minute
VERIFY_DEFAULTS: Dict[str, Any] = {
    "sr_true": 0.3,
    "theta": 0.7,
    "f": 0.025,
    "t_years": 10.0,
    "n_buckets": 40,
    "mode": "gaussian-slice",
    "sr_correction": "off",
    "n_paths": 200_000,
}


def env_value(name: str, default: Any, cast: Callable[[str], Any]) -> Any:
    """Read OFFLAB_<name>, converted with `cast`; malformed values are parameter errors."""
    variable = f"OFFLAB_{name}"
    text = os.getenv(variable)
    if text is None or text.strip() == "":
        return default
    try:
        return cast(text.strip())
    except ValueError:
        raise InvalidParameterError(variable, f"expected {cast.__name__}, got {text!r}") from None


class Config:
    def __init__(self):
        self.SEED = env_value("SEED", 20240101, int)
        self.WORKERS = env_value("WORKERS", 1, int)
        self.LOG_LEVEL = os.getenv('OFFLAB_LOG_LEVEL', "WARNING").upper()
        self.F_ADVISORY_MAX = env_value("F_ADVISORY_MAX", 0.1, float)
        self.subcommands = [
            {
                "name": "off",
                "description": "Overfitting factor and every closed-form report field.",
                "flags": MODEL_FLAGS,
            },
            {
                "name": "report",
                "description": "Closed-form report plus Sharpe noise scales and the conditioned mean of SR_m.",
                "flags": MODEL_FLAGS + [SIMULATION_FLAGS[0]],
            },
            {
                "name": "density",
                "description": "Density of the tweaked Sharpe conditioned on the original missing the threshold.",
                "flags": MODEL_FLAGS + SUBCOMMAND_FLAGS["density"],
            },
            {
                "name": "poof",
                "description": "Probability that one tweak lifts a sub-threshold strategy above theta.",
                "flags": MODEL_FLAGS,
            },
            {
                "name": "poa",
                "description": "Probability that a one-off attempt is accepted.",
                "flags": MODEL_FLAGS,
            },
            {
                "name": "min-years",
                "description": "Backtest length needed for a Sharpe ratio to be significant.",
                "flags": SUBCOMMAND_FLAGS["min-years"],
            },
            {
                "name": "simulate",
                "description": "Monte Carlo ensemble under a researcher tweak policy.",
                "flags": MODEL_FLAGS + SIMULATION_FLAGS + SUBCOMMAND_FLAGS["simulate"],
            },
            {
                "name": "grid",
                "description": "Closed-form sweep over one or two parameters (figure presets available).",
                "flags": MODEL_FLAGS + SIMULATION_FLAGS + SUBCOMMAND_FLAGS["grid"],
            },
            {
                "name": "verify",
                "description": "Compare Monte Carlo estimates against the closed forms.",
                "flags": MODEL_FLAGS + SIMULATION_FLAGS,
                "defaults": VERIFY_DEFAULTS,
            },
        ]

    def get_subcommand(self, name: str) -> Dict[str, Any]:
        for subcommand in self.subcommands:
            if subcommand["name"] == name:
                return subcommand
        raise InvalidParameterError("subcommand", f"unknown subcommand {name!r}")

    def defaults_for(self, name: str) -> Dict[str, Any]:
        """Built-in defaults for a subcommand, environment overrides applied."""
        defaults = {**DEFAULTS, "seed": self.SEED, "workers": self.WORKERS}
        defaults.update(self.get_subcommand(name).get("defaults", {}))
        return defaults


def flag_dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def convert_value(spec: Dict[str, Any], text: str) -> Any:
    """Convert one textual value according to a flag spec."""
    kind = spec["type"]
    try:
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(text)
        if kind == "switch":
            lowered = text.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes", "on")
    except ValueError:
        raise InvalidParameterError(spec["flag"], f"expected {kind}, got {text!r}") from None
    if kind == "choice" and text not in spec["choices"]:
        raise InvalidParameterError(spec["flag"], f"must be one of {', '.join(spec['choices'])}")
    return text


def load_config_file(path: str, flags: List[Dict[str, Any]]) -> Dict[str, Any]:
    """
    Parse a plain key=value file against the flags a subcommand accepts.

    Args:
    path (str): File to read; '#' starts a comment, blank lines are skipped.
    flags (List[Dict]): Flag specs of the subcommand.

    Returns:
    Dict[str, Any]: Values keyed by destination name (underscores).
    """
    specs = {flag_dest(spec["flag"]): spec for spec in flags}
    values: Dict[str, Any] = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise InvalidParameterError("--config", f"cannot read {path}: {exc.strerror}") from None
    for number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise InvalidParameterError("--config", f"line {number}: expected key=value")
        key, raw = (part.strip() for part in text.split("=", 1))
        dest = flag_dest(key)
        spec: Optional[Dict[str, Any]] = specs.get(dest)
        if spec is None:
            raise InvalidParameterError("--config", f"line {number}: unknown key {key!r}")
        if spec.get("multiple") or spec.get("count") or spec.get("append"):
            values[dest] = [convert_value(spec, item) for item in raw.replace(",", " ").split()]
        else:
            values[dest] = convert_value(spec, raw)
    return values
