import asyncio
import dataclasses
import json
import logging
import sys
import traceback
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence, TextIO

import numpy as np

from models import __version__
from models.analytic_core import (
    Sidedness,
    min_backtest_years,
    overfit_report,
    prob_clear,
    rho_pdf,
    rho_tail_mean,
    rho_tail_prob,
    sharpe_noise_scale,
    significance_z,
)
from models.errors import ConditioningError, InvalidParameterError, NumericError, OfflabError
from models.mc_engine import PathConfig, run_maximal, run_one_off, run_until_clear
from models.params import ModelParams
from tools.experiments import GridSpec, McOverlay, grid_axes, grid_evaluate, mc_vs_analytic, preset
from tools.writers import ArtifactWriter
from utils.config import Config
from utils.console_utils import configure_logging, display_error, display_success, display_table, display_warning
from .invocation import CliInvocation, parse_invocation

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3

MODEL_KEYS = ("sr_true", "theta", "f", "t_years", "days_per_year")
# sources that count as the user asking for a value
GIVEN = ("flag", "config")


@dataclass
class CommandResult:
    records: List[Dict[str, Any]]
    params: Dict[str, Any]
    metadata: Dict[str, Any] = field(default_factory=dict)
    exit_status: int = EXIT_OK


class CommandManager:
    def __init__(self, config: Optional[Config] = None, stdout: Optional[TextIO] = None):
        self.config: Optional[Config] = config
        self.writer = ArtifactWriter(stdout=stdout)
        self.handlers = {
            "off": self.handle_off,
            "report": self.handle_report,
            "density": self.handle_density,
            "poof": self.handle_poof,
            "poa": self.handle_poa,
            "min-years": self.handle_min_years,
            "simulate": self.handle_simulate,
            "grid": self.handle_grid,
            "verify": self.handle_verify,
        }

    async def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """
        Parse, execute and write one command.

        Returns:
        int: 0 on success, 2 for invalid parameters, 3 for numeric failures.
        """
        try:
            if self.config is None:
                self.config = Config()
            invocation = parse_invocation(argv, self.config)
        except InvalidParameterError as e:
            return self.report_error(e, EXIT_INVALID)
        configure_logging(invocation.verbosity, self.config.LOG_LEVEL, quiet=invocation.quiet)
        logger.debug("resolved %s: %s", invocation.subcommand, invocation.sources)

        try:
            result = await self.execute_command(invocation)
            self.writer.write(result.records, result.params, result.metadata, fmt=invocation.fmt,
                              output=invocation.output, stamp=invocation.stamp)
        except InvalidParameterError as e:
            return self.report_error(e, EXIT_INVALID, invocation)
        except NumericError as e:
            return self.report_error(e, EXIT_NUMERIC, invocation)

        if invocation.output and not invocation.quiet and invocation.verbosity > 0:
            display_success(f"Wrote {invocation.fmt} to {invocation.output}")
        return result.exit_status

    def report_error(self, error: OfflabError, status: int, invocation: Optional[CliInvocation] = None) -> int:
        """Write one machine-readable JSON line to stderr; a panel follows when verbose."""
        payload = {**error.to_dict(), "exit_status": status}
        sys.stderr.write(json.dumps(payload, default=str) + "\n")
        sys.stderr.flush()
        if invocation is not None and invocation.verbosity > 0 and not invocation.quiet:
            display_error(f"{error.code}: {error}")
            if invocation.verbosity > 2:
                traceback.print_exception(type(error), error, error.__traceback__, file=sys.stderr)
        return status

    async def execute_command(self, invocation: CliInvocation) -> CommandResult:
        handler = self.handlers[invocation.subcommand]
        return await handler(invocation)

    def model_params(self, invocation: CliInvocation) -> ModelParams:
        params = ModelParams(
            sr_true=invocation.get("sr_true"),
            theta=invocation.get("theta"),
            f=invocation.get("f"),
            t_years=invocation.get("t_years"),
            days_per_year=invocation.get("days_per_year"),
            include_sr_correction=invocation.get("sr_correction") == "on",
        )
        if params.f > self.config.F_ADVISORY_MAX:
            logger.warning("f=%.4g is above %.4g; tweaks that large are easy to spot",
                           params.f, self.config.F_ADVISORY_MAX)
        return params

    def path_config(self, invocation: CliInvocation, params: ModelParams) -> PathConfig:
        return PathConfig(
            model=params,
            n_buckets=invocation.get("n_buckets"),
            daily_vol=invocation.get("daily_vol"),
            seed=invocation.get("seed"),
            mode=invocation.get("mode"),
            min_days_per_slice=invocation.get("min_days_per_slice"),
        )

    @staticmethod
    def echo(invocation: CliInvocation) -> Dict[str, Any]:
        return dict(sorted(invocation.values.items()))

    @staticmethod
    def given_model_values(invocation: CliInvocation) -> Dict[str, Any]:
        """Model parameters set by flag or config file, as ModelParams fields."""
        given = {key: invocation.get(key) for key in MODEL_KEYS if invocation.sources.get(key) in GIVEN}
        if invocation.sources.get("sr_correction") in GIVEN:
            given["include_sr_correction"] = invocation.get("sr_correction") == "on"
        return given

    def preset_spec(self, invocation: CliInvocation, overrides: Dict[str, Any]) -> GridSpec:
        """A figure preset with the user's non-swept model parameters applied to its fixed point."""
        name = invocation.get("preset")
        spec = preset(name, **overrides)
        given = self.given_model_values(invocation)
        for axis in spec.axes:
            if axis.name in given:
                raise InvalidParameterError("--" + axis.name.replace("_", "-"), f"is swept by {name}")
        if given:
            spec = dataclasses.replace(spec, fixed=spec.fixed.replace(**given))
        return spec

    def fixed_echo(self, invocation: CliInvocation, fixed: ModelParams) -> Dict[str, Any]:
        echo = self.echo(invocation)
        echo.update({key: getattr(fixed, key) for key in MODEL_KEYS})
        echo["sr_correction"] = "on" if fixed.include_sr_correction else "off"
        return dict(sorted(echo.items()))

    def metadata(self, invocation: CliInvocation, **extra: Any) -> Dict[str, Any]:
        return {"command": invocation.subcommand, "version": __version__, **extra,
                "timestamp": datetime.now(timezone.utc).isoformat()}

    async def handle_off(self, invocation: CliInvocation) -> CommandResult:
        params = self.model_params(invocation)
        report = await asyncio.to_thread(overfit_report, params)
        return CommandResult([report.to_dict()], self.echo(invocation), self.metadata(invocation))

    async def handle_report(self, invocation: CliInvocation) -> CommandResult:
        params = self.model_params(invocation)
        report = await asyncio.to_thread(overfit_report, params)
        noise = sharpe_noise_scale(params)
        n_buckets = invocation.get("n_buckets")
        try:
            srm_mean_below: Optional[float] = await asyncio.to_thread(rho_tail_mean, params, float("-inf"))
        except ConditioningError:
            srm_mean_below = None
        record = {
            **report.to_dict(),
            "sigma_tot": noise.sigma_tot,
            "sigma_slice": noise.sigma_slice(n_buckets) if n_buckets else None,
            "p_below": 1.0 - report.p_clear,
            "e_srm_given_below": srm_mean_below,
        }
        if not invocation.quiet:
            display_table("Overfitting report", [{"field": k, "value": v} for k, v in record.items()])
        return CommandResult([record], self.echo(invocation), self.metadata(invocation))

    async def handle_density(self, invocation: CliInvocation) -> CommandResult:
        params = self.model_params(invocation)
        points = list(invocation.get("y") or [])
        if invocation.get("y_grid") is not None:
            start, stop, count = invocation.get("y_grid")
            if int(count) != count or count < 2:
                raise InvalidParameterError("--y-grid", "COUNT must be an integer >= 2")
            points += list(np.linspace(start, stop, int(count)))
        if not points:
            raise InvalidParameterError("--y", "give --y or --y-grid")
        values = await asyncio.to_thread(rho_pdf, np.asarray(points, dtype=float), params)
        records = [{"y": float(y), "rho": float(v)} for y, v in zip(points, np.atleast_1d(values))]
        return CommandResult(records, self.echo(invocation), self.metadata(invocation))

    async def handle_poof(self, invocation: CliInvocation) -> CommandResult:
        params = self.model_params(invocation)
        poof = await asyncio.to_thread(rho_tail_prob, params)
        return CommandResult([{"poof": poof}], self.echo(invocation), self.metadata(invocation))

    async def handle_poa(self, invocation: CliInvocation) -> CommandResult:
        params = self.model_params(invocation)
        p_clear = prob_clear(params)
        try:
            poof: Optional[float] = await asyncio.to_thread(rho_tail_prob, params)
        except ConditioningError:
            poof = None
        poa = p_clear + (1.0 - p_clear) * (poof or 0.0)
        return CommandResult([{"p_clear": p_clear, "poof": poof, "poa": poa}],
                             self.echo(invocation), self.metadata(invocation))

    async def handle_min_years(self, invocation: CliInvocation) -> CommandResult:
        sr = invocation.get("sr")
        if sr is None:
            raise InvalidParameterError("--sr", "required")
        confidence = invocation.get("confidence")
        sides = Sidedness.parse(invocation.get("sides"))
        record = {
            "sr": sr,
            "confidence": confidence,
            "sides": sides.value,
            "z": significance_z(confidence, sides),
            "years": min_backtest_years(sr, confidence, sides),
        }
        return CommandResult([record], self.echo(invocation), self.metadata(invocation))

    async def handle_simulate(self, invocation: CliInvocation) -> CommandResult:
        params = self.model_params(invocation)
        config = self.path_config(invocation, params)
        n_paths, workers = invocation.get("n_paths"), invocation.get("workers")
        policy = invocation.get("policy")
        if policy == "until-clear":
            result = await asyncio.to_thread(run_until_clear, params, config, n_paths,
                                             invocation.get("max_attempts"), invocation.get("retry"), workers)
        elif policy == "maximal":
            result = await asyncio.to_thread(run_maximal, params, config, n_paths, workers)
        else:
            result = await asyncio.to_thread(run_one_off, params, config, n_paths, workers)
        metadata = self.metadata(
            invocation,
            policy=result.policy,
            seed=result.seed,
            n_paths=result.n_paths,
            absent=list(result.absent),
            exhausted=result.exhausted,
            attempts_histogram={str(k): v for k, v in result.attempts_histogram.items()},
        )
        if not invocation.quiet and invocation.verbosity > 0:
            result.display()
        return CommandResult(result.records(), self.echo(invocation), metadata)

    async def handle_grid(self, invocation: CliInvocation) -> CommandResult:
        params = self.model_params(invocation)
        overlay = None
        if invocation.get("mc_paths"):
            overlay = McOverlay(config=self.path_config(invocation, params), n_paths=invocation.get("mc_paths"))
        overrides: Dict[str, Any] = {}
        if invocation.get("metrics"):
            overrides["metrics"] = tuple(invocation.get("metrics"))
        if overlay is not None:
            overrides["mc_overlay"] = overlay
        if invocation.get("preset"):
            if invocation.get("axis"):
                raise InvalidParameterError("--axis", "cannot be combined with --preset")
            spec = self.preset_spec(invocation, overrides)
        elif invocation.get("axis"):
            spec = GridSpec(fixed=params, axes=grid_axes(invocation.get("axis")), **overrides)
        else:
            raise InvalidParameterError("--axis", "give --preset or at least one --axis")
        result = await asyncio.to_thread(grid_evaluate, spec, invocation.get("workers"))
        metadata = {"command": invocation.subcommand, **result.metadata}
        return CommandResult(result.rows, self.fixed_echo(invocation, spec.fixed), metadata)

    async def handle_verify(self, invocation: CliInvocation) -> CommandResult:
        params = self.model_params(invocation)
        config = self.path_config(invocation, params)
        comparison = await asyncio.to_thread(mc_vs_analytic, params, config, invocation.get("n_paths"),
                                             invocation.get("workers"))
        if not invocation.quiet:
            display_table("Simulation against closed form", comparison.records())
            if not comparison.passed:
                display_warning("At least one metric is more than 4 standard errors off")
        metadata = self.metadata(invocation, passed=comparison.passed, seed=comparison.seed,
                                 n_paths=comparison.n_paths)
        status = EXIT_OK if comparison.passed else EXIT_NUMERIC
        return CommandResult(comparison.records(), self.echo(invocation), metadata, exit_status=status)

    async def cleanup(self):
        sys.stdout.flush()
        sys.stderr.flush()
