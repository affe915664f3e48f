import argparse
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from models.errors import InvalidParameterError
from utils.config import OUTPUT_FLAGS, Config, flag_dest, load_config_file

PYTHON_TYPES = {"float": float, "int": int, "str": str}


@dataclass(frozen=True)
class CliInvocation:
    """A parsed command line with every parameter resolved."""

    subcommand: str
    values: Dict[str, Any]
    output: Optional[str] = None
    fmt: str = "json"
    stamp: bool = False
    verbosity: int = 0
    quiet: bool = False
    # where each resolved value came from: flag, config or default
    sources: Dict[str, str] = field(default_factory=dict)

    def get(self, name: str, default: Any = None) -> Any:
        return self.values.get(name, default)


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting on bad input."""

    def error(self, message):
        raise InvalidParameterError("arguments", message)


def _add_flag(group, spec: Dict[str, Any]):
    kwargs: Dict[str, Any] = {"dest": flag_dest(spec["flag"]), "help": spec["description"],
                              "default": argparse.SUPPRESS}
    kind = spec["type"]
    if kind == "switch":
        group.add_argument(spec["flag"], action="store_true", **kwargs)
        return
    if kind == "choice":
        kwargs["choices"] = spec["choices"]
    else:
        kwargs["type"] = PYTHON_TYPES[kind]
    if spec.get("multiple"):
        kwargs["nargs"] = "+"
    elif spec.get("count"):
        kwargs["nargs"] = spec["count"]
    elif spec.get("append"):
        kwargs["action"] = "append"
    group.add_argument(spec["flag"], **kwargs)


def build_parser(config: Config) -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    output = common.add_argument_group("output")
    for spec in OUTPUT_FLAGS:
        _add_flag(output, spec)
    output.add_argument("-v", "--verbose", action="count", dest="verbose", default=argparse.SUPPRESS,
                        help="More log output (repeatable).")
    output.add_argument("-q", "--quiet", action="store_true", dest="quiet", default=argparse.SUPPRESS,
                        help="Errors only.")

    parser = _Parser(prog="offlab", description="Overfitting factor of tweaked trading strategies.")
    subparsers = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", parser_class=_Parser)
    subparsers.required = True
    for subcommand in config.subcommands:
        sub = subparsers.add_parser(subcommand["name"], help=subcommand["description"],
                                    description=subcommand["description"], parents=[common])
        group = sub.add_argument_group("parameters")
        for spec in subcommand["flags"]:
            _add_flag(group, spec)
    return parser


def parse_invocation(argv: Optional[Sequence[str]], config: Optional[Config] = None) -> CliInvocation:
    """
    Parse argv and resolve every parameter.

    Precedence, highest first: flags, the --config file, built-in defaults
    (subcommand defaults and OFFLAB_* environment variables).

    Raises:
    InvalidParameterError: Unknown flags, malformed values, unreadable config file.
    """
    config = config or Config()
    namespace = vars(build_parser(config).parse_args(list(argv) if argv is not None else None))
    name = namespace.pop("subcommand")
    flags: List[Dict[str, Any]] = config.get_subcommand(name)["flags"]

    values: Dict[str, Any] = {}
    sources: Dict[str, str] = {}
    for key, value in config.defaults_for(name).items():
        values[key], sources[key] = value, "default"
    config_path = namespace.pop("config", None)
    if config_path is not None:
        for key, value in load_config_file(config_path, flags + OUTPUT_FLAGS).items():
            values[key], sources[key] = value, "config"

    fmt = namespace.pop("format", None)
    output = namespace.pop("output", None)
    stamp = namespace.pop("stamp", None)
    verbosity = namespace.pop("verbose", 0)
    quiet = namespace.pop("quiet", False)
    for key, value in namespace.items():
        values[key], sources[key] = value, "flag"

    fmt = fmt or values.pop("format", "json")
    output = output or values.pop("output", None)
    stamp = bool(stamp if stamp is not None else values.pop("stamp", False))
    for key in ("format", "output", "stamp"):
        values.pop(key, None)
        sources.pop(key, None)

    accepted = {flag_dest(spec["flag"]) for spec in flags}
    values = {key: value for key, value in values.items() if key in accepted}
    sources = {key: source for key, source in sources.items() if key in values}
    return CliInvocation(subcommand=name, values=values, output=output, fmt=fmt, stamp=stamp,
                         verbosity=int(verbosity), quiet=bool(quiet), sources=sources)
