"""``wibench`` command line: serve, measure, simulate, analyze, report.

Settings resolve as command-line flag, then ``WIBENCH_<NAME>`` environment
variable, then ``--config`` file (flat ``key=value`` lines), then default.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .agents import RunConfig, real_suite, run_client_agent, run_server_agent, trial_config
from .analysis import AlignedTable, aggregate_trials, align, correlation_matrix, pool
from .control import DEFAULT_PORT, DEFAULT_TRIGGER, ControlListener
from .errors import RunAborted, WibenchError
from .model import read_journal
from .report import analysis_report, plot_csv, render_matrix
from .sensors import DEFAULT_W1_ROOT, Ina219Config
from .simulate import SimOptions, simulate_trials
from .thermal import SimDevice, SimScenario, ThermalParams, sim_suite

log = logging.getLogger("wibench")

ENV_PREFIX = "WIBENCH_"

_SIZE_RE = re.compile(r"\s*(\d+)\s*(B|KiB|MiB|GiB)?\s*", re.IGNORECASE)
_UNITS = {"b": 1, "kib": 1024, "mib": 1024**2, "gib": 1024**3}


def parse_size(text: str) -> int:
    """``655KiB`` -> 670720. Accepts B, KiB, MiB and GiB suffixes."""
    m = _SIZE_RE.fullmatch(str(text))
    if m is None:
        raise ValueError(f"bad size {text!r} (use e.g. 655KiB, 1MiB, 100B)")
    unit = (m.group(2) or "B").lower()
    return int(m.group(1)) * _UNITS[unit]


def parse_rate(text: str) -> int | None:
    if str(text).strip().lower() in ("unlimited", "none", "0"):
        return None
    return parse_size(str(text).removesuffix("/s"))


def parse_bool(text: Any) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_hostport(text: str, default_port: int) -> tuple[str, int]:
    host, sep, port = str(text).rpartition(":")
    if not sep:
        return str(text), default_port
    return host or "127.0.0.1", int(port)


def load_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key=value")
        values[key.strip().replace("-", "_").lower()] = value.strip()
    return values


@dataclass
class Opt:
    flags: tuple[str, ...]
    dest: str
    type: Callable = str
    default: Any = None
    help: str = ""
    flag: bool = False  # store_true switch
    append: bool = False


COMMON = [
    Opt(("--config",), "config", help="flat key=value config file"),
    Opt(("-v", "--verbose"), "verbose", parse_bool, False, "log progress to stderr", flag=True),
    Opt(("-q", "--quiet"), "quiet", parse_bool, False, "do not echo samples to stdout", flag=True),
]

RUN = [
    Opt(("--interval-ms",), "interval_ms", int, 5000, "sampling interval"),
    Opt(("--run-id",), "run_id", str, "run", "run identifier written to the journal header"),
    Opt(("--device",), "device", str, "", "device label, e.g. 'RPi Zero W'"),
    Opt(("--distance",), "distance", str, "", "distance label, e.g. 0.5m"),
    Opt(("--journal",), "journal", str, None, "journal output path"),
    Opt(("--max-samples",), "max_samples", int, 10_000, "safety cap on rows"),
    Opt(("--trials",), "trials", int, 1, "number of repetitions"),
    Opt(("--trigger",), "trigger", str, DEFAULT_TRIGGER, "start trigger string"),
    Opt(("--ack",), "ack", parse_bool, False, "exchange a 2-byte OK after control messages", flag=True),
]

SCENARIO = [
    Opt(("--seed",), "seed", int, 42, "simulation seed"),
    Opt(("--ambient",), "ambient", float, 25.0, "simulated ambient temperature, C"),
    Opt(("--initial-temp",), "initial_temp", float, 45.0, "simulated CPU temperature at start, C"),
    Opt(("--load",), "load", float, 60.0, "simulated offered CPU load, percent"),
    Opt(("--load-noise",), "load_noise", float, 3.0, "std-dev of the offered load, percent"),
    Opt(("--t-throttle",), "t_throttle", float, 80.0, "throttle threshold, C"),
    Opt(("--t-release",), "t_release", float, 70.0, "throttle release threshold, C"),
    Opt(("--gamma",), "gamma", float, 0.5, "service-rate factor while throttled"),
    Opt(("--alpha",), "alpha", float, 0.02, "heating per percent load, C/s"),
    Opt(("--beta",), "beta", float, 0.05, "cooling rate, 1/s"),
]

SERVE = RUN + [
    Opt(("--port",), "port", int, DEFAULT_PORT, "control port to listen on"),
    Opt(("--host",), "host", str, "0.0.0.0", "control address to listen on"),
    Opt(("--sensors",), "sensors", str, "real", "real or sim"),
    Opt(("--w1-device",), "w1_device", str, "", "DS18B20 id under the 1-Wire root"),
    Opt(("--w1-root",), "w1_root", str, str(DEFAULT_W1_ROOT), "1-Wire devices directory"),
    Opt(("--w1-path",), "w1_path", str, "", "explicit w1_slave path"),
    Opt(("--cpu-temp-cmd",), "cpu_temp_cmd", str, "vcgencmd measure_temp", "CPU temperature command"),
    Opt(("--i2c-bus",), "i2c_bus", int, 1, "I2C bus number of the INA219"),
    Opt(("--shunt-ohms",), "shunt_ohms", float, 0.1, "INA219 shunt resistance"),
    Opt(("--max-amps",), "max_amps", float, 0.2, "INA219 expected full-scale current"),
    Opt(("--bus-range",), "bus_range", int, 16, "INA219 bus range, 16 or 32 V"),
    Opt(("--sentinel-on-error",), "sentinel_on_error", parse_bool, False, "log sensor failures and record 0.0", flag=True),
] + SCENARIO

MEASURE = RUN + [
    Opt(("--server",), "server", str, f"127.0.0.1:{DEFAULT_PORT}", "control endpoint host[:port]"),
    Opt(("--backend",), "backend", str, "ftp", "ftp or blob"),
    Opt(("--transfer",), "transfer", str, "127.0.0.1:21", "transfer endpoint host[:port]"),
    Opt(("--path",), "path", str, "", "remote file (FTP)"),
    Opt(("--user",), "user", str, "anonymous", "FTP user"),
    Opt(("--password",), "password", str, "anonymous@", "FTP password"),
    Opt(("--rate",), "rate", parse_rate, None, "client-side rate limit, e.g. 131KiB"),
    Opt(("--expected-size",), "expected_size", parse_size, None, "expected blob size"),
    Opt(("--no-done",), "no_done", parse_bool, False, "do not send 'done' to the server at the end", flag=True),
]

SIMULATE = [
    Opt(("--file-size",), "file_size", parse_size, 655 * 1024, "transfer size, e.g. 655KiB"),
    Opt(("--rate",), "rate", parse_rate, 131 * 1024, "link rate per second or 'unlimited'"),
    Opt(("--interval-ms",), "interval_ms", int, 50, "sampling interval"),
    Opt(("--trials",), "trials", int, 1, "number of repetitions"),
    Opt(("--out",), "out", str, "wibench-out", "output directory"),
    Opt(("--run-id",), "run_id", str, None, "run id (default sim-s<seed>)"),
    Opt(("--backend",), "backend", str, "blob", "blob or ftp"),
    Opt(("--fast",), "fast", parse_bool, False, "advance the logical clock without real-time pacing", flag=True),
    Opt(("--abort-at",), "abort_at", parse_size, None, "fault injection: cut the transfer after N bytes"),
    Opt(("--mode",), "mode", str, "pooled", "pooled or mean correlation"),
    Opt(("--max-samples",), "max_samples", int, 10_000, "safety cap on rows"),
    Opt(("--distance",), "distance", str, "", "distance label"),
] + SCENARIO

ANALYZE = [
    Opt(("--server",), "server", str, None, "server journal (repeat per trial)", append=True),
    Opt(("--client",), "client", str, None, "client journal (repeat per trial)", append=True),
    Opt(("--mode",), "mode", str, "pooled", "pooled or mean correlation"),
    Opt(("-o", "--output"), "output", str, None, "write the report here instead of stdout"),
]

REPORT = [
    Opt(("--server",), "server", str, None, "server journal of device A", append=True),
    Opt(("--client",), "client", str, None, "client journal of device A", append=True),
    Opt(("--vs-server",), "vs_server", str, None, "server journal of device B", append=True),
    Opt(("--vs-client",), "vs_client", str, None, "client journal of device B", append=True),
    Opt(("-o", "--output"), "output", str, None, "write the matrix text here instead of stdout"),
    Opt(("--plot-csv",), "plot_csv", str, None, "write plot-ready time series CSV"),
]

COMMANDS = {
    "serve": (SERVE, "run the server agent: wait for the trigger, then sample sensors"),
    "measure": (MEASURE, "run the client agent: trigger the server, download, sample speed"),
    "simulate": (SIMULATE, "hardware-free run of both agents over loopback, then analyze"),
    "analyze": (ANALYZE, "journals -> correlation report"),
    "report": (REPORT, "render a (paired) lower-triangle matrix and plot CSV"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wibench", description="Throughput benchmark with synchronized device telemetry.")
    parser.add_argument("--version", action="version", version=f"wibench {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (opts, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for opt in COMMON + opts:
            if opt.flag:
                p.add_argument(*opt.flags, dest=opt.dest, action="store_true", default=None, help=opt.help)
            elif opt.append:
                p.add_argument(*opt.flags, dest=opt.dest, action="append", default=None, help=opt.help)
            else:
                p.add_argument(*opt.flags, dest=opt.dest, default=None, help=opt.help)
    return parser


def resolve(args: argparse.Namespace, opts: Sequence[Opt], env: dict[str, str]) -> dict[str, Any]:
    """Merge flags, environment, config file and defaults; convert types."""
    config_path = args.config or env.get(ENV_PREFIX + "CONFIG")
    file_values = load_config_file(config_path) if config_path else {}
    out: dict[str, Any] = {}
    for opt in COMMON + list(opts):
        raw = getattr(args, opt.dest, None)
        if raw is None:
            raw = env.get(ENV_PREFIX + opt.dest.upper())
        if raw is None:
            raw = file_values.get(opt.dest)
        if raw is None:
            out[opt.dest] = opt.default
            continue
        try:
            if opt.append:
                items = raw if isinstance(raw, list) else [x for x in str(raw).split(",") if x]
                out[opt.dest] = [opt.type(x) for x in items]
            else:
                out[opt.dest] = opt.type(raw)
        except ValueError as exc:
            raise UsageError(f"invalid value for {opt.flags[-1]}: {raw!r} ({exc})") from None
    return out


def _scenario(s: dict[str, Any]) -> SimScenario:
    return SimScenario(
        seed=s["seed"],
        ambient_c=s["ambient"],
        initial_temp_c=s["initial_temp"],
        offered_load=s["load"],
        load_noise=s["load_noise"],
        thermal=ThermalParams(s["alpha"], s["beta"], s["t_throttle"], s["t_release"], s["gamma"]),
    )


# -- subcommands ------------------------------------------------------------

def cmd_serve(s: dict[str, Any]) -> int:
    w1_path = s["w1_path"]
    if not w1_path and s["w1_device"]:
        w1_path = str(Path(s["w1_root"]) / s["w1_device"] / "w1_slave")
    cfg = RunConfig(
        role="server",
        run_id=s["run_id"],
        interval_ms=s["interval_ms"],
        device_label=s["device"],
        distance_label=s["distance"],
        listen_host=s["host"],
        control_port=s["port"],
        trigger=s["trigger"],
        ack=s["ack"],
        sensors=s["sensors"],
        w1_path=w1_path,
        cpu_temp_cmd=s["cpu_temp_cmd"],
        i2c_bus=s["i2c_bus"],
        shunt_ohms=s["shunt_ohms"],
        max_expected_amps=s["max_amps"],
        bus_range_volts=s["bus_range"],
        sentinel_on_error=s["sentinel_on_error"],
        journal_path=s["journal"],
        max_samples=s["max_samples"],
        trials=s["trials"],
        quiet=s["quiet"],
    )
    if cfg.sensors not in ("real", "sim"):
        raise UsageError("--sensors must be real or sim")
    Ina219Config(cfg.shunt_ohms, cfg.max_expected_amps, cfg.bus_range_volts)
    if cfg.sensors == "real" and not cfg.w1_path:
        raise UsageError("real sensors need --w1-path or --w1-device")
    listener = ControlListener(cfg.control_port, cfg.listen_host, cfg.trigger, cfg.ack)
    failed = False
    try:
        for k in range(1, cfg.trials + 1):
            cfg_k = trial_config(cfg, k) if cfg.trials > 1 else cfg
            if cfg.sensors == "sim":
                suite = sim_suite(SimDevice(_scenario(s), cfg.interval_ms))
            else:
                suite = real_suite(cfg_k)
            log.info("waiting for trigger on port %d (trial %d/%d)", listener.port, k, cfg.trials)
            try:
                journal = run_server_agent(cfg_k, suite, listener=listener)
                log.info("trial %d: %d rows", k, len(journal.rows))
            except RunAborted as exc:
                failed = True
                print(f"wibench serve: trial {k} aborted: {exc.reason}", file=sys.stderr)
    finally:
        listener.close()
    return 2 if failed else 0


def cmd_measure(s: dict[str, Any]) -> int:
    host, port = parse_hostport(s["server"], DEFAULT_PORT)
    thost, tport = parse_hostport(s["transfer"], 21 if s["backend"] == "ftp" else 5556)
    cfg = RunConfig(
        role="client",
        run_id=s["run_id"],
        interval_ms=s["interval_ms"],
        device_label=s["device"],
        distance_label=s["distance"],
        control_host=host,
        control_port=port,
        trigger=s["trigger"],
        ack=s["ack"],
        send_done=not s["no_done"],
        backend=s["backend"],
        transfer_host=thost,
        transfer_port=tport,
        path=s["path"],
        user=s["user"],
        password=s["password"],
        rate_limit=s["rate"],
        expected_size=s["expected_size"],
        journal_path=s["journal"],
        max_samples=s["max_samples"],
        trials=s["trials"],
        quiet=s["quiet"],
    )
    if cfg.backend == "ftp" and not cfg.path:
        raise UsageError("the ftp backend needs --path")
    failed = False
    for k in range(1, cfg.trials + 1):
        cfg_k = trial_config(cfg, k) if cfg.trials > 1 else cfg
        try:
            journal = run_client_agent(cfg_k)
            log.info("trial %d: %d rows", k, len(journal.rows))
        except RunAborted as exc:
            failed = True
            print(f"wibench measure: trial {k} aborted: {exc.reason}", file=sys.stderr)
    return 2 if failed else 0


def _load_pairs(servers: list[str] | None, clients: list[str] | None) -> list[AlignedTable]:
    servers = servers or []
    clients = clients or []
    if not servers or len(servers) != len(clients):
        raise UsageError("give the same number (at least one) of --server and --client journals")
    return [align(read_journal(sp), read_journal(cp)) for sp, cp in zip(servers, clients)]


def _write_or_print(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def _check_mode(mode: str) -> None:
    if mode not in ("pooled", "mean"):
        raise UsageError("--mode must be pooled or mean")


def cmd_analyze(s: dict[str, Any]) -> int:
    _check_mode(s["mode"])
    tables = _load_pairs(s["server"], s["client"])
    summary = aggregate_trials(tables)
    _write_or_print(analysis_report(tables, summary, s["mode"]), s["output"])
    return 0


def cmd_report(s: dict[str, Any]) -> int:
    tables = _load_pairs(s["server"], s["client"])
    a = correlation_matrix(pool(tables))
    b = None
    if s["vs_server"] or s["vs_client"]:
        b = correlation_matrix(pool(_load_pairs(s["vs_server"], s["vs_client"])))
    _write_or_print(render_matrix(a, b), s["output"])
    if s["plot_csv"]:
        _write_or_print(plot_csv(tables), s["plot_csv"])
    return 0


def cmd_simulate(s: dict[str, Any]) -> int:
    _check_mode(s["mode"])
    if s["backend"] not in ("blob", "ftp"):
        raise UsageError("--backend must be blob or ftp")
    run_id = s["run_id"] or f"sim-s{s['seed']}"
    out = Path(s["out"])
    opts = SimOptions(
        file_size=s["file_size"],
        rate=s["rate"],
        interval_ms=s["interval_ms"],
        realtime=not s["fast"],
        backend=s["backend"],
        run_id=run_id,
        trials=s["trials"],
        distance_label=s["distance"],
        max_samples=s["max_samples"],
        abort_at=s["abort_at"],
        out_dir=out,
        scenario=_scenario(s),
    )
    opts.base_config()  # validates interval, trials, caps before anything is written
    out.mkdir(parents=True, exist_ok=True)
    results, _ = simulate_trials(opts)
    tables = []
    for r in results:
        if r.error:
            print(f"wibench simulate: trial {r.index} failed: {r.error}", file=sys.stderr)
        if r.server is not None and r.client is not None and r.ok:
            tables.append(align(r.server, r.client))
    report_path = out / f"{run_id}-report.txt"
    if tables:
        summary = aggregate_trials(tables)
        report_path.write_text(analysis_report(tables, summary, s["mode"]), encoding="utf-8", newline="\n")
    if not s["quiet"]:
        for r in results:
            server_path, client_path = opts.journal_paths(r.run_id)
            print(server_path)
            print(client_path)
        if tables:
            print(report_path)
    return 0 if all(r.ok for r in results) else 2


HANDLERS = {
    "serve": cmd_serve,
    "measure": cmd_measure,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def run_cli(argv: Sequence[str] | None = None, env: dict[str, str] | None = None) -> int:
    env = dict(os.environ if env is None else env)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\nwibench: error: a command is required")
        opts, _ = COMMANDS[args.command]
        settings = resolve(args, opts, env)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"wibench: {exc}", file=sys.stderr)
        return 1

    logging.basicConfig(
        level=logging.INFO if settings["verbose"] else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return HANDLERS[args.command](settings)
    except UsageError as exc:
        print(f"wibench {args.command}: {exc}", file=sys.stderr)
        return 1
    except WibenchError as exc:
        print(f"wibench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"wibench {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"wibench {args.command}: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
