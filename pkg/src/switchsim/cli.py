"""``switchsim`` command line: serve, run, gen, report."""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
import signal
import sys
import time
from pathlib import Path

from .channels import ChannelKind, Endpoint, frame_xml
from .client import PlanError, execute, plan
from .codec import IsoError
from .generator import TemplateError, default_field_config, instantiate, load_field_config, load_template_file
from .regexgen import RegexError
from .report import ReportError, parse_json, render_html, write_report
from .simulator import DEFAULT_PORTS, ConfigError, PortInUse, Simulator, SimulatorConfig

EXIT_OK, EXIT_FAILURES, EXIT_USAGE, EXIT_PORT_IN_USE = 0, 1, 2, 3

def _channels(text: str) -> list[ChannelKind]:
    try:
        kinds = [ChannelKind.parse(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not kinds:
        raise argparse.ArgumentTypeError("select at least one channel")
    return list(dict.fromkeys(kinds))


def _ports(text: str) -> dict[ChannelKind, int]:
    parts = text.split(",")
    if len(parts) != 3 or not all(p.strip().isdigit() for p in parts):
        raise argparse.ArgumentTypeError("expected three ports: ascii,nac,xml")
    return dict(zip(ChannelKind, (int(p) for p in parts)))


def _tpdu(text: str) -> bytes:
    try:
        value = bytes.fromhex(text)
    except ValueError:
        value = b""
    if len(value) != 5:
        raise argparse.ArgumentTypeError("TPDU must be 10 hex digits, e.g. 6000000000")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


class _ProgressLine:
    """Prints sent/received/pending counters to stderr at most twice a second."""

    def __init__(self, interval: float = 0.5):
        self.interval = interval
        self.last_print = 0.0
        self.latest = None

    def __call__(self, progress) -> None:
        self.latest = progress
        now = time.monotonic()
        if now - self.last_print >= self.interval:
            self.last_print = now
            self.flush()

    def flush(self) -> None:
        p = self.latest
        if p is not None:
            print(f"sent={p.sent} received={p.received} pending={p.pending}", file=sys.stderr)


def _fail(message: str, code: int = EXIT_USAGE) -> int:
    print(f"switchsim: error: {message}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the switch simulator (server mode)")
    serve.add_argument("--config", type=Path, help="simulator config JSON")
    serve.add_argument("--host", default="127.0.0.1", help="bind address (default: %(default)s)")
    serve.add_argument("--ports", type=_ports, help="ascii,nac,xml ports (default: 8001,8002,8003)")
    serve.add_argument("--balance", default="000000010000", help="field 54 value for approved enquiries")
    serve.add_argument("--delay", type=int, default=0, metavar="MS", help="fixed response delay in ms")
    serve.add_argument("--tpdu", type=_tpdu, help="enable a TPDU on the nac channel (10 hex digits)")

    run = sub.add_parser("run", help="run a regression suite against a switch (client mode)")
    run.add_argument("--suite", type=Path, required=True, help="directory of *.json templates")
    run.add_argument("--field-config", type=Path, help="field pattern config (default: bundled)")
    run.add_argument("--target", default="127.0.0.1", help="switch host (default: %(default)s)")
    run.add_argument("--channels", type=_channels, default=list(ChannelKind), help="e.g. ascii,nac,xml")
    run.add_argument("--ports", type=_ports, help="ascii,nac,xml ports (default: 8001,8002,8003)")
    run.add_argument("--iterations", type=_positive, default=1)
    run.add_argument("--seed", type=_seed, default=0)
    run.add_argument("--timeout", type=_positive, default=5000, metavar="MS")
    run.add_argument("--max-in-flight", type=_positive, default=32)
    run.add_argument("--tpdu", type=_tpdu, help="send a TPDU on the nac channel")
    run.add_argument("--out", type=Path, default=Path(os.environ.get("SWITCHSIM_OUT", "reports")),
                     help="report directory (default: $SWITCHSIM_OUT or ./reports)")

    gen = sub.add_parser("gen", help="instantiate one template and print it as <isomsg> XML")
    gen.add_argument("--template", type=Path, required=True)
    gen.add_argument("--field-config", type=Path, help="field pattern config (default: bundled)")
    gen.add_argument("--seed", type=_seed, default=0)

    report = sub.add_parser("report", help="re-render the HTML page of a JSON report")
    report.add_argument("--json", type=Path, required=True, dest="json_path")
    report.add_argument("--out", type=Path, help="HTML output path (default: next to the JSON)")
    return parser


def _field_config(path: Path | None):
    if path is None:
        return default_field_config()
    return load_field_config(path.read_text(encoding="utf-8"))


def cmd_serve(args) -> int:
    try:
        if args.config:
            config = SimulatorConfig.load(args.config)
        else:
            ports = args.ports or DEFAULT_PORTS
            endpoints = tuple(
                Endpoint(args.host, ports[k], k, args.tpdu if k is ChannelKind.NAC else None) for k in ChannelKind)
            config = SimulatorConfig(endpoints, args.balance, args.delay)
    except (ConfigError, ValueError) as exc:
        return _fail(str(exc))

    async def serve() -> int:
        try:
            sim = await Simulator.start(config)
        except PortInUse as exc:
            return _fail(f"port {exc.port} is already in use", EXIT_PORT_IN_USE)
        for endpoint in sim.endpoints:
            print(f"listening {endpoint}", flush=True)
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        await stop.wait()
        await sim.stop()
        print("stopped", flush=True)
        return EXIT_OK

    return asyncio.run(serve())


def cmd_run(args) -> int:
    ports = args.ports or DEFAULT_PORTS
    try:
        endpoints = [Endpoint(args.target, ports[k], k, args.tpdu if k is ChannelKind.NAC else None)
                     for k in args.channels]
        run = plan(args.suite, endpoints, args.iterations, args.seed, _field_config(args.field_config),
                   timeout_ms=args.timeout, max_in_flight=args.max_in_flight)
    except (PlanError, TemplateError, RegexError, IsoError, ValueError, OSError) as exc:
        return _fail(str(exc))

    ticker = _ProgressLine()
    report = asyncio.run(execute(run, progress=ticker))
    ticker.flush()
    json_path, html_path = write_report(report, args.out)
    print(report.totals_line())
    print(f"report: {json_path}")
    print(f"report: {html_path}")
    return EXIT_OK if report.ok else EXIT_FAILURES


def cmd_gen(args) -> int:
    try:
        template = load_template_file(args.template)
        msg = instantiate(template, _field_config(args.field_config), args.seed)
    except (TemplateError, RegexError, IsoError, OSError) as exc:
        return _fail(str(exc))
    sys.stdout.write(frame_xml(msg).decode("utf-8") + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = parse_json(args.json_path.read_bytes())
    except (ReportError, OSError) as exc:
        return _fail(str(exc))
    out = args.out or args.json_path.with_name(f"{report.run_id}.report.html")
    out.write_bytes(render_html(report))
    print(f"report: {out}")
    return EXIT_OK


COMMANDS = {"serve": cmd_serve, "run": cmd_run, "gen": cmd_gen, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stdout if args.command == "serve" else sys.stderr,
    )
    if args.command == "run" and not args.verbose:
        logging.getLogger("switchsim").setLevel(logging.WARNING)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
