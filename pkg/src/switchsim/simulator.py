"""National-switch simulator: three listeners feeding a participant pipeline.

Each request is routed to the first participant whose predicate accepts it.
Participants are pure functions of (request, config); the simulator only
ever replies, one response per request, on the connection it came in on.
"""

from __future__ import annotations

import asyncio
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .channels import (
    DEFAULT_TPDU,
    ChannelError,
    ChannelKind,
    Connection,
    Endpoint,
    FramingError,
    PeerClosed,
    listen,
)
from .codec import IsoError, IsoMsg, Packager, default_packager

logger = logging.getLogger(__name__)

APPROVED = "00"
INVALID_TRANSACTION = "12"
DEFAULT_BALANCE = "000000010000"
DEFAULT_PORTS = {ChannelKind.ASCII: 8001, ChannelKind.NAC: 8002, ChannelKind.XML: 8003}
BALANCE_PROCESSING_CODE = re.compile(r"31[0-9]{4}")


class ConfigError(ValueError):
    pass


class PortInUse(OSError):
    def __init__(self, port: int, reason: str = "address already in use"):
        super().__init__(f"port {port}: {reason}")
        self.port = port


@dataclass(frozen=True)
class SimulatorConfig:
    endpoints: tuple[Endpoint, ...]
    balance: str = DEFAULT_BALANCE
    response_delay_ms: int = 0

    def __post_init__(self):
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        kinds = [e.kind for e in self.endpoints]
        if sorted(kinds) != sorted(ChannelKind):
            raise ConfigError("need exactly one endpoint per channel kind (ascii, nac, xml)")
        if not (self.balance.isdigit() and len(self.balance) <= 120):
            raise ConfigError(f"balance {self.balance!r} must be up to 120 digits")
        if self.response_delay_ms < 0:
            raise ConfigError("response delay must be >= 0")

    @classmethod
    def default(cls, host: str = "127.0.0.1", ports: dict | None = None, **kwargs) -> SimulatorConfig:
        ports = {**DEFAULT_PORTS, **(ports or {})}
        return cls(tuple(Endpoint(host, ports[k], k) for k in ChannelKind), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict, host: str = "127.0.0.1") -> SimulatorConfig:
        try:
            endpoints = []
            for item in doc["endpoints"]:
                kind = ChannelKind.parse(item["channel"])
                tpdu = item.get("tpdu")
                if tpdu is True:
                    tpdu = DEFAULT_TPDU
                elif tpdu is not None:
                    tpdu = bytes.fromhex(tpdu)
                endpoints.append(Endpoint(item.get("host", host), int(item["port"]), kind, tpdu))
            return cls(tuple(endpoints), str(doc.get("balance", DEFAULT_BALANCE)),
                       int(doc.get("response_delay_ms", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad simulator config: {exc!r}") from None

    @classmethod
    def load(cls, path: str | Path) -> SimulatorConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        return cls.from_dict(doc)


@dataclass(frozen=True)
class Participant:
    name: str
    matches: Callable[[IsoMsg], bool]
    handle: Callable[[IsoMsg, SimulatorConfig], IsoMsg]


def response_mti(mti: str) -> str:
    """Request MTI -> response MTI (0200 -> 0210, 0800 -> 0810)."""
    function = int(mti[2])
    return mti[:2] + str(function + 1) + mti[3] if function % 2 == 0 else mti


def validate_balance_enquiry(request: IsoMsg, balance: str) -> IsoMsg:
    response = APPROVED
    if request.mti != "0200":
        response = INVALID_TRANSACTION
    # approve only real balance enquiries; the literal "= pattern -> 12" reading
    # would reject every enquiry and never attach a balance
    processing_code = request.get(3)
    if not (isinstance(processing_code, str) and BALANCE_PROCESSING_CODE.fullmatch(processing_code)):
        response = INVALID_TRANSACTION
    reply = request.with_mti("0210").set(39, response)
    if response == APPROVED:
        return reply.set(54, balance)
    return reply.unset(54)


def _processing_code(msg: IsoMsg) -> str:
    value = msg.get(3)
    return value if isinstance(value, str) else ""


# Only the balance participant carries business logic; the rest is routing plumbing.
def _is_balance_enquiry(msg: IsoMsg) -> bool:
    return msg.mti[:2] in ("01", "02") and _processing_code(msg).startswith("31")


def _is_purchase(msg: IsoMsg) -> bool:
    return msg.mti == "0200" and _processing_code(msg).startswith("00")


def _purchase(msg: IsoMsg, config: SimulatorConfig) -> IsoMsg:
    return msg.with_mti("0210").set(39, APPROVED)


def _network_echo(msg: IsoMsg, config: SimulatorConfig) -> IsoMsg:
    return msg.with_mti("0810").set(39, APPROVED)


def _decline(msg: IsoMsg, config: SimulatorConfig) -> IsoMsg:
    return msg.with_mti(response_mti(msg.mti)).set(39, INVALID_TRANSACTION)


DEFAULT_PARTICIPANTS = (
    Participant("balance-enquiry", _is_balance_enquiry, lambda m, c: validate_balance_enquiry(m, c.balance)),
    Participant("purchase-echo", _is_purchase, _purchase),
    Participant("network-echo", lambda m: m.mti == "0800", _network_echo),
    Participant("default", lambda m: True, _decline),
)


def route(request: IsoMsg, participants=DEFAULT_PARTICIPANTS) -> Participant:
    for participant in participants:
        if participant.matches(request):
            return participant
    return DEFAULT_PARTICIPANTS[-1]


def handle_request(request: IsoMsg, config: SimulatorConfig, participants=DEFAULT_PARTICIPANTS) -> IsoMsg:
    return route(request, participants).handle(request, config)


def _log_line(kind: ChannelKind, direction: str, msg: IsoMsg) -> None:
    logger.info("channel=%s direction=%s mti=%s f39=%s", kind.value, direction, msg.mti, msg.get(39) or "-")


@dataclass
class Simulator:
    """Running simulator. Use ``await Simulator.start(config)`` or ``async with``."""

    config: SimulatorConfig
    packager: Packager = field(default_factory=default_packager)
    participants: tuple = DEFAULT_PARTICIPANTS
    servers: list = field(default_factory=list)
    _handlers: set = field(default_factory=set)
    _readers: set = field(default_factory=set)

    @classmethod
    async def start(cls, config: SimulatorConfig, packager: Packager | None = None,
                    participants=DEFAULT_PARTICIPANTS) -> Simulator:
        sim = cls(config, packager or default_packager(), tuple(participants))
        await sim._bind()
        return sim

    async def _bind(self) -> None:
        seen = set()
        for endpoint in self.config.endpoints:
            if endpoint.port in seen:
                raise PortInUse(endpoint.port, "configured for more than one channel")
            seen.add(endpoint.port)
        for endpoint in self.config.endpoints:
            try:
                server = await listen(endpoint, self._track(endpoint), self.packager)
            except OSError as exc:
                await self.stop()
                raise PortInUse(endpoint.port, exc.strerror or str(exc)) from None
            self.servers.append(server)
            logger.info("listening on %s", endpoint)

    def _track(self, endpoint: Endpoint):
        async def handler(conn: Connection) -> None:
            task = asyncio.current_task()
            self._handlers.add(task)
            try:
                await self.handle_connection(conn)
            finally:
                self._handlers.discard(task)
        return handler

    async def handle_connection(self, conn: Connection) -> None:
        """Serve one connection until the peer leaves or the simulator stops.

        Requests are handled concurrently but answered in arrival order.
        """
        replies: asyncio.Queue = asyncio.Queue(maxsize=1024)

        async def read_requests():
            while True:
                try:
                    frame = await conn.next_frame()
                except PeerClosed:
                    return
                except ChannelError as exc:
                    logger.warning("%s: dropping connection: %s", conn.endpoint, exc)
                    return
                await replies.put(asyncio.create_task(self._respond(conn, frame)))

        async def write_responses():
            while True:
                pending = await replies.get()
                if pending is None:
                    return
                response = await pending
                if response is None:
                    continue
                try:
                    await conn.send(response)
                except (ChannelError, IsoError) as exc:
                    logger.warning("%s: cannot send response: %s", conn.endpoint, exc)
                    return
                _log_line(conn.kind, "outgoing", response)

        writer = asyncio.create_task(write_responses())
        reader = asyncio.create_task(read_requests())
        self._readers.add(reader)
        try:
            await asyncio.wait({reader})
            await replies.put(None)
            await writer
        finally:
            self._readers.discard(reader)
            reader.cancel()
            writer.cancel()

    async def _respond(self, conn: Connection, frame: bytes) -> IsoMsg | None:
        try:
            request = conn.decode(frame)
        except (IsoError, FramingError) as exc:
            logger.warning("%s: dropped unparseable message: %s: %s", conn.endpoint, type(exc).__name__, exc)
            return None
        _log_line(conn.kind, "incoming", request)
        if self.config.response_delay_ms:
            await asyncio.sleep(self.config.response_delay_ms / 1000)
        return handle_request(request, self.config, self.participants)

    @property
    def endpoints(self) -> tuple[Endpoint, ...]:
        return self.config.endpoints

    async def stop(self, grace: float = 5.0) -> None:
        """Stop accepting, finish replies already in progress, then close.

        Handlers still busy after ``grace`` seconds are cancelled.
        """
        for server in self.servers:
            server.close()
        for server in self.servers:
            await server.wait_closed()
        for reader in list(self._readers):
            reader.cancel()
        if self._handlers:
            _, pending = await asyncio.wait(set(self._handlers), timeout=grace)
            for task in pending:
                task.cancel()
            await asyncio.gather(*pending, return_exceptions=True)
        self.servers.clear()

    async def __aenter__(self) -> Simulator:
        return self

    async def __aexit__(self, *exc) -> None:
        await self.stop()

    async def serve_forever(self) -> None:
        await asyncio.gather(*(s.serve_forever() for s in self.servers))
