"""Regression client: plan a suite run, fire it asynchronously, score responses.

Every template runs on every selected endpoint for every iteration. Each
endpoint gets one persistent connection; up to ``max_in_flight`` requests are
outstanding on it at once, and responses are matched back to requests by
(connection, STAN). The client overwrites field 11 with a per-connection
counter so STANs never collide among in-flight requests.
"""

from __future__ import annotations

import asyncio
import hashlib
import logging
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .channels import ChannelError, Connection, ConnectRefused, Endpoint, PeerClosed, connect
from .codec import IsoError, IsoMsg, Packager, default_packager
from .generator import FieldConfig, TestTemplate, default_field_config, instantiate, load_suite

logger = logging.getLogger(__name__)

STAN_FIELD = 11
STAN_MODULUS = 1_000_000
DEFAULT_TIMEOUT_MS = 5000
DEFAULT_MAX_IN_FLIGHT = 32


class PlanError(ValueError):
    pass


class EmptySuite(PlanError):
    pass


class UnmatchedResponse(LookupError):
    def __init__(self, stan: str | None):
        super().__init__(f"no in-flight request with STAN {stan!r}")
        self.stan = stan


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    TIMEOUT = "timeout"
    ERROR = "error"


@dataclass(frozen=True)
class Mismatch:
    field: int
    expected: str
    actual: str | None  # None: field absent from the response


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    template: str
    iteration: int
    channel: str
    endpoint: str
    request: IsoMsg
    response: IsoMsg | None
    verdict: Verdict
    mismatches: tuple[Mismatch, ...] = ()
    latency_ms: float = 0.0
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        object.__setattr__(self, "mismatches", tuple(self.mismatches))
        if self.verdict is Verdict.PASS:
            consistent = self.response is not None and not self.mismatches
        elif self.verdict is Verdict.FAIL:
            consistent = self.response is not None and bool(self.mismatches)
        else:
            consistent = self.response is None
        if not consistent:
            raise ValueError(f"verdict {self.verdict.value} inconsistent with response/mismatches")


def _as_text(value) -> str:
    return value.hex().upper() if isinstance(value, bytes) else value


def compare(expected: Mapping[int, str], response: IsoMsg) -> tuple[Verdict, list[Mismatch]]:
    """Check ``response`` against expected values; ``/re/`` means a full regex match.

    Key 0 stands for the MTI.
    """
    mismatches = []
    for n, want in expected.items():
        actual = response.mti if n == 0 else response.fields.get(n)
        actual = None if actual is None else _as_text(actual)
        if actual is None:
            ok = False
        elif len(want) >= 2 and want.startswith("/") and want.endswith("/"):
            ok = re.fullmatch(want[1:-1], actual) is not None
        else:
            ok = actual == want
        if not ok:
            mismatches.append(Mismatch(n, want, actual))
    return (Verdict.FAIL if mismatches else Verdict.PASS), mismatches


def derive_seed(run_seed: int, template_index: int, endpoint_index: int, iteration: int) -> int:
    digest = hashlib.blake2b(f"{run_seed}:{template_index}:{endpoint_index}:{iteration}".encode(),
                             digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class PlannedSend:
    index: int
    template_index: int
    endpoint_index: int
    iteration: int
    seed: int
    request: IsoMsg  # as instantiated; field 11 is stamped at dispatch


@dataclass(frozen=True)
class RunPlan:
    suite: tuple[TestTemplate, ...]
    endpoints: tuple[Endpoint, ...]
    iterations: int
    seed: int
    field_config: FieldConfig = field(default_factory=default_field_config)
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    sends: tuple[PlannedSend, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "suite", tuple(self.suite))
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        if not self.suite:
            raise EmptySuite("suite has no templates")
        if not self.endpoints:
            raise PlanError("at least one endpoint is required")
        if self.iterations < 1:
            raise PlanError("iterations must be >= 1")
        if self.timeout_ms <= 0:
            raise PlanError("timeout must be > 0 ms")
        if not 1 <= self.max_in_flight < STAN_MODULUS:
            raise PlanError(f"max in flight must be in 1..{STAN_MODULUS - 1}")
        sends = []
        for i in range(self.iterations):
            for t, template in enumerate(self.suite):
                for e in range(len(self.endpoints)):
                    seed = derive_seed(self.seed, t, e, i)
                    request = instantiate(template, self.field_config, seed)
                    sends.append(PlannedSend(len(sends), t, e, i, seed, request))
        object.__setattr__(self, "sends", tuple(sends))

    @property
    def total(self) -> int:
        return len(self.suite) * len(self.endpoints) * self.iterations


def plan(suite_dir: str | Path, endpoints: Sequence[Endpoint], iterations: int, seed: int,
         field_config: FieldConfig | None = None, **options) -> RunPlan:
    directory = Path(suite_dir)
    if not directory.is_dir():
        raise PlanError(f"suite directory {directory} does not exist")
    suite = [template for _, template in load_suite(directory)]
    if not suite:
        raise EmptySuite(f"no *.json templates in {directory}")
    return RunPlan(tuple(suite), tuple(endpoints), iterations, seed,
                   field_config or default_field_config(), **options)


@dataclass(frozen=True)
class CorrelationKey:
    connection_id: int
    stan: str


class InFlightTable:
    """Outstanding requests keyed by (connection, STAN).

    All access happens on the event loop thread, so operations are serialized.
    """

    def __init__(self):
        self._entries: dict[CorrelationKey, asyncio.Future] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def register(self, key: CorrelationKey) -> asyncio.Future:
        if key in self._entries:
            raise ValueError(f"STAN {key.stan} already in flight on connection {key.connection_id}")
        future = asyncio.get_running_loop().create_future()
        self._entries[key] = future
        return future

    def discard(self, key: CorrelationKey) -> None:
        self._entries.pop(key, None)

    def correlate(self, connection_id: int, response: IsoMsg) -> asyncio.Future:
        """Claim the pending entry answered by ``response`` and resolve it."""
        stan = response.fields.get(STAN_FIELD)
        future = self._entries.pop(CorrelationKey(connection_id, stan), None) if isinstance(stan, str) else None
        if future is None:
            raise UnmatchedResponse(stan if isinstance(stan, str) else None)
        if not future.done():
            future.set_result(response)
        return future

    def fail_connection(self, connection_id: int, exc: BaseException) -> None:
        for key in [k for k in self._entries if k.connection_id == connection_id]:
            future = self._entries.pop(key)
            if not future.done():
                future.set_exception(exc)


@dataclass
class Progress:
    total: int
    sent: int = 0
    received: int = 0
    callback: Callable[[Progress], None] | None = None

    @property
    def pending(self) -> int:
        return self.sent - self.received

    def bump(self, sent: int = 0, received: int = 0) -> None:
        self.sent += sent
        self.received += received
        if self.callback:
            self.callback(self)


class _EndpointRun:
    def __init__(self, run: RunPlan, endpoint: Endpoint, sends: list[PlannedSend], table: InFlightTable,
                 packager: Packager, progress: Progress, results: list):
        self.plan = run
        self.endpoint = endpoint
        self.sends = sends
        self.table = table
        self.packager = packager
        self.progress = progress
        self.results = results
        self.conn: Connection | None = None
        self.broken: Exception | None = None

    def record(self, send: PlannedSend, request: IsoMsg, verdict: Verdict, response=None,
               mismatches=(), latency_ms: float = 0.0, detail: str = "") -> None:
        self.results[send.index] = TestResult(
            self.plan.suite[send.template_index].name, send.iteration, self.endpoint.kind.value,
            str(self.endpoint), request, response, verdict, tuple(mismatches), round(latency_ms, 3), detail)

    async def run(self) -> None:
        timeout = self.plan.timeout_ms / 1000
        try:
            self.conn = await connect(self.endpoint, self.packager, timeout=timeout)
        except ConnectRefused as exc:
            logger.warning("%s", exc)
            for send in self.sends:
                self.record(send, send.request, Verdict.ERROR, detail=str(exc))
            return
        reader = asyncio.create_task(self.read_responses())
        slots = asyncio.Semaphore(self.plan.max_in_flight)
        tasks = []
        try:
            for counter, send in enumerate(self.sends, start=1):
                await slots.acquire()
                stan = f"{counter % STAN_MODULUS:06d}"
                tasks.append(asyncio.create_task(self.exchange(send, stan, slots)))
            await asyncio.gather(*tasks)
        finally:
            reader.cancel()
            await asyncio.gather(reader, return_exceptions=True)
            await self.conn.close()

    async def read_responses(self) -> None:
        conn = self.conn
        while True:
            try:
                frame = await conn.next_frame()
            except (ChannelError, OSError) as exc:
                self.broken = exc if isinstance(exc, ChannelError) else PeerClosed(str(exc))
                self.table.fail_connection(conn.id, self.broken)
                return
            try:
                response = conn.decode(frame)
            except (IsoError, ChannelError) as exc:
                logger.warning("%s: undecodable response dropped: %s", self.endpoint, exc)
                continue
            try:
                self.table.correlate(conn.id, response)
            except UnmatchedResponse as exc:
                logger.warning("%s: %s; response discarded", self.endpoint, exc)

    async def exchange(self, send: PlannedSend, stan: str, slots: asyncio.Semaphore) -> None:
        request = send.request.set(STAN_FIELD, stan)
        key = CorrelationKey(self.conn.id, stan)
        started = time.monotonic()
        try:
            if self.broken is not None:
                self.record(send, request, Verdict.ERROR, detail=f"connection lost: {self.broken}")
                return
            future = self.table.register(key)
            try:
                await self.conn.send(request)
            except (ChannelError, IsoError) as exc:
                self.table.discard(key)
                self.record(send, request, Verdict.ERROR, detail=f"{type(exc).__name__}: {exc}")
                return
            self.progress.bump(sent=1)
            try:
                response = await asyncio.wait_for(future, self.plan.timeout_ms / 1000)
            except asyncio.TimeoutError:
                self.table.discard(key)
                self.progress.bump(received=1)
                self.record(send, request, Verdict.TIMEOUT, latency_ms=(time.monotonic() - started) * 1000,
                            detail=f"no response within {self.plan.timeout_ms} ms")
                return
            except ChannelError as exc:
                self.progress.bump(received=1)
                self.record(send, request, Verdict.ERROR, latency_ms=(time.monotonic() - started) * 1000,
                            detail=f"connection lost: {exc}")
                return
            latency = (time.monotonic() - started) * 1000
            self.progress.bump(received=1)
            verdict, mismatches = compare(self.plan.suite[send.template_index].expected, response)
            self.record(send, request, verdict, response, mismatches, latency)
        finally:
            slots.release()


async def execute(run: RunPlan, packager: Packager | None = None,
                  progress: Callable[[Progress], None] | None = None):
    """Run every planned send and return the report. Dark endpoints yield error results."""
    from .report import PlanSummary, TestReport

    packager = packager or default_packager()
    started_at = datetime.now(timezone.utc)
    table = InFlightTable()
    tracker = Progress(run.total, callback=progress)
    results: list[TestResult | None] = [None] * len(run.sends)
    by_endpoint: dict[int, list[PlannedSend]] = {i: [] for i in range(len(run.endpoints))}
    for send in run.sends:
        by_endpoint[send.endpoint_index].append(send)
    await asyncio.gather(*(
        _EndpointRun(run, run.endpoints[i], sends, table, packager, tracker, results).run()
        for i, sends in by_endpoint.items()
    ))
    finished_at = datetime.now(timezone.utc)
    return TestReport(
        run_id=f"{started_at.strftime('%Y%m%dT%H%M%S%fZ')}-seed{run.seed}",
        started_at=started_at,
        finished_at=finished_at,
        plan=PlanSummary.of(run),
        results=tuple(results),
    )


def run_plan(run: RunPlan, packager: Packager | None = None, progress=None):
    """Blocking wrapper around :func:`execute`."""
    return asyncio.run(execute(run, packager, progress))
